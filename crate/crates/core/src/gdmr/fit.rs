use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::objective::optimize_regression;
use super::sampler::{gibbs_sweep, joint_log_likelihood, sweep_rng, warm_start_tokens};
use super::state::GdmrState;
use super::GdmrHyper;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::netembed::CovariateMatrix;
use crate::optim::OptStatus;

/// One regression optimization between sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptRecord {
    /// Sweep after which the optimizer ran.
    pub iteration: usize,
    pub objective_start: f64,
    pub objective_end: f64,
    pub steps: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub status: OptStatus,
}

/// Wall-clock seconds per phase. Never written into model archives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub warm: f64,
    pub sampling: f64,
    pub optimization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Joint log-likelihood log P(w, z | α, β) after every sweep.
    pub joint_ll: Vec<f64>,
    pub optimizer: Vec<OptRecord>,
    pub line_search_failures: usize,
    /// Sweeps averaged into the posterior means.
    pub averaged_sweeps: usize,
    pub times: PhaseTimes,
}

impl FitReport {
    /// `trace.csv` body: one row per sweep; optimizer columns are empty on
    /// sweeps without an optimization.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,joint_ll,opt_objective_start,opt_objective_end,opt_steps,opt_grad_norm,opt_status\n");
        let mut opt = self.optimizer.iter().peekable();
        for (i, ll) in self.joint_ll.iter().enumerate() {
            let it = i + 1;
            out.push_str(&format!("{it},{ll:.17e}"));
            match opt.peek() {
                Some(r) if r.iteration == it => {
                    out.push_str(&format!(
                        ",{:.17e},{:.17e},{},{:.6e},{}\n",
                        r.objective_start,
                        r.objective_end,
                        r.steps,
                        r.grad_norm,
                        serde_json::to_value(r.status)
                            .unwrap()
                            .as_str()
                            .unwrap_or("")
                    ));
                    opt.next();
                }
                _ => out.push_str(",,,,,\n"),
            }
        }
        out
    }
}

/// A fitted chain plus posterior means averaged over the stabilization window.
#[derive(Debug, Clone, PartialEq)]
pub struct GdmrFit {
    pub state: GdmrState,
    /// G × W.
    pub phi: Vec<f64>,
    /// U × G.
    pub theta: Vec<f64>,
    pub report: FitReport,
}

/// Warm start, then `iters_warm+1 ..= iters_total` sweeps with the regression
/// optimized after every `opt_period`-th post-warm sweep. The final
/// `stab_window` post-warm sweeps are averaged into φ̂ and θ̂.
pub fn fit(corpus: &Corpus, x: &CovariateMatrix, hyper: &GdmrHyper) -> Result<GdmrFit> {
    hyper.validate()?;
    if x.rows != corpus.num_users() {
        return Err(Error::Dimension {
            what: "covariate rows vs users",
            expected: corpus.num_users(),
            got: x.rows,
        });
    }
    if corpus.num_users() == 0 || corpus.total_tokens() == 0 {
        return Err(Error::InvalidInput("cannot fit an empty corpus".into()));
    }
    let tokens = &corpus.tokens;
    let (gs, w) = (hyper.groups, corpus.vocab_size());

    let t0 = Instant::now();
    let (mut state, mut joint_ll) = warm_start_tokens(tokens, w, x.cols, hyper);
    let mut times = PhaseTimes {
        warm: t0.elapsed().as_secs_f64(),
        ..Default::default()
    };
    state.refresh_alpha(x);

    let post = hyper.iters_total - hyper.iters_warm;
    let window = hyper.stab_window.min(post);
    let avg_from = hyper.iters_total - window + 1;
    let mut phi = vec![0.0; gs * w];
    let mut theta = vec![0.0; corpus.num_users() * gs];
    let mut optimizer = Vec::new();

    for it in (hyper.iters_warm + 1)..=hyper.iters_total {
        let t = Instant::now();
        let mut r = sweep_rng(hyper.seed, it);
        gibbs_sweep(&mut state, tokens, hyper.beta, &mut r);
        times.sampling += t.elapsed().as_secs_f64();

        if (it - hyper.iters_warm).is_multiple_of(hyper.opt_period) {
            let t = Instant::now();
            let mut rec = optimize_regression(&mut state, x, hyper)?;
            rec.iteration = it;
            optimizer.push(rec);
            times.optimization += t.elapsed().as_secs_f64();
        }
        joint_ll.push(joint_log_likelihood(&state, tokens, hyper.beta));
        if it >= avg_from {
            phi.iter_mut()
                .zip(state.phi_hat(hyper.beta))
                .for_each(|(a, v)| *a += v);
            theta
                .iter_mut()
                .zip(state.theta_hat())
                .for_each(|(a, v)| *a += v);
        }
    }
    let n = window as f64;
    phi.iter_mut().for_each(|v| *v /= n);
    theta.iter_mut().for_each(|v| *v /= n);
    let line_search_failures = optimizer
        .iter()
        .filter(|r| matches!(r.status, OptStatus::LineSearchFailed | OptStatus::NonFinite))
        .count();
    Ok(GdmrFit {
        state,
        phi,
        theta,
        report: FitReport {
            joint_ll,
            optimizer,
            line_search_failures,
            averaged_sweeps: window,
            times,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_gdmr, SynthConfig};
    use crate::gdmr::GdmrModel;

    fn tiny() -> crate::corpus::Synthetic {
        synth_gdmr(&SynthConfig {
            users: 12,
            vocab: 15,
            groups: 3,
            emb_dim: 2,
            doc_len: 8,
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn default_schedule_runs_1000_sweeps_and_30_optimizations() {
        let s = tiny();
        let hyper = GdmrHyper {
            groups: 3,
            ..Default::default()
        };
        let f = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        assert_eq!(f.report.joint_ll.len(), 1000);
        assert_eq!(f.report.optimizer.len(), 30);
        assert_eq!(f.report.optimizer[0].iteration, 710);
        assert_eq!(f.report.optimizer[29].iteration, 1000);
        assert_eq!(f.report.averaged_sweeps, 300);
        assert!(f.state.counts_consistent(&s.corpus.tokens));
        assert!(f.state.alpha.iter().all(|&a| a > 0.0));
        for g in 0..3 {
            let row: f64 = f.phi[g * 15..(g + 1) * 15].iter().sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
        for u in 0..12 {
            let row: f64 = f.theta[u * 3..(u + 1) * 3].iter().sum();
            assert!((row - 1.0).abs() < 1e-9);
        }
        assert!(f
            .report
            .optimizer
            .iter()
            .all(|r| r.objective_end >= r.objective_start));
        assert_eq!(f.report.trace_csv().lines().count(), 1001);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let s = tiny();
        let hyper = GdmrHyper {
            groups: 3,
            iters_total: 60,
            iters_warm: 30,
            seed: 5,
            ..Default::default()
        };
        let a = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        let b = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        assert_eq!(a.state, b.state);
        assert_eq!(
            a.phi.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.phi.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.report.joint_ll, b.report.joint_ll);
    }

    #[test]
    fn archive_round_trip() {
        let s = tiny();
        let hyper = GdmrHyper {
            groups: 3,
            iters_total: 30,
            iters_warm: 10,
            ..Default::default()
        };
        let f = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        let m = GdmrModel::from_fit(&f, &s.corpus, &s.covariates, &hyper);
        let dir = tempfile::tempdir().unwrap();
        m.write(dir.path(), Some(&f.report)).unwrap();
        assert_eq!(GdmrModel::read(dir.path()).unwrap(), m);
        assert!(m.check_vocab(&s.corpus).is_ok());
        let mut other = s.corpus.clone();
        other.vocab[0] = "zzz".into();
        assert!(m.check_vocab(&other).is_err());
    }

    #[test]
    fn covariate_row_mismatch_is_rejected() {
        let s = tiny();
        let x = s.covariates.subset_rows(&[0, 1]);
        let hyper = GdmrHyper {
            groups: 3,
            ..Default::default()
        };
        assert!(fit(&s.corpus, &x, &hyper).is_err());
    }
}
