use rand::Rng;

use super::state::GdmrState;
use super::GdmrHyper;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::util::math::{ln_gamma, log_sum_exp};
use crate::util::rng;
use crate::util::sampling::categorical;

/// Unnormalized collapsed conditional for a token of user `u` with word `w`,
/// given counts that already exclude the token:
/// (n_gw + β)(n_ug + α_ug)/(n_g + Wβ). Returns the total.
pub fn conditional_weights(
    state: &GdmrState,
    u: usize,
    w: usize,
    beta: f64,
    out: &mut [f64],
) -> f64 {
    let gs = state.groups;
    let wb = state.vocab_size as f64 * beta;
    let nw = &state.n_wg[w * gs..(w + 1) * gs];
    let nu = &state.n_ug[u * gs..(u + 1) * gs];
    let au = &state.alpha[u * gs..(u + 1) * gs];
    let mut total = 0.0;
    for g in 0..gs {
        let p = (nw[g] as f64 + beta) * (nu[g] as f64 + au[g]) / (state.n_g[g] as f64 + wb);
        out[g] = p;
        total += p;
    }
    total
}

/// Log-space version used when the linear weights under- or overflow.
fn log_conditional(state: &GdmrState, u: usize, w: usize, beta: f64, out: &mut [f64]) {
    let gs = state.groups;
    let wb = state.vocab_size as f64 * beta;
    for (g, o) in out.iter_mut().enumerate() {
        *o = (state.n_wg[w * gs + g] as f64 + beta).ln()
            + (state.n_ug[u * gs + g] as f64 + state.alpha[u * gs + g]).ln()
            - (state.n_g[g] as f64 + wb).ln();
    }
    let lse = log_sum_exp(out);
    out.iter_mut().for_each(|v| *v = (*v - lse).exp());
}

/// Resample every token once, in user then position order.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut GdmrState,
    tokens: &[Vec<u32>],
    beta: f64,
    rng: &mut R,
) {
    let gs = state.groups;
    if gs == 1 {
        return;
    }
    let mut weights = vec![0.0; gs];
    for (u, toks) in tokens.iter().enumerate() {
        for (i, &t) in toks.iter().enumerate() {
            let w = t as usize;
            let old = state.z[u][i] as usize;
            state.n_wg[w * gs + old] -= 1;
            state.n_ug[u * gs + old] -= 1;
            state.n_g[old] -= 1;

            let mut total = conditional_weights(state, u, w, beta, &mut weights);
            if !(total.is_finite() && total > 0.0) {
                log_conditional(state, u, w, beta, &mut weights);
                total = 1.0;
            }
            let new = categorical(rng, &weights, total);

            state.z[u][i] = new as u32;
            state.n_wg[w * gs + new] += 1;
            state.n_ug[u * gs + new] += 1;
            state.n_g[new] += 1;
        }
    }
    debug_assert!(state.counts_consistent(tokens));
}

/// log P(w, z | α, β) with θ and φ integrated out.
pub fn joint_log_likelihood(state: &GdmrState, tokens: &[Vec<u32>], beta: f64) -> f64 {
    let (gs, w) = (state.groups, state.vocab_size);
    let wb = w as f64 * beta;
    let lg_beta = ln_gamma(beta);
    let mut ll = 0.0;
    for g in 0..gs {
        ll += ln_gamma(wb) - ln_gamma(state.n_g[g] as f64 + wb);
        for j in 0..w {
            let c = state.n_gw(g, j);
            if c > 0 {
                ll += ln_gamma(c as f64 + beta) - lg_beta;
            }
        }
    }
    for (u, toks) in tokens.iter().enumerate() {
        let a = &state.alpha[u * gs..(u + 1) * gs];
        let sum_a: f64 = a.iter().sum();
        ll += ln_gamma(sum_a) - ln_gamma(sum_a + toks.len() as f64);
        for g in 0..gs {
            let c = state.n_ug[u * gs + g];
            if c > 0 {
                ll += ln_gamma(a[g] + c as f64) - ln_gamma(a[g]);
            }
        }
    }
    ll
}

pub(crate) fn random_state(
    tokens: &[Vec<u32>],
    groups: usize,
    vocab_size: usize,
    dim: usize,
    seed: u64,
) -> GdmrState {
    let mut r = rng::stream(seed, &[0x6D12, 0]);
    let z = tokens
        .iter()
        .map(|t| t.iter().map(|_| r.random_range(0..groups) as u32).collect())
        .collect();
    GdmrState::from_assignments(tokens, z, groups, vocab_size, dim)
}

pub(crate) fn sweep_rng(seed: u64, iteration: usize) -> rng::Rng {
    rng::stream(seed, &[0x6D12, 1, iteration as u64])
}

/// LDA warm start: random assignments, then `iters_warm` sweeps under the
/// symmetric prior α = 50/G with λ = 0. Returns the state with γ set to the
/// matching symmetric value and the per-sweep joint log-likelihood.
pub fn warm_start(corpus: &Corpus, dim: usize, hyper: &GdmrHyper) -> Result<(GdmrState, Vec<f64>)> {
    hyper.validate()?;
    if corpus.num_users() == 0 || corpus.vocab_size() == 0 {
        return Err(Error::InvalidInput(
            "warm start needs a nonempty corpus".into(),
        ));
    }
    Ok(warm_start_tokens(
        &corpus.tokens,
        corpus.vocab_size(),
        dim,
        hyper,
    ))
}

pub(crate) fn warm_start_tokens(
    tokens: &[Vec<u32>],
    vocab_size: usize,
    dim: usize,
    hyper: &GdmrHyper,
) -> (GdmrState, Vec<f64>) {
    let mut state = random_state(tokens, hyper.groups, vocab_size, dim, hyper.seed);
    state.set_symmetric_alpha(hyper.warm_alpha());
    let mut trace = Vec::with_capacity(hyper.iters_warm);
    for it in 1..=hyper.iters_warm {
        let mut r = sweep_rng(hyper.seed, it);
        gibbs_sweep(&mut state, tokens, hyper.beta, &mut r);
        trace.push(joint_log_likelihood(&state, tokens, hyper.beta));
    }
    let g0 = hyper.warm_gamma();
    state.gamma.iter_mut().for_each(|v| *v = g0);
    (state, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::UserProfile;
    use crate::util::rng::seeded;
    use proptest::prelude::*;

    fn tiny_state() -> (GdmrState, Vec<Vec<u32>>) {
        // The token under study is word 0 of user 0, currently in group 0.
        // Other tokens set n_{0,w0}=3, n_0=4, n_{u0,0}=2, n_{1,w0}=0, n_1=1, n_{u0,1}=0
        // once the studied token is removed.
        let tokens = vec![vec![0, 0, 0], vec![0, 1, 1]];
        let z = vec![vec![0, 0, 0], vec![0, 0, 1]];
        let mut s = GdmrState::from_assignments(&tokens, z, 2, 2, 0);
        s.set_symmetric_alpha(1.5);
        (s, tokens)
    }

    #[test]
    fn conditional_matches_hand_computation() {
        let (mut s, _) = tiny_state();
        // remove token (u=0, i=0, w=0, g=0)
        s.n_wg[0] -= 1;
        s.n_ug[0] -= 1;
        s.n_g[0] -= 1;
        assert_eq!((s.n_gw(0, 0), s.n_g[0], s.n_ug[0]), (3, 4, 2));
        assert_eq!((s.n_gw(1, 0), s.n_g[1], s.n_ug[1]), (0, 1, 0));
        let mut w = [0.0; 2];
        let total = conditional_weights(&s, 0, 0, 0.01, &mut w);
        let want = [3.01 * 3.5 / 4.02, 0.01 * 1.5 / 1.02];
        assert!((w[0] - want[0]).abs() < 1e-12);
        assert!((w[1] - want[1]).abs() < 1e-12);
        let p: f64 = w.iter().map(|v| v / total).sum();
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_space_fallback_normalizes() {
        let (mut s, _) = tiny_state();
        s.alpha.iter_mut().for_each(|a| *a = 1e-300);
        let mut w = [0.0; 2];
        log_conditional(&s, 0, 0, 1e-300, &mut w);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_group_is_a_point_mass() {
        let tokens = vec![vec![0, 1, 1]];
        let mut s = GdmrState::from_assignments(&tokens, vec![vec![0, 0, 0]], 1, 2, 0);
        let before = s.clone();
        gibbs_sweep(&mut s, &tokens, 0.1, &mut seeded(1));
        assert_eq!(s, before);
    }

    fn planted_families(g: usize, users_per: usize, len: usize) -> Corpus {
        // W = G, user family f emits only token f.
        let mut users = Vec::new();
        let mut tokens = Vec::new();
        for f in 0..g {
            for k in 0..users_per {
                users.push(format!("u{f}-{k:02}"));
                tokens.push(vec![f as u32; len]);
            }
        }
        let profiles = users.iter().map(UserProfile::unspecified).collect();
        let vocab = (0..g).map(|i| format!("w{i}")).collect();
        Corpus::new(vocab, users, tokens, profiles).unwrap()
    }

    #[test]
    fn warm_start_recovers_token_families() {
        let g = 4;
        let c = planted_families(g, 10, 20);
        let hyper = GdmrHyper {
            groups: g,
            iters_warm: 50,
            iters_total: 60,
            beta: 0.01,
            seed: 3,
            ..Default::default()
        };
        let (s, trace) = warm_start(&c, 0, &hyper).unwrap();
        assert_eq!(trace.len(), 50);
        assert!(s.counts_consistent(&c.tokens));
        // Greedy alignment: each token family goes to its majority group.
        let mut recovered = 0;
        for f in 0..g {
            recovered += (0..g).map(|k| s.n_gw(k, f)).max().unwrap();
        }
        let frac = recovered as f64 / c.total_tokens() as f64;
        assert!(frac >= 0.9, "{frac}");
        assert_eq!(s.gamma, vec![50.0 / 4.0 - 1.0; 4]);
    }

    #[test]
    fn zero_warm_iterations_is_a_config_error() {
        let c = planted_families(2, 2, 2);
        let hyper = GdmrHyper {
            groups: 2,
            iters_warm: 0,
            ..Default::default()
        };
        assert!(warm_start(&c, 0, &hyper).unwrap_err().is_config());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn sweeps_keep_counts_consistent(
            docs in proptest::collection::vec(proptest::collection::vec(0u32..6, 0..12), 1..6),
            groups in 1usize..5,
            seed in 0u64..1000,
        ) {
            let mut s = random_state(&docs, groups, 6, 0, seed);
            s.set_symmetric_alpha(0.7);
            let mut r = seeded(seed);
            for _ in 0..3 {
                gibbs_sweep(&mut s, &docs, 0.05, &mut r);
                prop_assert!(s.counts_consistent(&docs));
            }
        }

        #[test]
        fn conditional_normalizes(
            docs in proptest::collection::vec(proptest::collection::vec(0u32..4, 1..8), 1..4),
            groups in 1usize..6,
            seed in 0u64..1000,
            a in 1e-6f64..50.0,
        ) {
            let mut s = random_state(&docs, groups, 4, 0, seed);
            s.set_symmetric_alpha(a);
            let mut w = vec![0.0; groups];
            for (u, toks) in docs.iter().enumerate() {
                for &t in toks {
                    let total = conditional_weights(&s, u, t as usize, 0.01, &mut w);
                    let p: f64 = w.iter().map(|v| v / total).sum();
                    prop_assert!((p - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
