use cohort::corpus::{synth_gstm, SynthConfig};
use cohort::evalkit::align_topics;
use cohort::gstm::{fit, ContentPrior, GstmHyper};

fn planted(seed: u64) -> cohort::corpus::Synthetic {
    synth_gstm(&SynthConfig {
        users: 300,
        vocab: 60,
        groups: 2,
        emb_dim: 4,
        doc_len: 60,
        kappa_scale: 1.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn two_group_recovery_within_tolerance() {
    for seed in 0..3 {
        let s = planted(seed);
        let hyper = GstmHyper {
            groups: 2,
            seed,
            ..Default::default()
        };
        let f = fit(&s.corpus, &s.covariates, &hyper).unwrap();
        let (_, tv) = align_topics(&s.truth.phi, &f.state.beta, 2, 60);
        println!("seed {seed}: tv {tv:?}, iterations {}", f.report.iterations);
        assert!(tv.iter().all(|&d| d <= 0.2), "seed {seed}: {tv:?}");
        assert_eq!(f.report.violations, 0);
    }
}

#[test]
fn laplace_prior_zeros_more_deviations_than_gaussian() {
    let s = planted(7);
    let zeros = |p| {
        let hyper = GstmHyper {
            groups: 2,
            content_prior: p,
            max_em_iters: 30,
            ..Default::default()
        };
        fit(&s.corpus, &s.covariates, &hyper)
            .unwrap()
            .state
            .kappa_zero_fraction()
    };
    let (l, g) = (zeros(ContentPrior::Laplace), zeros(ContentPrior::Gaussian));
    assert!(l > g, "{l} vs {g}");
}
