use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Draw from Dirichlet(alpha). Works in log space so tiny concentrations
/// (e.g. 0.01) never produce an all-zero vector.
pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, alpha: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_variate(rng, a)).collect();
    let mut out = logs;
    crate::util::math::softmax_in_place(&mut out);
    out
}

/// log of a Gamma(shape, 1) variate. For shape < 1 uses
/// Gamma(a) = Gamma(a + 1) * U^(1/a).
pub fn log_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, 1.0)
            .expect("valid gamma")
            .sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    } else {
        Gamma::new(shape, 1.0)
            .expect("valid gamma")
            .sample(rng)
            .ln()
    }
}

/// Index drawn proportionally to non-negative weights with total `total`.
pub fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let mut r = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        r -= w;
        if r < 0.0 {
            return i;
        }
    }
    // Rounding left r marginally non-negative: take the last positive weight.
    weights
        .iter()
        .rposition(|&w| w > 0.0)
        .unwrap_or(weights.len() - 1)
}
