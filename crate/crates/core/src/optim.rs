//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Maximizes `f`. The callback writes the gradient into its second argument and
//! returns the objective. Only steps satisfying the sufficient-increase
//! condition are accepted, so the objective trace is non-decreasing.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when ‖∇f‖∞ ≤ grad_tol · max(1, |f|).
    pub grad_tol: f64,
    /// Stop when the relative objective gain of an iteration is below this.
    pub f_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iter: 100,
            memory: 10,
            grad_tol: 1e-8,
            f_tol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptStatus {
    Converged,
    MaxIter,
    /// No step satisfying the Wolfe conditions was found; the best iterate is returned.
    LineSearchFailed,
    /// The objective or gradient became non-finite at the start point.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    /// Objective after each accepted step, starting with the entry value.
    pub objective: Vec<f64>,
    pub grad_norm: Vec<f64>,
    pub evaluations: usize,
    pub status: OptStatus,
}

impl OptTrace {
    pub fn steps(&self) -> usize {
        self.objective.len().saturating_sub(1)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Internal minimizer view: φ(x) = −f(x).
struct Neg<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Neg<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x, g);
        g.iter_mut().for_each(|gi| *gi = -*gi);
        -v
    }
}

struct Point {
    alpha: f64,
    f: f64,
    d: f64,
}

/// Minimize along `dir` from `x` (value `f0`, directional derivative `d0 < 0`).
/// Returns the accepted step with its point, value and gradient.
#[allow(clippy::too_many_arguments)]
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Neg<F>,
    x: &[f64],
    f0: f64,
    d0: f64,
    dir: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
    xn: &mut [f64],
    gn: &mut [f64],
) -> Option<f64> {
    let mut eval_at = |obj: &mut Neg<F>, a: f64, xn: &mut [f64], gn: &mut [f64]| -> Point {
        for i in 0..x.len() {
            xn[i] = x[i] + a * dir[i];
        }
        let f = obj.eval(xn, gn);
        let d = if f.is_finite() {
            dot(gn, dir)
        } else {
            f64::NAN
        };
        Point { alpha: a, f, d }
    };
    let armijo = |p: &Point| p.f.is_finite() && p.f <= f0 + cfg.c1 * p.alpha * d0;
    let curvature = |p: &Point| p.d.abs() <= -cfg.c2 * d0;

    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        d: d0,
    };
    let mut a = alpha0;
    let mut best: Option<(f64, f64)> = None; // (alpha, f) of best Armijo point
    let mut evals = 0;
    let (mut lo, mut hi);
    loop {
        if evals >= cfg.max_line_search {
            return finish(best, &mut eval_at, obj, xn, gn);
        }
        let p = eval_at(obj, a, xn, gn);
        evals += 1;
        if !p.f.is_finite() {
            // Step overshot into an invalid region: shrink toward the last good point.
            a = prev.alpha + 0.1 * (a - prev.alpha);
            continue;
        }
        if armijo(&p) && best.is_none_or(|(_, bf)| p.f < bf) {
            best = Some((p.alpha, p.f));
        }
        if !armijo(&p) || (evals > 1 && p.f >= prev.f) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return Some(p.f);
        }
        if p.d >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        prev = p;
        a *= 2.0;
    }
    // Zoom between lo (satisfies Armijo, lowest f so far) and hi.
    loop {
        if evals >= cfg.max_line_search
            || (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0)
        {
            return finish(best, &mut eval_at, obj, xn, gn);
        }
        let a = interpolate(&lo, &hi);
        let p = eval_at(obj, a, xn, gn);
        evals += 1;
        if p.f.is_finite() && armijo(&p) && best.is_none_or(|(_, bf)| p.f < bf) {
            best = Some((p.alpha, p.f));
        }
        if !p.f.is_finite() || !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Some(p.f);
            }
            if p.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
}

fn finish<F: FnMut(&[f64], &mut [f64]) -> f64>(
    best: Option<(f64, f64)>,
    eval_at: &mut impl FnMut(&mut Neg<F>, f64, &mut [f64], &mut [f64]) -> Point,
    obj: &mut Neg<F>,
    xn: &mut [f64],
    gn: &mut [f64],
) -> Option<f64> {
    // Accept the best sufficient-decrease point even without curvature.
    let (a, _) = best?;
    let p = eval_at(obj, a, xn, gn);
    Some(p.f)
}

/// Safeguarded cubic interpolation, falling back to bisection.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a0, a1) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a0 + a1);
    if !(hi.f.is_finite() && hi.d.is_finite()) {
        return mid;
    }
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a0 - a1);
    let disc = d1 * d1 - lo.d * hi.d;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (a1 - a0).signum() * disc.sqrt();
    let a = a1 - (a1 - a0) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    let (l, h) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
    let margin = 0.1 * (h - l);
    if a.is_finite() && a > l + margin && a < h - margin {
        a
    } else {
        mid
    }
}

/// Maximize `f` starting from `x0`. Returns the best point found, its value
/// and the trace.
pub fn maximize<F>(f: F, x0: &[f64], cfg: &LbfgsConfig) -> (Vec<f64>, f64, OptTrace)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Neg { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = obj.eval(&x, &mut g);
    let mut trace = OptTrace {
        objective: vec![-fx],
        grad_norm: vec![inf_norm(&g)],
        evaluations: 0,
        status: OptStatus::MaxIter,
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        trace.status = OptStatus::NonFinite;
        trace.evaluations = obj.evals;
        return (x, -fx, trace);
    }
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut dir = vec![0.0; n];
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory.max(1)];

    for iter in 0..cfg.max_iter {
        if n == 0 || inf_norm(&g) <= cfg.grad_tol * fx.abs().max(1.0) {
            trace.status = OptStatus::Converged;
            break;
        }
        // Two-loop recursion: dir = −H g.
        dir.copy_from_slice(&g);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[i] = a;
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        }
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        }
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot(y, &dir);
            dir.iter_mut()
                .zip(s)
                .for_each(|(d, si)| *d += (alpha_buf[i] - b) * si);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut d0 = dot(&g, &dir);
        if !(d0 < 0.0) {
            // Not a descent direction: reset to steepest descent.
            hist.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            d0 = dot(&g, &dir);
        }
        let alpha0 = if iter == 0 && hist.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let Some(fnew) = line_search(&mut obj, &x, fx, d0, &dir, alpha0, cfg, &mut xn, &mut gn)
        else {
            trace.status = OptStatus::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let gain = fx - fnew;
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        fx = fnew;
        trace.objective.push(-fx);
        trace.grad_norm.push(inf_norm(&g));
        if gain <= cfg.f_tol * fx.abs().max(1.0) {
            trace.status = OptStatus::Converged;
            break;
        }
    }
    trace.evaluations = obj.evals;
    (x, -fx, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_negative_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -(-2.0 * (1.0 - a) - 400.0 * a * (b - a * a));
            g[1] = -(200.0 * (b - a * a));
            -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        };
        let cfg = LbfgsConfig {
            max_iter: 500,
            ..Default::default()
        };
        let (x, fx, tr) = maximize(f, &[-1.2, 1.0], &cfg);
        assert!(
            (x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5,
            "{x:?} {tr:?}"
        );
        assert!(fx > -1e-9);
        assert!(tr.objective.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn quadratic_converges_exactly() {
        let c = [1.0, -2.0, 3.0, 0.5];
        let scale = [1.0, 10.0, 0.1, 5.0];
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..4 {
                g[i] = -scale[i] * (x[i] - c[i]);
                v -= 0.5 * scale[i] * (x[i] - c[i]).powi(2);
            }
            v
        };
        let (x, _, tr) = maximize(f, &[0.0; 4], &LbfgsConfig::default());
        for i in 0..4 {
            assert!((x[i] - c[i]).abs() < 1e-6);
        }
        assert_eq!(tr.status, OptStatus::Converged);
    }

    #[test]
    fn non_finite_regions_are_avoided() {
        // log barrier: maximum of ln x − x at x = 1; x ≤ 0 is −∞.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.0 {
                g[0] = f64::NAN;
                return f64::NEG_INFINITY;
            }
            g[0] = 1.0 / x[0] - 1.0;
            x[0].ln() - x[0]
        };
        let (x, _, tr) = maximize(f, &[0.01], &LbfgsConfig::default());
        assert!((x[0] - 1.0).abs() < 1e-6, "{x:?} {tr:?}");
    }

    #[test]
    fn empty_problem_is_converged() {
        let (x, fx, tr) = maximize(|_: &[f64], _: &mut [f64]| 3.0, &[], &LbfgsConfig::default());
        assert!(x.is_empty());
        assert_eq!(fx, 3.0);
        assert_eq!(tr.status, OptStatus::Converged);
    }
}
