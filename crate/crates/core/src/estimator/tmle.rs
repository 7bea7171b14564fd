//! One-parameter logistic fluctuation.

use crate::stats::expit;

/// Solves `sum_i w_i (y_i - expit(offset_i + eps)) = 0` for `eps`.
///
/// The left side is strictly decreasing in `eps`, so a safeguarded Newton
/// iteration inside a bracketing interval converges to machine precision.
/// Returns 0 when all weights vanish.
pub fn solve_fluctuation(y: &[f64], offset: &[f64], w: &[f64]) -> f64 {
    let active: Vec<usize> = (0..y.len()).filter(|&i| w[i] != 0.0).collect();
    if active.is_empty() {
        return 0.0;
    }
    let score = |eps: f64| -> (f64, f64) {
        let (mut s, mut d) = (0.0, 0.0);
        for &i in &active {
            let p = expit(offset[i] + eps);
            s += w[i] * (y[i] - p);
            d += w[i] * p * (1.0 - p);
        }
        (s, d)
    };
    let (s0, _) = score(0.0);
    if s0 == 0.0 {
        return 0.0;
    }
    // bracket the root
    let (mut lo, mut hi) = if s0 > 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    for _ in 0..200 {
        if s0 > 0.0 && score(hi).0 > 0.0 {
            lo = hi;
            hi *= 2.0;
        } else if s0 < 0.0 && score(lo).0 < 0.0 {
            hi = lo;
            lo *= 2.0;
        } else {
            break;
        }
    }
    let mut eps = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (s, d) = score(eps);
        if s == 0.0 {
            return eps;
        }
        if s > 0.0 {
            lo = eps;
        } else {
            hi = eps;
        }
        let newton = eps + s / d.max(1e-300);
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - eps).abs() <= 1e-15 * (1.0 + eps.abs()) {
            return next;
        }
        eps = next;
    }
    eps
}
