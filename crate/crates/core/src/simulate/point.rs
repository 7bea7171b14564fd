//! Point-exposure DGP and shift-contrast oracle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use super::{chunks, DgpSpec, ExposureModel, Moments, Response, Truth};
use crate::error::Result;
use crate::panel::{PanelRow, PanelTable, Stratum};
use crate::policy::PointShift;
use crate::stats::{derive_seed, rng};

fn truncated_normal(r: &mut ChaCha8Rng, bound: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(r);
        if z.abs() <= bound {
            return z;
        }
    }
}

fn draw_covariates(spec: &DgpSpec, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..spec.covariate_dim).map(|_| truncated_normal(r, spec.covariate_bound)).collect()
}

/// Exposure given covariates; `v` is the uniform band draw when it is
/// shared within a cluster.
fn draw_exposure(spec: &DgpSpec, w1: f64, v: Option<f64>, r: &mut ChaCha8Rng) -> f64 {
    match spec.exposure {
        ExposureModel::Ramp { a_max, tilt, .. } => {
            let v = v.unwrap_or_else(|| r.random::<f64>());
            let th = ramp_theta(tilt, w1, spec.covariate_bound);
            // Inverse of the cdf `u + theta (u^2 - u)`, in a form stable at theta = 0.
            let u = 2.0 * v / ((1.0 - th) + ((1.0 - th).powi(2) + 4.0 * th * v).sqrt());
            a_max * u.clamp(0.0, 1.0)
        }
        ExposureModel::UniformBand { slope, width, .. } => {
            let v = v.unwrap_or_else(|| r.random::<f64>());
            slope * (w1 + spec.covariate_bound) + width * v
        }
        ExposureModel::Normal { intercept, slope, sd, a_max } => loop {
            let z: f64 = StandardNormal.sample(r);
            let a = intercept + slope * w1 + sd * z;
            if (0.0..=a_max).contains(&a) {
                return a;
            }
        },
        ExposureModel::Disjoint { a_max } => {
            let u: f64 = r.random();
            if w1 < 0.0 {
                u
            } else {
                a_max - 1.0 + u
            }
        }
    }
}

fn ramp_theta(tilt: f64, w1: f64, bound: f64) -> f64 {
    tilt * (w1 / bound).clamp(-1.0, 1.0)
}

fn ramp_cdf(x: f64, a_max: f64, th: f64) -> f64 {
    let u = (x / a_max).clamp(0.0, 1.0);
    u + th * (u * u - u)
}

fn pad(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// Draws a point-exposure panel. Unit `i` belongs to cluster `i mod M`, so
/// cluster sizes differ by at most one.
pub fn simulate_point(spec: &DgpSpec, stratum: Stratum) -> Result<PanelTable> {
    spec.validate()?;
    let m = spec.n_clusters;
    let mut crng = rng(spec.seed, 2);
    let effect = Normal::new(0.0, spec.outcome.cluster_sd).expect("validated sd");
    let cluster_effect: Vec<f64> = (0..m).map(|_| effect.sample(&mut crng)).collect();
    let shared_v = spec.exposure.cluster_level();
    let cluster_v: Vec<f64> = (0..m).map(|_| crng.random::<f64>()).collect();
    let noise = Normal::new(0.0, spec.outcome.noise_sd).expect("validated sd");
    let mut r = rng(spec.seed, 1);
    let (wu, wc) = (pad(spec.n_units), pad(m));
    let rows = (0..spec.n_units)
        .map(|i| {
            let c = i % m;
            let w = draw_covariates(spec, &mut r);
            let a = draw_exposure(spec, w[0], shared_v.then(|| cluster_v[c]), &mut r);
            let y = spec.outcome.f(a, &w) + cluster_effect[c] + noise.sample(&mut r);
            PanelRow {
                unit_id: format!("u{i:0wu$}"),
                cluster_id: format!("s{c:0wc$}"),
                w,
                a,
                y,
            }
        })
        .collect();
    let names = (1..=spec.covariate_dim).map(|j| format!("W{j}")).collect();
    PanelTable::new(stratum, names, rows)
}

/// Length of `[lo, hi] ∩ [a, b]`.
fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    (hi.min(b) - lo.max(a)).max(0.0)
}

/// `E[d(A) - A | W1 = w1]` in closed form, where available.
fn conditional_shift_mean(spec: &DgpSpec, shift: &PointShift, w1: f64) -> Option<f64> {
    match shift {
        PointShift::Identity => return Some(0.0),
        PointShift::Additive(d) => return Some(*d),
        _ => {}
    }
    if let ExposureModel::Ramp { a_max, tilt, .. } = spec.exposure {
        let th = ramp_theta(tilt, w1, spec.covariate_bound);
        let f = |x| ramp_cdf(x, a_max, th);
        return Some(match shift {
            PointShift::Identity => 0.0,
            PointShift::Additive(d) => *d,
            PointShift::Static(c) => c - a_max * (0.5 + th / 6.0),
            PointShift::Bounded(s) => {
                let (d1, d2, am) = (s.delta1(), s.delta2(), s.a_max());
                d2 * f(am - d2) + d1 * (f(am - d1) - f(am - d2))
            }
        });
    }
    let (lo, width) = match spec.exposure {
        ExposureModel::Ramp { .. } => unreachable!("handled above"),
        ExposureModel::UniformBand { slope, width, .. } => (slope * (w1 + spec.covariate_bound), width),
        ExposureModel::Disjoint { a_max } => (if w1 < 0.0 { 0.0 } else { a_max - 1.0 }, 1.0),
        ExposureModel::Normal { .. } => return None,
    };
    let hi = lo + width;
    Some(match shift {
        PointShift::Identity => 0.0,
        PointShift::Additive(d) => *d,
        PointShift::Static(c) => c - (lo + hi) / 2.0,
        PointShift::Bounded(s) => {
            if width == 0.0 {
                return Some(s.apply(lo).ok()? - lo);
            }
            let (d1, d2, am) = (s.delta1(), s.delta2(), s.a_max());
            (d2 * overlap(lo, hi, 0.0, am - d2) + d1 * overlap(lo, hi, am - d2, am - d1)) / width
        }
    })
}

/// `E[d(A) - A]` by integrating the conditional mean over the truncated
/// normal law of `W1` with composite Simpson's rule.
fn shift_mean_closed_form(spec: &DgpSpec, shift: &PointShift) -> Option<f64> {
    if let PointShift::Additive(d) = shift {
        return Some(*d);
    }
    let b = spec.covariate_bound;
    let constant_in_w = match spec.exposure {
        ExposureModel::UniformBand { slope, .. } => slope == 0.0,
        ExposureModel::Ramp { tilt, .. } => tilt == 0.0,
        _ => false,
    };
    if constant_in_w {
        return conditional_shift_mean(spec, shift, 0.0);
    }
    if let ExposureModel::Disjoint { .. } = spec.exposure {
        // W1 is symmetric, so each half has probability 1/2.
        return Some(0.5 * conditional_shift_mean(spec, shift, -1.0)? + 0.5 * conditional_shift_mean(spec, shift, 1.0)?);
    }
    let k = 4000;
    let h = 2.0 * b / k as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=k {
        let x = -b + i as f64 * h;
        let c = if i == 0 || i == k { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let phi = (-0.5 * x * x).exp();
        num += c * phi * conditional_shift_mean(spec, shift, x)?;
        den += c * phi;
    }
    Some(num / den)
}

/// `E[f(d(A), W)] - E[f(A, W)]` by Monte Carlo over `draws` units, with a
/// closed-form cross-check for linear and null responses.
pub fn true_shift_contrast(spec: &DgpSpec, shift: &PointShift, draws: usize) -> Result<Truth> {
    spec.validate()?;
    let base = derive_seed(spec.seed, 0x7A17);
    let parts: Vec<Result<(Moments, Moments)>> = chunks(draws)
        .into_par_iter()
        .enumerate()
        .map(|(c, size)| {
            let mut r = rng(base, c as u64);
            let (mut diff, mut level) = (Moments::default(), Moments::default());
            for _ in 0..size {
                let w = draw_covariates(spec, &mut r);
                let a = draw_exposure(spec, w[0], None, &mut r);
                let d = shift.apply(a)?;
                let fd = spec.outcome.f(d, &w);
                diff.push(fd - spec.outcome.f(a, &w));
                level.push(fd);
            }
            Ok((diff, level))
        })
        .collect();
    let (mut diff, mut level) = (Moments::default(), Moments::default());
    for p in parts {
        let (d, l) = p?;
        diff = diff.merge(d);
        level = level.merge(l);
    }
    let mc = diff.mean();
    let closed = match spec.outcome.response {
        Response::Null => Some(0.0),
        Response::Linear => shift_mean_closed_form(spec, shift).map(|m| spec.outcome.a_coef * m),
        Response::Nonlinear => None,
    };
    Ok(Truth {
        true_contrast: closed.unwrap_or(mc),
        true_psi: level.mean(),
        mc_se: diff.se(),
        oracle_method: if closed.is_some() { "closed_form" } else { "monte_carlo" }.into(),
        mc_contrast: Some(mc),
        closed_form: closed,
        draws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::BoundedAdditiveShift;

    fn bounded(a_max: f64) -> PointShift {
        PointShift::Bounded(BoundedAdditiveShift::new(1.0, 2.0, a_max).unwrap())
    }

    #[test]
    fn cluster_sizes_and_determinism() {
        let s = DgpSpec::linear(100, 10, 5);
        let p = simulate_point(&s, Stratum::Late).unwrap();
        assert_eq!(p.len(), 100);
        assert_eq!(p.n_clusters(), 10);
        let (idx, _) = p.cluster_index();
        for c in 0..10 {
            assert_eq!(idx.iter().filter(|&&k| k == c).count(), 10);
        }
        assert_eq!(p, simulate_point(&s, Stratum::Late).unwrap());
        let uneven = simulate_point(&DgpSpec::linear(103, 10, 5), Stratum::Late).unwrap();
        let (idx, _) = uneven.cluster_index();
        let sizes: Vec<usize> = (0..10).map(|c| idx.iter().filter(|&&k| k == c).count()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn zero_noise_is_exactly_linear() {
        let mut s = DgpSpec::linear(50, 5, 1);
        s.outcome.noise_sd = 0.0;
        let p = simulate_point(&s, Stratum::Late).unwrap();
        for r in p.rows() {
            assert!((r.y - (10.0 + 2.0 * r.a + 3.0 * r.w[0] + r.w[1])).abs() < 1e-12);
            assert!(r.a >= 0.0 && r.a <= s.a_max());
        }
    }

    #[test]
    fn infeasible_specs() {
        let mut s = DgpSpec::linear(10, 2, 0);
        s.exposure = ExposureModel::UniformBand { slope: 0.0, width: 0.0, cluster_level: false };
        assert!(s.validate().is_err());
        let mut s = DgpSpec::linear(10, 2, 0);
        s.outcome.cluster_sd = -1.0;
        assert!(s.validate().is_err());
        assert!(DgpSpec::linear(3, 5, 0).validate().is_err());
    }

    #[test]
    fn oracle_trivial_cases() {
        let s = DgpSpec::null(10, 2, 0);
        let t = true_shift_contrast(&s, &bounded(4.79), 10_000).unwrap();
        assert_eq!(t.true_contrast, 0.0);
        assert_eq!(t.mc_contrast, Some(0.0));
        // Additive shift everywhere: 2 * 2.
        let s = DgpSpec::linear(10, 2, 0);
        let t = true_shift_contrast(&s, &PointShift::Additive(2.0), 10_000).unwrap();
        assert!((t.mc_contrast.unwrap() - 4.0).abs() < 1e-9);
        assert_eq!(t.closed_form, Some(4.0));
    }

    #[test]
    fn uniform_exposure_dual_oracle() {
        let mut s = DgpSpec::linear(10, 2, 3);
        s.exposure = ExposureModel::UniformBand { slope: 0.0, width: 4.79, cluster_level: false };
        let t = true_shift_contrast(&s, &bounded(4.79), 200_000).unwrap();
        let exact = 2.0 * (2.0 * 2.79 + 1.0 * 1.0) / 4.79;
        assert!((t.closed_form.unwrap() - exact).abs() < 1e-12);
        assert!((t.mc_contrast.unwrap() - exact).abs() < 3.0 * t.mc_se, "{t:?}");
    }

    #[test]
    fn ramp_exposure_dual_oracle() {
        let s = DgpSpec::linear(10, 2, 4);
        let t = true_shift_contrast(&s, &bounded(s.a_max()), 200_000).unwrap();
        assert!((t.mc_contrast.unwrap() - t.closed_form.unwrap()).abs() < 3.0 * t.mc_se, "{t:?}");
        let st = true_shift_contrast(&s, &PointShift::Static(1.0), 200_000).unwrap();
        assert!((st.mc_contrast.unwrap() - st.closed_form.unwrap()).abs() < 3.0 * st.mc_se, "{st:?}");
    }

    #[test]
    fn ramp_untilted_is_uniform() {
        // theta = 0: A ~ U(0, 4.79), so E[d(A) - A] = (2 * 2.79 + 1) / 4.79
        let mut s = DgpSpec::linear(10, 2, 3);
        s.exposure = ExposureModel::Ramp { a_max: 4.79, tilt: 0.0, cluster_level: false };
        let t = true_shift_contrast(&s, &bounded(4.79), 10_000).unwrap();
        assert!((t.closed_form.unwrap() - 2.0 * (2.0 * 2.79 + 1.0) / 4.79).abs() < 1e-12);
    }

    #[test]
    fn ramp_sampler_matches_cdf() {
        // Empirical cdf of the inverse-cdf sampler at a few points, W1 = 1.
        let mut s = DgpSpec::linear(10, 2, 0);
        s.exposure = ExposureModel::Ramp { a_max: 4.0, tilt: 0.8, cluster_level: false };
        let mut r = rng(9, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| draw_exposure(&s, 1.0, None, &mut r)).collect();
        for x in [0.5, 1.0, 2.0, 3.0, 3.9] {
            let emp = draws.iter().filter(|&&a| a <= x).count() as f64 / n as f64;
            let exact = ramp_cdf(x, 4.0, 0.4);
            assert!((emp - exact).abs() < 0.005, "{x}: {emp} vs {exact}");
        }
    }

    #[test]
    fn band_exposure_dual_oracle() {
        let mut s = DgpSpec::linear(10, 2, 4);
        s.exposure = ExposureModel::UniformBand { slope: 0.5, width: 2.79, cluster_level: false };
        let t = true_shift_contrast(&s, &bounded(s.a_max()), 200_000).unwrap();
        assert!((t.mc_contrast.unwrap() - t.closed_form.unwrap()).abs() < 3.0 * t.mc_se, "{t:?}");
    }

    #[test]
    fn mc_se_scales_with_draws() {
        let mut s = DgpSpec::linear(10, 2, 5);
        s.outcome.response = Response::Nonlinear;
        let a = true_shift_contrast(&s, &bounded(s.a_max()), 40_000).unwrap();
        let b = true_shift_contrast(&s, &bounded(s.a_max()), 160_000).unwrap();
        let ratio = a.mc_se / b.mc_se;
        assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
        assert_eq!(a, true_shift_contrast(&s, &bounded(s.a_max()), 40_000).unwrap());
    }
}
