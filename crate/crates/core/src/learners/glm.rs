//! Linear and logistic GLMs on standardized features.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Features, Model};
use crate::error::{Error, Result};
use crate::stats::expit;

/// Ridge added when the design is (numerically) singular.
const FALLBACK_RIDGE: f64 = 1e-6;
const EIGEN_RTOL: f64 = 1e-10;

struct Standardized {
    mu: Vec<f64>,
    sd: Vec<f64>,
    /// Columns with non-zero spread; constant columns get coefficient 0.
    active: Vec<usize>,
}

fn standardize(x: &Features, w: &[f64]) -> Standardized {
    let sw: f64 = w.iter().sum();
    let p = x.n_cols();
    let mut mu = vec![0.0; p];
    let mut sd = vec![0.0; p];
    for i in 0..x.n_rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            mu[j] += w[i] * v / sw;
        }
    }
    for i in 0..x.n_rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            sd[j] += w[i] * (v - mu[j]).powi(2) / sw;
        }
    }
    for s in &mut sd {
        *s = s.sqrt();
    }
    let active = (0..p).filter(|&j| sd[j] > 1e-12 * (1.0 + mu[j].abs())).collect();
    Standardized { mu, sd, active }
}

fn design(x: &Features, st: &Standardized) -> DMatrix<f64> {
    let k = st.active.len();
    DMatrix::from_fn(x.n_rows(), k, |i, c| {
        let j = st.active[c];
        (x.get(i, j) - st.mu[j]) / st.sd[j]
    })
}

fn is_ill_conditioned(m: &DMatrix<f64>) -> bool {
    if m.nrows() == 0 {
        return false;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().copied().fold(0.0, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    !(min > EIGEN_RTOL * max.max(1e-300))
}

fn solve_spd(mut a: DMatrix<f64>, b: &DVector<f64>, flags: &mut Vec<String>) -> Result<DVector<f64>> {
    if is_ill_conditioned(&a) {
        for d in 0..a.nrows() {
            a[(d, d)] += FALLBACK_RIDGE;
        }
        if !flags.iter().any(|f| f == "ridge_fallback") {
            flags.push("ridge_fallback".to_string());
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Domain("normal equations are not positive definite".into()))?;
    Ok(chol.solve(b))
}

fn unstandardize(beta: &DVector<f64>, b0: f64, st: &Standardized, p: usize) -> (f64, Vec<f64>) {
    let mut coef = vec![0.0; p];
    let mut intercept = b0;
    for (c, &j) in st.active.iter().enumerate() {
        coef[j] = beta[c] / st.sd[j];
        intercept -= coef[j] * st.mu[j];
    }
    (intercept, coef)
}

/// Weighted least squares minimizing `mean_w (y - b0 - x b)^2 + l2 |b_std|^2`.
pub(super) fn fit_linear(
    x: &Features,
    y: &[f64],
    w: Option<&[f64]>,
    l2: f64,
    flags: &mut Vec<String>,
) -> Result<Model> {
    let ones;
    let w = match w {
        Some(w) => w,
        None => {
            ones = vec![1.0; y.len()];
            &ones
        }
    };
    let sw: f64 = w.iter().sum();
    let st = standardize(x, w);
    let ybar = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let z = design(x, &st);
    let k = st.active.len();
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    for i in 0..y.len() {
        let zi = z.row(i);
        let wi = w[i] / sw;
        for a in 0..k {
            xty[a] += wi * zi[a] * (y[i] - ybar);
            for b in 0..=a {
                xtx[(a, b)] += wi * zi[a] * zi[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            xtx[(b, a)] = xtx[(a, b)];
        }
        xtx[(a, a)] += l2;
    }
    let beta = solve_spd(xtx, &xty, flags)?;
    let (intercept, coef) = unstandardize(&beta, ybar, &st, x.n_cols());
    Ok(Model::Linear { intercept, coef })
}

pub(super) fn logistic_prediction(eta: f64) -> f64 {
    expit(eta).clamp(1e-12, 1.0 - 1e-12)
}

fn log_lik(z: &DMatrix<f64>, y: &[f64], w: &[f64], b0: f64, beta: &DVector<f64>, l2: f64, sw: f64) -> f64 {
    let mut ll = 0.0;
    for i in 0..y.len() {
        let eta = b0 + z.row(i).transpose().dot(beta);
        // y*eta - log(1 + e^eta), computed stably
        let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
        ll += w[i] * (y[i] * eta - softplus);
    }
    ll / sw - 0.5 * l2 * beta.norm_squared()
}

/// Logistic regression by damped Newton (IRLS); targets may be fractional.
pub(super) fn fit_logistic(
    x: &Features,
    y: &[f64],
    w: Option<&[f64]>,
    l2: f64,
    flags: &mut Vec<String>,
) -> Result<Model> {
    let ones;
    let w = match w {
        Some(w) => w,
        None => {
            ones = vec![1.0; y.len()];
            &ones
        }
    };
    let sw: f64 = w.iter().sum();
    let st = standardize(x, w);
    let z = design(x, &st);
    let k = st.active.len();
    let ybar = (y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw).clamp(1e-6, 1.0 - 1e-6);
    let mut l2 = l2;
    let mut b0 = crate::stats::logit(ybar);
    let mut beta = DVector::zeros(k);
    let mut ll = log_lik(&z, y, w, b0, &beta, l2, sw);
    for _ in 0..100 {
        // gradient and Hessian over (intercept, beta)
        let mut g = DVector::zeros(k + 1);
        let mut h = DMatrix::zeros(k + 1, k + 1);
        for i in 0..y.len() {
            let zi = z.row(i);
            let p = expit(b0 + zi.transpose().dot(&beta));
            let wi = w[i] / sw;
            let r = wi * (y[i] - p);
            let v = wi * (p * (1.0 - p)).max(1e-12);
            g[0] += r;
            h[(0, 0)] += v;
            for a in 0..k {
                g[a + 1] += r * zi[a];
                h[(a + 1, 0)] += v * zi[a];
                for b in 0..=a {
                    h[(a + 1, b + 1)] += v * zi[a] * zi[b];
                }
            }
        }
        for a in 0..=k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for a in 0..k {
            g[a + 1] -= l2 * beta[a];
            h[(a + 1, a + 1)] += l2;
        }
        let step = solve_spd(h, &g, flags)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let nb0 = b0 + t * step[0];
            let nbeta = &beta + step.rows(1, k) * t;
            let nll = log_lik(&z, y, w, nb0, &nbeta, l2, sw);
            if nll >= ll - 1e-14 {
                let delta = (nll - ll).abs();
                b0 = nb0;
                beta = nbeta;
                ll = nll;
                accepted = delta > 1e-15;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.amax() * t < 1e-10 {
            break;
        }
        if beta.amax() > 1e3 {
            // quasi-separation: coefficients run off, so regularize and restart
            l2 = l2.max(1e-4);
            if !flags.iter().any(|f| f == "separation_ridge") {
                flags.push("separation_ridge".to_string());
            }
            b0 = crate::stats::logit(ybar);
            beta = DVector::zeros(k);
            ll = log_lik(&z, y, w, b0, &beta, l2, sw);
        }
    }
    if !b0.is_finite() || beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("logistic fit diverged".into()));
    }
    let (intercept, coef) = unstandardize(&beta, b0, &st, x.n_cols());
    Ok(Model::Logistic { intercept, coef })
}

#[cfg(test)]
mod tests {
    use super::super::{fit, Features, LearnerSpec};
    use crate::stats::{expit, rng};
    use proptest::prelude::*;
    use rand::Rng;

    fn data(n: usize, seed: u64) -> (Features, Vec<f64>, Vec<f64>) {
        let mut r = rng(seed, 0);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut yb = Vec::new();
        for _ in 0..n {
            let a: f64 = r.random_range(-2.0..2.0);
            let b: f64 = r.random_range(0.0..5.0);
            rows.push(vec![a, b]);
            y.push(1.0 + 0.5 * a - 0.3 * b + r.random_range(-1.0..1.0));
            yb.push(f64::from(r.random::<f64>() < expit(0.4 + a - 0.2 * b)));
        }
        (Features::from_rows(vec!["a".into(), "b".into()], &rows).unwrap(), y, yb)
    }

    #[test]
    fn logistic_recovers_coefficients() {
        let (x, _, yb) = data(20000, 3);
        let f = fit(&LearnerSpec::GlmLogistic { l2: 0.0 }, &x, &yb, None).unwrap();
        let (b0, b) = f.coefficients().unwrap();
        assert!((b0 - 0.4).abs() < 0.1 && (b[0] - 1.0).abs() < 0.1 && (b[1] + 0.2).abs() < 0.05, "{b0} {b:?}");
        let p = f.predict(&x).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn collinear_design_flags_ridge() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let x = Features::from_rows(vec!["a".into(), "b".into()], &rows).unwrap();
        let y: Vec<f64> = (0..20).map(|i| 3.0 * i as f64).collect();
        let f = fit(&LearnerSpec::GlmLinear { l2: 0.0 }, &x, &y, None).unwrap();
        assert!(f.flags().contains(&"ridge_fallback".to_string()));
        let pred = f.predict(&x).unwrap();
        assert!(pred.iter().zip(&y).all(|(p, t)| (p - t).abs() < 1e-3));
    }

    #[test]
    fn separable_logistic_stays_finite() {
        let x = Features::new(vec!["x".into()], 6, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let y = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let f = fit(&LearnerSpec::GlmLogistic { l2: 0.0 }, &x, &y, None).unwrap();
        let p = f.predict(&x).unwrap();
        assert!(p[0] < 0.1 && p[5] > 0.9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn uniform_weights_match_unweighted(seed in 0u64..1000, c in 0.1f64..10.0) {
            let (x, y, yb) = data(200, seed);
            let w = vec![c; 200];
            for (spec, t) in [(LearnerSpec::GlmLinear { l2: 0.0 }, &y), (LearnerSpec::GlmLogistic { l2: 0.0 }, &yb)] {
                let a = fit(&spec, &x, t, None).unwrap();
                let b = fit(&spec, &x, t, Some(&w)).unwrap();
                let (a0, ac) = a.coefficients().unwrap();
                let (b0, bc) = b.coefficients().unwrap();
                prop_assert!((a0 - b0).abs() < 1e-8);
                for (u, v) in ac.iter().zip(bc) {
                    prop_assert!((u - v).abs() < 1e-8);
                }
            }
        }
    }
}
