//! Cross-validated stacking over a learner library.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_inputs, fit, Features, FittedLearner, LearnerSpec, Loss, Model, P_MIN};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    ConvexStack,
    DiscreteSelect,
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub library: Vec<LearnerSpec>,
    #[serde(default = "default_folds")]
    pub v_folds: usize,
    pub loss: Loss,
    #[serde(default)]
    pub weighting: Weighting,
}

impl EnsembleSpec {
    pub fn single(spec: LearnerSpec, loss: Loss) -> Self {
        EnsembleSpec {
            library: vec![spec],
            v_folds: 5,
            loss,
            weighting: Weighting::ConvexStack,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.library.is_empty() {
            return Err(Error::Config("ensemble library is empty".into()));
        }
        if self.v_folds < 2 {
            return Err(Error::Config("ensemble needs v_folds >= 2".into()));
        }
        let classify = self.loss == Loss::LogLoss;
        for s in &self.library {
            let is_reg = matches!(s, LearnerSpec::GlmLinear { .. } | LearnerSpec::GbtRegress(_));
            let is_cls = matches!(s, LearnerSpec::GlmLogistic { .. } | LearnerSpec::GbtClassify(_));
            if (classify && is_reg) || (!classify && is_cls) {
                return Err(Error::Config(format!("{} does not match loss {:?}", s.label(), self.loss)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub learners: Vec<String>,
    /// Out-of-fold loss per member; absent for a singleton library.
    pub cv_losses: Option<Vec<f64>>,
    pub ensemble_cv_loss: Option<f64>,
    pub weights: Vec<f64>,
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        cum += uk;
        let t = (cum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

struct Stacker<'a> {
    z: &'a [Vec<f64>],
    y: &'a [f64],
    w: Option<&'a [f64]>,
    loss: Loss,
}

impl Stacker<'_> {
    fn combine(&self, alpha: &[f64]) -> Vec<f64> {
        (0..self.y.len())
            .map(|i| self.z.iter().zip(alpha).map(|(col, a)| a * col[i]).sum())
            .collect()
    }

    fn value(&self, alpha: &[f64]) -> f64 {
        self.loss.eval(self.y, &self.combine(alpha), self.w)
    }

    fn gradient(&self, alpha: &[f64]) -> Vec<f64> {
        let p = self.combine(alpha);
        let sw: f64 = self.w.map_or(self.y.len() as f64, |w| w.iter().sum());
        let mut g = vec![0.0; alpha.len()];
        for i in 0..self.y.len() {
            let wi = self.w.map_or(1.0, |w| w[i]) / sw;
            let d = match self.loss {
                Loss::SquaredError => 2.0 * (p[i] - self.y[i]),
                Loss::LogLoss => {
                    let q = p[i].clamp(P_MIN, 1.0 - P_MIN);
                    -(self.y[i] / q) + (1.0 - self.y[i]) / (1.0 - q)
                }
            };
            for (k, col) in self.z.iter().enumerate() {
                g[k] += wi * d * col[i];
            }
        }
        g
    }

    /// Projected gradient descent on the simplex, started at `alpha0`,
    /// with backtracking so the loss never increases.
    fn solve(&self, alpha0: Vec<f64>) -> Vec<f64> {
        let mut alpha = alpha0;
        let mut f = self.value(&alpha);
        let mut step = 1.0;
        for _ in 0..1000 {
            let g = self.gradient(&alpha);
            let mut moved = false;
            while step > 1e-20 {
                let cand: Vec<f64> =
                    project_to_simplex(&alpha.iter().zip(&g).map(|(a, gk)| a - step * gk).collect::<Vec<_>>());
                let diff: Vec<f64> = cand.iter().zip(&alpha).map(|(c, a)| c - a).collect();
                let lin: f64 = g.iter().zip(&diff).map(|(a, b)| a * b).sum();
                let quad: f64 = diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
                let fc = self.value(&cand);
                if fc <= f + lin + quad {
                    let improvement = f - fc;
                    if fc <= f {
                        alpha = cand;
                        f = fc;
                    }
                    moved = improvement > 1e-10;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        alpha
    }
}

fn cv_folds(n: usize, v: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::stats::rng(seed, 0xC0FFEE));
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % v;
    }
    fold
}

/// Fits the library with V-fold cross-validation and combines members by
/// convex stacking or discrete selection; members are refit on all rows.
pub fn fit_ensemble(
    spec: &EnsembleSpec,
    x: &Features,
    y: &[f64],
    w: Option<&[f64]>,
    seed: u64,
) -> Result<FittedLearner> {
    spec.validate()?;
    check_inputs(x, y, w)?;
    let labels: Vec<String> = spec.library.iter().map(|s| s.label().to_string()).collect();
    if spec.library.len() == 1 {
        let mut f = fit(&spec.library[0], x, y, w)?;
        f.ensemble = Some(EnsembleSummary {
            learners: labels,
            cv_losses: None,
            ensemble_cv_loss: None,
            weights: vec![1.0],
        });
        return Ok(f);
    }
    let n = y.len();
    if n < spec.v_folds {
        return Err(Error::InvalidInput(format!("{n} rows is fewer than {} folds", spec.v_folds)));
    }
    let fold = cv_folds(n, spec.v_folds, seed);
    let tasks: Vec<(usize, usize)> = (0..spec.v_folds)
        .flat_map(|k| (0..spec.library.len()).map(move |m| (k, m)))
        .collect();
    let fits: Vec<Result<(usize, usize, Vec<usize>, Vec<f64>)>> = tasks
        .par_iter()
        .map(|&(k, m)| {
            let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let wt: Option<Vec<f64>> = w.map(|w| train.iter().map(|&i| w[i]).collect());
            let f = fit(&spec.library[m], &x.select_rows(&train), &yt, wt.as_deref())?;
            let pred = f.predict(&x.select_rows(&test))?;
            Ok((k, m, test, pred))
        })
        .collect();
    let mut z = vec![vec![0.0; n]; spec.library.len()];
    for r in fits {
        let (_, m, test, pred) = r?;
        for (i, p) in test.into_iter().zip(pred) {
            z[m][i] = if spec.loss == Loss::LogLoss { p.clamp(P_MIN, 1.0 - P_MIN) } else { p };
        }
    }
    let cv_losses: Vec<f64> = z.iter().map(|col| spec.loss.eval(y, col, w)).collect();
    let best = (0..cv_losses.len())
        .min_by(|&a, &b| cv_losses[a].total_cmp(&cv_losses[b]))
        .unwrap();
    let mut vertex = vec![0.0; z.len()];
    vertex[best] = 1.0;
    let stacker = Stacker { z: &z, y, w, loss: spec.loss };
    let weights = match spec.weighting {
        Weighting::DiscreteSelect => vertex,
        Weighting::ConvexStack => stacker.solve(vertex),
    };
    let ensemble_cv_loss = stacker.value(&weights);

    let keep: Vec<usize> = (0..weights.len()).filter(|&k| weights[k] > 0.0).collect();
    let members = keep
        .par_iter()
        .map(|&k| fit(&spec.library[k], x, y, w))
        .collect::<Result<Vec<_>>>()?;
    let mut flags: Vec<String> = Vec::new();
    for m in &members {
        for f in m.flags() {
            let tagged = format!("{}:{f}", m.label());
            if !flags.contains(&tagged) {
                flags.push(tagged);
            }
        }
    }
    Ok(FittedLearner {
        label: "ENSEMBLE".into(),
        feature_names: x.names().to_vec(),
        model: Model::Ensemble {
            members,
            weights: keep.iter().map(|&k| weights[k]).collect(),
        },
        flags,
        ensemble: Some(EnsembleSummary {
            learners: labels,
            cv_losses: Some(cv_losses),
            ensemble_cv_loss: Some(ensemble_cv_loss),
            weights,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn linear(n: usize, seed: u64) -> (Features, Vec<f64>) {
        let mut r = rng(seed, 1);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let y = x.iter().map(|v| 1.0 + 3.0 * v + r.random_range(-1.0..1.0)).collect();
        (Features::new(vec!["x".into()], n, x).unwrap(), y)
    }

    #[test]
    fn singleton_equals_single_fit() {
        let (x, y) = linear(100, 1);
        let e = fit_ensemble(&EnsembleSpec::single(LearnerSpec::InterceptOnly, Loss::SquaredError), &x, &y, None, 9)
            .unwrap();
        let s = fit(&LearnerSpec::InterceptOnly, &x, &y, None).unwrap();
        assert_eq!(e.predict(&x).unwrap(), s.predict(&x).unwrap());
    }

    #[test]
    fn stacking_prefers_correct_model() {
        let (x, y) = linear(1000, 2);
        let spec = EnsembleSpec {
            library: vec![LearnerSpec::InterceptOnly, LearnerSpec::GlmLinear { l2: 0.0 }],
            v_folds: 5,
            loss: Loss::SquaredError,
            weighting: Weighting::ConvexStack,
        };
        let e = fit_ensemble(&spec, &x, &y, None, 3).unwrap();
        let s = e.ensemble_summary().unwrap();
        assert!(s.weights[1] >= 0.9, "{:?}", s.weights);
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        let min_member = s.cv_losses.as_ref().unwrap().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(s.ensemble_cv_loss.unwrap() <= min_member + 1e-12);
    }

    #[test]
    fn stacking_log_loss_and_discrete() {
        let mut r = rng(5, 0);
        let xs: Vec<f64> = (0..600).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = xs.iter().map(|v| f64::from(r.random::<f64>() < crate::stats::expit(*v))).collect();
        let x = Features::new(vec!["x".into()], 600, xs).unwrap();
        let mut spec = EnsembleSpec {
            library: vec![
                LearnerSpec::InterceptOnly,
                LearnerSpec::GlmLogistic { l2: 0.0 },
                LearnerSpec::GbtClassify(super::super::GbtParams { trees: 30, ..Default::default() }),
            ],
            v_folds: 3,
            loss: Loss::LogLoss,
            weighting: Weighting::ConvexStack,
        };
        let e = fit_ensemble(&spec, &x, &y, None, 1).unwrap();
        let s = e.ensemble_summary().unwrap().clone();
        let min_member = s.cv_losses.as_ref().unwrap().iter().copied().fold(f64::INFINITY, f64::min);
        assert!(s.ensemble_cv_loss.unwrap() <= min_member + 1e-12);
        assert!(s.weights.iter().all(|&w| w >= 0.0));
        spec.weighting = Weighting::DiscreteSelect;
        let d = fit_ensemble(&spec, &x, &y, None, 1).unwrap();
        let ds = d.ensemble_summary().unwrap();
        assert_eq!(ds.weights.iter().filter(|&&w| w == 1.0).count(), 1);
        assert!(d.predict(&x).unwrap().iter().all(|p| *p > 0.0 && *p < 1.0));
    }

    #[test]
    fn mismatched_loss_rejected() {
        let spec = EnsembleSpec::single(LearnerSpec::GlmLinear { l2: 0.0 }, Loss::LogLoss);
        assert!(spec.validate().is_err());
    }

    proptest! {
        #[test]
        fn projection_lands_on_simplex(v in proptest::collection::vec(-5.0f64..5.0, 1..8)) {
            let p = project_to_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }
}
