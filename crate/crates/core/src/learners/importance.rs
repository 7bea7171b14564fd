//! Permutation variable importance.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Features, FittedLearner, Loss};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub feature: String,
    /// Mean loss increase when the feature column is permuted.
    pub mean: f64,
    /// Standard error of that mean over repeats.
    pub se: f64,
    pub repeats: usize,
    /// `mean > 2 * se` and `mean > 0`.
    pub important: bool,
}

pub fn permutation_importance(
    fitted: &FittedLearner,
    x: &Features,
    y: &[f64],
    feature: &str,
    loss: Loss,
    repeats: usize,
    seed: u64,
) -> Result<Importance> {
    let j = x
        .position(feature)
        .ok_or_else(|| Error::InvalidInput(format!("feature `{feature}` not in training index")))?;
    if repeats < 2 {
        return Err(Error::InvalidInput("permutation importance needs at least 2 repeats".into()));
    }
    let base = loss.eval(y, &fitted.predict(x)?, None);
    let col = x.column(j);
    let mut scores = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let mut perm = col.clone();
        perm.shuffle(&mut crate::stats::rng(seed, r as u64));
        let px = x.with_column(j, &perm);
        scores.push(loss.eval(y, &fitted.predict(&px)?, None) - base);
    }
    let mean = crate::stats::mean(&scores);
    let se = (crate::stats::variance(&scores) / repeats as f64).sqrt();
    Ok(Importance {
        feature: feature.to_string(),
        mean,
        se,
        repeats,
        important: mean > 0.0 && mean > 2.0 * se,
    })
}
