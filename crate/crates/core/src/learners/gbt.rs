//! Gradient-boosted regression trees with exact greedy, level-wise splits.

use serde::{Deserialize, Serialize};

use super::{weighted_mean, Features, Loss};
use crate::error::{Error, Result};
use crate::stats::{expit, logit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub l2: f64,
    /// Minimum hessian mass per child.
    pub min_child_weight: f64,
    /// Classifier probability clip.
    pub p_min: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            trees: 200,
            depth: 3,
            learning_rate: 0.1,
            l2: 1.0,
            min_child_weight: 1.0,
            p_min: super::P_MIN,
        }
    }
}

impl GbtParams {
    pub(super) fn validate(&self) -> Result<()> {
        let ok = self.trees >= 1
            && (1..=12).contains(&self.depth)
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.l2 >= 0.0
            && self.min_child_weight >= 0.0
            && (0.0..0.5).contains(&self.p_min);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid GBT hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    k = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GbtModel {
    base: f64,
    trees: Vec<Tree>,
    classify: bool,
    p_min: f64,
    loss_path: Vec<f64>,
}

impl GbtModel {
    fn raw(&self, row: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub(crate) fn predict_row(&self, row: &[f64]) -> f64 {
        let f = self.raw(row);
        if self.classify {
            expit(f).clamp(self.p_min, 1.0 - self.p_min)
        } else {
            f
        }
    }

    pub(crate) fn loss_path(&self) -> &[f64] {
        &self.loss_path
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn score(g: f64, h: f64, l2: f64) -> f64 {
    g * g / (h + l2)
}

fn grow_tree(
    x: &Features,
    sorted: &[Vec<u32>],
    g: &[f64],
    h: &[f64],
    p: &GbtParams,
    node_of: &mut [u32],
) -> Tree {
    let n = g.len();
    node_of.iter_mut().for_each(|v| *v = 0);
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut totals = vec![(g.iter().sum::<f64>(), h.iter().sum::<f64>())];
    let mut frontier = vec![0usize];
    for _ in 0..p.depth {
        if frontier.is_empty() {
            break;
        }
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &k) in frontier.iter().enumerate() {
            slot_of[k] = s;
        }
        let m = frontier.len();
        let mut best: Vec<Option<Candidate>> = vec![None; m];
        let mut gl = vec![0.0; m];
        let mut hl = vec![0.0; m];
        let mut last = vec![f64::NAN; m];
        for (j, order) in sorted.iter().enumerate() {
            gl.iter_mut().for_each(|v| *v = 0.0);
            hl.iter_mut().for_each(|v| *v = 0.0);
            last.iter_mut().for_each(|v| *v = f64::NAN);
            for &i in order {
                let i = i as usize;
                let s = slot_of[node_of[i] as usize];
                if s == usize::MAX {
                    continue;
                }
                let v = x.get(i, j);
                if !last[s].is_nan() && v > last[s] {
                    let (gt, ht) = totals[frontier[s]];
                    let (gr, hr) = (gt - gl[s], ht - hl[s]);
                    if hl[s] >= p.min_child_weight && hr >= p.min_child_weight {
                        let gain = score(gl[s], hl[s], p.l2) + score(gr, hr, p.l2) - score(gt, ht, p.l2);
                        if best[s].is_none_or(|b| gain > b.gain) {
                            let mid = 0.5 * (last[s] + v);
                            let threshold = if mid < v { mid } else { last[s] };
                            best[s] = Some(Candidate { gain, feature: j, threshold });
                        }
                    }
                }
                gl[s] += g[i];
                hl[s] += h[i];
                last[s] = v;
            }
        }
        let mut next = Vec::new();
        let mut child_of = vec![(usize::MAX, usize::MAX); m];
        for (s, &k) in frontier.iter().enumerate() {
            if let Some(c) = best[s].filter(|c| c.gain > 1e-12) {
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf(0.0));
                nodes.push(Node::Leaf(0.0));
                totals.push((0.0, 0.0));
                totals.push((0.0, 0.0));
                nodes[k] = Node::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
                child_of[s] = (l, r);
                next.push(l);
                next.push(r);
            }
        }
        for i in 0..n {
            let s = slot_of[node_of[i] as usize];
            if s == usize::MAX || child_of[s].0 == usize::MAX {
                continue;
            }
            let Node::Split { feature, threshold, left, right } = nodes[frontier[s]] else {
                unreachable!()
            };
            let c = if x.get(i, feature) <= threshold { left } else { right };
            node_of[i] = c as u32;
            totals[c].0 += g[i];
            totals[c].1 += h[i];
        }
        frontier = next;
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf(v) = node {
            let (gt, ht) = totals[k];
            *v = -gt / (ht + p.l2) * p.learning_rate;
        }
    }
    Tree { nodes }
}

pub(super) fn fit(x: &Features, y: &[f64], w: Option<&[f64]>, p: &GbtParams, classify: bool) -> GbtModel {
    let n = y.len();
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let sorted: Vec<Vec<u32>> = (0..x.n_cols())
        .map(|j| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)));
            idx
        })
        .collect();
    let ybar = weighted_mean(y, w);
    let base = if classify { logit(ybar.clamp(p.p_min, 1.0 - p.p_min)) } else { ybar };
    let mut f = vec![base; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut node_of = vec![0u32; n];
    let mut trees = Vec::with_capacity(p.trees);
    let mut loss_path = Vec::with_capacity(p.trees);
    let loss = if classify { Loss::LogLoss } else { Loss::SquaredError };
    let mut pred = vec![0.0; n];
    for _ in 0..p.trees {
        for i in 0..n {
            if classify {
                let q = expit(f[i]);
                g[i] = wt(i) * (q - y[i]);
                h[i] = wt(i) * (q * (1.0 - q)).max(1e-16);
            } else {
                g[i] = wt(i) * (f[i] - y[i]);
                h[i] = wt(i);
            }
        }
        let tree = grow_tree(x, &sorted, &g, &h, p, &mut node_of);
        for (i, fi) in f.iter_mut().enumerate() {
            if let Node::Leaf(v) = tree.nodes[node_of[i] as usize] {
                *fi += v;
            }
        }
        for i in 0..n {
            pred[i] = if classify { expit(f[i]) } else { f[i] };
        }
        loss_path.push(loss.eval(y, &pred, w));
        trees.push(tree);
    }
    GbtModel {
        base,
        trees,
        classify,
        p_min: p.p_min,
        loss_path,
    }
}
