//! Cluster-respecting fold assignment.

use rand::seq::SliceRandom;

/// Assigns whole clusters to `v` folds, balancing unit counts.
///
/// Clusters are shuffled with `seed`, ordered by size (largest first, the
/// shuffle breaking ties) and each is placed in the currently smallest fold.
/// Returns the fold of every unit and the number of non-empty folds, which
/// is `min(v, n_clusters)`.
pub fn cluster_folds(cluster: &[usize], n_clusters: usize, v: usize, seed: u64) -> (Vec<usize>, usize) {
    let v = v.min(n_clusters).max(1);
    let mut size = vec![0usize; n_clusters];
    for &c in cluster {
        size[c] += 1;
    }
    let mut order: Vec<usize> = (0..n_clusters).collect();
    order.shuffle(&mut crate::stats::rng(seed, 0xF01D));
    order.sort_by(|&a, &b| size[b].cmp(&size[a]));
    let mut load = vec![0usize; v];
    let mut fold_of_cluster = vec![0usize; n_clusters];
    for c in order {
        let k = (0..v).min_by_key(|&k| (load[k], k)).unwrap();
        fold_of_cluster[c] = k;
        load[k] += size[c];
    }
    (cluster.iter().map(|&c| fold_of_cluster[c]).collect(), v)
}
