//! Ordering pipelines by hierarchical clustering of their correlations.

use nalgebra::DMatrix;

/// Leaf order of an average-linkage dendrogram built on `1 - r`.
///
/// At each step the closest pair of clusters merges; equal distances go to
/// the pair with the smallest original indices. Within a merge, the cluster
/// holding the smaller index comes first.
#[allow(clippy::needless_range_loop)]
pub fn reorder_pipelines(corr: &DMatrix<f64>) -> Vec<usize> {
    let j = corr.nrows();
    // (min member, leaves) per active cluster
    let mut clusters: Vec<(usize, Vec<usize>)> = (0..j).map(|i| (i, vec![i])).collect();
    let mut d: Vec<Vec<f64>> = (0..j)
        .map(|a| (0..j).map(|b| 1.0 - corr[(a, b)]).collect())
        .collect();

    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ka, kb) = {
                    let (x, y) = (clusters[a].0, clusters[b].0);
                    (x.min(y), x.max(y))
                };
                let cand = (d[a][b], ka, kb, a, b);
                let better = match best {
                    None => true,
                    Some((bd, bka, bkb, _, _)) => {
                        cand.0 < bd || (cand.0 == bd && (ka, kb) < (bka, bkb))
                    }
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let (_, _, _, a, b) = best.expect("at least two clusters");
        let (na, nb) = (clusters[a].1.len() as f64, clusters[b].1.len() as f64);
        for k in 0..clusters.len() {
            if k != a && k != b {
                let v = (na * d[a][k] + nb * d[b][k]) / (na + nb);
                d[a][k] = v;
                d[k][a] = v;
            }
        }
        let (_, right) = clusters.remove(b);
        d.remove(b);
        for row in d.iter_mut() {
            row.remove(b);
        }
        let left = &mut clusters[a];
        if right[..].iter().min() < left.1.iter().min() {
            let mut merged = right;
            merged.extend_from_slice(&left.1);
            left.1 = merged;
        } else {
            left.1.extend(right);
        }
        left.0 = *left.1.iter().min().expect("non-empty");
    }
    clusters.pop().map(|c| c.1).unwrap_or_default()
}
