use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{invalid, Result};

/// One agglomeration step. Leaves are clusters `0..n`; the cluster formed
/// at step `s` gets id `n + s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    /// Average-linkage distance at which `a` and `b` were joined.
    pub distance: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSimilarity {
    /// Pairwise cosine similarity of the embedding rows.
    pub similarity: Vec<Vec<f64>>,
    /// Full dendrogram, `n − 1` merges in order.
    pub merges: Vec<Merge>,
    /// Cluster label per row, numbered by first appearance.
    pub assignment: Vec<usize>,
}

/// Cosine similarity of every pair of rows; the diagonal is exactly 1.
pub fn cosine_matrix(table: &Tensor) -> Result<Vec<Vec<f64>>> {
    if table.rank() != 2 {
        return Err(invalid(format!(
            "embedding table must be [channels, d], got {:?}",
            table.shape()
        )));
    }
    let n = table.rows();
    let norms: Vec<f64> = (0..n)
        .map(|i| table.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0 || !v.is_finite()) {
        return Err(invalid(format!(
            "embedding row {i} has zero or non-finite norm"
        )));
    }
    let mut s = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let dot: f64 = table
                .row(i)
                .iter()
                .zip(table.row(j))
                .map(|(a, b)| a * b)
                .sum();
            let c = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            s[i][j] = c;
            s[j][i] = c;
        }
    }
    Ok(s)
}

/// Average-linkage agglomerative clustering of a symmetric distance matrix.
///
/// Ties are broken toward the pair with the smallest cluster ids.
pub fn average_linkage(dist: &[Vec<f64>]) -> Vec<Merge> {
    let n = dist.len();
    let mut d: Vec<Vec<f64>> = dist.to_vec();
    // Slot `i` holds the current cluster id and size living there.
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for step in 0..n.saturating_sub(1) {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in (0..n).filter(|&i| alive[i]) {
            for j in (i + 1..n).filter(|&j| alive[j]) {
                let key = (id[i].min(id[j]), id[i].max(id[j]));
                let better = match best {
                    None => true,
                    Some((bd, bk, ..)) => d[i][j] < bd || (d[i][j] == bd && key < bk),
                };
                if better {
                    best = Some((d[i][j], key, i, j));
                }
            }
        }
        let (dij, (a, b), i, j) = best.expect("two live clusters");
        let (si, sj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| alive[k] && k != i && k != j) {
            let v = (si * d[i][k] + sj * d[j][k]) / (si + sj);
            d[i][k] = v;
            d[k][i] = v;
        }
        alive[j] = false;
        size[i] += size[j];
        id[i] = n + step;
        merges.push(Merge {
            a,
            b,
            distance: dij,
            size: size[i],
        });
    }
    merges
}

/// Labels after replaying merges until `k` clusters remain.
pub fn cut_to_clusters(merges: &[Merge], n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(invalid(format!(
            "cannot cut {n} channels into {k} clusters"
        )));
    }
    Ok(replay(merges, n, n - k))
}

/// Labels after applying every merge at distance `≤ threshold`.
pub fn cut_at_distance(merges: &[Merge], n: usize, threshold: f64) -> Vec<usize> {
    let steps = merges
        .iter()
        .take_while(|m| m.distance <= threshold)
        .count();
    replay(merges, n, steps)
}

fn replay(merges: &[Merge], n: usize, steps: usize) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for m in &merges[..steps] {
        let mut joined = std::mem::take(&mut members[m.a]);
        joined.append(&mut members[m.b]);
        members.push(joined);
    }
    let mut root = vec![0; n];
    for (c, group) in members.iter().enumerate() {
        for &i in group {
            root[i] = c;
        }
    }
    let mut label = std::collections::HashMap::new();
    root.iter()
        .map(|r| {
            let next = label.len();
            *label.entry(*r).or_insert(next)
        })
        .collect()
}

/// Cosine similarities of channel embeddings and their average-linkage
/// clustering on `1 − cos`, cut to `n_clusters`.
pub fn channel_similarity(table: &Tensor, n_clusters: usize) -> Result<ChannelSimilarity> {
    let similarity = cosine_matrix(table)?;
    let n = similarity.len();
    if n < 2 {
        return Err(invalid("channel similarity needs at least two channels"));
    }
    if n_clusters > n {
        return Err(invalid(format!(
            "{n_clusters} clusters requested for {n} channels"
        )));
    }
    let dist: Vec<Vec<f64>> = similarity
        .iter()
        .map(|r| r.iter().map(|s| 1.0 - s).collect())
        .collect();
    let merges = average_linkage(&dist);
    let assignment = cut_to_clusters(&merges, n, n_clusters)?;
    Ok(ChannelSimilarity {
        similarity,
        merges,
        assignment,
    })
}
