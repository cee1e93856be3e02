//! Pre-training losses, as plain functions and as graph builders.

use serde::{Deserialize, Serialize};

use crate::augment::Pairing;
use crate::diff::{DiffError, Graph, Tensor, Var};
use crate::error::{invalid, Result};

/// Losses and similarity statistics of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub recon: f64,
    pub contrastive: f64,
    pub total: f64,
    /// Mean cosine similarity of positive pairs.
    pub rho_pos: f64,
    /// Mean cosine similarity of negative pairs.
    pub rho_neg: f64,
    pub tau: f64,
    pub lambda: f64,
}

/// Mean over `masked` positions of the squared L2 norm of the patch error.
///
/// `rec` and `raw` are `[C, N, l]`.
pub fn recon_loss(rec: &Tensor, raw: &Tensor, masked: &[(usize, usize)]) -> Result<f64> {
    if rec.shape() != raw.shape() || rec.rank() != 3 {
        return Err(invalid(format!(
            "reconstruction {:?} and target {:?} must share a [C, N, l] shape",
            rec.shape(),
            raw.shape()
        )));
    }
    if masked.is_empty() {
        return Err(invalid(
            "reconstruction loss needs at least one masked patch",
        ));
    }
    let (c, n) = (rec.shape()[0], rec.shape()[1]);
    let mut total = 0.0;
    for &(i, j) in masked {
        if i >= c || j >= n {
            return Err(invalid(format!(
                "masked position ({i}, {j}) outside {c}×{n}"
            )));
        }
        let r = i * n + j;
        total += rec
            .row(r)
            .iter()
            .zip(raw.row(r))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / masked.len() as f64)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid("cosine of vectors with different lengths"));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(invalid("cosine of a zero vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of every anchor with every target, row per anchor.
pub fn similarity_matrix(anchors: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    anchors
        .iter()
        .map(|a| targets.iter().map(|t| cosine(a, t)).collect())
        .collect()
}

/// Mean over anchors of `−log softmax(ρ/τ)` at the positive target.
pub fn info_nce(
    anchors: &[Vec<f64>],
    targets: &[Vec<f64>],
    pairing: &Pairing,
    tau: f64,
) -> Result<f64> {
    check_contrastive(anchors.len(), targets.len(), pairing, tau)?;
    let sims = similarity_matrix(anchors, targets)?;
    let mut total = 0.0;
    for (a, row) in sims.iter().enumerate() {
        let logits: Vec<f64> = row.iter().map(|r| r / tau).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - logits[pairing.positive[a]];
    }
    Ok(total / anchors.len() as f64)
}

/// Mean positive and mean negative similarity.
pub fn similarity_stats(sims: &[Vec<f64>], pairing: &Pairing) -> (f64, f64) {
    let k = sims.len();
    let mut pos = 0.0;
    let mut neg = 0.0;
    for (a, row) in sims.iter().enumerate() {
        for (t, &s) in row.iter().enumerate() {
            if t == pairing.positive[a] {
                pos += s;
            } else {
                neg += s;
            }
        }
    }
    let n_neg = (k * k.saturating_sub(1)).max(1);
    (pos / k as f64, neg / n_neg as f64)
}

pub fn total_loss(recon: f64, contrastive: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(invalid(format!(
            "loss weight must be non-negative, got {lambda}"
        )));
    }
    Ok(recon + lambda * contrastive)
}

fn check_contrastive(
    n_anchors: usize,
    n_targets: usize,
    pairing: &Pairing,
    tau: f64,
) -> Result<()> {
    if !(tau > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {tau}")));
    }
    if n_anchors < 2 || n_anchors != n_targets || pairing.len() != n_anchors {
        return Err(invalid(format!(
            "contrastive loss needs K ≥ 2 matched anchors/targets (got {n_anchors}/{n_targets}, pairing {})",
            pairing.len()
        )));
    }
    Ok(())
}

/// Graph form of [`recon_loss`] over a `[C·N, l]` reconstruction; `rows`
/// are the masked rows `i·N + j`.
pub fn recon_loss_graph(
    g: &mut Graph,
    rec: Var,
    raw: Var,
    rows: &[usize],
) -> Result<Var, DiffError> {
    let r = g.gather_rows(rec, rows)?;
    let t = g.gather_rows(raw, rows)?;
    let d = g.sub(r, t)?;
    let sq = g.square(d);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / rows.len() as f64))
}

/// Rows scaled to unit length.
fn normalize_rows(g: &mut Graph, x: Var) -> Result<Var, DiffError> {
    let (k, d) = (g.value(x).rows(), g.value(x).cols());
    let sq = g.square(x);
    let s = g.sum_last(sq);
    let n = g.sqrt(s);
    let n = g.reshape(n, &[k, 1])?;
    let ones = g.constant(Tensor::full([1, d], 1.0));
    let spread = g.matmul(n, ones)?;
    g.div(x, spread)
}

/// `[K, K]` cosine similarities between rows of `anchors` and `targets`.
pub fn similarity_graph(g: &mut Graph, anchors: Var, targets: Var) -> Result<Var, DiffError> {
    let a = normalize_rows(g, anchors)?;
    let t = normalize_rows(g, targets)?;
    let tt = g.transpose(t)?;
    g.matmul(a, tt)
}

/// Graph form of [`info_nce`] over `[K, d]` anchor and target matrices.
pub fn info_nce_graph(
    g: &mut Graph,
    anchors: Var,
    targets: Var,
    pairing: &Pairing,
    tau: f64,
) -> Result<Var> {
    check_contrastive(
        g.value(anchors).rows(),
        g.value(targets).rows(),
        pairing,
        tau,
    )?;
    let sims = similarity_graph(g, anchors, targets)?;
    let logits = g.scale(sims, 1.0 / tau);
    let ls = g.log_softmax(logits);
    let picked = g.pick(ls, &pairing.positive)?;
    let m = g.mean(picked);
    Ok(g.neg(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::make_pairs;
    use crate::diff::grad_check;
    use crate::rng::stream;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_vecs(k: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[]);
        (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn recon_examples() {
        let raw = Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(recon_loss(&raw, &raw, &[(0, 1)]).unwrap(), 0.0);
        let off = raw.map(|v| v + 0.5);
        assert_abs_diff_eq!(
            recon_loss(&off, &raw, &[(0, 1), (1, 0)]).unwrap(),
            3.0 * 0.25,
            epsilon = 1e-15
        );
        assert!(recon_loss(&off, &raw, &[]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_abs_diff_eq!(
            cosine(&[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap(),
            0.70710678,
            epsilon = 1e-8
        );
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn info_nce_examples() {
        for k in [2, 4, 8] {
            let v = vec![vec![1.0, 2.0, 3.0]; k];
            let loss = info_nce(&v, &v, &make_pairs(k).unwrap(), 0.1).unwrap();
            assert_abs_diff_eq!(loss, (k as f64).ln(), epsilon = 1e-12);
        }
        // ρ⁺ = 0.9 and ρ⁻ = 0.1 for both anchors.
        let c = 0.9f64;
        let s = (1.0 - c * c).sqrt();
        let anchors = vec![vec![1.0, 0.0], vec![0.1, (1.0f64 - 0.01).sqrt()]];
        let targets = vec![
            vec![c, s],
            vec![
                0.1 * c - (1.0f64 - 0.01).sqrt() * s,
                0.1 * s + (1.0f64 - 0.01).sqrt() * c,
            ],
        ];
        let sims = similarity_matrix(&anchors, &targets).unwrap();
        assert_abs_diff_eq!(sims[0][0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(sims[1][1], 0.9, epsilon = 1e-12);
        let loss = info_nce(&anchors, &targets, &make_pairs(2).unwrap(), 0.1).unwrap();
        let oracle: f64 = sims
            .iter()
            .enumerate()
            .map(|(a, row)| (1.0 + ((row[1 - a] - row[a]) / 0.1).exp()).ln())
            .sum::<f64>()
            / 2.0;
        assert_abs_diff_eq!(loss, oracle, epsilon = 1e-12);
        assert!(info_nce(&anchors, &targets, &make_pairs(2).unwrap(), 0.0).is_err());
    }

    #[test]
    fn info_nce_single_pair_value() {
        // A direct evaluation with ρ⁺ = 0.9, ρ⁻ = 0.1, τ = 0.1.
        let per_anchor = (1.0 + (-8.0f64).exp()).ln();
        assert_abs_diff_eq!(per_anchor, 3.3540e-4, epsilon = 1e-7);
    }

    #[test]
    fn total_examples() {
        assert_abs_diff_eq!(total_loss(0.5, 0.7, 1.0).unwrap(), 1.2, epsilon = 1e-15);
        assert_eq!(total_loss(0.5, 0.7, 0.0).unwrap(), 0.5);
        assert!(total_loss(0.5, 0.7, -1.0).is_err());
    }

    #[test]
    fn graph_forms_match_plain_forms() {
        let a = rand_vecs(4, 5, 1);
        let t = rand_vecs(4, 5, 2);
        let pairing = make_pairs(4).unwrap();
        let plain = info_nce(&a, &t, &pairing, 0.2).unwrap();
        let mut g = Graph::inference();
        let av = g.constant(Tensor::new(vec![4, 5], a.concat()).unwrap());
        let tv = g.constant(Tensor::new(vec![4, 5], t.concat()).unwrap());
        let l = info_nce_graph(&mut g, av, tv, &pairing, 0.2).unwrap();
        assert_abs_diff_eq!(g.value(l).item(), plain, epsilon = 1e-12);

        let rec = Tensor::new(vec![4, 3], rand_vecs(1, 12, 3).concat()).unwrap();
        let raw = Tensor::new(vec![4, 3], rand_vecs(1, 12, 4).concat()).unwrap();
        let r = g.constant(rec.clone());
        let w = g.constant(raw.clone());
        let lr = recon_loss_graph(&mut g, r, w, &[1, 2]).unwrap();
        let plain = recon_loss(
            &rec.reshape([2, 2, 3]).unwrap(),
            &raw.reshape([2, 2, 3]).unwrap(),
            &[(0, 1), (1, 0)],
        )
        .unwrap();
        assert_abs_diff_eq!(g.value(lr).item(), plain, epsilon = 1e-12);
    }

    #[test]
    fn info_nce_gradients() {
        let pairing = make_pairs(3).unwrap();
        let a = Tensor::new(vec![3, 4], rand_vecs(1, 12, 5).concat()).unwrap();
        let t = Tensor::new(vec![3, 4], rand_vecs(1, 12, 6).concat()).unwrap();
        let report = grad_check(
            |g, v| {
                info_nce_graph(g, v[0], v[1], &pairing, 0.1).map_err(|e| match e {
                    crate::Error::Diff(d) => d,
                    other => panic!("{other}"),
                })
            },
            &[a, t],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn recon_gradient_vanishes_on_visible_rows() {
        let mut g = Graph::new();
        let rec = g.param(Tensor::new(vec![4, 3], rand_vecs(1, 12, 7).concat()).unwrap());
        let raw = g.constant(Tensor::zeros([4, 3]));
        let l = recon_loss_graph(&mut g, rec, raw, &[0, 3]).unwrap();
        let grads = g.backward_scalar(l).unwrap().get(rec);
        assert!(grads.row(1).iter().chain(grads.row(2)).all(|&v| v == 0.0));
        assert!(grads.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let a = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let loss = info_nce(&a, &a, &make_pairs(2).unwrap(), 1e-3).unwrap();
        assert!(loss.is_finite() && loss >= 0.0);
    }

    proptest! {
        #[test]
        fn info_nce_nonnegative_and_scale_invariant(seed in any::<u64>(), k in 2usize..6, scale in 0.01f64..100.0) {
            let a = rand_vecs(k, 4, seed);
            let t = rand_vecs(k, 4, seed ^ 1);
            let pairing = make_pairs(k).unwrap();
            let base = info_nce(&a, &t, &pairing, 0.1).unwrap();
            prop_assert!(base >= 0.0);
            let mut scaled = a.clone();
            scaled[0].iter_mut().for_each(|v| *v *= scale);
            let other = info_nce(&scaled, &t, &pairing, 0.1).unwrap();
            prop_assert!((base - other).abs() < 1e-10);
        }
    }
}
