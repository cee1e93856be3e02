use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor};
use crate::error::{invalid, Result};
use crate::model::network::encode_positions;
use crate::model::{AttentionMaps, ModelState};
use crate::signals::{distance, EegSample};

const ROW_SUM_TOL: f64 = 1e-9;

/// Channel-to-channel attention, `layers[l][h]` is a row-stochastic
/// `[n, n]` matrix over the channels whose coordinates are `coords`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStack {
    layers: Vec<Vec<Tensor>>,
    coords: Vec<[f64; 2]>,
}

impl AttentionStack {
    pub fn new(layers: Vec<Vec<Tensor>>, coords: Vec<[f64; 2]>) -> Result<Self> {
        let n = coords.len();
        if let Some(bad) = coords
            .iter()
            .find(|c| !c.iter().all(|&v| v > 0.0 && v < 1.0))
        {
            return Err(invalid(format!(
                "coordinate {bad:?} outside the open unit square"
            )));
        }
        if layers.is_empty() || layers.iter().any(|l| l.is_empty()) {
            return Err(invalid(
                "attention stack needs at least one layer and one head per layer",
            ));
        }
        for (l, heads) in layers.iter().enumerate() {
            for (h, a) in heads.iter().enumerate() {
                if a.shape() != [n, n] {
                    return Err(invalid(format!(
                        "layer {l} head {h}: attention {:?} does not match {n} channels",
                        a.shape()
                    )));
                }
                if a.data().iter().any(|&v| !v.is_finite() || v < 0.0) {
                    return Err(invalid(format!(
                        "layer {l} head {h}: attention must be finite and non-negative"
                    )));
                }
                for q in 0..n {
                    let s: f64 = a.row(q).iter().sum();
                    if (s - 1.0).abs() > ROW_SUM_TOL {
                        return Err(invalid(format!("layer {l} head {h}: row {q} sums to {s}")));
                    }
                }
            }
        }
        Ok(Self { layers, coords })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn n_channels(&self) -> usize {
        self.coords.len()
    }

    pub fn layers(&self) -> &[Vec<Tensor>] {
        &self.layers
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    /// Mean over heads of each layer, still row-stochastic.
    pub fn head_averaged(&self) -> Vec<Tensor> {
        self.layers.iter().map(|heads| mean_of(heads)).collect()
    }
}

fn mean_of(maps: &[Tensor]) -> Tensor {
    let mut acc = vec![0.0; maps[0].len()];
    for m in maps {
        for (a, v) in acc.iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    Tensor::new(
        maps[0].shape().to_vec(),
        acc.into_iter().map(|v| v / k).collect(),
    )
    .expect("shape kept")
}

/// A per-layer statistic computed per head and on head-averaged attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    /// `per_head[l][h]`.
    pub per_head: Vec<Vec<f64>>,
    /// Mean of `per_head[l]`.
    pub per_layer: Vec<f64>,
    /// Statistic of the head-averaged matrix of each layer.
    pub head_averaged: Vec<f64>,
}

impl LayerStats {
    fn collect(stack: &AttentionStack, f: impl Fn(&Tensor) -> f64 + Sync) -> Self {
        let per_head: Vec<Vec<f64>> = stack
            .layers
            .par_iter()
            .map(|heads| heads.iter().map(&f).collect())
            .collect();
        let per_layer = per_head
            .iter()
            .map(|h| h.iter().sum::<f64>() / h.len() as f64)
            .collect();
        let head_averaged = stack.head_averaged().iter().map(&f).collect();
        Self {
            per_head,
            per_layer,
            head_averaged,
        }
    }
}

/// Mean over queries of `Σ_k a[q, k]·dist(q, k)` for one matrix.
pub fn mean_distance(attn: &Tensor, coords: &[[f64; 2]]) -> f64 {
    let n = coords.len();
    let total: f64 = (0..n)
        .map(|q| {
            attn.row(q)
                .iter()
                .zip(coords)
                .map(|(a, &ck)| a * distance(coords[q], ck))
                .sum::<f64>()
        })
        .sum();
    total / n as f64
}

/// Expected scalp distance between each query channel and the keys it
/// attends to, averaged over queries.
pub fn attention_distance(stack: &AttentionStack) -> LayerStats {
    LayerStats::collect(stack, |a| mean_distance(a, &stack.coords))
}

/// Normalized mutual information of one attention matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Nmi {
    pub value: f64,
    /// The key marginal has zero entropy, so the ratio is undefined and
    /// `value` is 0.
    pub degenerate: bool,
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// `I(q, k)/√(H(q)·H(k))` for the joint `p(q, k) = a[q, k]/n` with a uniform
/// query prior, in nats.
pub fn nmi(attn: &Tensor) -> Nmi {
    let n = attn.rows();
    let nf = n as f64;
    let mut pk = vec![0.0; attn.cols()];
    for q in 0..n {
        for (m, &a) in pk.iter_mut().zip(attn.row(q)) {
            *m += a / nf;
        }
    }
    let h_q = nf.ln();
    let h_k = -pk.iter().map(|&p| plogp(p)).sum::<f64>();
    if h_q <= 0.0 || h_k <= 0.0 {
        return Nmi {
            value: 0.0,
            degenerate: true,
        };
    }
    // I = Σ p(q,k) ln(p(q,k) / (p(q) p(k))) with p(q) = 1/n.
    let mut mi = 0.0;
    for q in 0..n {
        for (k, &a) in attn.row(q).iter().enumerate() {
            if a > 0.0 {
                mi += (a / nf) * (a / pk[k]).ln();
            }
        }
    }
    Nmi {
        value: (mi / (h_q * h_k).sqrt()).clamp(0.0, 1.0),
        degenerate: false,
    }
}

/// NMI per head, per layer and for head-averaged attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmiReport {
    pub stats: LayerStats,
    /// `degenerate[l][h]` flags heads whose NMI was reported as 0.
    pub degenerate: Vec<Vec<bool>>,
    pub head_averaged_degenerate: Vec<bool>,
}

pub fn attention_nmi(stack: &AttentionStack) -> Result<NmiReport> {
    if stack.n_channels() < 2 {
        return Err(invalid("NMI needs at least two channels"));
    }
    let stats = LayerStats::collect(stack, |a| nmi(a).value);
    let degenerate = stack
        .layers
        .iter()
        .map(|heads| heads.iter().map(|a| nmi(a).degenerate).collect())
        .collect();
    let head_averaged_degenerate = stack
        .head_averaged()
        .iter()
        .map(|a| nmi(a).degenerate)
        .collect();
    Ok(NmiReport {
        stats,
        degenerate,
        head_averaged_degenerate,
    })
}

/// Channel rows and columns of a full-grid map at time step `j`, rows
/// renormalized to sum to 1.
fn restrict(map: &Tensor, c: usize, n: usize, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; c * c];
    for q in 0..c {
        let row = map.row(q * n + j);
        let dst = &mut out[q * c..(q + 1) * c];
        for (k, d) in dst.iter_mut().enumerate() {
            *d = row[k * n + j];
        }
        let s: f64 = dst.iter().sum();
        dst.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Online-encoder attention of one sample's unmasked grid, restricted to
/// channel tokens within each time step and averaged over time steps.
pub fn sample_attention(state: &ModelState, sample: &EegSample) -> Result<Vec<Vec<Tensor>>> {
    let l = state.config.patch_len;
    let n = sample.n_times() / l;
    if n == 0 {
        return Err(invalid(format!(
            "sample is shorter than one patch of {l} samples"
        )));
    }
    let sample = if n * l != sample.n_times() {
        sample.slice_time(0, n * l)?
    } else {
        sample.clone()
    };
    let rows = state.channel_rows(sample.channels())?;
    let c = sample.n_channels();
    let positions: Vec<(usize, usize)> = (0..c).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let mut g = Graph::inference();
    let p = state.online.bind(&mut g, false);
    let x = g.constant(Tensor::new(vec![c, n * l], sample.data().to_vec())?);
    let mut maps = AttentionMaps::new();
    encode_positions(
        &mut g,
        &p,
        &state.config,
        x,
        &rows,
        &positions,
        Some(&mut maps),
    )?;
    let layers = maps
        .iter()
        .map(|heads| {
            heads
                .iter()
                .map(|m| {
                    let mut acc = vec![0.0; c * c];
                    for j in 0..n {
                        for (a, v) in acc.iter_mut().zip(restrict(m, c, n, j)) {
                            *a += v;
                        }
                    }
                    Tensor::new(vec![c, c], acc.into_iter().map(|v| v / n as f64).collect())
                        .expect("square")
                })
                .collect()
        })
        .collect();
    Ok(layers)
}

/// [`sample_attention`] averaged over `samples`, which must share one
/// channel list. Coordinates come from the model vocabulary.
pub fn capture_attention(state: &ModelState, samples: &[EegSample]) -> Result<AttentionStack> {
    let first = samples
        .first()
        .ok_or_else(|| invalid("attention capture needs at least one sample"))?;
    if samples.iter().any(|s| s.channels() != first.channels()) {
        return Err(invalid("all samples must share the same channel list"));
    }
    let rows = state.channel_rows(first.channels())?;
    let coords = rows.iter().map(|&r| state.vocab.coords()[r]).collect();
    let per_sample: Vec<Vec<Vec<Tensor>>> = samples
        .par_iter()
        .map(|s| sample_attention(state, s))
        .collect::<Result<_>>()?;
    let layers = (0..per_sample[0].len())
        .map(|l| {
            (0..per_sample[0][l].len())
                .map(|h| {
                    mean_of(
                        &per_sample
                            .iter()
                            .map(|s| s[l][h].clone())
                            .collect::<Vec<_>>(),
                    )
                })
                .collect()
        })
        .collect();
    AttentionStack::new(layers, coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::model::ModelConfig;
    use crate::rng::stream;
    use crate::signals::ChannelVocabulary;

    fn mat(n: usize, v: Vec<f64>) -> Tensor {
        Tensor::new(vec![n, n], v).unwrap()
    }

    fn random_stochastic(n: usize, rng: &mut impl Rng) -> Tensor {
        let mut v: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>() + 1e-3).collect();
        for r in v.chunks_mut(n) {
            let s: f64 = r.iter().sum();
            r.iter_mut().for_each(|x| *x /= s);
        }
        mat(n, v)
    }

    fn corners() -> Vec<[f64; 2]> {
        vec![[0.01, 0.01], [0.99, 0.01], [0.01, 0.99], [0.99, 0.99]]
    }

    fn distance_oracle(a: &Tensor, coords: &[[f64; 2]]) -> f64 {
        let n = coords.len();
        let mut total = 0.0;
        for q in 0..n {
            for k in 0..n {
                let dx = coords[q][0] - coords[k][0];
                let dy = coords[q][1] - coords[k][1];
                total += a.data()[q * n + k] * (dx * dx + dy * dy).sqrt();
            }
        }
        total / n as f64
    }

    fn nmi_oracle(a: &Tensor) -> f64 {
        let n = a.rows();
        let joint: Vec<f64> = a.data().iter().map(|v| v / n as f64).collect();
        let pq: Vec<f64> = (0..n)
            .map(|q| (0..n).map(|k| joint[q * n + k]).sum())
            .collect();
        let pk: Vec<f64> = (0..n)
            .map(|k| (0..n).map(|q| joint[q * n + k]).sum())
            .collect();
        let h = |p: &[f64]| {
            -p.iter()
                .filter(|&&x| x > 0.0)
                .map(|x| x * x.ln())
                .sum::<f64>()
        };
        let mut mi = 0.0;
        for q in 0..n {
            for k in 0..n {
                let p = joint[q * n + k];
                if p > 0.0 {
                    mi += p * (p / (pq[q] * pk[k])).ln();
                }
            }
        }
        mi / (h(&pq) * h(&pk)).sqrt()
    }

    #[test]
    fn two_channels_attending_across() {
        let coords = vec![[0.2, 0.5], [0.7, 0.5]];
        let cross = mat(2, vec![0.0, 1.0, 1.0, 0.0]);
        assert_abs_diff_eq!(mean_distance(&cross, &coords), 0.5, epsilon = 1e-15);
        let uniform = mat(2, vec![0.5; 4]);
        assert_abs_diff_eq!(mean_distance(&uniform, &coords), 0.25, epsilon = 1e-15);
        // Full unit separation, as in the textbook example.
        assert_eq!(mean_distance(&cross, &[[0.0, 0.0], [1.0, 0.0]]), 1.0);
        assert_eq!(mean_distance(&uniform, &[[0.0, 0.0], [1.0, 0.0]]), 0.5);
    }

    #[test]
    fn distance_matches_double_loop_on_corners() {
        let mut rng = stream(3, &[1]);
        for _ in 0..100 {
            let a = random_stochastic(4, &mut rng);
            assert_abs_diff_eq!(
                mean_distance(&a, &corners()),
                distance_oracle(&a, &corners()),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn nmi_of_permutation_is_one() {
        let perm = mat(
            4,
            vec![
                0., 1., 0., 0., 0., 0., 1., 0., 1., 0., 0., 0., 0., 0., 0., 1.,
            ],
        );
        let r = nmi(&perm);
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-15);
        assert!(!r.degenerate);
    }

    #[test]
    fn nmi_of_query_independent_rows_is_zero() {
        let row = [0.1, 0.2, 0.3, 0.4];
        let a = mat(4, row.iter().cycle().take(16).copied().collect());
        assert_abs_diff_eq!(nmi(&a).value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn nmi_flags_collapsed_key_marginal() {
        let a = mat(3, vec![1., 0., 0., 1., 0., 0., 1., 0., 0.]);
        assert_eq!(
            nmi(&a),
            Nmi {
                value: 0.0,
                degenerate: true
            }
        );
    }

    #[test]
    fn nmi_matches_brute_force() {
        let mut rng = stream(4, &[2]);
        for _ in 0..100 {
            let a = random_stochastic(4, &mut rng);
            assert_abs_diff_eq!(nmi(&a).value, nmi_oracle(&a), epsilon = 1e-12);
        }
    }

    #[test]
    fn stack_rejects_bad_rows_and_coords() {
        let ok = mat(2, vec![0.5; 4]);
        assert!(AttentionStack::new(vec![vec![ok.clone()]], vec![[0.0, 0.5], [0.5, 0.5]]).is_err());
        let bad = mat(2, vec![0.5, 0.6, 0.5, 0.5]);
        assert!(AttentionStack::new(vec![vec![bad]], vec![[0.2, 0.5], [0.5, 0.5]]).is_err());
        assert!(AttentionStack::new(vec![vec![ok]], vec![[0.2, 0.5], [0.5, 0.5]]).is_ok());
    }

    #[test]
    fn head_average_and_per_head_distances_agree() {
        let mut rng = stream(5, &[3]);
        let heads: Vec<Tensor> = (0..3).map(|_| random_stochastic(4, &mut rng)).collect();
        let stack = AttentionStack::new(vec![heads], corners()).unwrap();
        let d = attention_distance(&stack);
        assert_abs_diff_eq!(d.per_layer[0], d.head_averaged[0], epsilon = 1e-12);
    }

    #[test]
    fn captured_stack_is_row_stochastic() {
        let cfg = ModelConfig::gradcheck(4);
        let vocab = ChannelVocabulary::grid(4);
        let state = ModelState::init(cfg.clone(), vocab.clone(), 9).unwrap();
        let mut rng = stream(9, &[4]);
        let samples: Vec<EegSample> = (0..2)
            .map(|_| {
                let data = (0..4 * 16).map(|_| rng.random::<f64>() - 0.5).collect();
                EegSample::new(vocab.names().to_vec(), 100.0, 16, data).unwrap()
            })
            .collect();
        let stack = capture_attention(&state, &samples).unwrap();
        assert_eq!(stack.n_layers(), cfg.enc_layers);
        assert_eq!(stack.layers()[0].len(), cfg.enc_heads);
        assert_eq!(stack.n_channels(), 4);
    }

    proptest! {
        #[test]
        fn distance_is_permutation_invariant(seed in any::<u64>(), shift in 1usize..4) {
            let mut rng = stream(seed, &[5]);
            let a = random_stochastic(4, &mut rng);
            let perm: Vec<usize> = (0..4).map(|i| (i + shift) % 4).collect();
            let mut pa = vec![0.0; 16];
            for q in 0..4 {
                for k in 0..4 {
                    pa[q * 4 + k] = a.data()[perm[q] * 4 + perm[k]];
                }
            }
            let coords = corners();
            let pc: Vec<[f64; 2]> = perm.iter().map(|&p| coords[p]).collect();
            prop_assert!((mean_distance(&a, &coords) - mean_distance(&mat(4, pa), &pc)).abs() < 1e-12);
        }

        #[test]
        fn nmi_is_within_unit_interval(seed in any::<u64>(), n in 2usize..7, sparse in 0.0f64..0.9) {
            let mut rng = stream(seed, &[6]);
            let mut v: Vec<f64> = (0..n * n).map(|_| if rng.random::<f64>() < sparse { 0.0 } else { rng.random() }).collect();
            for (q, r) in v.chunks_mut(n).enumerate() {
                if r.iter().all(|&x| x == 0.0) {
                    r[q] = 1.0;
                }
                let s: f64 = r.iter().sum();
                r.iter_mut().for_each(|x| *x /= s);
            }
            let r = nmi(&mat(n, v));
            prop_assert!((0.0..=1.0).contains(&r.value));
        }
    }
}
