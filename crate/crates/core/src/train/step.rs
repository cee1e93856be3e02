use rayon::prelude::*;

use crate::augment::{make_pairs, select_view, upsample2x, window_views};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::model::network::{global_pass, mem_pass};
use crate::model::{sample_mask, Bound, MaskPlan, ModelState, ParamSet};
use crate::objectives::{
    info_nce_graph, recon_loss_graph, similarity_matrix, similarity_stats, LossReport,
};
use crate::rng::stream;
use crate::signals::EegSample;

const MASK_STREAM: u64 = 0x3a5c;

/// One sample's inputs for a step: the masked-modeling view and the chosen
/// mirror-scale view.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: u64,
    /// `[C, N·l]`.
    pub signal: Tensor,
    pub channel_rows: Vec<usize>,
    pub plan: MaskPlan,
    /// `[C, N·l]` window of the upsampled signal.
    pub view: Tensor,
    pub view_plan: MaskPlan,
    pub view_index: usize,
}

impl Prepared {
    pub fn n_patches(&self) -> usize {
        self.plan.n_patches()
    }

    /// Rows `i·N + j` of the masked positions.
    pub fn masked_rows(&self) -> Vec<usize> {
        let n = self.n_patches();
        let mut rows: Vec<usize> = self
            .plan
            .masked_positions()
            .iter()
            .map(|&(i, j)| i * n + j)
            .collect();
        rows.sort_unstable();
        rows
    }
}

/// Draws the mask, builds the mirror-scale views and picks one; a pure
/// function of `(seed, epoch, step, id)` and the sample.
pub fn prepare(
    sample: &EegSample,
    channel_rows: &[usize],
    patch_len: usize,
    mask_ratio: f64,
    seed: u64,
    epoch: u64,
    step: u64,
    id: u64,
) -> Result<Prepared> {
    let n = sample.n_times() / patch_len;
    if n == 0 {
        return Err(invalid(format!("sample {id} is shorter than one patch")));
    }
    let sample = if n * patch_len != sample.n_times() {
        sample.slice_time(0, n * patch_len)?
    } else {
        sample.clone()
    };
    let c = sample.n_channels();
    let mut rng = stream(seed, &[MASK_STREAM, epoch, step, id]);
    let plan = sample_mask(c, n, mask_ratio, &mut rng)?;
    let mirror = plan.mirror()?;
    let up = upsample2x(&sample);
    let group = window_views(&up, &mirror, n, patch_len, id as usize)?;
    let k = select_view(group.len(), seed, epoch, step, id);
    let window = group.window(&up, k)?;
    Ok(Prepared {
        id,
        signal: Tensor::new(vec![c, n * patch_len], sample.data().to_vec())?,
        channel_rows: channel_rows.to_vec(),
        plan,
        view: Tensor::new(vec![c, n * patch_len], window.data().to_vec())?,
        view_plan: group.views[k].plan.clone(),
        view_index: k,
    })
}

/// Momentum-encoder global token for a prepared view. No tape is kept.
pub fn momentum_target(state: &ModelState, p: &Prepared) -> Result<Vec<f64>> {
    let mut g = Graph::inference();
    let m = state.momentum.bind(&mut g, false);
    let x = g.constant(p.view.clone());
    let out = global_pass(&mut g, &m, &state.config, x, &p.channel_rows, &p.view_plan)?;
    Ok(g.value(out).data().to_vec())
}

/// The whole batch objective `mean(L_R) + λ·L_C` on one graph, with the
/// encoder and decoder bound to `enc` and `dec` and fixed momentum targets.
pub fn batch_objective(
    g: &mut Graph,
    state: &ModelState,
    enc: &Bound,
    dec: &Bound,
    batch: &[Prepared],
    targets: &[Vec<f64>],
    tau: f64,
    lambda: f64,
) -> Result<Var> {
    let k = batch.len();
    let mut recon = Vec::with_capacity(k);
    let mut globals = Vec::with_capacity(k);
    for p in batch {
        let x = g.constant(p.signal.clone());
        let pass = mem_pass(g, enc, dec, &state.config, x, &p.channel_rows, &p.plan)?;
        let raw = g.constant(p.signal.reshape([
            p.signal.len() / state.config.patch_len,
            state.config.patch_len,
        ])?);
        recon.push(recon_loss_graph(g, pass.recon, raw, &p.masked_rows())?);
        globals.push(pass.global);
    }
    let mut r = recon[0];
    for &v in &recon[1..] {
        r = g.add(r, v)?;
    }
    let r = g.scale(r, 1.0 / k as f64);
    if lambda == 0.0 {
        return Ok(r);
    }
    let anchors = g.concat_rows(&globals)?;
    let t = g.constant(Tensor::new(vec![k, targets[0].len()], targets.concat())?);
    let lc = info_nce_graph(g, anchors, t, &make_pairs(k)?, tau)?;
    let lc = g.scale(lc, lambda);
    Ok(g.add(r, lc)?)
}

/// Gradients of the batch objective for the online encoder and decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradients {
    pub encoder: ParamSet,
    pub decoder: ParamSet,
}

/// Losses, similarity statistics and (optionally) gradients of a batch.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub report: LossReport,
    pub grads: Option<BatchGradients>,
}

struct SampleGraph {
    g: Graph,
    enc: Bound,
    dec: Bound,
    recon: Var,
    global: Var,
}

fn sample_forward(state: &ModelState, p: &Prepared, record: bool) -> Result<SampleGraph> {
    let mut g = if record {
        Graph::new()
    } else {
        Graph::inference()
    };
    let enc = state.online.bind(&mut g, record);
    let dec = state.decoder.bind(&mut g, record);
    let x = g.constant(p.signal.clone());
    let pass = mem_pass(
        &mut g,
        &enc,
        &dec,
        &state.config,
        x,
        &p.channel_rows,
        &p.plan,
    )?;
    let l = state.config.patch_len;
    let raw = g.constant(p.signal.reshape([p.signal.len() / l, l])?);
    let recon = recon_loss_graph(&mut g, pass.recon, raw, &p.masked_rows())?;
    Ok(SampleGraph {
        g,
        enc,
        dec,
        recon,
        global: pass.global,
    })
}

fn collect(set: &ParamSet, bound: &Bound, grads: &crate::diff::Gradients) -> ParamSet {
    let mut out = ParamSet::new();
    for (name, _) in set.iter() {
        out.insert(name, grads.get(bound.get(name)));
    }
    out
}

fn accumulate(acc: &mut ParamSet, add: &ParamSet) {
    acc.map_entries(|name, t| {
        let a = add.get(name).expect("same layout");
        let data = t.data().iter().zip(a.data()).map(|(x, y)| x + y).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    });
}

/// Evaluates a batch, splitting the work per sample.
///
/// Each sample's graph is differentiated once with the scalar
/// `L_R/K + λ·⟨global, ∂L_C/∂global⟩`, where the contrastive gradient comes
/// from a small graph over the batch's global tokens. Per-sample results are
/// reduced in batch order, so the outcome does not depend on the thread count.
pub fn evaluate_batch(
    state: &ModelState,
    batch: &[Prepared],
    tau: f64,
    lambda: f64,
    with_grads: bool,
) -> Result<BatchResult> {
    let k = batch.len();
    if k == 0 {
        return Err(invalid("empty batch"));
    }
    let targets = batch
        .par_iter()
        .map(|p| momentum_target(state, p))
        .collect::<Result<Vec<_>>>()?;
    let mut graphs = batch
        .par_iter()
        .map(|p| sample_forward(state, p, with_grads))
        .collect::<Result<Vec<_>>>()?;

    let recon: f64 = graphs
        .iter()
        .map(|s| s.g.value(s.recon).item())
        .sum::<f64>()
        / k as f64;
    let anchors: Vec<Vec<f64>> = graphs
        .iter()
        .map(|s| s.g.value(s.global).data().to_vec())
        .collect();
    let (contrastive, anchor_grads, rho_pos, rho_neg) = if k >= 2 {
        let pairing = make_pairs(k)?;
        let mut cg = Graph::new();
        let a = cg.param(Tensor::new(vec![k, anchors[0].len()], anchors.concat())?);
        let t = cg.constant(Tensor::new(vec![k, targets[0].len()], targets.concat())?);
        let lc = info_nce_graph(&mut cg, a, t, &pairing, tau)?;
        let value = cg.value(lc).item();
        let ga = if with_grads && lambda > 0.0 {
            Some(cg.backward_scalar(lc)?.get(a))
        } else {
            None
        };
        let sims = similarity_matrix(&anchors, &targets)?;
        let (pos, neg) = similarity_stats(&sims, &pairing);
        (value, ga, pos, neg)
    } else {
        (0.0, None, f64::NAN, f64::NAN)
    };
    let total = recon + lambda * contrastive;
    let report = LossReport {
        recon,
        contrastive,
        total,
        rho_pos,
        rho_neg,
        tau,
        lambda,
    };
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss (L_R = {recon}, L_C = {contrastive})"
        )));
    }
    if !with_grads {
        return Ok(BatchResult {
            report,
            grads: None,
        });
    }

    let per_sample: Vec<(ParamSet, ParamSet)> = graphs
        .par_iter_mut()
        .enumerate()
        .map(|(idx, s)| {
            let mut out = s.g.scale(s.recon, 1.0 / k as f64);
            if let Some(ga) = &anchor_grads {
                let c = Tensor::new(
                    vec![1, ga.cols()],
                    ga.row(idx).iter().map(|v| v * lambda).collect(),
                )?;
                let c = s.g.constant(c);
                let dot = s.g.mul(s.global, c)?;
                let dot = s.g.sum(dot);
                out = s.g.add(out, dot)?;
            }
            let grads = s.g.backward_scalar(out)?;
            Ok((
                collect(&state.online, &s.enc, &grads),
                collect(&state.decoder, &s.dec, &grads),
            ))
        })
        .collect::<Result<_>>()?;
    drop(graphs);

    let mut iter = per_sample.into_iter();
    let (mut encoder, mut decoder) = iter.next().expect("non-empty batch");
    for (e, d) in iter {
        accumulate(&mut encoder, &e);
        accumulate(&mut decoder, &d);
    }
    let finite = encoder
        .iter()
        .chain(decoder.iter())
        .all(|(_, t)| t.is_finite());
    if !finite {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(BatchResult {
        report,
        grads: Some(BatchGradients { encoder, decoder }),
    })
}
