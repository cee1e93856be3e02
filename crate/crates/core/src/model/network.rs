//! Graph-level building blocks shared by training, probing and the
//! tensor-level wrappers.

use super::config::ModelConfig;
use super::mask::MaskPlan;
use super::params::Bound;
use crate::diff::{DiffError, Graph, Tensor, Var, LAYER_NORM_EPS};
use crate::error::{invalid, Result};

/// Attention maps per layer, per head (`[n, n]`, row-stochastic).
pub type AttentionMaps = Vec<Vec<Tensor>>;

type GraphResult<T> = std::result::Result<T, DiffError>;

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> GraphResult<Var> {
    let y = g.matmul(x, w)?;
    g.add_row(y, b)
}

fn norm(g: &mut Graph, p: &Bound, prefix: &str, x: Var) -> GraphResult<Var> {
    let n = g.layer_norm(x, LAYER_NORM_EPS);
    let n = g.mul_row(n, p.get(&format!("{prefix}.g")))?;
    g.add_row(n, p.get(&format!("{prefix}.b")))
}

fn attention(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x: Var,
    heads: usize,
    capture: Option<&mut Vec<Tensor>>,
) -> GraphResult<Var> {
    let w = |s: &str| p.get(&format!("{prefix}.attn.{s}"));
    let q = linear(g, x, w("wq"), w("bq"))?;
    let k = linear(g, x, w("wk"), w("bk"))?;
    let v = linear(g, x, w("wv"), w("bv"))?;
    let d = g.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut maps = Vec::new();
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, scale);
        let a = g.softmax(s);
        if capture.is_some() {
            maps.push(g.value(a).clone());
        }
        outs.push(g.matmul(a, vh)?);
    }
    if let Some(sink) = capture {
        sink.extend(maps);
    }
    let o = if outs.len() == 1 {
        outs[0]
    } else {
        g.concat_cols(&outs)?
    };
    linear(g, o, w("wo"), w("bo"))
}

/// Pre-norm block: `h = x + attn(ln1(x))`, `out = h + ff(ln2(h))`.
fn block(
    g: &mut Graph,
    p: &Bound,
    prefix: &str,
    x: Var,
    heads: usize,
    capture: Option<&mut Vec<Tensor>>,
) -> GraphResult<Var> {
    let n1 = norm(g, p, &format!("{prefix}.ln1"), x)?;
    let a = attention(g, p, prefix, n1, heads, capture)?;
    let h = g.add(x, a)?;
    let n2 = norm(g, p, &format!("{prefix}.ln2"), h)?;
    let f = linear(
        g,
        n2,
        p.get(&format!("{prefix}.ff.w1")),
        p.get(&format!("{prefix}.ff.b1")),
    )?;
    let f = g.gelu(f);
    let f = linear(
        g,
        f,
        p.get(&format!("{prefix}.ff.w2")),
        p.get(&format!("{prefix}.ff.b2")),
    )?;
    g.add(h, f)
}

/// Runs `layers` blocks followed by the final layer norm.
pub(crate) fn transformer(
    g: &mut Graph,
    p: &Bound,
    layers: usize,
    heads: usize,
    mut x: Var,
    mut capture: Option<&mut AttentionMaps>,
) -> GraphResult<Var> {
    for l in 0..layers {
        let mut maps = capture.as_ref().map(|_| Vec::with_capacity(heads));
        x = block(g, p, &format!("layer{l}"), x, heads, maps.as_mut())?;
        if let (Some(sink), Some(m)) = (capture.as_deref_mut(), maps) {
            sink.push(m);
        }
    }
    norm(g, p, "final_ln", x)
}

/// Patch tokens of a `[C, N·l]` signal: row `i·N + j` is patch `(i, j)`.
pub(crate) fn patch_tokens(
    g: &mut Graph,
    p: &Bound,
    signal: Var,
    patch_len: usize,
) -> GraphResult<Var> {
    g.conv1d(signal, p.get("patch.w"), p.get("patch.b"), patch_len)
}

/// Adds channel and time embeddings to the listed positions of a token
/// table laid out as [`patch_tokens`] returns it.
pub(crate) fn embed_positions(
    g: &mut Graph,
    p: &Bound,
    tokens: Var,
    n_patches: usize,
    positions: &[(usize, usize)],
    channel_rows: &[usize],
) -> GraphResult<Var> {
    let rows: Vec<usize> = positions.iter().map(|&(i, j)| i * n_patches + j).collect();
    let chans: Vec<usize> = positions.iter().map(|&(i, _)| channel_rows[i]).collect();
    let times: Vec<usize> = positions.iter().map(|&(_, j)| j).collect();
    let x = g.gather_rows(tokens, &rows)?;
    let ce = g.gather_rows(p.get("chan_emb"), &chans)?;
    let te = g.gather_rows(p.get("time_emb"), &times)?;
    let x = g.add(x, ce)?;
    g.add(x, te)
}

/// Encodes the listed positions with the global token appended as the last
/// row; returns the full `[n + 1, d]` output.
pub(crate) fn encode_positions(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    signal: Var,
    channel_rows: &[usize],
    positions: &[(usize, usize)],
    capture: Option<&mut AttentionMaps>,
) -> Result<Var> {
    let n_patches = g.value(signal).cols() / cfg.patch_len;
    check_patches(cfg, n_patches)?;
    let tokens = patch_tokens(g, p, signal, cfg.patch_len)?;
    let e = embed_positions(g, p, tokens, n_patches, positions, channel_rows)?;
    let x = g.concat_rows(&[e, p.get("global")])?;
    Ok(transformer(
        g,
        p,
        cfg.enc_layers,
        cfg.enc_heads,
        x,
        capture,
    )?)
}

pub(crate) fn check_patches(cfg: &ModelConfig, n_patches: usize) -> Result<()> {
    if n_patches == 0 {
        return Err(invalid(format!(
            "signal is shorter than one patch of {} samples",
            cfg.patch_len
        )));
    }
    if n_patches > cfg.max_patches {
        return Err(invalid(format!(
            "{n_patches} patches exceed model.max_patches = {}",
            cfg.max_patches
        )));
    }
    Ok(())
}

/// Projects encoded visible tokens to decoder width, fills masked positions
/// with the mask token, re-adds decoder embeddings and decodes every
/// position. Output row `i·N + j` reconstructs patch `(i, j)`.
pub(crate) fn decode_positions(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    encoded: Var,
    visible: &[(usize, usize)],
    n_channels: usize,
    n_patches: usize,
    channel_rows: &[usize],
) -> Result<Var> {
    let total = n_channels * n_patches;
    let mut slot = vec![usize::MAX; total];
    for (r, &(i, j)) in visible.iter().enumerate() {
        slot[i * n_patches + j] = r;
    }
    let n_vis = visible.len();
    let mut next = n_vis;
    for s in slot.iter_mut().filter(|s| **s == usize::MAX) {
        *s = next;
        next += 1;
    }
    let proj = linear(g, encoded, p.get("proj.w"), p.get("proj.b"))?;
    let combined = if total > n_vis {
        let masks = g.gather_rows(p.get("mask_token"), &vec![0; total - n_vis])?;
        g.concat_rows(&[proj, masks])?
    } else {
        proj
    };
    let x = g.gather_rows(combined, &slot)?;
    let chans: Vec<usize> = (0..total).map(|r| channel_rows[r / n_patches]).collect();
    let times: Vec<usize> = (0..total).map(|r| r % n_patches).collect();
    let ce = g.gather_rows(p.get("chan_emb"), &chans)?;
    let te = g.gather_rows(p.get("time_emb"), &times)?;
    let x = g.add(x, ce)?;
    let x = g.add(x, te)?;
    let h = transformer(g, p, cfg.dec_layers, cfg.dec_heads, x, None)?;
    Ok(linear(g, h, p.get("head.w"), p.get("head.b"))?)
}

/// Online masked-modeling pass over one `[C, N·l]` signal.
pub(crate) struct MemPass {
    /// `[C·N, l]`, canonical row order.
    pub recon: Var,
    /// `[1, d]`.
    pub global: Var,
}

pub(crate) fn mem_pass(
    g: &mut Graph,
    enc: &Bound,
    dec: &Bound,
    cfg: &ModelConfig,
    signal: Var,
    channel_rows: &[usize],
    plan: &MaskPlan,
) -> Result<MemPass> {
    let visible = plan.visible_positions();
    let out = encode_positions(g, enc, cfg, signal, channel_rows, &visible, None)?;
    let n = visible.len();
    let patches = g.gather_rows(out, &(0..n).collect::<Vec<_>>())?;
    let global = g.gather_rows(out, &[n])?;
    let recon = decode_positions(
        g,
        dec,
        cfg,
        patches,
        &visible,
        plan.n_channels(),
        plan.n_patches(),
        channel_rows,
    )?;
    Ok(MemPass { recon, global })
}

/// Global-token output for the visible positions of `plan`.
pub(crate) fn global_pass(
    g: &mut Graph,
    enc: &Bound,
    cfg: &ModelConfig,
    signal: Var,
    channel_rows: &[usize],
    plan: &MaskPlan,
) -> Result<Var> {
    let visible = plan.visible_positions();
    let out = encode_positions(g, enc, cfg, signal, channel_rows, &visible, None)?;
    Ok(g.gather_rows(out, &[visible.len()])?)
}
