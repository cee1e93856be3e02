use std::collections::HashSet;

use super::config::ModelConfig;
use super::mask::MaskPlan;
use super::network::{self, AttentionMaps};
use super::params::ParamSet;
use super::state::ModelState;
use crate::diff::{Graph, Tensor};
use crate::error::{invalid, Result};
use crate::signals::{ChannelVocabulary, EegSample};

/// Where a token came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenIndex {
    /// Patch of sample channel `channel` at time step `time`.
    Patch {
        channel: usize,
        time: usize,
    },
    Global,
}

/// Token rows with their provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    tokens: Tensor,
    index: Vec<TokenIndex>,
}

impl TokenGrid {
    /// Rejects a row/index count mismatch, a second global token or a
    /// repeated patch position.
    pub fn new(tokens: Tensor, index: Vec<TokenIndex>) -> Result<Self> {
        if tokens.rank() != 2 || tokens.rows() != index.len() {
            return Err(invalid(format!(
                "token matrix {:?} does not match {} index entries",
                tokens.shape(),
                index.len()
            )));
        }
        let mut seen = HashSet::new();
        let mut globals = 0;
        for ix in &index {
            match ix {
                TokenIndex::Global => globals += 1,
                p => {
                    if !seen.insert(*p) {
                        return Err(invalid(format!("duplicate token position {p:?}")));
                    }
                }
            }
        }
        if globals > 1 {
            return Err(invalid("a token grid holds at most one global token"));
        }
        Ok(Self { tokens, index })
    }

    pub fn tokens(&self) -> &Tensor {
        &self.tokens
    }

    pub fn index(&self) -> &[TokenIndex] {
        &self.index
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn width(&self) -> usize {
        self.tokens.cols()
    }

    /// Patch positions in row order.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        self.index
            .iter()
            .filter_map(|ix| match ix {
                TokenIndex::Patch { channel, time } => Some((*channel, *time)),
                TokenIndex::Global => None,
            })
            .collect()
    }

    pub fn global_row(&self) -> Option<usize> {
        self.index.iter().position(|ix| *ix == TokenIndex::Global)
    }

    /// Keeps the patch tokens at `positions`, in that order.
    pub fn select(&self, positions: &[(usize, usize)]) -> Result<TokenGrid> {
        let mut rows = Vec::with_capacity(positions.len());
        for &(channel, time) in positions {
            let r = self
                .index
                .iter()
                .position(|ix| *ix == TokenIndex::Patch { channel, time })
                .ok_or_else(|| invalid(format!("position ({channel}, {time}) not in grid")))?;
            rows.push(r);
        }
        self.take_rows(&rows)
    }

    /// Reorders or subsets rows.
    pub fn take_rows(&self, rows: &[usize]) -> Result<TokenGrid> {
        let w = self.width();
        let mut data = Vec::with_capacity(rows.len() * w);
        for &r in rows {
            data.extend_from_slice(self.tokens.row(r));
        }
        TokenGrid::new(
            Tensor::new(vec![rows.len(), w], data)?,
            rows.iter().map(|&r| self.index[r]).collect(),
        )
    }

    /// Appends `global` (`[1, d]` or `[d]`) as the global token.
    pub fn with_global(&self, global: &Tensor) -> Result<TokenGrid> {
        if global.len() != self.width() {
            return Err(invalid("global token width differs from the grid"));
        }
        let mut data = self.tokens.data().to_vec();
        data.extend_from_slice(global.data());
        let mut index = self.index.clone();
        index.push(TokenIndex::Global);
        TokenGrid::new(
            Tensor::new(vec![self.len() + 1, self.width()], data)?,
            index,
        )
    }
}

/// Splits every channel into patches of `cfg.patch_len` and projects them.
///
/// Samples whose length is not a multiple of the patch length are truncated
/// with a warning. Row `i·N + j` is patch `(i, j)`.
pub fn patchify(sample: &EegSample, params: &ParamSet, cfg: &ModelConfig) -> Result<TokenGrid> {
    let l = cfg.patch_len;
    let t = sample.n_times();
    if t < l {
        return Err(invalid(format!(
            "sample has {t} samples, shorter than one patch of {l}"
        )));
    }
    let n = t / l;
    let sample = if n * l != t {
        log::warn!(
            "truncating {t} samples to {} (multiple of patch length {l})",
            n * l
        );
        sample.slice_time(0, n * l)?
    } else {
        sample.clone()
    };
    let mut g = Graph::inference();
    let p = params.bind(&mut g, false);
    let x = g.constant(Tensor::new(
        vec![sample.n_channels(), n * l],
        sample.data().to_vec(),
    )?);
    let y = network::patch_tokens(&mut g, &p, x, l)?;
    let index = (0..sample.n_channels())
        .flat_map(|channel| (0..n).map(move |time| TokenIndex::Patch { channel, time }))
        .collect();
    TokenGrid::new(g.value(y).clone(), index)
}

/// Adds channel and time embeddings from `params` to every patch token.
pub fn embed(
    grid: &TokenGrid,
    channel_names: &[String],
    vocab: &ChannelVocabulary,
    params: &ParamSet,
) -> Result<TokenGrid> {
    let rows = vocab.resolve(channel_names)?;
    let chan = params
        .get("chan_emb")
        .ok_or_else(|| invalid("parameters lack chan_emb"))?;
    let time = params
        .get("time_emb")
        .ok_or_else(|| invalid("parameters lack time_emb"))?;
    let w = grid.width();
    if chan.cols() != w {
        return Err(invalid("embedding width differs from token width"));
    }
    let mut data = grid.tokens.data().to_vec();
    for (r, ix) in grid.index.iter().enumerate() {
        if let TokenIndex::Patch { channel, time: j } = *ix {
            let c = *rows
                .get(channel)
                .ok_or_else(|| invalid(format!("token channel {channel} has no name")))?;
            if j >= time.rows() {
                return Err(invalid(format!(
                    "time step {j} exceeds the temporal table ({})",
                    time.rows()
                )));
            }
            let out = &mut data[r * w..(r + 1) * w];
            for ((o, a), b) in out.iter_mut().zip(chan.row(c)).zip(time.row(j)) {
                *o += a + b;
            }
        }
    }
    TokenGrid::new(Tensor::new(vec![grid.len(), w], data)?, grid.index.clone())
}

/// Encoder output plus optional per-layer, per-head attention maps.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub grid: TokenGrid,
    pub attention: Option<AttentionMaps>,
}

/// Runs the encoder blocks over an embedded grid holding exactly one global token.
pub fn encode(
    grid: &TokenGrid,
    params: &ParamSet,
    cfg: &ModelConfig,
    capture: bool,
) -> Result<Encoded> {
    if grid.global_row().is_none() {
        return Err(invalid("encoder input needs exactly one global token"));
    }
    let mut g = Graph::inference();
    let p = params.bind(&mut g, false);
    let x = g.constant(grid.tokens.clone());
    let mut maps = capture.then(AttentionMaps::new);
    let y = network::transformer(&mut g, &p, cfg.enc_layers, cfg.enc_heads, x, maps.as_mut())?;
    Ok(Encoded {
        grid: TokenGrid::new(g.value(y).clone(), grid.index.clone())?,
        attention: maps,
    })
}

/// Reconstructs every patch, shaped `[C, N, l]`.
///
/// `encoded` must hold exactly the visible positions of `plan` (any order,
/// global token ignored).
pub fn decode(
    encoded: &TokenGrid,
    plan: &MaskPlan,
    channel_names: &[String],
    state: &ModelState,
) -> Result<Tensor> {
    let cfg = &state.config;
    let positions = encoded.positions();
    let mut got = positions.clone();
    let mut want = plan.visible_positions();
    got.sort_unstable();
    want.sort_unstable();
    if got != want {
        return Err(invalid(
            "encoded tokens do not cover exactly the visible positions of the mask plan",
        ));
    }
    if channel_names.len() != plan.n_channels() {
        return Err(invalid("channel name count differs from the mask plan"));
    }
    let rows = state.channel_rows(channel_names)?;
    let patch_rows: Vec<usize> = encoded
        .index
        .iter()
        .enumerate()
        .filter(|(_, ix)| **ix != TokenIndex::Global)
        .map(|(r, _)| r)
        .collect();
    let patches = encoded.take_rows(&patch_rows)?;
    let mut g = Graph::inference();
    let p = state.decoder.bind(&mut g, false);
    let x = g.constant(patches.tokens.clone());
    let y = network::decode_positions(
        &mut g,
        &p,
        cfg,
        x,
        &positions,
        plan.n_channels(),
        plan.n_patches(),
        &rows,
    )?;
    Ok(g.value(y)
        .reshape(vec![plan.n_channels(), plan.n_patches(), cfg.patch_len])?)
}

/// Global-token output of the momentum encoder for an embedded view
/// (patch tokens, global token appended here). No tape is recorded.
pub fn momentum_encode(view: &TokenGrid, state: &ModelState) -> Result<Tensor> {
    if view.global_row().is_some() {
        return Err(invalid(
            "momentum view must not already carry a global token",
        ));
    }
    let global = state
        .momentum
        .get("global")
        .ok_or_else(|| invalid("parameters lack global"))?;
    let input = view.with_global(global)?;
    let out = encode(&input, &state.momentum, &state.config, false)?;
    let r = out.grid.global_row().expect("global token kept");
    Ok(Tensor::vector(out.grid.tokens.row(r).to_vec()))
}
