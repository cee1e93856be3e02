use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::diff::{Graph, Tensor, Var};
use crate::error::{invalid, Result};

/// Standard deviation of every random initializer.
pub const INIT_STD: f64 = 0.02;

/// Named tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
}

/// Graph handles for a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Panics when `name` is absent; sets are checked against their
    /// configuration when built or loaded.
    pub fn get(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter `{name}` is not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Rebinds `name` to another node.
    pub fn with(mut self, name: &str, var: Var) -> Self {
        self.vars.insert(name.to_string(), var);
        self
    }
}

fn normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, INIT_STD).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape matches")
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Registers every tensor on `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Pairs names, in order, with existing graph nodes.
    pub fn bind_to(&self, vars: &[Var]) -> Bound {
        assert_eq!(vars.len(), self.params.len(), "one node per tensor");
        Bound {
            vars: self
                .params
                .keys()
                .cloned()
                .zip(vars.iter().copied())
                .collect(),
        }
    }

    /// Tensors in name order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.values().cloned().collect()
    }

    /// Same names with the same shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, ta), (kb, tb))| ka == kb && ta.shape() == tb.shape())
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (k, t) in &self.params {
            h.update(k.as_bytes());
            for &s in t.shape() {
                h.update((s as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Checks that exactly the `expected` names are present with their shapes.
    pub fn check_layout(&self, what: &str, expected: &[(String, Vec<usize>)]) -> Result<()> {
        if expected.len() != self.params.len() {
            return Err(invalid(format!(
                "{what}: expected {} tensors, found {}",
                expected.len(),
                self.params.len()
            )));
        }
        for (name, shape) in expected {
            match self.params.get(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(invalid(format!(
                        "{what}: `{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(invalid(format!("{what}: missing `{name}`"))),
            }
        }
        Ok(())
    }

    pub(crate) fn map_entries(&mut self, mut f: impl FnMut(&str, &Tensor) -> Tensor) {
        for (k, t) in self.params.iter_mut() {
            *t = f(k, t);
        }
    }
}

fn block_layout(prefix: &str, d: usize, ff: usize) -> Vec<(String, Vec<usize>)> {
    let p = |s: &str| format!("{prefix}.{s}");
    vec![
        (p("ln1.g"), vec![d]),
        (p("ln1.b"), vec![d]),
        (p("attn.wq"), vec![d, d]),
        (p("attn.bq"), vec![d]),
        (p("attn.wk"), vec![d, d]),
        (p("attn.bk"), vec![d]),
        (p("attn.wv"), vec![d, d]),
        (p("attn.bv"), vec![d]),
        (p("attn.wo"), vec![d, d]),
        (p("attn.bo"), vec![d]),
        (p("ln2.g"), vec![d]),
        (p("ln2.b"), vec![d]),
        (p("ff.w1"), vec![d, ff]),
        (p("ff.b1"), vec![ff]),
        (p("ff.w2"), vec![ff, d]),
        (p("ff.b2"), vec![d]),
    ]
}

/// Names and shapes of the encoder parameters for `n_channels` embedding rows.
pub fn encoder_layout(cfg: &ModelConfig, n_channels: usize) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let mut out = vec![
        ("patch.w".to_string(), vec![d, cfg.patch_len]),
        ("patch.b".to_string(), vec![d]),
        ("chan_emb".to_string(), vec![n_channels, d]),
        ("time_emb".to_string(), vec![cfg.max_patches, d]),
        ("global".to_string(), vec![1, d]),
        ("final_ln.g".to_string(), vec![d]),
        ("final_ln.b".to_string(), vec![d]),
    ];
    for l in 0..cfg.enc_layers {
        out.extend(block_layout(&format!("layer{l}"), d, cfg.enc_ff));
    }
    out
}

pub fn decoder_layout(cfg: &ModelConfig, n_channels: usize) -> Vec<(String, Vec<usize>)> {
    let dd = cfg.dec_d_model;
    let mut out = vec![
        ("proj.w".to_string(), vec![cfg.d_model, dd]),
        ("proj.b".to_string(), vec![dd]),
        ("mask_token".to_string(), vec![1, dd]),
        ("chan_emb".to_string(), vec![n_channels, dd]),
        ("time_emb".to_string(), vec![cfg.max_patches, dd]),
        ("final_ln.g".to_string(), vec![dd]),
        ("final_ln.b".to_string(), vec![dd]),
        ("head.w".to_string(), vec![dd, cfg.patch_len]),
        ("head.b".to_string(), vec![cfg.patch_len]),
    ];
    for l in 0..cfg.dec_layers {
        out.extend(block_layout(&format!("layer{l}"), dd, cfg.dec_ff));
    }
    out
}

/// Layer-norm gains start at one, biases at zero, everything else N(0, 0.02²).
pub fn init_from_layout(layout: &[(String, Vec<usize>)], rng: &mut impl Rng) -> ParamSet {
    let mut set = ParamSet::new();
    for (name, shape) in layout {
        let last = name.rsplit('.').next().unwrap_or(name);
        let is_norm = name.contains("ln");
        let t = if is_norm && last == "g" {
            Tensor::full(shape.clone(), 1.0)
        } else if (is_norm && last == "b") || (last.starts_with('b') && shape.len() == 1) {
            Tensor::zeros(shape.clone())
        } else {
            normal(shape, rng)
        };
        set.insert(name.clone(), t);
    }
    set
}

/// A fresh N(0, 0.02²) row, for channels added after initialization.
pub(crate) fn random_row(width: usize, rng: &mut impl Rng) -> Vec<f64> {
    normal(&[width], rng).into_vec()
}
