use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ParamSet;
use super::state::ModelState;
use crate::diff::Tensor;
use crate::error::{io_err, Error, Result};
use crate::signals::ChannelVocabulary;

pub const CHECKPOINT_FORMAT: u32 = 1;
pub const MANIFEST_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.bin";

/// Location of one tensor inside `params.bin`, in f64 elements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: u32,
    config: ModelConfig,
    vocab: ChannelVocabulary,
    seed: u64,
    /// Caller-defined progress record (step, schedule positions, ...).
    progress: serde_json::Value,
    tensors: Vec<BlobEntry>,
}

/// A model state plus auxiliary tensor sets (optimizer moments) and a
/// free-form progress record.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: ModelState,
    pub aux: BTreeMap<String, ParamSet>,
    pub progress: serde_json::Value,
}

const CORE_SETS: [&str; 3] = ["online", "momentum", "decoder"];

impl Checkpoint {
    fn sets(&self) -> Vec<(String, &ParamSet)> {
        let core = [
            &self.state.online,
            &self.state.momentum,
            &self.state.decoder,
        ];
        CORE_SETS
            .iter()
            .map(|s| s.to_string())
            .zip(core)
            .chain(self.aux.iter().map(|(k, v)| (format!("aux/{k}"), v)))
            .collect()
    }

    /// Writes `checkpoint.json` and `params.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut bytes = Vec::new();
        let mut tensors = Vec::new();
        let mut offset = 0;
        for (set, params) in self.sets() {
            for (name, t) in params.iter() {
                tensors.push(BlobEntry {
                    name: format!("{set}/{name}"),
                    offset,
                    shape: t.shape().to_vec(),
                });
                for &v in t.data() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                offset += t.len();
            }
        }
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT,
            config: self.state.config.clone(),
            vocab: self.state.vocab.clone(),
            seed: self.state.seed,
            progress: self.progress.clone(),
            tensors,
        };
        let path = dir.join(PARAMS_FILE);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))?;
        Ok(())
    }

    /// Reads a checkpoint directory, or the directory holding a given
    /// `checkpoint.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let dir = if path.is_file() {
            path.parent().unwrap_or(Path::new("."))
        } else {
            path
        };
        let mpath = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "unsupported checkpoint format {}",
                m.format
            )));
        }
        let ppath = dir.join(PARAMS_FILE);
        let bytes = fs::read(&ppath).map_err(io_err(&ppath))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Data(
                "params.bin length is not a multiple of 8".into(),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();

        let mut sets: BTreeMap<String, ParamSet> = BTreeMap::new();
        for e in &m.tensors {
            let n: usize = e.shape.iter().product();
            let slice = values.get(e.offset..e.offset + n).ok_or_else(|| {
                Error::Data(format!("tensor `{}` lies outside params.bin", e.name))
            })?;
            let (set, name) = split_name(&e.name)?;
            let t = Tensor::new(e.shape.clone(), slice.to_vec())?;
            sets.entry(set.to_string()).or_default().insert(name, t);
        }
        let mut take = |k: &str| {
            sets.remove(k)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{k}` tensors")))
        };
        let state = ModelState {
            config: m.config,
            vocab: m.vocab,
            online: take("online")?,
            momentum: take("momentum")?,
            decoder: take("decoder")?,
            seed: m.seed,
        };
        state.validate()?;
        let aux = sets
            .into_iter()
            .map(|(k, v)| match k.strip_prefix("aux/") {
                Some(rest) => Ok((rest.to_string(), v)),
                None => Err(Error::Data(format!("unexpected tensor set `{k}`"))),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            state,
            aux,
            progress: m.progress,
        })
    }
}

/// `online/layer0.ff.w1` → (`online`, `layer0.ff.w1`); `aux/adam_m/enc/x` → (`aux/adam_m`, `enc/x`)
fn split_name(full: &str) -> Result<(&str, &str)> {
    let cut = if let Some(rest) = full.strip_prefix("aux/") {
        4 + rest
            .find('/')
            .ok_or_else(|| Error::Data(format!("bad tensor name `{full}`")))?
    } else {
        full.find('/')
            .ok_or_else(|| Error::Data(format!("bad tensor name `{full}`")))?
    };
    Ok((&full[..cut], &full[cut + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut state =
            ModelState::init(ModelConfig::gradcheck(4), ChannelVocabulary::grid(4), 3).unwrap();
        state
            .online
            .map_entries(|_, t| t.map(|v| v * std::f64::consts::PI + 1e-300));
        let mut moments = ParamSet::new();
        moments.insert("enc/patch.w", Tensor::full([2, 2], 0.1));
        let ck = Checkpoint {
            state,
            aux: BTreeMap::from([("adam_m".to_string(), moments)]),
            progress: serde_json::json!({"step": 12}),
        };
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.state.online.checksum(), ck.state.online.checksum());
    }

    #[test]
    fn truncated_params_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let state =
            ModelState::init(ModelConfig::gradcheck(4), ChannelVocabulary::grid(4), 3).unwrap();
        Checkpoint {
            state,
            aux: BTreeMap::new(),
            progress: serde_json::Value::Null,
        }
        .save(dir.path())
        .unwrap();
        std::fs::write(dir.path().join(PARAMS_FILE), [0u8; 16]).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Data(_))));
    }
}
