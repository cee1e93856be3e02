use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EegSample;
use crate::error::{io_err, Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Contents of `manifest.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub n_channels: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub n_times: usize,
    pub channel_names: Vec<String>,
    /// Volts represented by 1.0 in `data.bin`.
    pub volts_per_unit: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub n_classes: Option<usize>,
}

/// Samples of one montage, optionally labelled.
///
/// On disk: `manifest.json`, `data.bin` (little-endian f32, samples
/// concatenated, each row-major `C × T`) and optional `labels.bin`
/// (little-endian i32).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<EegSample>,
    pub labels: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(samples: Vec<EegSample>, labels: Option<Vec<usize>>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("dataset is empty".into()))?;
        for (k, s) in samples.iter().enumerate() {
            if s.channels() != first.channels()
                || s.n_times() != first.n_times()
                || s.fs() != first.fs()
            {
                return Err(Error::Data(format!(
                    "sample {k} does not match the montage/shape of sample 0"
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(Error::Data(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.len()
                )));
            }
        }
        Ok(Self {
            samples,
            labels,
            seed: None,
            provenance: String::new(),
        })
    }

    pub fn with_provenance(mut self, seed: Option<u64>, provenance: impl Into<String>) -> Self {
        self.seed = seed;
        self.provenance = provenance.into();
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn manifest(&self) -> DatasetManifest {
        let s = &self.samples[0];
        DatasetManifest {
            schema_version: DATASET_SCHEMA_VERSION,
            n_channels: s.n_channels(),
            fs: s.fs(),
            duration_s: s.duration_s(),
            n_times: s.n_times(),
            channel_names: s.channels().to_vec(),
            volts_per_unit: s.volts_per_unit(),
            n_samples: self.samples.len(),
            seed: self.seed,
            provenance: self.provenance.clone(),
            n_classes: self
                .labels
                .as_ref()
                .map(|l| l.iter().max().map_or(0, |m| m + 1)),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        let path = dir.join("manifest.json");
        fs::write(&path, manifest).map_err(io_err(&path))?;

        let mut bytes = Vec::with_capacity(self.samples.len() * self.samples[0].data().len() * 4);
        for s in &self.samples {
            for &v in s.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let path = dir.join("data.bin");
        fs::write(&path, bytes).map_err(io_err(&path))?;

        if let Some(labels) = &self.labels {
            let mut bytes = Vec::with_capacity(labels.len() * 4);
            for &l in labels {
                let l = i32::try_from(l)
                    .map_err(|_| Error::Data(format!("label {l} overflows i32")))?;
                bytes.extend_from_slice(&l.to_le_bytes());
            }
            let path = dir.join("labels.bin");
            fs::write(&path, bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        if m.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "unsupported dataset schema {}",
                m.schema_version
            )));
        }
        if m.channel_names.len() != m.n_channels {
            return Err(Error::Data(
                "manifest channel_names does not match n_channels".into(),
            ));
        }
        let per = m.n_channels * m.n_times;
        let path = dir.join("data.bin");
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() != per * m.n_samples * 4 {
            return Err(Error::Data(format!(
                "data.bin holds {} bytes, manifest implies {}",
                bytes.len(),
                per * m.n_samples * 4
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let samples = values
            .chunks(per)
            .map(|chunk| {
                EegSample::new(m.channel_names.clone(), m.fs, m.n_times, chunk.to_vec())
                    .map(|s| s.with_volts_per_unit(m.volts_per_unit))
            })
            .collect::<Result<Vec<_>>>()?;

        let label_path = dir.join("labels.bin");
        let labels = if label_path.exists() {
            let bytes = fs::read(&label_path).map_err(io_err(&label_path))?;
            if bytes.len() != m.n_samples * 4 {
                return Err(Error::Data(
                    "labels.bin length does not match sample count".into(),
                ));
            }
            let labels = bytes
                .chunks_exact(4)
                .map(|b| {
                    let v = i32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                    usize::try_from(v).map_err(|_| Error::Data(format!("negative label {v}")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(labels)
        } else {
            None
        };
        Ok(Self::new(samples, labels)?.with_provenance(m.seed, m.provenance))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let samples = (0..3)
            .map(|k| {
                EegSample::new(
                    names.clone(),
                    200.0,
                    4,
                    (0..8).map(|v| (v + k) as f64 * 0.5).collect(),
                )
                .unwrap()
            })
            .collect();
        let ds = Dataset::new(samples, Some(vec![0, 1, 1]))
            .unwrap()
            .with_provenance(Some(9), "test");
        ds.write(dir.path()).unwrap();
        let back = Dataset::read(dir.path()).unwrap();
        assert_eq!(back, ds);
        let m = back.manifest();
        assert_eq!(m.n_classes, Some(2));
        assert_eq!(m.seed, Some(9));

        let raw = std::fs::read(dir.path().join("data.bin")).unwrap();
        assert_eq!(raw.len(), 3 * 8 * 4);
        assert_eq!(&raw[4..8], &0.5f32.to_le_bytes());
    }

    #[test]
    fn rejects_truncated_data() {
        let dir = tempfile::tempdir().unwrap();
        let s = EegSample::new(vec!["a".into()], 100.0, 2, vec![1.0, 2.0]).unwrap();
        Dataset::new(vec![s], None)
            .unwrap()
            .write(dir.path())
            .unwrap();
        std::fs::write(dir.path().join("data.bin"), [0u8; 3]).unwrap();
        assert!(matches!(Dataset::read(dir.path()), Err(Error::Data(_))));
    }
}
