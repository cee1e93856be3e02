//! EEG sample containers and preprocessing.
//!
//! The canonical sample is a `C × T` matrix in 0.1 mV units. The usual
//! pipeline is [`bandpass`] → [`resample`] → [`segment`] → [`rescale_units`].

mod dataset;
mod filter;
mod resample;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use dataset::{Dataset, DatasetManifest, DATASET_SCHEMA_VERSION};
pub use filter::{bandpass, Biquad};
pub use resample::{rational_ratio, resample};
pub use synth::{synth_downstream, synth_eeg, Band, DownstreamConfig, SynthConfig};

/// Volts represented by 1.0 in canonical data (0.1 mV).
pub const CANONICAL_VOLTS_PER_UNIT: f64 = 1e-4;

/// A multichannel recording or segment, stored row-major as `C × T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EegSample {
    channels: Vec<String>,
    fs: f64,
    n_times: usize,
    data: Vec<f64>,
    /// Volts represented by one data unit.
    volts_per_unit: f64,
    /// Product of all gains applied by [`rescale_units`].
    applied_gain: f64,
}

impl EegSample {
    pub fn new(channels: Vec<String>, fs: f64, n_times: usize, data: Vec<f64>) -> Result<Self> {
        if channels.is_empty() {
            return Err(invalid("a sample needs at least one channel"));
        }
        if !(fs > 0.0) {
            return Err(invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if n_times == 0 {
            return Err(invalid("a sample needs at least one time point"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = channels.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(invalid(format!("duplicate channel name `{dup}`")));
        }
        if data.len() != channels.len() * n_times {
            return Err(invalid(format!(
                "{} channels × {n_times} samples needs {} values, got {}",
                channels.len(),
                channels.len() * n_times,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            fs,
            n_times,
            data,
            volts_per_unit: CANONICAL_VOLTS_PER_UNIT,
            applied_gain: 1.0,
        })
    }

    pub fn with_volts_per_unit(mut self, volts_per_unit: f64) -> Self {
        self.volts_per_unit = volts_per_unit;
        self
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn duration_s(&self) -> f64 {
        self.n_times as f64 / self.fs
    }

    pub fn volts_per_unit(&self) -> f64 {
        self.volts_per_unit
    }

    pub fn applied_gain(&self) -> f64 {
        self.applied_gain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_times..(i + 1) * self.n_times]
    }

    /// Same metadata, new per-channel data (each row `n_times` long).
    pub(crate) fn with_rows(&self, fs: f64, n_times: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), self.channels.len() * n_times);
        Self {
            channels: self.channels.clone(),
            fs,
            n_times,
            data,
            ..*self
        }
    }

    /// Columns `[start, end)` of every channel.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_times {
            return Err(invalid(format!(
                "time range {start}..{end} outside {} samples",
                self.n_times
            )));
        }
        let mut data = Vec::with_capacity(self.n_channels() * (end - start));
        for i in 0..self.n_channels() {
            data.extend_from_slice(&self.channel(i)[start..end]);
        }
        Ok(self.with_rows(self.fs, end - start, data))
    }

    /// Maps every value through `f`, keeping metadata.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_rows(
            self.fs,
            self.n_times,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Canonical channel names with normalized scalp coordinates in `(0, 1)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelVocabulary {
    names: Vec<String>,
    coords: Vec<[f64; 2]>,
}

/// Names of the 16-channel desk montage, front row first, left to right.
pub const GRID16_NAMES: [&str; 16] = [
    "F7", "F3", "F4", "F8", "T7", "C3", "C4", "T8", "TP7", "CP3", "CP4", "TP8", "P7", "P3", "P4",
    "P8",
];

impl ChannelVocabulary {
    pub fn new(names: Vec<String>, coords: Vec<[f64; 2]>) -> Result<Self> {
        if names.len() != coords.len() {
            return Err(invalid("every channel name needs a coordinate"));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|c| !seen.insert(c.as_str())) {
            return Err(invalid(format!("duplicate channel name `{dup}`")));
        }
        if let Some(bad) = coords
            .iter()
            .find(|c| !c.iter().all(|&v| v > 0.0 && v < 1.0))
        {
            return Err(invalid(format!(
                "coordinate {bad:?} outside the open unit square"
            )));
        }
        Ok(Self { names, coords })
    }

    /// `n` channels laid out on a near-square grid with cell-centred coordinates.
    ///
    /// Sixteen channels use the names in [`GRID16_NAMES`]; other counts get
    /// `E01`, `E02`, ...
    pub fn grid(n: usize) -> Self {
        assert!(n > 0, "grid needs at least one channel");
        let cols = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(cols);
        let names: Vec<String> = if n == 16 {
            GRID16_NAMES.iter().map(|s| s.to_string()).collect()
        } else {
            (1..=n).map(|k| format!("E{k:02}")).collect()
        };
        let coords = (0..n)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                [
                    (c as f64 + 0.5) / cols as f64,
                    (r as f64 + 0.5) / rows as f64,
                ]
            })
            .collect();
        Self { names, coords }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coord(&self, name: &str) -> Option<[f64; 2]> {
        self.index_of(name).map(|i| self.coords[i])
    }

    /// Row indices of `names`, failing on the first unknown one.
    pub fn resolve(&self, names: &[String]) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                self.index_of(n)
                    .ok_or_else(|| Error::UnknownChannel(n.clone()))
            })
            .collect()
    }

    /// Appends a channel, placing it at the centre of the scalp.
    pub(crate) fn push(&mut self, name: &str) -> usize {
        self.names.push(name.to_string());
        self.coords.push([0.5, 0.5]);
        self.names.len() - 1
    }
}

pub fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Windows cut from a recording, plus a note when nothing could be cut.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<EegSample>,
    pub warning: Option<String>,
}

/// Cuts `floor((T - W) / H) + 1` windows of `W = round(window_s·fs)` samples
/// every `H = round(hop_s·fs)` samples.
pub fn segment(recording: &EegSample, window_s: f64, hop_s: f64) -> Result<Segmentation> {
    if !(window_s > 0.0) || !(hop_s > 0.0) {
        return Err(invalid(format!(
            "window ({window_s}) and hop ({hop_s}) must be positive"
        )));
    }
    let w = (window_s * recording.fs).round() as usize;
    let h = (hop_s * recording.fs).round() as usize;
    if w == 0 || h == 0 {
        return Err(invalid("window and hop must span at least one sample"));
    }
    let t = recording.n_times;
    if w > t {
        return Ok(Segmentation {
            segments: Vec::new(),
            warning: Some(format!(
                "window of {w} samples is longer than the {t}-sample recording"
            )),
        });
    }
    let count = (t - w) / h + 1;
    let segments = (0..count)
        .map(|k| recording.slice_time(k * h, k * h + w))
        .collect::<Result<Vec<_>>>()?;
    Ok(Segmentation {
        segments,
        warning: None,
    })
}

/// Converts data recorded at `volts_per_unit` into 0.1 mV units.
pub fn rescale_units(sample: &EegSample, volts_per_unit: f64) -> Result<EegSample> {
    if !(volts_per_unit > 0.0) {
        return Err(invalid(format!(
            "volts per unit must be positive, got {volts_per_unit}"
        )));
    }
    let gain = volts_per_unit / CANONICAL_VOLTS_PER_UNIT;
    let mut out = sample.map(|v| v * gain);
    out.volts_per_unit = CANONICAL_VOLTS_PER_UNIT;
    out.applied_gain = sample.applied_gain * gain;
    Ok(out)
}

/// Shape of the preprocessing output, computed without touching data.
pub fn preprocess_shape(
    n_times: usize,
    fs_in: f64,
    fs_out: f64,
    window_s: f64,
    hop_s: f64,
) -> (usize, usize) {
    let t = (n_times as f64 * fs_out / fs_in).round() as usize;
    let w = (window_s * fs_out).round() as usize;
    let h = (hop_s * fs_out).round() as usize;
    if w > t || w == 0 || h == 0 {
        return (0, w);
    }
    ((t - w) / h + 1, w)
}

/// Settings of the band-pass → resample → segment → rescale pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub fs_out: f64,
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            lo_hz: 0.5,
            hi_hz: 70.0,
            fs_out: 200.0,
            window_s: 4.0,
            hop_s: 4.0,
        }
    }
}

/// Runs the full pipeline on one recording, returning canonical-unit windows.
pub fn preprocess(recording: &EegSample, cfg: &PreprocessConfig) -> Result<Segmentation> {
    let filtered = bandpass(recording, cfg.lo_hz, cfg.hi_hz)?;
    let resampled = resample(&filtered, cfg.fs_out)?;
    let mut seg = segment(&resampled, cfg.window_s, cfg.hop_s)?;
    seg.segments = seg
        .segments
        .iter()
        .map(|s| rescale_units(s, s.volts_per_unit()))
        .collect::<Result<_>>()?;
    Ok(seg)
}

#[cfg(test)]
mod tests {
    #[test]
    fn pipeline_output_matches_predicted_shape() {
        for (t, fs, hop) in [(2500, 250.0, 4.0), (2500, 250.0, 1.0), (3000, 200.0, 2.5), (900, 250.0, 4.0)] {
            let rec = ramp(3, t, fs).map(|v| (v * 0.01).sin()).with_volts_per_unit(1e-6);
            let cfg = PreprocessConfig { hop_s: hop, ..Default::default() };
            let out = preprocess(&rec, &cfg).unwrap();
            let (count, width) = preprocess_shape(t, fs, cfg.fs_out, cfg.window_s, cfg.hop_s);
            assert_eq!(out.segments.len(), count);
            for s in &out.segments {
                assert_eq!((s.n_times(), s.fs()), (width, 200.0));
                assert_eq!(s.volts_per_unit(), CANONICAL_VOLTS_PER_UNIT);
                assert!((s.applied_gain() - 0.01).abs() < 1e-15);
            }
        }
    }

    use super::*;

    fn ramp(c: usize, t: usize, fs: f64) -> EegSample {
        let names = (0..c).map(|k| format!("c{k}")).collect();
        EegSample::new(names, fs, t, (0..c * t).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn sample_invariants() {
        assert!(EegSample::new(vec![], 200.0, 1, vec![]).is_err());
        assert!(EegSample::new(vec!["a".into(), "a".into()], 200.0, 1, vec![0.0; 2]).is_err());
        assert!(EegSample::new(vec!["a".into()], 200.0, 2, vec![0.0; 3]).is_err());
        let s = ramp(2, 800, 200.0);
        assert_eq!(s.duration_s(), 4.0);
    }

    #[test]
    fn segment_counts() {
        let rec = ramp(2, 8000, 200.0);
        let seg = segment(&rec, 4.0, 4.0).unwrap();
        assert_eq!(seg.segments.len(), 10);
        assert!(seg.segments.iter().all(|s| s.n_times() == 800));
        assert_eq!(seg.segments[1].channel(1)[0], (8000 + 800) as f64);

        let rec = ramp(1, 800, 200.0);
        assert_eq!(segment(&rec, 4.0, 4.0).unwrap().segments.len(), 1);

        let rec = ramp(1, 2000, 200.0);
        assert_eq!(segment(&rec, 4.0, 1.0).unwrap().segments.len(), 7);

        let short = segment(&ramp(1, 100, 200.0), 4.0, 4.0).unwrap();
        assert!(short.segments.is_empty());
        assert!(short.warning.is_some());
    }

    #[test]
    fn rescale_examples() {
        let volts = EegSample::new(vec!["a".into()], 200.0, 1, vec![1e-4]).unwrap();
        let out = rescale_units(&volts, 1.0).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-12);
        assert!((out.applied_gain() - 1e4).abs() < 1e-6);

        let micro = EegSample::new(vec!["a".into()], 200.0, 1, vec![50.0]).unwrap();
        assert!((rescale_units(&micro, 1e-6).unwrap().data()[0] - 0.5).abs() < 1e-12);

        let canon = EegSample::new(vec!["a".into()], 200.0, 1, vec![0.37]).unwrap();
        assert_eq!(
            rescale_units(&canon, CANONICAL_VOLTS_PER_UNIT)
                .unwrap()
                .data(),
            &[0.37]
        );
        assert!(rescale_units(&canon, 0.0).is_err());
    }

    #[test]
    fn grid_vocabulary() {
        let v = ChannelVocabulary::grid(16);
        assert_eq!(v.len(), 16);
        assert_eq!(v.coord("F7"), Some([0.125, 0.125]));
        assert_eq!(v.coord("P8"), Some([0.875, 0.875]));
        let v = ChannelVocabulary::grid(62);
        assert!(v.coords().iter().flatten().all(|&c| c > 0.0 && c < 1.0));
        assert!(matches!(
            v.resolve(&["nope".to_string()]),
            Err(Error::UnknownChannel(_))
        ));
        assert!(ChannelVocabulary::new(vec!["a".into()], vec![[0.0, 0.5]]).is_err());
    }

    #[test]
    fn preprocess_shape_is_config_only() {
        assert_eq!(preprocess_shape(10_000, 250.0, 200.0, 4.0, 4.0), (10, 800));
        assert_eq!(preprocess_shape(2500, 250.0, 200.0, 4.0, 1.0), (7, 800));
        assert_eq!(preprocess_shape(100, 250.0, 200.0, 4.0, 4.0), (0, 800));
    }
}
