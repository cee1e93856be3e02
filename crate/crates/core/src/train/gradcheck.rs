use rand::seq::index::sample as sample_indices;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::step::{batch_objective, momentum_target, prepare, Prepared};
use crate::diff::{grad_check_coords, DiffError, GradCheckReport, Graph, Tensor};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelConfig, ModelState, ParamSet};
use crate::rng::stream;
use crate::signals::{synth_eeg, ChannelVocabulary, SynthConfig};

const PERTURB_STREAM: u64 = 0x6c4e;
const COORD_STREAM: u64 = 0x6c0d;

/// Settings of an end-to-end finite-difference check of the total loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub n_channels: usize,
    pub n_patches: usize,
    pub batch_size: usize,
    pub tau: f64,
    pub lambda: f64,
    pub step: f64,
    /// Standard deviation of the noise added to every parameter, so the
    /// check runs away from the near-linear regime of a fresh init.
    pub perturb: f64,
    /// Upper bound on checked coordinates, drawn uniformly; 0 checks all.
    pub max_coords: usize,
    pub model: ModelConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            n_channels: 4,
            n_patches: 4,
            batch_size: 2,
            tau: 0.1,
            lambda: 1.0,
            step: 1e-5,
            perturb: 0.3,
            max_coords: 0,
            model: ModelConfig::gradcheck(4),
        }
    }
}

fn to_diff(e: Error) -> DiffError {
    match e {
        Error::Diff(d) => d,
        other => DiffError::Invalid {
            op: "batch_objective",
            msg: other.to_string(),
        },
    }
}

fn perturbed(set: &ParamSet, std: f64, seed: u64, tag: u64) -> ParamSet {
    let mut out = set.clone();
    if std > 0.0 {
        let noise = Normal::new(0.0, std).expect("finite std");
        let mut rng = stream(seed, &[PERTURB_STREAM, tag]);
        out.map_entries(|_, t| {
            let data = t.data().iter().map(|v| v + noise.sample(&mut rng)).collect();
            Tensor::new(t.shape().to_vec(), data).expect("shape kept")
        });
    }
    out
}

/// Compares reverse-mode gradients of `mean(L_R) + λ·L_C` with respect to
/// every online-encoder and decoder parameter against central differences.
/// Momentum targets are held fixed, as in training.
pub fn check_total_loss(cfg: &GradCheckConfig, seed: u64) -> Result<GradCheckReport> {
    cfg.model.validate()?;
    if cfg.batch_size < 2 {
        return Err(invalid("gradcheck batch needs at least two samples"));
    }
    if cfg.n_patches == 0 || cfg.n_channels == 0 {
        return Err(invalid("gradcheck needs at least one channel and one patch"));
    }
    let l = cfg.model.patch_len;
    let fs = 100.0;
    let synth = SynthConfig {
        n_channels: cfg.n_channels,
        fs,
        duration_s: (cfg.n_patches * l) as f64 / fs,
        seed,
        ..Default::default()
    };
    let samples = synth_eeg(&synth, cfg.batch_size)?;
    let mut state = ModelState::init(
        cfg.model.clone(),
        ChannelVocabulary::grid(cfg.n_channels),
        seed,
    )?;
    state.online = perturbed(&state.online, cfg.perturb, seed, 0);
    state.decoder = perturbed(&state.decoder, cfg.perturb, seed, 1);
    state.momentum = perturbed(&state.momentum, cfg.perturb, seed, 2);
    let rows = state.channel_rows(samples[0].channels())?;
    let batch: Vec<Prepared> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| prepare(s, &rows, l, cfg.model.mask_ratio, seed, 0, 0, i as u64))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<f64>> = batch
        .iter()
        .map(|p| momentum_target(&state, p))
        .collect::<Result<_>>()?;

    let enc_tensors = state.online.tensors();
    let n_enc = enc_tensors.len();
    let point: Vec<Tensor> = enc_tensors
        .into_iter()
        .chain(state.decoder.tensors())
        .collect();
    let mut coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |c| (i, c)))
        .collect();
    if cfg.max_coords > 0 && coords.len() > cfg.max_coords {
        let mut rng = stream(seed, &[COORD_STREAM]);
        let mut pick = sample_indices(&mut rng, coords.len(), cfg.max_coords).into_vec();
        pick.sort_unstable();
        coords = pick.into_iter().map(|k| coords[k]).collect();
    }

    let f = |g: &mut Graph, vars: &[crate::diff::Var]| {
        let enc = state.online.bind_to(&vars[..n_enc]);
        let dec = state.decoder.bind_to(&vars[n_enc..]);
        batch_objective(g, &state, &enc, &dec, &batch, &targets, cfg.tau, cfg.lambda)
            .map_err(to_diff)
    };
    let report = grad_check_coords(f, &point, cfg.step, &coords)?;
    if !report.max_rel_error.is_finite() {
        return Err(Error::Numeric("gradcheck produced a non-finite error".into()));
    }
    Ok(report)
}
