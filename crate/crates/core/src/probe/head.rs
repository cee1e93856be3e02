use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{balanced_accuracy, confusion_matrix, metrics, MetricReport};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::model::network::encode_positions;
use crate::model::{init_from_layout, Bound, ChannelPolicy, ModelState, ParamSet};
use crate::rng::stream;
use crate::signals::{Dataset, EegSample};
use crate::train::{lr_at, AdamW};

const INIT_STREAM: u64 = 0x9b0e;
const SHUFFLE_STREAM: u64 = 0x9b5f;
const SPLIT_STREAM: u64 = 0x9b57;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Upper bound on epochs; training stops early on a stalled validation score.
    pub epochs: usize,
    pub peak_lr: f64,
    pub patience: usize,
    /// Width each patch embedding is reduced to before flattening.
    pub hidden: usize,
    pub batch_size: usize,
    /// Share of the training set held out for early stopping.
    pub val_fraction: f64,
    /// Share of a single labelled set held out for testing when no separate
    /// test set is given.
    pub test_fraction: f64,
    /// Append the global-token output to the patch features.
    pub include_global: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            peak_lr: 1e-3,
            patience: 10,
            hidden: 16,
            batch_size: 32,
            val_fraction: 0.2,
            test_fraction: 0.2,
            include_global: false,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(invalid(
                "probe.epochs, probe.hidden and probe.batch_size must be positive",
            ));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(invalid("probe.peak_lr must be positive"));
        }
        for (name, f) in [
            ("probe.val_fraction", self.val_fraction),
            ("probe.test_fraction", self.test_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(invalid(format!("{name} must lie in [0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

/// Encoder outputs for the full unmasked grid of `sample`: rows `i·N + j`
/// hold patch `(i, j)`, followed by the global token when requested.
/// Runs without a tape.
pub fn extract_features(
    state: &ModelState,
    sample: &EegSample,
    include_global: bool,
) -> Result<Tensor> {
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
    let out = encode_positions(&mut g, &p, &state.config, x, &rows, &positions, None)?;
    let t = g.value(out);
    if include_global {
        return Ok(t.clone());
    }
    Ok(Tensor::new(
        vec![c * n, t.cols()],
        t.data()[..c * n * t.cols()].to_vec(),
    )?)
}

/// [`extract_features`] over many samples, in parallel.
pub fn extract_many(
    state: &ModelState,
    samples: &[EegSample],
    include_global: bool,
) -> Result<Vec<Tensor>> {
    samples
        .par_iter()
        .map(|s| extract_features(state, s, include_global))
        .collect()
}

/// Two-stage linear head: `[P, d] → [P, h] → [P·h] → [classes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeHead {
    /// `w1 [d, h]`, `b1 [h]`, `w2 [P·h, classes]`, `b2 [classes]`.
    pub params: ParamSet,
    pub n_tokens: usize,
    pub n_classes: usize,
}

impl ProbeHead {
    fn init(n_tokens: usize, width: usize, hidden: usize, n_classes: usize, seed: u64) -> Self {
        let layout = vec![
            ("w1".to_string(), vec![width, hidden]),
            ("b1".to_string(), vec![hidden]),
            ("w2".to_string(), vec![n_tokens * hidden, n_classes]),
            ("b2".to_string(), vec![n_classes]),
        ];
        let params = init_from_layout(&layout, &mut stream(seed, &[INIT_STREAM]));
        Self {
            params,
            n_tokens,
            n_classes,
        }
    }

    fn logits(&self, g: &mut Graph, p: &Bound, feats: &[&Tensor]) -> Result<Var> {
        let b = feats.len();
        if b == 0 {
            return Err(invalid("probe needs at least one sample"));
        }
        let width = feats[0].cols();
        for f in feats {
            if f.shape() != [self.n_tokens, width] {
                return Err(invalid(format!(
                    "probe expects [{}, {width}] features, got {:?}",
                    self.n_tokens,
                    f.shape()
                )));
            }
        }
        let data: Vec<f64> = feats
            .iter()
            .flat_map(|f| f.data().iter().copied())
            .collect();
        let x = g.constant(Tensor::new(vec![b * self.n_tokens, width], data)?);
        let h = g.matmul(x, p.get("w1"))?;
        let h = g.add_row(h, p.get("b1"))?;
        let hidden = g.value(h).cols();
        let h = g.reshape(h, &[b, self.n_tokens * hidden])?;
        let o = g.matmul(h, p.get("w2"))?;
        Ok(g.add_row(o, p.get("b2"))?)
    }

    /// Class probabilities, one row per sample.
    pub fn probabilities(&self, feats: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
        if feats.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::inference();
        let p = self.params.bind(&mut g, false);
        let z = self.logits(&mut g, &p, feats)?;
        let s = g.softmax(z);
        Ok(g.value(s)
            .data()
            .chunks(self.n_classes)
            .map(<[f64]>::to_vec)
            .collect())
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |best, (k, &x)| if x > v[best] { k } else { best })
}

/// Predicted classes and class probabilities.
pub fn predict(head: &ProbeHead, feats: &[Tensor]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    let refs: Vec<&Tensor> = feats.iter().collect();
    let mut probs = Vec::with_capacity(feats.len());
    for chunk in refs.chunks(256) {
        probs.extend(head.probabilities(chunk)?);
    }
    Ok((probs.iter().map(|p| argmax(p)).collect(), probs))
}

fn bacc_of(head: &ProbeHead, feats: &[Tensor], labels: &[usize]) -> Result<f64> {
    let (pred, _) = predict(head, feats)?;
    Ok(balanced_accuracy(&confusion_matrix(
        &pred,
        labels,
        head.n_classes,
    )?))
}

/// Fitting record of [`train_probe`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeFit {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Balanced accuracy on the early-stopping set at the kept epoch.
    pub best_score: f64,
}

/// Fits the head by cross-entropy. With validation data the head from the
/// best validation epoch is kept and training stops after `patience` epochs
/// without improvement; without it the training score is used instead.
pub fn train_probe(
    train: &[Tensor],
    train_labels: &[usize],
    val: &[Tensor],
    val_labels: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> Result<(ProbeHead, ProbeFit)> {
    cfg.validate()?;
    if train.len() != train_labels.len() || val.len() != val_labels.len() {
        return Err(invalid("feature and label counts differ"));
    }
    let mut present: Vec<usize> = train_labels.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Data(
            "probe training needs at least two classes".into(),
        ));
    }
    if let Some(&bad) = train_labels
        .iter()
        .chain(val_labels)
        .find(|&&l| l >= n_classes)
    {
        return Err(invalid(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let first = train
        .first()
        .ok_or_else(|| Error::Data("probe training set is empty".into()))?;
    let mut head = ProbeHead::init(first.rows(), first.cols(), cfg.hidden, n_classes, cfg.seed);
    let mut opt = AdamW::new(&head.params);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total = steps_per_epoch * cfg.epochs as u64;
    let (score_feats, score_labels) = if val.is_empty() {
        (train, train_labels)
    } else {
        (val, val_labels)
    };
    let mut best = (bacc_of(&head, score_feats, score_labels)?, head.clone(), 0);
    let mut stale = 0;
    let mut step = 0;
    let mut epochs_run = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        for ids in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let p = head.params.bind(&mut g, true);
            let feats: Vec<&Tensor> = ids.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = ids.iter().map(|&i| train_labels[i]).collect();
            let z = head.logits(&mut g, &p, &feats)?;
            let ls = g.log_softmax(z);
            let picked = g.pick(ls, &labels)?;
            let m = g.mean(picked);
            let loss = g.neg(m);
            if !g.value(loss).item().is_finite() {
                return Err(Error::Numeric("probe loss is not finite".into()));
            }
            let grads = g.backward_scalar(loss)?;
            let mut gset = ParamSet::new();
            for (name, var) in p.iter() {
                gset.insert(name, grads.get(var));
            }
            opt.step(
                &mut head.params,
                &gset,
                lr_at(step, total, cfg.peak_lr),
                0.0,
            )?;
            step += 1;
        }
        epochs_run = epoch + 1;
        let score = bacc_of(&head, score_feats, score_labels)?;
        if score > best.0 {
            best = (score, head.clone(), epochs_run);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (best_score, head, best_epoch) = best;
    Ok((
        head,
        ProbeFit {
            epochs_run,
            best_epoch,
            best_score,
        },
    ))
}

/// Per-class seeded split: `round(fraction · n_c)` of every class goes to
/// the second list.
pub fn stratified_split(
    labels: &[usize],
    fraction: f64,
    seed: u64,
    tag: u64,
) -> (Vec<usize>, Vec<usize>) {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == c).collect();
        idx.shuffle(&mut stream(seed, &[SPLIT_STREAM, tag, c as u64]));
        let n_held = (idx.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&idx[..n_held]);
        keep.extend_from_slice(&idx[n_held..]);
    }
    keep.sort_unstable();
    held.sort_unstable();
    (keep, held)
}

/// Result of a full probing run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub test: MetricReport,
    pub train: MetricReport,
    pub fit: ProbeFit,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Online-encoder checksum, identical before and after probing.
    pub encoder_checksum: String,
}

fn labels_of(data: &Dataset) -> Result<&[usize]> {
    data.labels
        .as_deref()
        .ok_or_else(|| Error::Data("probing needs a labelled dataset".into()))
}

/// Extracts features with the frozen online encoder, fits the head on
/// `train` (minus a validation share) and scores it on `test`. Without a
/// test set, `cfg.test_fraction` of `train` is held out.
pub fn run_probe(
    state: &ModelState,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &ProbeConfig,
) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let checksum = state.online.checksum();
    let mut local;
    let state = if state.config.channel_policy == ChannelPolicy::AllowNew {
        local = state.clone();
        local.admit_channels(train.samples[0].channels())?;
        if let Some(t) = test {
            local.admit_channels(t.samples[0].channels())?;
        }
        &local
    } else {
        state
    };
    let all_labels = labels_of(train)?;
    let all_feats = extract_many(state, &train.samples, cfg.include_global)?;
    let (fit_idx, test_feats, test_labels) = match test {
        Some(t) => {
            let labels = labels_of(t)?.to_vec();
            (
                (0..train.len()).collect::<Vec<_>>(),
                extract_many(state, &t.samples, cfg.include_global)?,
                labels,
            )
        }
        None => {
            let (keep, held) = stratified_split(all_labels, cfg.test_fraction, cfg.seed, 0);
            let feats = held.iter().map(|&k| all_feats[k].clone()).collect();
            let labels = held.iter().map(|&k| all_labels[k]).collect();
            (keep, feats, labels)
        }
    };
    if test_labels.is_empty() {
        return Err(Error::Data("probe test set is empty".into()));
    }
    let fit_labels: Vec<usize> = fit_idx.iter().map(|&k| all_labels[k]).collect();
    let (tr_local, va_local) = stratified_split(&fit_labels, cfg.val_fraction, cfg.seed, 1);
    let pick = |ids: &[usize]| -> (Vec<Tensor>, Vec<usize>) {
        ids.iter()
            .map(|&k| (all_feats[fit_idx[k]].clone(), fit_labels[k]))
            .unzip()
    };
    let (tr_x, tr_y) = pick(&tr_local);
    let (va_x, va_y) = pick(&va_local);
    let n_classes = all_labels
        .iter()
        .chain(&test_labels)
        .max()
        .map_or(0, |m| m + 1);
    let (head, fit) = train_probe(&tr_x, &tr_y, &va_x, &va_y, n_classes, cfg)?;
    let report = |x: &[Tensor], y: &[usize]| -> Result<MetricReport> {
        let (pred, probs) = predict(&head, x)?;
        let scores: Option<Vec<f64>> = (n_classes == 2 && y.contains(&0) && y.contains(&1))
            .then(|| probs.iter().map(|p| p[1]).collect());
        metrics(&pred, y, n_classes, scores.as_deref())
    };
    let outcome = ProbeOutcome {
        test: report(&test_feats, &test_labels)?,
        train: report(&tr_x, &tr_y)?,
        fit,
        n_train: tr_x.len(),
        n_val: va_x.len(),
        n_test: test_labels.len(),
        encoder_checksum: state.online.checksum(),
    };
    if outcome.encoder_checksum != checksum {
        return Err(Error::Numeric(
            "encoder parameters changed during probing".into(),
        ));
    }
    Ok(outcome)
}
