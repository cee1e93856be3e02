use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::optim::{clip_global_norm, AdamW};
use super::schedule::{lr_at, momentum_at, weight_decay_at};
use super::step::{evaluate_batch, prepare, Prepared};
use crate::error::{invalid, io_err, Error, Result};
use crate::model::{Checkpoint, ModelState};
use crate::objectives::LossReport;
use crate::rng::stream;
use crate::signals::{ChannelVocabulary, Dataset, EegSample};

const SPLIT_STREAM: u64 = 0x5b11;
const SHUFFLE_STREAM: u64 = 0x5f1e;
/// Epoch slot reserved for validation masks, which stay fixed across epochs.
const VALIDATION_EPOCH: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub mu: f64,
    pub report: LossReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: u64,
    pub recon: f64,
    pub contrastive: f64,
    pub total: f64,
    pub val: Option<LossReport>,
}

/// Append-only training history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    pub wall_time_s: f64,
}

impl TrainLog {
    pub fn push(&mut self, record: StepRecord) {
        if let Some(last) = self.steps.last() {
            assert!(record.step > last.step, "step indices must increase");
        }
        self.steps.push(record);
    }

    /// `step,lr,mu,L_R,L_C,total,rho_pos,rho_neg`, values printed with
    /// round-trip precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,mu,L_R,L_C,total,rho_pos,rho_neg\n");
        for s in &self.steps {
            let r = &s.report;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.step, s.lr, s.mu, r.recon, r.contrastive, r.total, r.rho_pos, r.rho_neg
            );
        }
        out
    }

    pub fn epochs_csv(&self) -> String {
        let mut out = String::from("epoch,L_R,L_C,total,val_L_R,val_L_C,val_total\n");
        for e in &self.epochs {
            let (vr, vc, vt) = e.val.map_or((f64::NAN, f64::NAN, f64::NAN), |v| {
                (v.recon, v.contrastive, v.total)
            });
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.epoch, e.recon, e.contrastive, e.total, vr, vc, vt
            );
        }
        out
    }
}

/// Seeded shuffle split into training and validation indices;
/// `round(n · val_fraction)` samples are held out.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, &[SPLIT_STREAM]));
    let n_val = (n as f64 * val_fraction).round() as usize;
    let val = idx.split_off(n - n_val.min(n));
    (idx, val)
}

/// Chunks `order` into batches of `size`, folding a trailing singleton into
/// the previous batch so every batch can form contrastive pairs.
fn chunk(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

/// Pre-training state machine: one call to [`Trainer::step`] per batch.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub state: ModelState,
    opt_encoder: AdamW,
    opt_decoder: AdamW,
    step: u64,
    train_ids: Vec<usize>,
    val_ids: Vec<usize>,
    channel_rows: Vec<usize>,
    pool: rayon::ThreadPool,
    best_val: Option<f64>,
}

impl Trainer {
    /// Fresh model initialized from the configuration seed.
    pub fn new(cfg: TrainConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let first = data
            .samples
            .first()
            .ok_or_else(|| Error::Data("dataset is empty".into()))?;
        let vocab = ChannelVocabulary::grid(first.n_channels());
        let vocab = if vocab.names() == first.channels() {
            vocab
        } else {
            montage_vocab(first)?
        };
        let state = ModelState::init(cfg.model.clone(), vocab, cfg.seed)?;
        Self::with_state(cfg, state, data)
    }

    /// Continues from an existing model (optimizer moments start at zero).
    pub fn with_state(cfg: TrainConfig, mut state: ModelState, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        if data.len() < cfg.batch_size {
            return Err(Error::Data(format!(
                "dataset holds {} samples, fewer than one batch of {}",
                data.len(),
                cfg.batch_size
            )));
        }
        if state.config != cfg.model {
            return Err(invalid(
                "model state was built with a different model configuration",
            ));
        }
        let channel_rows = state.admit_channels(data.samples[0].channels())?;
        let (train_ids, val_ids) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
        if train_ids.len() < 2 {
            return Err(Error::Data(
                "training split needs at least two samples".into(),
            ));
        }
        let pool = worker_pool(cfg.workers)?;
        Ok(Self {
            opt_encoder: AdamW::new(&state.online),
            opt_decoder: AdamW::new(&state.decoder),
            state,
            cfg,
            step: 0,
            train_ids,
            val_ids,
            channel_rows,
            pool,
            best_val: None,
        })
    }

    /// Restores model, optimizer and position from a checkpoint written by
    /// [`Trainer::checkpoint`].
    pub fn resume(ck: Checkpoint, data: &Dataset) -> Result<Self> {
        let progress: Progress = serde_json::from_value(ck.progress.clone())?;
        let mut t = Self::with_state(progress.config.clone(), ck.state, data)?;
        let take = |k: &str| {
            ck.aux
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Data(format!("checkpoint lacks `{k}`")))
        };
        t.opt_encoder.m = take("adam_m_encoder")?;
        t.opt_encoder.v = take("adam_v_encoder")?;
        t.opt_decoder.m = take("adam_m_decoder")?;
        t.opt_decoder.v = take("adam_v_decoder")?;
        t.opt_encoder.t = progress.adam_t;
        t.opt_decoder.t = progress.adam_t;
        t.step = progress.step;
        t.best_val = progress.best_val;
        if !t.opt_encoder.m.same_layout(&t.state.online)
            || !t.opt_decoder.m.same_layout(&t.state.decoder)
        {
            return Err(Error::Data(
                "optimizer moments do not match the model".into(),
            ));
        }
        Ok(t)
    }

    /// Changes the worker count; results are unaffected.
    pub fn set_workers(&mut self, workers: usize) -> Result<()> {
        self.pool = worker_pool(workers)?;
        self.cfg.workers = workers;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let progress = Progress {
            step: self.step,
            epoch: self.step / self.steps_per_epoch(),
            total_steps: self.total_steps(),
            lr: lr_at(self.step, self.total_steps(), self.cfg.peak_lr),
            mu: momentum_at(
                self.step,
                self.total_steps(),
                self.cfg.momentum_start,
                self.cfg.momentum_end,
            ),
            weight_decay: weight_decay_at(self.step, self.total_steps(), self.cfg.weight_decay_end),
            adam_t: self.opt_encoder.t,
            best_val: self.best_val,
            config: self.cfg.clone(),
        };
        Checkpoint {
            state: self.state.clone(),
            aux: BTreeMap::from([
                ("adam_m_encoder".to_string(), self.opt_encoder.m.clone()),
                ("adam_v_encoder".to_string(), self.opt_encoder.v.clone()),
                ("adam_m_decoder".to_string(), self.opt_decoder.m.clone()),
                ("adam_v_decoder".to_string(), self.opt_decoder.v.clone()),
            ]),
            progress: serde_json::to_value(progress).expect("progress serializes"),
        }
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn train_ids(&self) -> &[usize] {
        &self.train_ids
    }

    pub fn val_ids(&self) -> &[usize] {
        &self.val_ids
    }

    pub fn steps_per_epoch(&self) -> u64 {
        chunk(&self.train_ids, self.cfg.batch_size).len() as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.cfg.epochs as u64
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    /// Dataset indices of every batch in `epoch`.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut order = self.train_ids.clone();
        order.shuffle(&mut stream(self.cfg.seed, &[SHUFFLE_STREAM, epoch]));
        chunk(&order, self.cfg.batch_size)
    }

    fn prepare_batch(
        &self,
        samples: &[EegSample],
        ids: &[usize],
        epoch: u64,
        step: u64,
    ) -> Result<Vec<Prepared>> {
        let (l, r, seed) = (self.cfg.model.patch_len, self.cfg.mask_ratio, self.cfg.seed);
        ids.par_iter()
            .map(|&id| {
                prepare(
                    &samples[id],
                    &self.channel_rows,
                    l,
                    r,
                    seed,
                    epoch,
                    step,
                    id as u64,
                )
            })
            .collect()
    }

    /// One optimizer step on the next batch. A non-finite loss or gradient
    /// returns an error and leaves the trainer untouched.
    pub fn step(&mut self, data: &Dataset) -> Result<StepRecord> {
        if self.is_done() {
            return Err(invalid("training schedule already finished"));
        }
        let spe = self.steps_per_epoch();
        let (epoch, b) = (self.step / spe, (self.step % spe) as usize);
        let ids = &self.epoch_batches(epoch)[b];
        let (tau, lambda) = (self.cfg.tau, self.cfg.lambda);
        let result = self.pool.install(|| {
            let batch = self.prepare_batch(&data.samples, ids, epoch, self.step)?;
            evaluate_batch(&self.state, &batch, tau, lambda, true)
        });
        let result = match result {
            Ok(r) => r,
            Err(e) => {
                log::error!("step {} aborted: {e}", self.step);
                return Err(e);
            }
        };
        let mut grads = result.grads.expect("gradients requested");
        clip_global_norm(
            &mut [&mut grads.encoder, &mut grads.decoder],
            self.cfg.clip_norm,
        );
        let total = self.total_steps();
        let lr = lr_at(self.step, total, self.cfg.peak_lr);
        let wd = weight_decay_at(self.step, total, self.cfg.weight_decay_end);
        let mu = momentum_at(
            self.step,
            total,
            self.cfg.momentum_start,
            self.cfg.momentum_end,
        );
        self.opt_encoder
            .step(&mut self.state.online, &grads.encoder, lr, wd)?;
        self.opt_decoder
            .step(&mut self.state.decoder, &grads.decoder, lr, wd)?;
        self.state.ema_update(mu)?;
        let record = StepRecord {
            step: self.step,
            epoch,
            lr,
            mu,
            report: result.report,
        };
        self.step += 1;
        Ok(record)
    }

    /// Mean losses over the validation split with masks fixed per sample.
    pub fn validate(&self, data: &Dataset) -> Result<Option<LossReport>> {
        if self.val_ids.is_empty() {
            return Ok(None);
        }
        let batches = chunk(&self.val_ids, self.cfg.batch_size);
        let mut acc = LossReport {
            tau: self.cfg.tau,
            lambda: self.cfg.lambda,
            ..Default::default()
        };
        let mut n = 0.0;
        for ids in &batches {
            let r = self.pool.install(|| {
                let batch = self.prepare_batch(&data.samples, ids, VALIDATION_EPOCH, 0)?;
                evaluate_batch(&self.state, &batch, self.cfg.tau, self.cfg.lambda, false)
            })?;
            let w = ids.len() as f64;
            acc.recon += w * r.report.recon;
            acc.contrastive += w * r.report.contrastive;
            acc.total += w * r.report.total;
            acc.rho_pos += w * r.report.rho_pos;
            acc.rho_neg += w * r.report.rho_neg;
            n += w;
        }
        for v in [
            &mut acc.recon,
            &mut acc.contrastive,
            &mut acc.total,
            &mut acc.rho_pos,
            &mut acc.rho_neg,
        ] {
            *v /= n;
        }
        Ok(Some(acc))
    }

    /// Runs the remaining schedule. With `out`, writes `best/` (lowest
    /// validation total, or training total without a validation split),
    /// `final/`, `train_log.csv` and `epochs.csv`.
    pub fn run(&mut self, data: &Dataset, out: Option<&Path>) -> Result<TrainLog> {
        let started = Instant::now();
        let mut log = TrainLog::default();
        let spe = self.steps_per_epoch();
        while !self.is_done() {
            let record = self.step(data)?;
            log.push(record);
            if self.step % spe == 0 {
                let epoch = self.step / spe - 1;
                let rows: Vec<&StepRecord> =
                    log.steps.iter().filter(|s| s.epoch == epoch).collect();
                let mean = |f: fn(&StepRecord) -> f64| {
                    rows.iter().map(|s| f(s)).sum::<f64>() / rows.len().max(1) as f64
                };
                let val = self.validate(data)?;
                let summary = EpochSummary {
                    epoch,
                    recon: mean(|s| s.report.recon),
                    contrastive: mean(|s| s.report.contrastive),
                    total: mean(|s| s.report.total),
                    val,
                };
                log::info!(
                    "epoch {epoch}: L_R {:.4} L_C {:.4} total {:.4}{}",
                    summary.recon,
                    summary.contrastive,
                    summary.total,
                    val.map_or(String::new(), |v| format!(" | val {:.4}", v.total))
                );
                let score = val.map_or(summary.total, |v| v.total);
                if self.best_val.is_none_or(|b| score < b) {
                    self.best_val = Some(score);
                    if let Some(dir) = out {
                        self.checkpoint().save(&dir.join("best"))?;
                    }
                }
                log.epochs.push(summary);
            }
        }
        log.wall_time_s = started.elapsed().as_secs_f64();
        if let Some(dir) = out {
            self.checkpoint().save(&dir.join("final"))?;
            let path = dir.join("train_log.csv");
            fs::write(&path, log.to_csv()).map_err(io_err(&path))?;
            let path = dir.join("epochs.csv");
            fs::write(&path, log.epochs_csv()).map_err(io_err(&path))?;
        }
        Ok(log)
    }
}

/// Vocabulary for a montage that is not the default grid: grid coordinates,
/// the montage's own names.
fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

fn montage_vocab(sample: &EegSample) -> Result<ChannelVocabulary> {
    let grid = ChannelVocabulary::grid(sample.n_channels());
    ChannelVocabulary::new(sample.channels().to_vec(), grid.coords().to_vec())
}

/// Position and schedule values stored with a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Progress {
    step: u64,
    epoch: u64,
    total_steps: u64,
    lr: f64,
    mu: f64,
    weight_decay: f64,
    adam_t: u64,
    best_val: Option<f64>,
    config: TrainConfig,
}

/// Trains a fresh model on `data` for the full schedule.
pub fn run_pretrain(
    data: &Dataset,
    cfg: TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelState, TrainLog)> {
    let mut trainer = Trainer::new(cfg, data)?;
    let log = trainer.run(data, out)?;
    Ok((trainer.state, log))
}
