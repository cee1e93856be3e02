//! Pre-trains on synthetic EEG, then linearly probes the frozen encoder on a
//! four-class synthetic task and compares it against a randomly initialized
//! encoder.
//!
//! ```text
//! cargo run --release --example probe_transfer -- [epochs] [checkpoint-dir] [separation]
//! ```
//!
//! With a checkpoint directory that already holds a model, pre-training is
//! skipped.

use std::path::PathBuf;

use comet::model::{Checkpoint, ModelState};
use comet::probe::{run_probe, ProbeConfig};
use comet::signals::{synth_downstream, synth_eeg, Dataset, DownstreamConfig, SynthConfig};
use comet::train::{run_pretrain, TrainConfig};

fn downstream(seed: u64, separation: f64) -> comet::Result<Dataset> {
    let cfg = DownstreamConfig {
        base: SynthConfig {
            seed,
            ..Default::default()
        },
        separation,
        ..Default::default()
    };
    let (samples, labels) = synth_downstream(&cfg)?;
    Dataset::new(samples, Some(labels))
}

fn main() -> comet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(20, |a| a.parse().expect("epochs"));
    let dir = args.next().map(PathBuf::from);
    let separation: f64 = args.next().map_or(1.0, |a| a.parse().expect("separation"));
    let pretrained = match dir.as_ref().filter(|d| d.join("final").exists()) {
        Some(d) => Checkpoint::load(&d.join("final"))?.state,
        None => {
            let data = Dataset::new(
                synth_eeg(
                    &SynthConfig {
                        seed: 7,
                        ..Default::default()
                    },
                    500,
                )?,
                None,
            )?;
            let cfg = TrainConfig {
                epochs,
                seed: 7,
                ..Default::default()
            };
            let (state, log) = run_pretrain(&data, cfg, dir.as_deref())?;
            let first = &log.epochs[0];
            let last = log.epochs.last().expect("at least one epoch");
            println!(
                "pre-training: L_R {:.3} -> {:.3}, L_C {:.3} -> {:.3} ({:.0}s)",
                first.recon, last.recon, first.contrastive, last.contrastive, log.wall_time_s
            );
            state
        }
    };
    let random = ModelState::init(pretrained.config.clone(), pretrained.vocab.clone(), 1234)?;
    let (train, test) = (downstream(100, separation)?, downstream(200, separation)?);
    let mut gap = 0.0;
    for seed in 0..3 {
        let cfg = ProbeConfig {
            seed,
            ..Default::default()
        };
        let a = run_probe(&pretrained, &train, Some(&test), &cfg)?;
        let b = run_probe(&random, &train, Some(&test), &cfg)?;
        println!(
            "seed {seed}: pretrained B.Acc {:.3} (kappa {:.3}), random B.Acc {:.3} (kappa {:.3})",
            a.test.balanced_accuracy, a.test.kappa, b.test.balanced_accuracy, b.test.kappa
        );
        gap += (a.test.balanced_accuracy - b.test.balanced_accuracy) / 3.0;
    }
    println!("mean balanced-accuracy gain: {:.1} points", 100.0 * gap);
    Ok(())
}
