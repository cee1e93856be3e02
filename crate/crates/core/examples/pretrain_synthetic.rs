//! Pre-trains the tiny model on synthetic correlated EEG and prints the
//! per-epoch losses.
//!
//! ```text
//! cargo run --release --example pretrain_synthetic -- [epochs] [samples]
//! ```

use comet::signals::{synth_eeg, Dataset, SynthConfig};
use comet::train::{TrainConfig, Trainer};

fn main() -> comet::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("integer argument"));
    let epochs = args.next().unwrap_or(20);
    let n = args.next().unwrap_or(500);
    let synth = SynthConfig {
        seed: 7,
        ..Default::default()
    };
    let data = Dataset::new(synth_eeg(&synth, n)?, None)?;
    let cfg = TrainConfig {
        epochs,
        seed: 7,
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, &data)?;
    println!(
        "{} trainable parameters, {} steps",
        trainer.state.n_trainable(),
        trainer.total_steps()
    );
    let started = std::time::Instant::now();
    while !trainer.is_done() {
        let rec = trainer.step(&data)?;
        if rec.step % trainer.steps_per_epoch() == 0 {
            println!(
                "epoch {:>2} step {:>4}  L_R {:.4}  L_C {:.4}  rho+ {:.3}  rho- {:.3}  ({:.1}s)",
                rec.epoch,
                rec.step,
                rec.report.recon,
                rec.report.contrastive,
                rec.report.rho_pos,
                rec.report.rho_neg,
                started.elapsed().as_secs_f64()
            );
        }
    }
    if let Some(val) = trainer.validate(&data)? {
        println!(
            "validation: L_R {:.4}  L_C {:.4}",
            val.recon, val.contrastive
        );
    }
    Ok(())
}
