//! Briefly pre-trains a small model, then reports per-layer attention
//! distance, attention NMI and a clustering of the channel embeddings.
//!
//! ```text
//! cargo run --release --example attention_diagnostics -- [epochs] [clusters]
//! ```

use comet::diagnostics::analyze;
use comet::signals::{synth_eeg, Dataset, SynthConfig};
use comet::train::{run_pretrain, TrainConfig};

fn main() -> comet::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(2, |a| a.parse().expect("epochs"));
    let clusters: usize = args.next().map_or(4, |a| a.parse().expect("clusters"));
    let synth = SynthConfig {
        seed: 3,
        ..Default::default()
    };
    let data = Dataset::new(synth_eeg(&synth, 64)?, None)?;
    let cfg = TrainConfig {
        epochs,
        seed: 3,
        ..Default::default()
    };
    let (state, _) = run_pretrain(&data, cfg, None)?;
    let probe = synth_eeg(&SynthConfig { seed: 4, ..synth }, 16)?;
    let a = analyze(&state, &probe, clusters)?;
    for l in 0..a.stack.n_layers() {
        println!(
            "layer {l}: mean distance {:.4} (head-averaged {:.4}), NMI {:.4} (head-averaged {:.4})",
            a.distance.per_layer[l],
            a.distance.head_averaged[l],
            a.nmi.stats.per_layer[l],
            a.nmi.stats.head_averaged[l]
        );
    }
    for k in 0..clusters {
        let members: Vec<&str> = a
            .channels
            .iter()
            .zip(&a.similarity.assignment)
            .filter(|(_, &c)| c == k)
            .map(|(n, _)| n.as_str())
            .collect();
        println!("cluster {k}: {}", members.join(" "));
    }
    Ok(())
}
