//! Synthesizes one long 250 Hz recording in microvolts and runs it through
//! band-pass filtering, resampling to 200 Hz, windowing and unit rescaling.
//!
//! ```text
//! cargo run --release --example preprocess_recording -- [seconds] [hop-seconds]
//! ```

use comet::signals::{preprocess, preprocess_shape, synth_eeg, PreprocessConfig, SynthConfig};

fn main() -> comet::Result<()> {
    let mut args = std::env::args().skip(1);
    let seconds: f64 = args.next().map_or(30.0, |a| a.parse().expect("seconds"));
    let hop_s: f64 = args.next().map_or(4.0, |a| a.parse().expect("hop-seconds"));
    let synth = SynthConfig {
        fs: 250.0,
        duration_s: seconds,
        ..Default::default()
    };
    // The generator emits 0.1 mV units; re-express them in microvolts.
    let recording = synth_eeg(&synth, 1)?
        .remove(0)
        .map(|v| v * 100.0)
        .with_volts_per_unit(1e-6);
    let cfg = PreprocessConfig {
        hop_s,
        ..Default::default()
    };
    let out = preprocess(&recording, &cfg)?;
    let (count, width) =
        preprocess_shape(recording.n_times(), recording.fs(), cfg.fs_out, cfg.window_s, cfg.hop_s);
    println!(
        "{} channels, {} samples at {} Hz -> {} windows of {} samples (predicted {count} x {width})",
        recording.n_channels(),
        recording.n_times(),
        recording.fs(),
        out.segments.len(),
        out.segments.first().map_or(0, |s| s.n_times()),
    );
    if let Some(w) = out.warning {
        println!("warning: {w}");
    }
    if let Some(s) = out.segments.first() {
        let rms = (s.data().iter().map(|v| v * v).sum::<f64>() / s.data().len() as f64).sqrt();
        println!("first window rms {rms:.4} (0.1 mV units), gain applied {:.0e}", s.applied_gain());
    }
    Ok(())
}
