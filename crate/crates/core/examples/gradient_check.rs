//! Checks reverse-mode gradients of the full pre-training loss against
//! central differences on a tiny model.
//!
//! ```text
//! cargo run --release --example gradient_check -- [n-seeds]
//! ```

use comet::train::{check_total_loss, GradCheckConfig};

fn main() -> comet::Result<()> {
    let n: u64 = std::env::args().nth(1).map_or(3, |a| a.parse().expect("n-seeds"));
    let cfg = GradCheckConfig::default();
    for seed in 0..n {
        let r = check_total_loss(&cfg, seed)?;
        println!(
            "seed {seed}: {} coordinates, max relative error {:.2e} at input {} coord {} (analytic {:.6e}, numeric {:.6e})",
            r.checked, r.max_rel_error, r.worst.0, r.worst.1, r.analytic, r.numeric
        );
    }
    Ok(())
}
