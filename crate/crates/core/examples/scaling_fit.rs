//! Fits `metric ≈ a·ln(size) + b` to (size, metric) pairs given as
//! alternating arguments, or to a built-in model-size sweep.
//!
//! ```text
//! cargo run --example scaling_fit -- [size metric]...
//! ```

use comet::diagnostics::fit_scaling;

fn main() -> comet::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let points: Vec<(f64, f64)> = if args.is_empty() {
        [0.8e6, 5e6, 19e6, 51e6, 151e6]
            .iter()
            .map(|&m: &f64| (m, 0.013 * m.ln() + 0.568))
            .collect()
    } else {
        args.chunks_exact(2).map(|p| (p[0], p[1])).collect()
    };
    let fit = fit_scaling(&points)?;
    println!(
        "a = {:.6}, b = {:.6}, R^2 = {:.6} over {} points",
        fit.a, fit.b, fit.r_squared, fit.n_points
    );
    for &(x, y) in &points {
        println!("{x:>12.4e}  observed {y:.4}  fitted {:.4}", fit.predict(x));
    }
    Ok(())
}
