use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `y ≈ a·ln(x) + b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl ScalingFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x.ln() + self.b
    }
}

/// Ordinary least squares of `y` on `ln x`.
///
/// `R²` is 1 when every `y` is equal, since the fit is then exact.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(invalid(format!(
            "scaling fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points
        .iter()
        .find(|(x, y)| !(x.is_finite() && *x > 0.0 && y.is_finite()))
    {
        return Err(invalid(format!(
            "point ({x}, {y}) needs finite y and positive finite x"
        )));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|u| (u - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("all x values are equal, the fit is singular"));
    }
    let sxy: f64 = lx
        .iter()
        .zip(points)
        .map(|(u, p)| (u - mx) * (p.1 - my))
        .sum();
    let a = sxy / sxx;
    let b = my - a * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(points)
        .map(|(u, p)| (p.1 - a * u - b).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(ScalingFit {
        a,
        b,
        r_squared,
        n_points: points.len(),
    })
}
