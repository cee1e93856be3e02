use super::{DiffError, Graph, Tensor, Var};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` where the maximum was attained.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Checks every coordinate of every input.
pub fn grad_check<F>(f: F, point: &[Tensor], step: f64) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, DiffError>,
{
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |c| (i, c)))
        .collect();
    grad_check_coords(f, point, step, &coords)
}

/// Checks only the listed `(input index, flat coordinate)` pairs.
pub fn grad_check_coords<F>(
    f: F,
    point: &[Tensor],
    step: f64,
    coords: &[(usize, usize)],
) -> Result<GradCheckReport, DiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, DiffError>,
{
    if !(step > 0.0) {
        return Err(DiffError::Invalid {
            op: "grad_check",
            msg: format!("step must be positive, got {step}"),
        });
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward_scalar(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |inputs: &[Tensor]| -> Result<f64, DiffError> {
        let mut g = Graph::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = point.to_vec();
    for &(i, c) in coords {
        let base = point[i].data().to_vec();
        let mut shifted = base.clone();
        shifted[c] = base[c] + step;
        work[i] = Tensor::new(point[i].shape().to_vec(), shifted.clone())?;
        let plus = eval(&work)?;
        shifted[c] = base[c] - step;
        work[i] = Tensor::new(point[i].shape().to_vec(), shifted)?;
        let minus = eval(&work)?;
        work[i] = point[i].clone();

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i].data()[c];
        let err = (a - numeric).abs() / a.abs().max(1.0);
        report.checked += 1;
        if report.checked == 1 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst = (i, c);
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
