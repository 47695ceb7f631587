use super::{Tape, Tensor, TensorError, Var};

/// Denominator floor for the relative error, so that components whose true
/// gradient is ~0 are compared on an absolute scale instead.
const DENOM_FLOOR: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error used by [`gradient_check`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the tape gradient of scalar-valued `f` at `x` against central
/// differences with step `eps`.
pub fn gradient_check<G>(f: G, x: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradCheckReport, TensorError>
where
    G: Fn(&mut Tape<f64>, Var) -> Result<Var, TensorError>,
{
    let eval = |input: &Tensor<f64>| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let out = f(&mut tape, v)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let v = tape.param(x.clone());
    let out = f(&mut tape, v)?;
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(v) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.len()],
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        checked: x.len(),
        tolerance: tol,
        passed: true,
    };
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if i == 0 || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error < tol;
    Ok(report)
}
