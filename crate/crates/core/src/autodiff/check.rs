use super::{AutodiffError, Matrix, Tape, Var};

/// Compares reverse-mode gradients of `f` at `x` with central differences.
///
/// `f` receives a fresh tape and the leaf holding `x` and must return a
/// `1 x 1` loss. The result is the largest entrywise
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check<F>(f: F, x: &Matrix, eps: f64) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Tape, Var) -> Result<Var, AutodiffError>,
{
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(AutodiffError::ContractViolation(format!(
            "grad_check eps must lie in (0, 1e-3], got {eps}"
        )));
    }
    let eval = |point: &Matrix| -> Result<f64, AutodiffError> {
        let mut tape = Tape::new();
        let leaf = tape.param(point.clone());
        let loss = f(&mut tape, leaf)?;
        let v = tape.scalar_value(loss);
        if !v.is_finite() {
            return Err(AutodiffError::Numerical("grad_check loss".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let leaf = tape.param(x.clone());
    let loss = f(&mut tape, leaf)?;
    let analytic = tape
        .backward(loss)?
        .get(leaf)
        .cloned()
        .unwrap_or_else(|| Matrix::zeros(x.rows(), x.cols()));
    if !analytic.is_finite() {
        return Err(AutodiffError::Numerical(
            "grad_check analytic gradient".into(),
        ));
    }

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + eps;
        let plus = eval(&probe)?;
        probe.as_mut_slice()[k] = orig - eps;
        let minus = eval(&probe)?;
        probe.as_mut_slice()[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.as_slice()[k];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
