use super::tensor::Parameter;
use crate::error::{Error, Result};

/// Something with parameters and a scalar loss over fixed inputs.
pub trait Differentiable {
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    /// Loss at the current parameter values.
    fn loss(&mut self) -> Result<f64>;

    /// Zeroes all gradients, then fills them for the current loss, which is
    /// returned.
    fn loss_and_grad(&mut self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Floor on the relative-error denominator, so entries with gradients below
/// it compare in absolute terms. Central differences of an `f64` loss carry
/// roundoff near `1e-10` at the smallest steps.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares analytic gradients with central differences of step `epsilon`
/// for every parameter entry.
pub fn grad_check(f: &mut dyn Differentiable, epsilon: f64) -> Result<GradCheckReport> {
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let base = f.loss_and_grad()?;
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check loss"));
    }
    let analytic: Vec<(String, Vec<f64>)> = f
        .parameters_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    for (k, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = f.parameters_mut()[k].value.data()[i];
            f.parameters_mut()[k].value.data_mut()[i] = original + epsilon;
            let plus = f.loss()?;
            f.parameters_mut()[k].value.data_mut()[i] = original - epsilon;
            let minus = f.loss()?;
            f.parameters_mut()[k].value.data_mut()[i] = original;
            if !(plus.is_finite() && minus.is_finite()) {
                return Err(Error::NonFinite("grad_check perturbed loss"));
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let err = relative_error(a, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
