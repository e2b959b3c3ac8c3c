//! Central finite-difference gradient checking in 64-bit precision.

use crate::error::{Error, Result};
use crate::params::ParamSet;

/// Denominator floor of the relative error, so that gradients which are
/// zero up to rounding do not blow the ratio up.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub max_error: f64,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares the analytic gradient produced by `loss_and_grad` with central
/// differences of step `step`, reporting the maximum relative error
/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)` over every scalar.
///
/// `loss_and_grad` must return the loss at the current values and leave the
/// full gradient in each parameter's `grad` (it is called once with
/// gradients zeroed beforehand, then repeatedly for the perturbed losses).
pub fn grad_check<F>(mut loss_and_grad: F, params: &mut ParamSet<f64>, step: f64) -> Result<GradReport>
where
    F: FnMut(&mut ParamSet<f64>) -> Result<f64>,
{
    params.zero_grad();
    let loss = loss_and_grad(params)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {loss}")));
    }
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst = GradReport::default();
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = params.get(pi).value.data()[i];
            params.get_mut(pi).value.data_mut()[i] = orig + step;
            params.zero_grad();
            let up = loss_and_grad(params)?;
            params.get_mut(pi).value.data_mut()[i] = orig - step;
            params.zero_grad();
            let down = loss_and_grad(params)?;
            params.get_mut(pi).value.data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite perturbed loss at {}[{i}]",
                    params.get(pi).name()
                )));
            }
            let numeric = (up - down) / (2.0 * step);
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            let err = (a - numeric).abs() / denom;
            if err > worst.max_error {
                worst = GradReport {
                    max_error: err,
                    param: params.get(pi).name().to_string(),
                    index: i,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    // leave the analytic gradient in place for the caller
    for (p, g) in params.iter_mut().zip(analytic) {
        p.grad.data_mut().copy_from_slice(&g);
    }
    Ok(worst)
}
