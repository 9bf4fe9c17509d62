use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::Parameterized;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares analytic gradients with central differences
/// `(f(θ+h) − f(θ−h)) / 2h` on every parameter coordinate.
///
/// `eval(model, backward)` must return the loss and, when `backward` is set,
/// accumulate its gradient into the parameters. Grads are zeroed first.
pub fn grad_check<M, F>(model: &mut M, h: f64, floor: f64, mut eval: F) -> Result<GradCheckReport>
where
    M: Parameterized + ?Sized,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    model.zero_grads();
    let base = eval(model, true)?;
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss(base.to_string()));
    }
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.as_slice().to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for (pi, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = model.params()[pi].value.as_slice()[j];
            model.params_mut()[pi].value.as_mut_slice()[j] = orig + h;
            let plus = eval(model, false)?;
            model.params_mut()[pi].value.as_mut_slice()[j] = orig - h;
            let minus = eval(model, false)?;
            model.params_mut()[pi].value.as_mut_slice()[j] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteLoss(alloc::format!(
                    "perturbing {}[{j}]",
                    model.params()[pi].name()
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(a, numeric, floor);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((model.params()[pi].name().to_string(), j));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
