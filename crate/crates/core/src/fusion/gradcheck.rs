//! Central finite-difference check of the analytic fusion-head gradients.
//!
//! Relative error per parameter is `|a − n| / max(|a|, |n|, 1e-6)`; the floor
//! keeps near-zero gradients from turning rounding noise into large ratios.

use super::head::FusionHead;
use super::Result;

pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter index of the worst mismatch.
    pub worst_param: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares `backward` against `(L(θ+h) − L(θ−h)) / 2h` for every parameter.
pub fn check_gradients<T: Copy + Into<f64>>(
    head: &FusionHead,
    h_a: &[T],
    h_t: &[T],
    y: bool,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = head.backward(&head.forward(h_a, h_t)?, y)?.0;
    let mut probe = head.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        checked: analytic.len(),
    };
    for (i, &a) in analytic.iter().enumerate() {
        let theta = head.params()[i];
        probe.params_mut()[i] = theta + step;
        let plus = probe.loss(h_a, h_t, y)?;
        probe.params_mut()[i] = theta - step;
        let minus = probe.loss(h_a, h_t, y)?;
        probe.params_mut()[i] = theta;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(a, numeric);
        if err > report.max_relative_error {
            report = GradCheckReport {
                max_relative_error: err,
                worst_param: i,
                analytic: a,
                numeric,
                checked: analytic.len(),
            };
        }
    }
    Ok(report)
}
