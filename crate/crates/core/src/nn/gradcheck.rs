//! Central finite-difference oracle for checking analytic gradients.
//!
//! Numerical derivatives here only ever evaluate forward passes, so they are
//! independent of the backward rules they are compared against.

use crate::error::Result;
use crate::nn::{Graph, ParamSet, Var};

/// Step used for central differences.
pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// `|a - n| / max(|a|, |n|, 1e-3)`; the floor keeps near-zero entries from
/// turning rounding noise into large relative errors.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

/// Compare backward-pass gradients of `loss_fn` against central differences
/// for every scalar in `params`.
pub fn check<F>(params: &ParamSet, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?
    };

    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut g = Graph::new(ps);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).data()[0])
    };

    let mut work = params.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for id in params.ids() {
        for j in 0..params.get(id).len() {
            let orig = params.get(id).data()[j];
            work.get_mut(id).data_mut()[j] = orig + STEP;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig - STEP;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[j] = orig;

            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic.get(id).data()[j], numeric);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), j));
            }
        }
    }
    Ok(report)
}
