//! Central finite differences, the independent reference for analytic gradients.

use super::mlp::{Gradient, Params};
use crate::error::Result;

/// Numerical gradient of `loss` at `params` by central differences with step `eps`.
pub fn finite_difference<P, F>(params: &P, eps: f64, loss: F) -> Result<Gradient>
where
    P: Params + Clone,
    F: Fn(&P) -> Result<f64>,
{
    let mut work = params.clone();
    let mut out = Gradient::zeros_like(params);
    let shapes = params.shapes();
    for (t, &(r, c)) in shapes.iter().enumerate() {
        for i in 0..r * c {
            let orig = work.tensors()[t].data()[i];
            work.tensors_mut()[t].data_mut()[i] = orig + eps;
            let up = loss(&work)?;
            work.tensors_mut()[t].data_mut()[i] = orig - eps;
            let down = loss(&work)?;
            work.tensors_mut()[t].data_mut()[i] = orig;
            out.0[t].data_mut()[i] = (up - down) / (2.0 * eps);
        }
    }
    Ok(out)
}

/// `max_i |a_i − n_i| / max(max_i |a_i|, max_i |n_i|, floor)`.
///
/// The denominator is the larger gradient's sup-norm, so coordinates that are
/// numerically zero do not blow the ratio up.
pub fn relative_error(analytic: &Gradient, numeric: &Gradient) -> f64 {
    let a = analytic.flatten();
    let n = numeric.flatten();
    assert_eq!(a.len(), n.len(), "gradient length mismatch");
    let diff = a
        .iter()
        .zip(&n)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a
        .iter()
        .chain(&n)
        .fold(1e-12f64, |m, x| m.max(x.abs()));
    diff / scale
}
