//! Central finite differences: the independent gradient oracle.
//!
//! Deliberately knows nothing about the graph or the backward pass; it only
//! probes a black-box loss function coordinate by coordinate.

use super::{AutodiffError, Tensor};

/// Central-difference gradients `(f(p+eps) - f(p-eps)) / (2 eps)` of
/// `loss_fn` at `params`, one output tensor per input tensor, coordinate by
/// coordinate.
///
/// The loss function must be deterministic. A non-finite loss at any probe is
/// an error carrying the probe counter.
pub fn finite_difference<F>(
    mut loss_fn: F,
    params: &[Tensor],
    epsilon: f64,
) -> Result<Vec<Tensor>, AutodiffError>
where
    F: FnMut(&[Tensor]) -> Result<f64, AutodiffError>,
{
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(AutodiffError::InvalidEpsilon { epsilon });
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    let mut probe = 0usize;
    for t in 0..params.len() {
        let coords = params[t].len();
        let mut g = Vec::with_capacity(coords);
        for i in 0..coords {
            let orig = work[t].values()[i];
            work[t].values_mut()[i] = orig + epsilon;
            let f_plus = loss_fn(&work)?;
            probe += 1;
            if !f_plus.is_finite() {
                return Err(AutodiffError::NonFiniteLoss { probe });
            }
            work[t].values_mut()[i] = orig - epsilon;
            let f_minus = loss_fn(&work)?;
            probe += 1;
            if !f_minus.is_finite() {
                return Err(AutodiffError::NonFiniteLoss { probe });
            }
            work[t].values_mut()[i] = orig;
            g.push((f_plus - f_minus) / (2.0 * epsilon));
        }
        grads.push(Tensor::new(params[t].shape().to_vec(), g)?);
    }
    Ok(grads)
}

/// Relative error with the denominator floored at 1, so near-zero pairs are
/// compared absolutely.
pub fn relative_error(x: f64, y: f64) -> f64 {
    (x - y).abs() / x.abs().max(y.abs()).max(1.0)
}

/// Largest elementwise [`relative_error`] between two same-length slices.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "comparing slices of different lengths");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}
