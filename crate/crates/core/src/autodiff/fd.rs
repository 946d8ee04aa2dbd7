use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vector::GradVector;

/// Central-difference gradient `(L(theta + h e_i) - L(theta - h e_i)) / 2h`.
///
/// Used as the independent oracle for [`Graph::backward`](super::Graph::backward).
pub fn finite_difference_gradient<S, F>(mut loss: F, theta: &[S], h: S) -> Result<GradVector<S>>
where
    S: Real,
    F: FnMut(&[S]) -> Result<S>,
{
    if !(h > S::zero()) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = loss(&probe)?;
        probe[i] = orig - h;
        let minus = loss(&probe)?;
        probe[i] = orig;
        if !plus.is_finite() {
            return Err(Error::NonFinite {
                coordinate: i,
                probe: "theta + h e_i",
            });
        }
        if !minus.is_finite() {
            return Err(Error::NonFinite {
                coordinate: i,
                probe: "theta - h e_i",
            });
        }
        grad.push((plus - minus) / (h + h));
    }
    Ok(GradVector::new(grad))
}
