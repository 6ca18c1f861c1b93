//! Central finite differences, the independent oracle for the backward pass.

use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference gradient of a scalar-valued function at `x`:
/// `(f(x + h e_i) - f(x - h e_i)) / 2h` per coordinate. Never touches the
/// tape, so it stays independent of the analytic backward pass it checks.
pub fn finite_difference_gradient<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    let mut grad = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.values()[i];
        probe.values_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.values_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.values_mut()[i] = orig;
        grad.values_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Default step size for the checks in this crate.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// True when `analytic` and `numeric` agree within `rel_tol` relative error,
/// falling back to an absolute comparison at `abs_tol` near zero.
pub fn gradients_close(analytic: &[f64], numeric: &[f64], rel_tol: f64, abs_tol: f64) -> bool {
    analytic.len() == numeric.len()
        && analytic.iter().zip(numeric).all(|(&a, &n)| {
            if a.abs() < abs_tol && n.abs() < abs_tol {
                true
            } else if a.abs() < 1e-6 {
                (a - n).abs() <= abs_tol.max(1e-6)
            } else {
                (a - n).abs() / a.abs().max(n.abs()) <= rel_tol
            }
        })
}
