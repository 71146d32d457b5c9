//! Central finite differences, used as the independent oracle for autodiff.

use alloc::format;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Default step at `f64`.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Gradient of scalar `f` at `x` by central differences, one coordinate at a time.
pub fn finite_difference_grad<F: Real>(
    mut f: impl FnMut(&Tensor<F>) -> Result<F>,
    x: &Tensor<F>,
    eps: F,
) -> Result<Tensor<F>> {
    if !(eps > F::zero()) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {eps}")));
    }
    let base = f(x)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("f(x) = {base} is not finite")));
    }
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Numeric(format!("non-finite function value near coordinate {i}")));
        }
        grad.data_mut()[i] = (fp - fm) / (eps + eps);
    }
    Ok(grad)
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error<F: Real>(a: &[F], b: &[F], floor: F) -> F {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).fold(F::zero(), |m, (&x, &y)| {
        let d = x.abs().max(y.abs()).max(floor);
        m.max((x - y).abs() / d)
    })
}
