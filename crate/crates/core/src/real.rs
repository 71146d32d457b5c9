use core::fmt::{Debug, Display};
use core::iter::Sum;
use core::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of the engine (`f32` for training, `f64` for gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// `exp` and `ln` from the `libm` crate: `Float` switches to the platform
    /// math library whenever some crate in the build enables `num-traits/std`.
    fn libm_exp(self) -> Self;
    fn libm_ln(self) -> Self;
}

impl Real for f32 {
    fn libm_exp(self) -> Self {
        libm::expf(self)
    }
    fn libm_ln(self) -> Self {
        libm::logf(self)
    }
}

impl Real for f64 {
    fn libm_exp(self) -> Self {
        libm::exp(self)
    }
    fn libm_ln(self) -> Self {
        libm::log(self)
    }
}
