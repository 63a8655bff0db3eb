//! Scalar abstraction shared by the numeric modules.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// The linear algebra runs in `T`; probabilities are always evaluated in
/// `f64` through [`Float::to_f64_lossy`].
pub trait Float:
    RealField + Copy + FromPrimitive + ToPrimitive + Send + Sync + std::fmt::Display + 'static
{
    /// Relative singular value threshold for rank decisions.
    fn rank_rtol() -> Self;

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Float for f32 {
    fn rank_rtol() -> Self {
        1e-5
    }
}

impl Float for f64 {
    fn rank_rtol() -> Self {
        1e-10
    }
}
