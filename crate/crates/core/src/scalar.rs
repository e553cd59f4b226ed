//! Floating-point abstraction shared by the numeric kernels.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Scalar type usable by grids, leakage metrics and the thermal solvers.
///
/// Implemented for `f32` and `f64`. Geometry (µm coordinates, block areas)
/// stays in `f64`; only field values are generic.
pub trait Scalar:
    Float
    + FftNum
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + std::str::FromStr
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`; the kernels only feed finite values.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
