//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real floating point scalar: `f32` or `f64`.
///
/// Everything the solvers need comes from [`RealField`] (transcendentals,
/// ordering, decompositions); conversions go through `num_traits`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Default + Send + Sync + 'static
{
    /// Machine epsilon of the type.
    fn machine_epsilon() -> Self;

    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    /// Lossy conversion to `f64`, used for reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Converts a count into the scalar type.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Tolerance used for "exact up to rounding" checks: the larger of
    /// `floor` and `factor` machine epsilons.
    #[inline]
    fn tolerance(floor: f64, factor: f64) -> Self {
        let eps = Self::machine_epsilon() * Self::of(factor);
        let floor = Self::of(floor);
        if eps > floor {
            eps
        } else {
            floor
        }
    }
}

impl Real for f32 {
    fn machine_epsilon() -> Self {
        f32::EPSILON
    }
}

impl Real for f64 {
    fn machine_epsilon() -> Self {
        f64::EPSILON
    }
}
