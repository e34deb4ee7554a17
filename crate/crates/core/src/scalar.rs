//! Scalar abstraction shared by every numeric kernel in the crate.

use ndarray::ScalarOperand;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point element type for tensors and factor matrices.
///
/// `f32` and `f64` satisfy this automatically; the crate root exposes `f64`
/// aliases for the common case.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + NumAssign
        + FromPrimitive
        + ToPrimitive
        + ScalarOperand
        + Sum
        + Debug
        + Display
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` constant into `T`.
pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must be representable in the scalar type")
}

/// A tolerance that respects the scalar's precision: `max(base, 100·eps)`.
/// The `base` values are the documented f64 tolerances; wider types keep
/// them, narrower types get a floor proportional to their epsilon.
pub(crate) fn tol<T: Scalar>(base: f64) -> T {
    let floor = T::epsilon() * cast::<T>(100.0);
    let base = cast::<T>(base);
    if floor > base {
        floor
    } else {
        base
    }
}
