//! Scalar abstraction for every probability, value, and cost in the crate.
//!
//! All tables and solvers are generic over [`Real`]; the crate root exposes
//! `f64` aliases, which are the instantiation every documented tolerance is
//! stated for.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lifts an `f64` constant into the scalar type.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("constant not representable in scalar type")
    }

    /// Tolerance for checking that a probability row sums to one.
    ///
    /// 1e-12 for `f64`; widened to a few ulps of the type when the type
    /// cannot resolve 1e-12 at magnitude one (`f32`).
    fn row_sum_tolerance() -> Self {
        Self::of(1e-12).max(Self::epsilon() * Self::of(16.0))
    }
}

impl Real for f32 {}
impl Real for f64 {}
