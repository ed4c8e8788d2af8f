//! Scalar abstractions.
//!
//! Combinatorial operators (coboundary, cup product, wedge) only need ring
//! arithmetic and are generic over [`Scalar`], which admits exact rationals.
//! Anything touching a metric (square roots, weights, solvers) needs [`Real`].

use std::fmt::{Debug, Display, LowerExp};
use std::ops::Neg;

use num_traits::{Float, FloatConst, FromPrimitive, Num, NumAssign};

/// Ring-like scalar: enough for exact cochain algebra.
pub trait Scalar: Copy + Debug + PartialEq + Num + NumAssign + Neg<Output = Self> + Send + Sync + 'static {}

impl<T> Scalar for T where T: Copy + Debug + PartialEq + Num + NumAssign + Neg<Output = Self> + Send + Sync + 'static {}

/// Floating point scalar: f32 or f64.
pub trait Real: Scalar + Float + FloatConst + FromPrimitive + Display + LowerExp {
    /// Lossy conversion from an f64 literal.
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `(-1)^k` in the scalar type.
#[inline]
pub fn sign<T: Scalar>(negative: bool) -> T {
    if negative {
        -T::one()
    } else {
        T::one()
    }
}
