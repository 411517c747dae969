//! Floating-point abstraction for the estimator and oracle arithmetic.
//!
//! Everything downstream of the integer lattice data (probabilities, weights,
//! cumulant estimates) is generic over [`Scalar`]; `f64` is what the CLI and
//! the concrete aliases at the crate root use, `f32` exists for callers that
//! trade precision for footprint.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type for all probability and estimator arithmetic.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Validation tolerance for probability vectors.
    fn prob_tol() -> Self;

    /// Conversion from `f64` literals and RNG draws.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    /// Conversion from lattice integers (displacements, durations).
    #[inline]
    fn of_int(x: i64) -> Self {
        Self::from_i64(x).expect("lattice coordinate is representable")
    }
}

impl Scalar for f64 {
    #[inline]
    fn prob_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    #[inline]
    fn prob_tol() -> Self {
        1e-5
    }
}
