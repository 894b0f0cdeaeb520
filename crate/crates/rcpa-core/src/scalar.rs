//! Scalar abstraction for the numeric core.
//!
//! Everything in the policy / reward / curriculum / optimizer layers is
//! generic over [`Real`] so the same code runs in f32 or f64. The experiment
//! harness pins f64 (see the type aliases at the crate root).

use num_traits as nt;

/// Floating-point scalars the numeric core accepts.
pub trait Real:
    nt::Float
    + nt::FromPrimitive
    + nt::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    /// Shorthand for lossless-enough construction from f64 literals.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 literal must convert")
    }
}

impl<T> Real for T where
    T: nt::Float
        + nt::FromPrimitive
        + nt::NumAssign
        + std::iter::Sum
        + std::fmt::Debug
        + std::fmt::Display
        + 'static
{
}
