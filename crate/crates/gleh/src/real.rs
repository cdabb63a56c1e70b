//! Scalar abstraction for the core numerics.
//!
//! Everything in the math layer is written against [`Real`] so the same code
//! runs in `f32` or `f64`. Tolerances are stated in the spec for `f64`; when
//! running in `f32` the caller is expected to relax them.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable by the core numerics: a real field with
/// `num-traits` conversions from/to `f64`.
pub trait Real:
    nalgebra::RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Default
    + Send
    + Sync
    + std::fmt::LowerExp
{
    /// Lossy conversion from an `f64` constant.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant must convert")
    }

    /// Lossy conversion back to `f64` (for reporting and serialization).
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("real scalar must convert to f64")
    }
}

impl<T> Real for T where
    T: nalgebra::RealField
        + Copy
        + FromPrimitive
        + ToPrimitive
        + Default
        + Send
        + Sync
        + std::fmt::LowerExp
{
}

/// Shorthand for `T::of(v)` usable in expression position.
pub fn convert<T: Real>(value: f64) -> T {
    T::of(value)
}
