//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Real`] so the same code
//! runs in `f32` (training/inference speed) and `f64` (geometry, transform
//! fidelity and gradient checks). Randomness is always drawn in `f64` and then
//! converted, so seeded runs produce the same underlying draws regardless of
//! the scalar width.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, Signed, ToPrimitive};

/// Floating-point scalar usable by every kernel in this crate.
pub trait Real:
    Float
    + FloatConst
    + NumAssign
    + Signed
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64` (the type used for constants and RNG draws).
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 -> Real conversion")
    }

    /// Conversion back to `f64` for reporting and geometry.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Real -> f64 conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
