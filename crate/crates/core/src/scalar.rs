//! Floating-point scalar abstraction shared by the numeric, model, and
//! training layers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar usable as the element type of every matrix in the crate.
///
/// Implemented for `f32` and `f64`. Besides the arithmetic bounds it carries a
/// lossless text encoding (the IEEE-754 bit pattern in hex) used by
/// checkpoints.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Copy
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Type tag written into checkpoints.
    const NAME: &'static str;

    /// Converts an `f64` constant, rounding to nearest.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Bit pattern as fixed-width lowercase hex.
    fn to_bits_hex(self) -> String;

    fn from_bits_hex(s: &str) -> Option<Self>;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn to_bits_hex(self) -> String {
        format!("{:016x}", self.to_bits())
    }

    fn from_bits_hex(s: &str) -> Option<Self> {
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(f64::from_bits)
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn to_bits_hex(self) -> String {
        format!("{:08x}", self.to_bits())
    }

    fn from_bits_hex(s: &str) -> Option<Self> {
        if s.len() != 8 {
            return None;
        }
        u32::from_str_radix(s, 16).ok().map(f32::from_bits)
    }
}

/// Probability clamp applied before any logarithm and to sigmoid outputs.
pub const PROB_EPS: f64 = 1e-7;

/// Clamps a probability into `[ε, 1−ε]`.
#[inline]
pub fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(PROB_EPS);
    let hi = T::one() - eps;
    if p < eps {
        eps
    } else if p > hi {
        hi
    } else {
        p
    }
}
