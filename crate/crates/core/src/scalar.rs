//! Floating-point scalar abstraction for vector math.
//!
//! Embedding storage, similarity search and query fusion are generic over
//! [`Scalar`], implemented for `f32` and `f64`. The rest of the pipeline works
//! in `f64` and converts at the index boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless widening to `f64`.
    fn to_f64_lossless(self) -> f64;

    /// Narrowing from `f64` (rounds for `f32`).
    fn from_f64_lossy(v: f64) -> Self;

    /// Little-endian `f32` encoding used by on-disk formats.
    fn to_f32_le(self) -> [u8; 4] {
        (self.to_f64_lossless() as f32).to_le_bytes()
    }

    fn from_f32_le(bytes: [u8; 4]) -> Self {
        Self::from_f64_lossy(f32::from_le_bytes(bytes) as f64)
    }
}

impl Scalar for f32 {
    fn to_f64_lossless(self) -> f64 {
        self as f64
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    fn to_f64_lossless(self) -> f64 {
        self
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }
}

/// Dot product of two equal-length slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Euclidean norm.
pub fn l2_norm<T: Scalar>(v: &[T]) -> T {
    dot(v, v).sqrt()
}
