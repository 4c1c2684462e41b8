//! Scalar abstraction shared by the numeric kernels.
//!
//! Least squares, the cross-section models, the regression tree and the
//! error metrics are written once against [`Scalar`] and instantiated for
//! `f64` (the default everywhere) and `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point type usable by the generic kernels.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Converts an `f64` literal or data value into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Relative threshold on the diagonal of a column-equilibrated R factor
    /// below which a design matrix is declared rank deficient.
    #[inline]
    fn rank_tolerance() -> Self {
        Self::lit(1e-10).max(Self::epsilon() * Self::lit(1e3))
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + Serialize
        + DeserializeOwned
        + 'static
{
}
