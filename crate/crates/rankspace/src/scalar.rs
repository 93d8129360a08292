use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Scalar type for all dense algebra and metrics in this crate: `f32` or `f64`.
///
/// Everything numeric is generic over `Real`; the crate root exposes `f64`
/// aliases for the common case.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + FromStr<Err = std::num::ParseFloatError>
    + Debug
    + Display
    + Sum
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Convert an `f64` constant into `T`.
#[inline]
pub fn real<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant converts into scalar type")
}
