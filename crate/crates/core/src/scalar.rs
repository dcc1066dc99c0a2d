use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast, ToPrimitive};

/// Floating point scalar the statistics and ranking code is generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumCast + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; exact for the small integers and
    /// decimal constants used throughout the crate.
    fn of(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("f64 converts to every Scalar")
    }

    fn of_usize(value: usize) -> Self {
        <Self as NumCast>::from(value).expect("usize converts to every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("every Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
