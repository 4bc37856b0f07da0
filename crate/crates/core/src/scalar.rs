use num_traits::{Float, FloatConst, FromPrimitive, NumCast};
use std::fmt::{Debug, Display};

/// Floating-point scalar used throughout the geometric core.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumCast + Debug + Display + Default + Send + Sync + 'static
{
    /// Machine epsilon as a plain `f64`, for tolerance bookkeeping.
    fn eps_f64() -> f64 {
        Self::epsilon().to_f64().unwrap_or(f64::EPSILON)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn c<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Reduces an angle into `[0, 2π)`.
pub fn wrap_angle<T: Real>(x: T) -> T {
    let two_pi = T::PI() + T::PI();
    let r = x % two_pi;
    if r < T::zero() {
        r + two_pi
    } else {
        r
    }
}

/// Reduces an angle difference into `(-π, π]`.
pub fn wrap_diff<T: Real>(x: T) -> T {
    let two_pi = T::PI() + T::PI();
    let mut r = x % two_pi;
    if r > T::PI() {
        r = r - two_pi;
    } else if r <= -T::PI() {
        r = r + two_pi;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrapping() {
        assert!((wrap_angle(-0.5_f64) - (2.0 * std::f64::consts::PI - 0.5)).abs() < 1e-15);
        assert!((wrap_diff(3.5_f64) - (3.5 - 2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert_eq!(wrap_diff(std::f64::consts::PI), std::f64::consts::PI);
        assert!((wrap_angle(7.0_f32) - (7.0 - 2.0 * std::f32::consts::PI)).abs() < 1e-6);
    }
}
