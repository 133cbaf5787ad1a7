//! Scalar abstraction shared by every numerical module.
//!
//! All geometry, propagation and reconstruction code is written against
//! [`Real`], which is implemented for `f32` and `f64`. Spectral analysis
//! (SVD) is carried out in `f64` regardless of the working precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive};

/// Floating point type usable as the working precision of the simulator.
pub trait Real:
    Float + FloatConst + FromPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into the working precision.
    #[inline]
    fn lit(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in working precision")
    }

    /// Widens to `f64`.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Free-space wavenumber `2πf/c` for a frequency in Hz.
#[inline]
pub fn wavenumber<T: Real>(frequency: T) -> T {
    T::TAU() * frequency / T::lit(SPEED_OF_LIGHT)
}

/// Wraps an angle into `(-π, π]`.
#[inline]
pub fn wrap_phase<T: Real>(phase: T) -> T {
    let tau = T::TAU();
    let mut wrapped = phase - tau * ((phase + T::PI()) / tau).floor();
    // floor() maps exactly -π to -π; the half-open convention wants +π.
    if wrapped <= -T::PI() {
        wrapped = wrapped + tau;
    }
    wrapped
}

/// Squared magnitude of a complex number.
#[inline]
pub fn norm_sqr<T: Real>(z: Complex<T>) -> T {
    z.re * z.re + z.im * z.im
}

/// Converts a complex number to double precision.
#[inline]
pub fn widen<T: Real>(z: Complex<T>) -> Complex<f64> {
    Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy())
}

/// Converts a double precision complex number to the working precision.
#[inline]
pub fn narrow<T: Real>(z: Complex<f64>) -> Complex<T> {
    Complex::new(T::lit(z.re), T::lit(z.im))
}
