//! Scalar math shims and small statistics helpers.
//!
//! In `std` builds these forward to the inherent `f64` methods; without
//! `std` they fall back to `libm` so the crate stays `no_std`-compatible.

#[cfg(feature = "std")]
macro_rules! shim {
    ($(fn $name:ident($($arg:ident),+) -> f64 => $_libm:path;)+) => {
        $(
            #[inline(always)]
            pub fn $name($($arg: f64),+) -> f64 {
                f64::$name($($arg),+)
            }
        )+
    };
}

#[cfg(not(feature = "std"))]
macro_rules! shim {
    ($(fn $name:ident($($arg:ident),+) -> f64 => $libm:path;)+) => {
        $(
            #[inline(always)]
            pub fn $name($($arg: f64),+) -> f64 {
                $libm($($arg),+)
            }
        )+
    };
}

shim! {
    fn sqrt(x) -> f64 => libm::sqrt;
    fn sin(x) -> f64 => libm::sin;
    fn cos(x) -> f64 => libm::cos;
    fn exp(x) -> f64 => libm::exp;
    fn ln(x) -> f64 => libm::log;
    fn tanh(x) -> f64 => libm::tanh;
    fn floor(x) -> f64 => libm::floor;
    fn round(x) -> f64 => libm::round;
    fn powf(x, y) -> f64 => libm::pow;
}

/// Logistic sigmoid, written to stay finite for large |x|.
#[inline(always)]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// x * sigmoid(x); the smooth activation used throughout the denoiser.
#[inline(always)]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of [`silu`] with respect to its input.
#[inline(always)]
pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divides by n, not n-1).
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    sqrt(var)
}

pub fn l2_norm(values: &[f64]) -> f64 {
    sqrt(values.iter().map(|v| v * v).sum::<f64>())
}

/// Root mean square of a slice; 0 for an empty slice.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    sqrt(values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
