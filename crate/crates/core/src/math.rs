//! Scalar math routed through `libm`.
//!
//! Keeping every transcendental call on the `libm` path makes results
//! bit-identical between `std` and `no_std` builds of this crate.

use crate::Real;

#[cfg(not(feature = "f32"))]
mod imp {
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    pub fn log10(x: f64) -> f64 {
        libm::log10(x)
    }
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    pub fn cos(x: f64) -> f64 {
        libm::cos(x)
    }
    pub fn sin(x: f64) -> f64 {
        libm::sin(x)
    }
    pub fn powf(x: f64, y: f64) -> f64 {
        libm::pow(x, y)
    }
    pub const PI: f64 = core::f64::consts::PI;
}

#[cfg(feature = "f32")]
mod imp {
    pub fn exp(x: f32) -> f32 {
        libm::expf(x)
    }
    pub fn ln(x: f32) -> f32 {
        libm::logf(x)
    }
    pub fn log10(x: f32) -> f32 {
        libm::log10f(x)
    }
    pub fn sqrt(x: f32) -> f32 {
        libm::sqrtf(x)
    }
    pub fn cos(x: f32) -> f32 {
        libm::cosf(x)
    }
    pub fn sin(x: f32) -> f32 {
        libm::sinf(x)
    }
    pub fn powf(x: f32, y: f32) -> f32 {
        libm::powf(x, y)
    }
    pub const PI: f32 = core::f32::consts::PI;
}

pub use imp::{cos, exp, ln, log10, powf, sin, sqrt, PI};

/// Absolute value without pulling in `std`.
pub fn abs(x: Real) -> Real {
    if x < 0.0 { -x } else { x }
}

/// Euclidean norm of a slice, clamped away from zero so cosine
/// similarities stay finite on degenerate inputs.
pub fn norm_clamped(v: &[Real]) -> Real {
    let s: Real = v.iter().map(|x| x * x).sum();
    let n = sqrt(s);
    if n < 1e-12 as Real { 1e-12 as Real } else { n }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[Real], b: &[Real]) -> Real {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
