//! `libm` re-exports so the crate builds without `std`.

pub use libm::{acos, atan2, cos, cosh, exp, expm1, fabs, log, log1p, pow, sin, sinh, sqrt, tanh};

#[inline]
pub fn sq(x: f64) -> f64 {
    x * x
}

pub fn powi(x: f64, n: i32) -> f64 {
    let mut acc = 1.0;
    let mut base = if n < 0 { 1.0 / x } else { x };
    let mut k = n.unsigned_abs();
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        base *= base;
        k >>= 1;
    }
    acc
}

pub const PI: f64 = core::f64::consts::PI;
