#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod mathf;
pub mod quadrature;
pub mod rng;
pub mod sphere;
pub mod toric;
pub mod geometry;
pub mod spectral;
pub mod soliton;
pub mod flow;
pub mod gauge;
pub mod functionals;

pub use error::{Error, Result};
