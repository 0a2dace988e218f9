#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Spectral simulation and analysis of the Fourier-truncated double-well
//! φ⁴ wave and heat equations on the torus.

pub mod error;
pub mod rng;
pub mod spectral;
pub mod stats;
pub mod dynamics;
pub mod gibbs;
pub mod tst;
pub mod transmission;
pub mod variational;
pub mod renorm3d;
pub mod invariance;

pub use error::{Error, Result};
