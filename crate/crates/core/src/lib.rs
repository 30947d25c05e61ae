//! Gradient interface models on the discrete torus.

pub mod error;
pub mod fields;
pub mod gaussian;
pub mod jet;
pub mod potentials;
pub mod scaling;
pub mod sampler;
pub mod stats;
pub mod thermo;
pub mod torus;

pub use error::{Error, Result};
