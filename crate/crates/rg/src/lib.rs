//! Renormalisation-group objects for gradient fields: block geometry,
//! relevant Hamiltonians with the second-order projection, and the weight
//! operators that control large fields.

pub mod rg_core;
pub mod rg_geom;
pub mod weights;
