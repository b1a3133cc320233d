pub mod conv;
pub mod elliptic;
pub mod equilibrium;
pub mod error;
pub mod gas_energy;
pub mod gl;
pub mod grid;
pub mod jellium;
pub mod kernels;
pub mod potential;
pub mod sampler;
pub mod special;

pub use error::{LabError, Result};
