//! Joint Bayesian recovery of moving fluorescent point sources from
//! longitudinal Poisson-noise images.
//!
//! The generative model places `I` template points in a voxel domain, gives
//! each a per-time fluorescence, and moves them at every time point with a
//! small-deformation field spanned by Gaussian-kernel momenta. The warped
//! sources are blurred by a Gaussian PSF and observed as Poisson counts over
//! a uniform background. Inference samples the full latent state with
//! adaptive Hamiltonian Monte Carlo.
//!
//! This crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! benchmark driver live in the `synaptrace` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod init;
pub mod math;
pub mod model;
pub mod posterior;
pub mod sampler;
pub mod simulator;

pub use error::{Error, Result};
pub use math::SpdMatrix;
pub use model::{Catalogue, DisplacementField, IntensityField, ModelConfig, ObservationStack};
pub use posterior::{ParameterLayout, ParameterVector, PosteriorContext, Potential};
pub use sampler::{Chain, ChainInit, SamplerConfig};
