//! Self-supervised CNN priors and accelerated plug-and-play reconstruction
//! for radial multicoil MRI.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64`, which is what the solver and the
//! command-line pipeline use.

pub mod cli;
pub mod denoiser;
pub mod downsampling;
pub mod error;
pub mod forward_model;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod pnp;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Image = grid::ComplexImage<f64>;
pub type Coils = grid::CoilSensitivities<f64>;
pub type KSpace = forward_model::KSpaceData<f64>;
pub type Traj = forward_model::Trajectory<f64>;
