//! Occupancy-centric scene representation transfer.
//!
//! A semantic occupancy grid is the hub: [`gsrender`] splats it into
//! per-camera depth and semantic maps, [`geomwarp`] turns rendered depth into
//! a geometry-aware noise prior, [`lidarsim`] synthesizes LiDAR sweeps from it
//! by occupancy-guided sparse sampling, and [`occdiff`] holds the diffusion
//! plumbing used to generate and edit occupancy latents from BEV layouts.
//! [`evalkit`] collects the losses and metrics.

pub mod voxgrid;
pub mod gsrender;
pub mod geomwarp;
pub mod imageio;
pub mod rng;
pub mod lidarsim;
pub mod occdiff;
pub mod evalkit;

/// Re-exported so callers can build poses and points with the same version.
pub use nalgebra;
