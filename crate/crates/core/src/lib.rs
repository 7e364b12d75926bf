//! Latent vector-set models for deforming surface sequences.
//!
//! The crate bundles a small reverse-mode tensor engine, geometry kernels
//! (sampling, occupancy, farthest point sampling, partial views, marching
//! cubes), set-attention building blocks including interleaved
//! spatio-temporal attention, shape and deformation autoencoders, EDM latent
//! diffusion, and evaluation metrics.

pub mod attention;
pub mod deform_vae;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod rng;
pub mod shape_vae;
pub mod tensor;

pub use error::{Error, Result};
