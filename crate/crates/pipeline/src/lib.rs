//! Dataset synthesis, training, reconstruction and evaluation for the
//! `vecset4d` models.
//!
//! Everything a run produces lives below one output directory:
//!
//! ```text
//! <out>/data/            synthetic OBJ sequences + manifest.json
//! <out>/checkpoints/     <stage>/last.ckpt, <stage>/best.ckpt
//! <out>/logs/            per-step loss CSVs and validation CSVs
//! <out>/cache/           cached autoencoder latents for diffusion training
//! <out>/recon/, eval/    reconstructed sequences, metrics, error maps
//! ```

pub mod config;
pub mod data;
pub mod error;
pub mod models;
pub mod recon;
pub mod stages;
pub mod synth;
pub mod train;

pub use config::RunConfig;
pub use error::{PipelineError, Result};
