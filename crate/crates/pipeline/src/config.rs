//! Run configuration, read from a TOML file. Every field has a desk-scale
//! default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vecset4d::deform_vae::DeformVaeConfig;
use vecset4d::diffusion::{DiffusionConfig, EdmConfig};
use vecset4d::shape_vae::ShapeVaeConfig;

use crate::error::{IoContext, PipelineError, Result};
use crate::synth::Family;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub sampling: SamplingConfig,
    pub shape_vae: ShapeVaeConfig,
    pub deform_vae: DeformVaeConfig,
    pub shape_diffusion: DiffusionConfig,
    pub deform_diffusion: DiffusionConfig,
    pub train: TrainConfig,
    pub corruption: CorruptionConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            sampling: SamplingConfig::default(),
            shape_vae: ShapeVaeConfig::default(),
            deform_vae: DeformVaeConfig::default(),
            shape_diffusion: DiffusionConfig::default(),
            deform_diffusion: DiffusionConfig::default(),
            train: TrainConfig::default(),
            corruption: CorruptionConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub families: Vec<Family>,
    /// Frames per sequence (T).
    pub frames: usize,
    pub train_per_family: usize,
    pub val_per_family: usize,
    pub test_per_family: usize,
    /// Icosphere subdivision level (and matching tessellation for the other
    /// families).
    pub detail: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { families: Family::ALL.to_vec(), frames: 5, train_per_family: 4, val_per_family: 1, test_per_family: 1, detail: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    /// Encoder input points per shape (N).
    pub surface_points: usize,
    pub uniform_queries: usize,
    pub near_queries: usize,
    pub near_sigmas: [f64; 2],
    /// Tracked points per deformation pair; the decoder is trained on these
    /// plus the same number of normal offsets.
    pub deform_points: usize,
    /// Per-frame pools the training batches are drawn from.
    pub pool_surface: usize,
    pub pool_uniform: usize,
    pub pool_near: usize,
    /// Uniform queries are drawn from `[-bound, bound]³`.
    pub bound: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            surface_points: 2048,
            uniform_queries: 1024,
            near_queries: 1024,
            near_sigmas: [0.05, 0.15],
            deform_points: 512,
            pool_surface: 20_000,
            pool_uniform: 20_000,
            pool_near: 20_000,
            bound: 0.55,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub steps: u64,
    pub lr: f64,
    pub batch: usize,
    /// Validation-loss interval; 0 disables validation.
    pub val_every: u64,
    pub checkpoint_every: u64,
}

impl StageConfig {
    fn with(steps: u64, lr: f64, batch: usize) -> Self {
        Self { steps, lr, batch, val_every: 250, checkpoint_every: 500 }
    }
}

impl Default for StageConfig {
    fn default() -> Self {
        Self::with(1000, 1e-3, 4)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub shape_vae: StageConfig,
    pub deform_vae: StageConfig,
    pub shape_diffusion: StageConfig,
    pub deform_diffusion: StageConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            shape_vae: StageConfig::with(3000, 1e-3, 4),
            deform_vae: StageConfig::with(2000, 1e-3, 4),
            shape_diffusion: StageConfig::with(3000, 1e-3, 8),
            deform_diffusion: StageConfig::with(3000, 1e-3, 4),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    /// Observed points per frame (L).
    pub points: usize,
    pub noise: f64,
    pub partial: bool,
    pub view_dir: [f64; 3],
    /// Dense per-frame samples the view filter and subsampling start from.
    pub pool: usize,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self { points: 128, noise: 0.05, partial: false, view_dir: vecset4d::geometry::default_view_dir(), pool: 4096 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointChoice {
    Last,
    Best,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub grid_resolution: usize,
    pub iou_samples: usize,
    pub chamfer_samples: usize,
    pub error_maps: bool,
    pub error_map_clamp: f64,
    pub checkpoint: CheckpointChoice,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 64,
            iou_samples: vecset4d::metrics::IOU_SAMPLES,
            chamfer_samples: vecset4d::metrics::CHAMFER_SAMPLES,
            error_maps: true,
            error_map_clamp: vecset4d::metrics::ERROR_MAP_CLAMP,
            checkpoint: CheckpointChoice::Last,
        }
    }
}

/// Optional overrides of the directories under the output root.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Existing dataset directory (defaults to `<out>/data`).
    pub data: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        let d = &self.data;
        if d.frames < 2 {
            return bad(format!("data.frames must be at least 2, got {}", d.frames));
        }
        if d.families.is_empty() || d.train_per_family == 0 {
            return bad("the training split is empty".into());
        }
        let s = &self.sampling;
        if s.surface_points.max(s.deform_points) > s.pool_surface || s.uniform_queries > s.pool_uniform || s.near_queries > s.pool_near {
            return bad("per-step sample counts exceed their pools".into());
        }
        if s.surface_points < self.shape_vae.latents || s.deform_points < self.deform_vae.latents {
            return bad("sampling.surface_points and deform_points must be at least the latent count".into());
        }
        if !(s.bound > 0.5) || !(s.near_sigmas[0] > 0.0 && s.near_sigmas[1] > 0.0) {
            return bad("sampling.bound must exceed 0.5 and near_sigmas must be positive".into());
        }
        let c = &self.corruption;
        if c.points < self.shape_diffusion.cond_latents || c.points < self.deform_diffusion.cond_latents {
            return bad(format!("corruption.points ({}) must be at least the condition latent count", c.points));
        }
        if c.points > c.pool || !(c.noise >= 0.0) {
            return bad("corruption.points must not exceed corruption.pool and noise must be non-negative".into());
        }
        if self.shape_diffusion.channels != self.shape_vae.channels
            || self.deform_diffusion.channels != self.deform_vae.channels
            || self.deform_diffusion.channels != self.shape_vae.channels
        {
            return bad("diffusion channels must match the autoencoder channels".into());
        }
        for (name, edm) in [("shape_diffusion", &self.shape_diffusion.edm), ("deform_diffusion", &self.deform_diffusion.edm)] {
            check_edm(name, edm)?;
        }
        for (name, st) in [
            ("shape_vae", &self.train.shape_vae),
            ("deform_vae", &self.train.deform_vae),
            ("shape_diffusion", &self.train.shape_diffusion),
            ("deform_diffusion", &self.train.deform_diffusion),
        ] {
            if st.batch == 0 || !(st.lr > 0.0) {
                return bad(format!("train.{name}: batch and lr must be positive"));
            }
        }
        if self.eval.grid_resolution < 2 || self.eval.iou_samples == 0 || self.eval.chamfer_samples == 0 {
            return bad("eval sample counts must be positive and grid_resolution >= 2".into());
        }
        if let Some(p) = &self.paths.data {
            if !p.is_dir() {
                return Err(PipelineError::Missing { what: "dataset directory", path: p.clone() });
            }
        }
        Ok(())
    }
}

fn check_edm(name: &str, edm: &EdmConfig) -> Result<()> {
    edm.validate().map_err(|e| PipelineError::Config(format!("{name}.edm: {e}")))
}
