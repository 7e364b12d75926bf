//! Model construction and checkpoint files for the four trained stages.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vecset4d::deform_vae::DeformVae;
use vecset4d::diffusion::{DeformDenoiser, ShapeDenoiser};
use vecset4d::rng;
use vecset4d::shape_vae::ShapeVae;
use vecset4d::tensor::checkpoint::Checkpoint;
use vecset4d::tensor::{OptimizerState, ParamStore};

use crate::config::{CheckpointChoice, RunConfig};
use crate::error::{PipelineError, Result};

/// Training precision. Checkpoints store `f32`, so resuming is exact.
pub type Store = ParamStore<f32>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    ShapeVae,
    DeformVae,
    ShapeDiffusion,
    DeformDiffusion,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::ShapeVae, Stage::DeformVae, Stage::ShapeDiffusion, Stage::DeformDiffusion];

    pub fn slug(self) -> &'static str {
        match self {
            Stage::ShapeVae => "shape_vae",
            Stage::DeformVae => "deform_vae",
            Stage::ShapeDiffusion => "shape_diff",
            Stage::DeformDiffusion => "deform_diff",
        }
    }

    /// Checkpoint entry name of a parameter. Diffusion condition encoders
    /// live under `cond_enc/`.
    pub fn entry_name(self, param: &str) -> String {
        let kind = match self {
            Stage::ShapeDiffusion => Some("shape"),
            Stage::DeformDiffusion => Some("deform"),
            _ => None,
        };
        match (kind, param.strip_prefix("cond.")) {
            (Some(k), Some(rest)) => format!("cond_enc/{k}/{rest}"),
            _ => format!("{}/{}", self.slug(), param.strip_prefix("net.").unwrap_or(param)),
        }
    }

    pub fn model_config(self, cfg: &RunConfig) -> String {
        match self {
            Stage::ShapeVae => serde_json::to_string(&cfg.shape_vae),
            Stage::DeformVae => serde_json::to_string(&cfg.deform_vae),
            Stage::ShapeDiffusion => serde_json::to_string(&cfg.shape_diffusion),
            Stage::DeformDiffusion => serde_json::to_string(&cfg.deform_diffusion),
        }
        .expect("config serializes")
    }

    fn init_rng(self, cfg: &RunConfig) -> rng::Rng {
        rng::rng(rng::derive_seed_str(cfg.seed, &format!("init/{}", self.slug())))
    }
}

pub fn new_shape_vae(cfg: &RunConfig) -> Result<(ShapeVae, Store)> {
    let mut store = Store::new();
    let m = ShapeVae::new(cfg.shape_vae.clone(), &mut store, &mut Stage::ShapeVae.init_rng(cfg))?;
    Ok((m, store))
}

pub fn new_deform_vae(cfg: &RunConfig) -> Result<(DeformVae, Store)> {
    let mut store = Store::new();
    let m = DeformVae::new(cfg.deform_vae.clone(), &mut store, &mut Stage::DeformVae.init_rng(cfg))?;
    Ok((m, store))
}

pub fn new_shape_denoiser(cfg: &RunConfig) -> Result<(ShapeDenoiser, Store)> {
    let mut store = Store::new();
    let m = ShapeDenoiser::new(cfg.shape_diffusion.clone(), &mut store, &mut Stage::ShapeDiffusion.init_rng(cfg))?;
    Ok((m, store))
}

pub fn new_deform_denoiser(cfg: &RunConfig) -> Result<(DeformDenoiser, Store)> {
    let mut store = Store::new();
    let m = DeformDenoiser::new(cfg.deform_diffusion.clone(), &mut store, &mut Stage::DeformDiffusion.init_rng(cfg))?;
    Ok((m, store))
}

pub fn checkpoint_dir(out: &Path, stage: Stage) -> PathBuf {
    out.join("checkpoints").join(stage.slug())
}

pub fn checkpoint_path(out: &Path, stage: Stage, which: CheckpointChoice) -> PathBuf {
    checkpoint_dir(out, stage).join(match which {
        CheckpointChoice::Last => "last.ckpt",
        CheckpointChoice::Best => "best.ckpt",
    })
}

/// Parameters, optional optimizer state, and bookkeeping.
pub fn build_checkpoint(
    stage: Stage,
    model_config: &str,
    store: &Store,
    optimizer: Option<&OptimizerState<f32>>,
    meta: BTreeMap<String, String>,
) -> Checkpoint {
    let mut ck = Checkpoint::new(stage.slug());
    for (name, t) in store.names().iter().zip(store.tensors()) {
        ck.push(stage.entry_name(name), t);
    }
    if let Some(state) = optimizer {
        ck.push_optimizer(&format!("{}/", stage.slug()), store, state);
    }
    ck.meta.extend(meta);
    ck.meta.insert("config".into(), model_config.into());
    ck
}

pub fn restore_params(ck: &Checkpoint, stage: Stage, model_config: &str, store: &mut Store) -> Result<()> {
    if ck.model != stage.slug() {
        return Err(PipelineError::Validation(format!("checkpoint holds {:?}, expected {}", ck.model, stage.slug())));
    }
    if ck.meta.get("config").map(String::as_str) != Some(model_config) {
        return Err(PipelineError::Validation(format!(
            "{} checkpoint was trained with a different model configuration",
            stage.slug()
        )));
    }
    let mut loaded = Vec::with_capacity(store.len());
    for name in store.names() {
        loaded.push((name.clone(), ck.tensor::<f32>(&stage.entry_name(name))?));
    }
    store.load(loaded.iter().map(|(n, t)| (n.as_str(), t.clone())))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path, what: &'static str) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(PipelineError::Missing { what, path: path.to_path_buf() });
    }
    Ok(Checkpoint::load(path)?)
}

/// Trained models, ready for inference.
pub struct Models {
    pub shape_vae: (ShapeVae, Store),
    pub deform_vae: (DeformVae, Store),
    pub shape_diffusion: (ShapeDenoiser, Store),
    pub deform_diffusion: (DeformDenoiser, Store),
}

fn load_into(cfg: &RunConfig, out: &Path, stage: Stage, store: &mut Store) -> Result<()> {
    let ck = read_checkpoint(&checkpoint_path(out, stage, cfg.eval.checkpoint), "trained checkpoint")?;
    restore_params(&ck, stage, &stage.model_config(cfg), store)
}

pub fn load_models(cfg: &RunConfig, out: &Path) -> Result<Models> {
    let mut shape_vae = new_shape_vae(cfg)?;
    load_into(cfg, out, Stage::ShapeVae, &mut shape_vae.1)?;
    let mut deform_vae = new_deform_vae(cfg)?;
    load_into(cfg, out, Stage::DeformVae, &mut deform_vae.1)?;
    let mut shape_diffusion = new_shape_denoiser(cfg)?;
    load_into(cfg, out, Stage::ShapeDiffusion, &mut shape_diffusion.1)?;
    let mut deform_diffusion = new_deform_denoiser(cfg)?;
    load_into(cfg, out, Stage::DeformDiffusion, &mut deform_diffusion.1)?;
    Ok(Models { shape_vae, deform_vae, shape_diffusion, deform_diffusion })
}
