#![allow(dead_code)]

use std::path::Path;

use vecset4d::deform_vae::DeformVaeConfig;
use vecset4d::diffusion::DiffusionConfig;
use vecset4d::shape_vae::ShapeVaeConfig;
use vecset4d_pipeline::config::StageConfig;
use vecset4d_pipeline::synth::{dataset_specs, load_dataset, synth_dataset, Family, Sequence};
use vecset4d_pipeline::RunConfig;

/// A configuration small enough to train every stage in a few seconds.
pub fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 3;
    cfg.data.families = vec![Family::BreathingSphere, Family::TranslatingEllipsoid];
    cfg.data.frames = 3;
    cfg.data.train_per_family = 1;
    cfg.data.val_per_family = 1;
    cfg.data.test_per_family = 1;
    cfg.data.detail = 1;
    let s = &mut cfg.sampling;
    s.surface_points = 64;
    s.uniform_queries = 64;
    s.near_queries = 64;
    s.deform_points = 32;
    s.pool_surface = 512;
    s.pool_uniform = 512;
    s.pool_near = 512;
    cfg.shape_vae = ShapeVaeConfig { latents: 4, channels: 8, heads: 2, decoder_depth: 1, kl_weight: 1e-3 };
    cfg.deform_vae = DeformVaeConfig { latents: 4, channels: 8, heads: 2, decoder_depth: 1, kl_weight: 1e-6 };
    let diff = DiffusionConfig { cond_latents: 4, channels: 8, heads: 2, depth: 1, ..DiffusionConfig::default() };
    cfg.shape_diffusion = diff.clone();
    cfg.deform_diffusion = diff;
    let stage = StageConfig { steps: 6, lr: 1e-3, batch: 2, val_every: 2, checkpoint_every: 3 };
    cfg.train.shape_vae = stage.clone();
    cfg.train.deform_vae = stage.clone();
    cfg.train.shape_diffusion = stage.clone();
    cfg.train.deform_diffusion = stage;
    cfg.corruption.points = 32;
    cfg.corruption.pool = 512;
    cfg.eval.grid_resolution = 16;
    cfg.eval.iou_samples = 2000;
    cfg.eval.chamfer_samples = 500;
    cfg
}

/// Synthesizes the configured dataset under `out/data` and loads it.
pub fn synth(cfg: &RunConfig, out: &Path) -> Vec<Sequence> {
    let dir = out.join("data");
    synth_dataset(&dataset_specs(&cfg.data, cfg.seed), cfg.seed, &dir).unwrap();
    load_dataset(&dir).unwrap()
}

/// Every file below `dir` with its bytes, sorted by relative path.
pub fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
