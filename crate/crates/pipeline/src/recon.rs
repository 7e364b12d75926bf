//! End-to-end reconstruction of a mesh sequence from corrupted observations,
//! and evaluation against ground truth.

use std::path::{Path, PathBuf};

use serde::Serialize;
use vecset4d::attention::{LatentSequence, LatentSet};
use vecset4d::deform_vae::{decode_deformation, DeformVae};
use vecset4d::diffusion::{condition_encode_deform, condition_encode_shape, sample_deformation, sample_shape};
use vecset4d::geometry::io::{write_obj, write_ply};
use vecset4d::geometry::marching_cubes::Grid;
use vecset4d::geometry::{marching_cubes, sample_surface, transfer_samples, TriMesh};
use vecset4d::metrics::{
    chamfer_distance, correspondence_error, error_map_export, metrics_csv, volumetric_iou, MetricsRow, NearestGrid,
};
use vecset4d::rng;
use vecset4d::shape_vae::{decode_occupancy, ShapeVae};

use crate::config::RunConfig;
use crate::data::{corrupt_sequence, Observation};
use crate::error::{IoContext, PipelineError, Result};
use crate::models::{Models, Store};
use crate::synth::{Sequence, Split};

const DECODE_CHUNK: usize = 8192;

#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub meshes: Vec<TriMesh>,
    pub shape: LatentSet,
    pub deform: LatentSequence,
}

/// Decodes a shape latent set to a mesh by marching cubes over the
/// occupancy probabilities at level 0.5, on a `resolution³` grid spanning
/// `[-bound, bound]³`.
pub fn occupancy_mesh(vae: &ShapeVae, store: &Store, shape: &LatentSet, resolution: usize, bound: f64) -> Result<TriMesh> {
    let (origin, cell, nodes) = Grid::nodes(resolution, -bound, bound);
    let mut occ = decode_occupancy(vae, store, shape, &nodes, DECODE_CHUNK)?;
    // Outermost nodes count as outside so the extracted surface is closed.
    let r = resolution;
    for (idx, v) in occ.iter_mut().enumerate() {
        let (i, j, k) = (idx % r, (idx / r) % r, idx / (r * r));
        if [i, j, k].iter().any(|&c| c == 0 || c == r - 1) {
            *v = 0.0;
        }
    }
    let grid = Grid::new(r, origin, cell, occ)?;
    Ok(marching_cubes(&grid, 0.5))
}

pub fn shape_mesh(models: &Models, shape: &LatentSet, cfg: &RunConfig) -> Result<TriMesh> {
    let (vae, store) = &models.shape_vae;
    occupancy_mesh(vae, store, shape, cfg.eval.grid_resolution, cfg.sampling.bound)
}

/// Moves every vertex of `first` with deformation latents `d`.
pub fn deformed_mesh(vae: &DeformVae, store: &Store, first: &TriMesh, d: &LatentSet) -> Result<TriMesh> {
    Ok(first.with_vertices(decode_deformation(vae, store, d, &first.vertices, DECODE_CHUNK)?)?)
}

pub fn deform_mesh(models: &Models, first: &TriMesh, d: &LatentSet) -> Result<TriMesh> {
    let (vae, store) = &models.deform_vae;
    deformed_mesh(vae, store, first, d)
}

pub fn reconstruct_sequence(
    name: &str,
    obs: &Observation,
    models: &Models,
    cfg: &RunConfig,
    seed: u64,
) -> Result<Reconstruction> {
    if obs.len() < 2 {
        return Err(PipelineError::Validation(format!("{name}: need at least 2 observed frames")));
    }
    let (sd, ss) = &models.shape_diffusion;
    let cond = condition_encode_shape(sd, ss, &obs[0])?;
    let shape = sample_shape(sd, ss, &cond, cfg.shape_vae.latents, rng::derive_seed(seed, 1))?;
    let first = shape_mesh(models, &shape, cfg)?;
    if first.faces.is_empty() {
        return Err(PipelineError::Reconstruction {
            sequence: name.into(),
            detail: "marching cubes found no surface in the decoded occupancy".into(),
        });
    }
    let (dd, ds) = &models.deform_diffusion;
    let cond = condition_encode_deform(dd, ds, &obs[0], &obs[1..])?;
    let deform = sample_deformation(dd, ds, &cond, &shape, cfg.deform_vae.latents, rng::derive_seed(seed, 2))?;
    let mut meshes = vec![first];
    for t in 0..deform.frames() {
        meshes.push(deform_mesh(models, &meshes[0], &deform.frame(t))?);
    }
    Ok(Reconstruction { meshes, shape, deform })
}

/// Per-frame IoU, Chamfer and correspondence error of `pred` against `gt`.
///
/// Correspondence: ground-truth samples on frame 1 are matched to their
/// nearest samples on the predicted frame 1; both sides are then carried
/// through their own (topology-sharing) sequences.
pub fn frame_metrics(name: &str, pred: &[TriMesh], gt: &[TriMesh], cfg: &RunConfig, seed: u64) -> Result<Vec<MetricsRow>> {
    if pred.len() != gt.len() {
        return Err(PipelineError::Validation(format!("{name}: {} predicted vs {} true frames", pred.len(), gt.len())));
    }
    let n = cfg.eval.chamfer_samples;
    let corr_seed = rng::derive_seed(seed, 1);
    let gt_s = sample_surface(&gt[0], n, corr_seed)?;
    let pred_s = sample_surface(&pred[0], n, corr_seed)?;
    let grid = NearestGrid::new(&pred_s.points)?;
    let matched = pred_s.select(&gt_s.points.iter().map(|&q| grid.nearest(q).0).collect::<Vec<_>>());
    let mut rows = Vec::with_capacity(pred.len());
    for t in 0..pred.len() {
        let s = rng::derive_seed(seed, 10 + t as u64);
        let iou = volumetric_iou(&pred[t], &gt[t], cfg.eval.iou_samples, s)?;
        let a = sample_surface(&pred[t], n, rng::derive_seed(s, 1))?.points;
        let b = sample_surface(&gt[t], n, rng::derive_seed(s, 1))?.points;
        let chamfer = chamfer_distance(&a, &b)?;
        let p = transfer_samples(&pred[0], &pred[t], &matched)?;
        let g = transfer_samples(&gt[0], &gt[t], &gt_s)?;
        let corr = correspondence_error(&p, &g)?;
        for (what, v) in [("iou", iou), ("chamfer", chamfer), ("corr", corr)] {
            if !v.is_finite() {
                return Err(PipelineError::Numeric { stage: format!("eval/{name}"), step: t as u64 + 1, detail: format!("{what} is {v}") });
            }
        }
        rows.push(MetricsRow { sequence: name.into(), frame: Some(t + 1), iou, chamfer, corr });
    }
    Ok(rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct SequenceReport {
    pub sequence: String,
    pub rows: Vec<MetricsRow>,
    /// The reconstructed first frame repeated for every frame.
    pub baseline: Vec<MetricsRow>,
}

impl SequenceReport {
    pub fn mean_chamfer(&self) -> f64 {
        self.rows.iter().map(|r| r.chamfer).sum::<f64>() / self.rows.len() as f64
    }

    pub fn baseline_chamfer(&self) -> f64 {
        self.baseline.iter().map(|r| r.chamfer).sum::<f64>() / self.baseline.len() as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub split: Split,
    pub partial: bool,
    pub sequences: Vec<SequenceReport>,
    pub metrics_csv: PathBuf,
    pub baseline_csv: PathBuf,
}

pub fn eval_dir(out: &Path, split: Split, partial: bool) -> PathBuf {
    out.join("eval").join(format!("{}{}", split.slug(), if partial { "-partial" } else { "" }))
}

pub fn observe(seq: &Sequence, cfg: &RunConfig) -> Result<Observation> {
    corrupt_sequence(&seq.meshes, &cfg.corruption, rng::derive_seed_str(cfg.seed, &format!("observe/{}", seq.name)), |_, _, _| {})
}

pub fn write_sequence(dir: &Path, meshes: &[TriMesh]) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for (t, m) in meshes.iter().enumerate() {
        write_obj(dir.join(format!("frame_{:03}.obj", t + 1)), m)?;
    }
    Ok(())
}

/// Reconstructs and scores every sequence of `split`, writing
/// `metrics.csv`, `baseline.csv`, reconstructed OBJs and error maps.
pub fn evaluate(seqs: &[&Sequence], split: Split, models: &Models, cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    let dir = eval_dir(out, split, cfg.corruption.partial);
    std::fs::create_dir_all(&dir).at(&dir)?;
    let mut sequences = Vec::with_capacity(seqs.len());
    for seq in seqs {
        let obs = observe(seq, cfg)?;
        let seed = rng::derive_seed_str(cfg.seed, &format!("reconstruct/{}", seq.name));
        let rec = reconstruct_sequence(&seq.name, &obs, models, cfg, seed)?;
        let mseed = rng::derive_seed_str(cfg.seed, &format!("metrics/{}", seq.name));
        let rows = frame_metrics(&seq.name, &rec.meshes, &seq.meshes, cfg, mseed)?;
        let copies = vec![rec.meshes[0].clone(); rec.meshes.len()];
        let baseline = frame_metrics(&seq.name, &copies, &seq.meshes, cfg, mseed)?;
        let seq_dir = dir.join(&seq.name);
        write_sequence(&seq_dir, &rec.meshes)?;
        if cfg.eval.error_maps {
            for (t, (m, g)) in rec.meshes.iter().zip(&seq.meshes).enumerate() {
                let gt_points = sample_surface(g, cfg.eval.chamfer_samples, rng::derive_seed(mseed, 2))?.points;
                let map = error_map_export(m, &gt_points, cfg.eval.error_map_clamp)?;
                write_ply(seq_dir.join(format!("error_{:03}.ply", t + 1)), &map.mesh, Some(&map.colors))?;
            }
        }
        sequences.push(SequenceReport { sequence: seq.name.clone(), rows, baseline });
    }
    let all: Vec<MetricsRow> = sequences.iter().flat_map(|s| s.rows.iter().cloned()).collect();
    let base: Vec<MetricsRow> = sequences.iter().flat_map(|s| s.baseline.iter().cloned()).collect();
    let metrics_path = dir.join("metrics.csv");
    std::fs::write(&metrics_path, metrics_csv(&all)?).at(&metrics_path)?;
    let baseline_path = dir.join("baseline.csv");
    std::fs::write(&baseline_path, metrics_csv(&base)?).at(&baseline_path)?;
    Ok(EvalReport { split, partial: cfg.corruption.partial, sequences, metrics_csv: metrics_path, baseline_csv: baseline_path })
}
