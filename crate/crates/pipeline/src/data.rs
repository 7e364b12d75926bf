//! Per-frame sample pools for training, and the observation corruption
//! pipeline used for conditioning.

use rand::seq::index::sample;
use rand::RngCore;
use rayon::prelude::*;
use vecset4d::geometry::sampling::{displace, normal_offsets, normals_on, uniform_points};
use vecset4d::geometry::{
    add_observation_noise, render_partial_view, sample_surface, transfer_samples, InsideTester, SurfaceSamples, TriMesh,
    Vec3,
};
use vecset4d::rng::{self, Rng};

use crate::config::{CorruptionConfig, SamplingConfig};
use crate::error::{PipelineError, Result};
use crate::synth::Sequence;

/// Samples drawn once per frame.
#[derive(Clone, Debug)]
pub struct FramePool {
    /// Surface samples drawn on this frame.
    pub surface: Vec<Vec3>,
    /// Uniform queries then near-surface queries, with occupancy labels.
    pub queries: Vec<Vec3>,
    pub occupancy: Vec<u8>,
    pub uniform: usize,
    /// The first frame's surface samples carried to this frame.
    pub tracked: Vec<Vec3>,
    pub tracked_normals: Vec<Vec3>,
}

#[derive(Clone, Debug)]
pub struct SequencePool {
    pub name: String,
    pub frames: Vec<FramePool>,
}

fn build_frame(
    mesh: &TriMesh,
    first: &TriMesh,
    tracked: &SurfaceSamples,
    cfg: &SamplingConfig,
    with_occupancy: bool,
    seed: u64,
) -> Result<FramePool> {
    let surface = sample_surface(mesh, cfg.pool_surface, rng::derive_seed(seed, 1))?;
    let (mut queries, mut occupancy, mut uniform) = (Vec::new(), Vec::new(), 0);
    if with_occupancy {
        let tester = InsideTester::new(mesh)?;
        queries = uniform_points(cfg.pool_uniform, [-cfg.bound; 3], [cfg.bound; 3], &mut rng::rng(rng::derive_seed(seed, 2)));
        uniform = queries.len();
        let near = surface.select(&(0..cfg.pool_near.min(surface.len())).collect::<Vec<_>>());
        let offsets = normal_offsets(near.len(), cfg.near_sigmas, rng::derive_seed(seed, 3))?;
        queries.extend(displace(&near.points, &near.normals, &offsets));
        occupancy = tester.query(&queries);
    }
    let points = transfer_samples(first, mesh, tracked)?;
    let tracked_normals = normals_on(mesh, tracked);
    Ok(FramePool { surface: surface.points, queries, occupancy, uniform, tracked: points, tracked_normals })
}

impl SequencePool {
    /// Pools for every frame; occupancy queries only when `with_occupancy`.
    pub fn build(seq: &Sequence, cfg: &SamplingConfig, with_occupancy: bool, seed: u64) -> Result<Self> {
        let first = &seq.meshes[0];
        let tracked = sample_surface(first, cfg.pool_surface, rng::derive_seed(seed, 100))?;
        let frames = seq
            .meshes
            .par_iter()
            .enumerate()
            .map(|(t, m)| build_frame(m, first, &tracked, cfg, with_occupancy, rng::derive_seed(seed, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { name: seq.name.clone(), frames })
    }

    pub fn pools(seqs: &[&Sequence], cfg: &SamplingConfig, with_occupancy: bool, seed: u64) -> Result<Vec<Self>> {
        seqs.iter()
            .map(|s| Self::build(s, cfg, with_occupancy, rng::derive_seed_str(seed, &s.name)))
            .collect()
    }
}

pub fn choose(r: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    sample(r, n, k.min(n)).into_vec()
}

/// One shape-autoencoder example: input cloud, queries, labels.
#[derive(Clone, Debug)]
pub struct ShapeExample {
    pub points: Vec<Vec3>,
    pub queries: Vec<Vec3>,
    pub occupancy: Vec<u8>,
}

pub fn shape_example(frame: &FramePool, cfg: &SamplingConfig, r: &mut Rng) -> ShapeExample {
    let points = choose(r, frame.surface.len(), cfg.surface_points).into_iter().map(|i| frame.surface[i]).collect();
    let near = frame.queries.len() - frame.uniform;
    let mut idx = choose(r, frame.uniform, cfg.uniform_queries);
    idx.extend(choose(r, near, cfg.near_queries).into_iter().map(|i| frame.uniform + i));
    ShapeExample {
        points,
        queries: idx.iter().map(|&i| frame.queries[i]).collect(),
        occupancy: idx.iter().map(|&i| frame.occupancy[i]).collect(),
    }
}

/// One deformation-autoencoder example from frame 1 to frame `t`.
#[derive(Clone, Debug)]
pub struct DeformExample {
    pub src: Vec<Vec3>,
    pub tgt: Vec<Vec3>,
    /// Surface queries followed by the same points offset along their
    /// normals, with matching targets.
    pub queries: Vec<Vec3>,
    pub targets: Vec<Vec3>,
}

pub fn deform_example(pool: &SequencePool, t: usize, cfg: &SamplingConfig, r: &mut Rng) -> Result<DeformExample> {
    let (a, b) = (&pool.frames[0], &pool.frames[t]);
    let idx = choose(r, a.tracked.len(), cfg.deform_points);
    let pick = |v: &[Vec3]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let (src, tgt) = (pick(&a.tracked), pick(&b.tracked));
    let offsets = normal_offsets(idx.len(), cfg.near_sigmas, r.next_u64())?;
    let mut queries = src.clone();
    queries.extend(displace(&src, &pick(&a.tracked_normals), &offsets));
    let mut targets = tgt.clone();
    targets.extend(displace(&tgt, &pick(&b.tracked_normals), &offsets));
    Ok(DeformExample { src, tgt, queries, targets })
}

/// Stages of the corruption pipeline, reported to an observer in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptionStage {
    Dense,
    Partial,
    Subsample,
    Noise,
}

/// Corrupted observation clouds, one per frame, each with `L` points.
pub type Observation = Vec<Vec<Vec3>>;

/// Dense per-frame samples (tracked across frames) → optional view filter
/// per frame → subsample to `L` → Gaussian noise. Without the view filter
/// the subsample indices are shared across frames, so rows correspond.
pub fn corrupt_sequence(
    meshes: &[TriMesh],
    cfg: &CorruptionConfig,
    seed: u64,
    mut observer: impl FnMut(CorruptionStage, usize, &[Vec3]),
) -> Result<Observation> {
    let first = &meshes[0];
    let dense = sample_surface(first, cfg.pool, rng::derive_seed(seed, 1))?;
    let mut r = rng::rng(rng::derive_seed(seed, 2));
    let shared = choose(&mut r, dense.len(), cfg.points);
    let mut out = Vec::with_capacity(meshes.len());
    for (t, mesh) in meshes.iter().enumerate() {
        let points = transfer_samples(first, mesh, &dense)?;
        observer(CorruptionStage::Dense, t, &points);
        let chosen: Vec<Vec3> = if cfg.partial {
            let frame = SurfaceSamples { points: points.clone(), normals: normals_on(mesh, &dense), ..dense.clone() };
            let visible = render_partial_view(mesh, &frame, cfg.view_dir);
            let seen: Vec<Vec3> = visible.iter().map(|&i| points[i]).collect();
            observer(CorruptionStage::Partial, t, &seen);
            if seen.len() < cfg.points {
                return Err(PipelineError::Validation(format!(
                    "frame {}: only {} of {} points visible, need {}",
                    t + 1,
                    seen.len(),
                    points.len(),
                    cfg.points
                )));
            }
            choose(&mut r, seen.len(), cfg.points).into_iter().map(|i| seen[i]).collect()
        } else {
            shared.iter().map(|&i| points[i]).collect()
        };
        observer(CorruptionStage::Subsample, t, &chosen);
        let noisy = add_observation_noise(&chosen, cfg.noise, rng::derive_seed(seed, 10 + t as u64))?;
        observer(CorruptionStage::Noise, t, &noisy);
        out.push(noisy);
    }
    Ok(out)
}
