//! Procedural deforming-shape sequences. Every frame of a sequence is the
//! same base mesh with moved vertices, so all frames share one topology.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use vecset4d::geometry::io::{obj_string, read_obj};
use vecset4d::geometry::{bbox_of, primitives, Normalization, TriMesh, Vec3};
use vecset4d::rng;

use crate::config::DataConfig;
use crate::error::{IoContext, PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    BreathingSphere,
    BendingCapsule,
    ArticulatedBox,
    TranslatingEllipsoid,
}

impl Family {
    pub const ALL: [Family; 4] =
        [Family::BreathingSphere, Family::BendingCapsule, Family::ArticulatedBox, Family::TranslatingEllipsoid];

    pub fn slug(self) -> &'static str {
        match self {
            Family::BreathingSphere => "breathing-sphere",
            Family::BendingCapsule => "bending-capsule",
            Family::ArticulatedBox => "articulated-box",
            Family::TranslatingEllipsoid => "translating-ellipsoid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Val,
    UnseenMotion,
    UnseenIdentity,
}

impl Split {
    pub fn slug(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::UnseenMotion => "unseen-motion",
            Split::UnseenIdentity => "unseen-identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [Split::Train, Split::Val, Split::UnseenMotion, Split::UnseenIdentity]
            .into_iter()
            .find(|x| x.slug() == s)
            .ok_or_else(|| PipelineError::Validation(format!("unknown split {s:?}")))
    }
}

/// Motion `s(u) = amplitude · sin(2π·frequency·u + phase)` for `u ∈ [0, 1]`
/// across the sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl Motion {
    pub fn at(&self, u: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * u + self.phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub name: String,
    pub family: Family,
    pub frames: usize,
    /// Family-specific sizes: ellipsoid radii, capsule (radius, half length,
    /// unused), or box half extents.
    pub identity: Vec3,
    pub motion: Motion,
    pub detail: usize,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(PipelineError::Validation(format!("{}: sequences need at least 2 frames", self.name)));
        }
        let sizes_ok = match self.family {
            Family::BendingCapsule => self.identity[0] > 0.0 && self.identity[1] > 0.0,
            _ => self.identity.iter().all(|&v| v > 0.0),
        };
        if !sizes_ok || !self.motion.amplitude.is_finite() {
            return Err(PipelineError::Validation(format!("{}: invalid identity or motion parameters", self.name)));
        }
        Ok(())
    }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn base_mesh(spec: &SequenceSpec) -> TriMesh {
    let [a, b, c] = spec.identity;
    let d = spec.detail;
    match spec.family {
        Family::BreathingSphere | Family::TranslatingEllipsoid => primitives::ellipsoid([a, b, c], d),
        Family::ArticulatedBox => primitives::cuboid([-a, -b, -c], [a, b, c], 2 + 2 * d),
        Family::BendingCapsule => {
            let (r, h) = (a, b);
            let caps = 2 + d;
            let body = 4 * (d + 1);
            let mut profile = Vec::new();
            for i in 1..=caps {
                let t = PI / 2.0 * i as f64 / caps as f64;
                profile.push((r * t.sin(), -h - r * t.cos()));
            }
            for i in 1..body {
                profile.push((r, -h + 2.0 * h * i as f64 / body as f64));
            }
            for i in 0..caps {
                let t = PI / 2.0 * i as f64 / caps as f64;
                profile.push((r * t.cos(), h + r * t.sin()));
            }
            primitives::lathe(&profile, -h - r, h + r, 8 * (d + 1))
        }
    }
}

fn deform(spec: &SequenceSpec, p: Vec3, s: f64) -> Vec3 {
    match spec.family {
        Family::BreathingSphere => {
            // Radial breathing with a counter-phase squash along z.
            let k = 1.0 + s;
            [p[0] * k, p[1] * k, p[2] / k.sqrt()]
        }
        Family::BendingCapsule => {
            // Bend about the y axis; `s` is the total bend angle.
            let h = spec.identity[1] + spec.identity[0];
            let kappa = s / h;
            if kappa.abs() < 1e-12 {
                return p;
            }
            let radius = 1.0 / kappa;
            let theta = kappa * p[2];
            [radius - (radius - p[0]) * theta.cos(), p[1], (radius - p[0]) * theta.sin()]
        }
        Family::ArticulatedBox => {
            // Upper half hinges about the y axis with a smooth blend band.
            let band = spec.identity[2] / 3.0;
            let theta = s * smoothstep((p[2] + band) / (2.0 * band));
            let (c, sn) = (theta.cos(), theta.sin());
            [c * p[0] + sn * p[2], p[1], -sn * p[0] + c * p[2]]
        }
        Family::TranslatingEllipsoid => {
            let (c, sn) = ((0.5 * s).cos(), (0.5 * s).sin());
            [c * p[0] - sn * p[1] + 0.6 * s, sn * p[0] + c * p[1] + 0.2 * s * s, p[2]]
        }
    }
}

/// Frames of `spec`, normalized jointly: the union bounding box of all
/// frames is centered and its longest edge scaled to 1.
pub fn generate_sequence(spec: &SequenceSpec) -> Result<Vec<TriMesh>> {
    spec.validate()?;
    let base = base_mesh(spec);
    let frames: Vec<TriMesh> = (0..spec.frames)
        .map(|t| {
            let s = spec.motion.at(t as f64 / (spec.frames - 1) as f64);
            base.map_vertices(|p| deform(spec, p, s))
        })
        .collect();
    let all: Vec<Vec3> = frames.iter().flat_map(|m| m.vertices.iter().copied()).collect();
    let (lo, hi) = bbox_of(&all).ok_or_else(|| PipelineError::Validation("empty base mesh".into()))?;
    let norm = Normalization::from_bbox(lo, hi)?;
    Ok(frames.into_iter().map(|m| m.map_vertices(|p| norm.apply(p))).collect())
}

fn identity_for(family: Family, r: &mut rng::Rng) -> Vec3 {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * r.gen::<f64>();
    match family {
        Family::BreathingSphere => {
            let base = u(0.3, 0.45);
            [base, base * u(0.8, 1.0), base * u(0.75, 1.0)]
        }
        Family::BendingCapsule => [u(0.1, 0.18), u(0.25, 0.4), 0.0],
        Family::ArticulatedBox => [u(0.1, 0.2), u(0.1, 0.2), u(0.3, 0.45)],
        Family::TranslatingEllipsoid => [u(0.2, 0.35), u(0.12, 0.2), u(0.12, 0.25)],
    }
}

fn motion_for(family: Family, r: &mut rng::Rng) -> Motion {
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * r.gen::<f64>();
    let amplitude = match family {
        Family::BreathingSphere => u(0.15, 0.3),
        Family::BendingCapsule => u(0.6, 1.2),
        Family::ArticulatedBox => u(0.4, 0.8),
        Family::TranslatingEllipsoid => u(0.3, 0.6),
    };
    Motion { amplitude, frequency: u(0.4, 0.6), phase: u(0.0, 0.25 * PI) }
}

/// Sequence specs for every family and split. Unseen-motion sequences reuse
/// training identities with fresh motion; unseen-identity sequences reuse
/// training motions on fresh identities.
pub fn dataset_specs(cfg: &DataConfig, seed: u64) -> Vec<(Split, SequenceSpec)> {
    let mut out = Vec::new();
    for &family in &cfg.families {
        let stream = |split: Split, i: usize| {
            rng::rng(rng::derive_seed_str(seed, &format!("{}/{}/{i}", family.slug(), split.slug())))
        };
        let make = |split: Split, i: usize, identity: Vec3, motion: Motion| SequenceSpec {
            name: format!("{}-{}-{i:02}", family.slug(), split.slug()),
            family,
            frames: cfg.frames,
            identity,
            motion,
            detail: cfg.detail,
        };
        let train: Vec<(Vec3, Motion)> = (0..cfg.train_per_family)
            .map(|i| {
                let mut r = stream(Split::Train, i);
                (identity_for(family, &mut r), motion_for(family, &mut r))
            })
            .collect();
        for (i, &(id, mo)) in train.iter().enumerate() {
            out.push((Split::Train, make(Split::Train, i, id, mo)));
        }
        for i in 0..cfg.val_per_family {
            let mut r = stream(Split::Val, i);
            let id = identity_for(family, &mut r);
            out.push((Split::Val, make(Split::Val, i, id, motion_for(family, &mut r))));
        }
        for i in 0..cfg.test_per_family {
            let mut r = stream(Split::UnseenMotion, i);
            out.push((Split::UnseenMotion, make(Split::UnseenMotion, i, train[i % train.len()].0, motion_for(family, &mut r))));
            let mut r = stream(Split::UnseenIdentity, i);
            out.push((Split::UnseenIdentity, make(Split::UnseenIdentity, i, identity_for(family, &mut r), train[i % train.len()].1)));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: Split,
    pub spec: SequenceSpec,
    /// OBJ paths relative to the dataset directory, one per frame.
    pub frames: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub sequences: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

fn frame_file(name: &str, t: usize) -> String {
    format!("{name}/frame_{:03}.obj", t + 1)
}

/// Writes every sequence as per-frame OBJ files plus `manifest.json`.
pub fn synth_dataset(specs: &[(Split, SequenceSpec)], seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    let generated: Vec<Vec<TriMesh>> = specs.iter().map(|(_, s)| generate_sequence(s)).collect::<Result<_>>()?;
    let mut sequences = Vec::with_capacity(specs.len());
    for ((split, spec), meshes) in specs.iter().zip(&generated) {
        let dir = out_dir.join(&spec.name);
        std::fs::create_dir_all(&dir).at(&dir)?;
        let mut files = Vec::with_capacity(meshes.len());
        for (t, m) in meshes.iter().enumerate() {
            let rel = frame_file(&spec.name, t);
            let path = out_dir.join(&rel);
            std::fs::write(&path, obj_string(m)).at(&path)?;
            files.push(rel);
        }
        sequences.push(ManifestEntry { split: *split, spec: spec.clone(), frames: files });
    }
    let manifest = DatasetManifest { seed, sequences };
    let path = out_dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes")).at(&path)?;
    Ok(manifest)
}

/// A loaded sequence.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub name: String,
    pub split: Split,
    pub family: Family,
    pub meshes: Vec<TriMesh>,
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(PipelineError::Missing { what: "dataset manifest", path });
    }
    let text = std::fs::read_to_string(&path).at(&path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_dataset(dir: &Path) -> Result<Vec<Sequence>> {
    let manifest = load_manifest(dir)?;
    manifest
        .sequences
        .iter()
        .map(|e| {
            let meshes = e.frames.iter().map(|f| read_obj(dir.join(f))).collect::<vecset4d::Result<Vec<_>>>()?;
            if meshes.len() < 2 || meshes.iter().any(|m| !m.same_topology(&meshes[0])) {
                return Err(PipelineError::Validation(format!("{}: frames must share one topology", e.spec.name)));
            }
            Ok(Sequence { name: e.spec.name.clone(), split: e.split, family: e.spec.family, meshes })
        })
        .collect()
}

pub fn dataset_dir(out: &Path, override_dir: Option<&PathBuf>) -> PathBuf {
    override_dir.cloned().unwrap_or_else(|| out.join("data"))
}
