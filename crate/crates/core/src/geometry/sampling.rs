use rand::Rng as _;

use super::mesh::TriMesh;
use super::occupancy::InsideTester;
use super::vec3::{self, Vec3};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Points drawn on a mesh surface, with enough provenance to replay the same
/// draw on any mesh sharing the face topology.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub face_index: Vec<u32>,
    pub barycentric: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> SurfaceSamples {
        SurfaceSamples {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            face_index: idx.iter().map(|&i| self.face_index[i]).collect(),
            barycentric: idx.iter().map(|&i| self.barycentric[i]).collect(),
            normals: idx.iter().map(|&i| self.normals[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyBatch {
    pub queries: Vec<Vec3>,
    pub occupancy: Vec<u8>,
}

impl OccupancyBatch {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn extend(&mut self, other: OccupancyBatch) {
        self.queries.extend(other.queries);
        self.occupancy.extend(other.occupancy);
    }
}

fn interpolate(corners: [Vec3; 3], b: Vec3) -> Vec3 {
    std::array::from_fn(|k| b[0] * corners[0][k] + b[1] * corners[1][k] + b[2] * corners[2][k])
}

/// Area-weighted face choice, uniform barycentric coordinates.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<SurfaceSamples> {
    if mesh.faces.is_empty() {
        return Err(Error::InvalidMesh("cannot sample an empty mesh".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += mesh.face_area(f);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::InvalidMesh("mesh has zero surface area".into()));
    }
    let mut r = rng::rng(seed);
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(n),
        face_index: Vec::with_capacity(n),
        barycentric: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x = r.gen::<f64>() * acc;
        let f = cdf.partition_point(|&c| c <= x).min(cdf.len() - 1);
        let (mut u, mut v) = (r.gen::<f64>(), r.gen::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let b = [1.0 - u - v, u, v];
        out.points.push(interpolate(mesh.corners(f), b));
        out.face_index.push(f as u32);
        out.barycentric.push(b);
        out.normals.push(mesh.face_normal(f));
    }
    Ok(out)
}

/// Replays `samples` (drawn on `source`) on `target`, which must share the
/// face topology. Row `i` of the result corresponds to sample `i`.
pub fn transfer_samples(source: &TriMesh, target: &TriMesh, samples: &SurfaceSamples) -> Result<Vec<Vec3>> {
    if !source.same_topology(target) {
        return Err(Error::InvalidMesh("transfer_samples: meshes do not share face topology".into()));
    }
    Ok(samples
        .face_index
        .iter()
        .zip(&samples.barycentric)
        .map(|(&f, &b)| interpolate(target.corners(f as usize), b))
        .collect())
}

/// Face normals of `mesh` at the face of every sample.
pub fn normals_on(mesh: &TriMesh, samples: &SurfaceSamples) -> Vec<Vec3> {
    samples.face_index.iter().map(|&f| mesh.face_normal(f as usize)).collect()
}

/// Signed normal offsets δ ~ N(0, σ²); even rows use `sigmas[0]`, odd rows
/// `sigmas[1]`.
pub fn normal_offsets(n: usize, sigmas: [f64; 2], seed: u64) -> Result<Vec<f64>> {
    if !(sigmas[0] > 0.0 && sigmas[1] > 0.0) {
        return Err(Error::InvalidArgument(format!("near-surface sigmas must be positive, got {sigmas:?}")));
    }
    let mut r = rng::rng(seed);
    Ok((0..n).map(|i| sigmas[i % 2] * rng::normal(&mut r)).collect())
}

pub fn displace(points: &[Vec3], normals: &[Vec3], offsets: &[f64]) -> Vec<Vec3> {
    points
        .iter()
        .zip(normals)
        .zip(offsets)
        .map(|((&p, &n), &d)| vec3::add(p, vec3::scale(n, d)))
        .collect()
}

/// Surface points pushed along their normals at two noise levels, labelled
/// by an occupancy query against `mesh`.
pub fn near_surface_points(
    mesh: &TriMesh,
    samples: &SurfaceSamples,
    sigmas: [f64; 2],
    seed: u64,
) -> Result<OccupancyBatch> {
    let offsets = normal_offsets(samples.len(), sigmas, seed)?;
    let queries = displace(&samples.points, &samples.normals, &offsets);
    let occupancy = InsideTester::new(mesh)?.query(&queries);
    Ok(OccupancyBatch { queries, occupancy })
}

pub fn uniform_points(n: usize, lo: Vec3, hi: Vec3, rng: &mut Rng) -> Vec<Vec3> {
    (0..n).map(|_| std::array::from_fn(|k| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>())).collect()
}

/// I.i.d. N(0, σ²) per coordinate.
pub fn add_observation_noise(points: &[Vec3], sigma: f64, seed: u64) -> Result<Vec<Vec3>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise sigma must be non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(points.to_vec());
    }
    let mut r = rng::rng(seed);
    Ok(points.iter().map(|p| p.map(|x| x + sigma * rng::normal(&mut r))).collect())
}
