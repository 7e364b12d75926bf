//! Inside/outside classification by ray parity.
//!
//! Each of three fixed, off-axis directions gets its own 2D bin
//! grid of projected triangles; a query counts the triangles hit by the ray
//! leaving it along that direction, and the three parities vote.

use rayon::prelude::*;

use super::mesh::TriMesh;
use super::vec3::{self, Vec3};
use crate::error::Result;

const DIRECTIONS: [Vec3; 3] = [
    [0.538_117, 0.834_077, 0.121_320],
    [-0.295_314, 0.182_479, -0.937_812],
    [0.736_015, -0.611_970, -0.289_519],
];

struct Projected {
    /// Per face: the three corners as (u, v, depth).
    tris: Vec<[[f64; 3]; 3]>,
    u: Vec3,
    v: Vec3,
    d: Vec3,
    lo: [f64; 2],
    inv_cell: [f64; 2],
    bins: usize,
    cell_start: Vec<u32>,
    cell_faces: Vec<u32>,
}

impl Projected {
    fn new(mesh: &TriMesh, d: Vec3) -> Self {
        let d = vec3::normalize(d);
        let (u, v) = vec3::orthonormal_basis(d);
        let tris: Vec<[[f64; 3]; 3]> = (0..mesh.faces.len())
            .map(|f| mesh.corners(f).map(|p| [vec3::dot(p, u), vec3::dot(p, v), vec3::dot(p, d)]))
            .collect();
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for t in &tris {
            for c in t {
                for k in 0..2 {
                    lo[k] = lo[k].min(c[k]);
                    hi[k] = hi[k].max(c[k]);
                }
            }
        }
        let bins = ((tris.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let inv_cell = [0, 1].map(|k| bins as f64 / (hi[k] - lo[k]).max(1e-12));
        let cell_of = |x: f64, k: usize| (((x - lo[k]) * inv_cell[k]).floor().max(0.0) as usize).min(bins - 1);
        let mut counts = vec![0u32; bins * bins + 1];
        let span = |t: &[[f64; 3]; 3], k: usize| {
            let a = t.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
            let b = t.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
            (cell_of(a, k), cell_of(b, k))
        };
        for t in &tris {
            let ((i0, i1), (j0, j1)) = (span(t, 0), span(t, 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    counts[j * bins + i + 1] += 1;
                }
            }
        }
        for c in 1..counts.len() {
            counts[c] += counts[c - 1];
        }
        let mut fill = counts.clone();
        let mut cell_faces = vec![0u32; *counts.last().unwrap() as usize];
        for (f, t) in tris.iter().enumerate() {
            let ((i0, i1), (j0, j1)) = (span(t, 0), span(t, 1));
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let slot = &mut fill[j * bins + i];
                    cell_faces[*slot as usize] = f as u32;
                    *slot += 1;
                }
            }
        }
        Projected { tris, u, v, d, lo, inv_cell, bins, cell_start: counts, cell_faces }
    }

    fn crossings(&self, q: Vec3) -> usize {
        let (qu, qv, qd) = (vec3::dot(q, self.u), vec3::dot(q, self.v), vec3::dot(q, self.d));
        let fi = (qu - self.lo[0]) * self.inv_cell[0];
        let fj = (qv - self.lo[1]) * self.inv_cell[1];
        if fi < 0.0 || fj < 0.0 || fi >= self.bins as f64 || fj >= self.bins as f64 {
            return 0;
        }
        let cell = fj as usize * self.bins + fi as usize;
        let mut hits = 0;
        for &f in &self.cell_faces[self.cell_start[cell] as usize..self.cell_start[cell + 1] as usize] {
            let [a, b, c] = self.tris[f as usize];
            let w0 = (b[0] - qu) * (c[1] - qv) - (c[0] - qu) * (b[1] - qv);
            let w1 = (c[0] - qu) * (a[1] - qv) - (a[0] - qu) * (c[1] - qv);
            let w2 = (a[0] - qu) * (b[1] - qv) - (b[0] - qu) * (a[1] - qv);
            let inside = (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0) || (w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0);
            let total = w0 + w1 + w2;
            if !inside || total == 0.0 {
                continue;
            }
            let depth = (w0 * a[2] + w1 * b[2] + w2 * c[2]) / total;
            if depth > qd {
                hits += 1;
            }
        }
        hits
    }
}

/// Reusable occupancy oracle for one watertight mesh.
pub struct InsideTester {
    views: Vec<Projected>,
}

impl InsideTester {
    pub fn new(mesh: &TriMesh) -> Result<Self> {
        mesh.validate_watertight()?;
        Ok(Self { views: DIRECTIONS.iter().map(|&d| Projected::new(mesh, d)).collect() })
    }

    pub fn contains(&self, q: Vec3) -> bool {
        let votes = self.views.iter().filter(|p| p.crossings(q) % 2 == 1).count();
        votes >= 2
    }

    /// Batched [`InsideTester::contains`]; results are in query order.
    pub fn query(&self, queries: &[Vec3]) -> Vec<u8> {
        queries.par_iter().with_min_len(256).map(|&q| self.contains(q) as u8).collect()
    }
}

pub fn occupancy_query(mesh: &TriMesh, queries: &[Vec3]) -> Result<Vec<u8>> {
    Ok(InsideTester::new(mesh)?.query(queries))
}
