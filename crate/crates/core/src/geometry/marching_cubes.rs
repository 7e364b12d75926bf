//! Isosurface extraction over a regular scalar grid.
//!
//! The 256-entry case table is built at first use by tracing the contour on
//! each cube face and joining the face segments into loops. On faces with
//! two diagonal inside corners the segments always cut those corners off,
//! so neighbouring cubes agree on every shared face and the output is closed
//! wherever the grid boundary is outside.

use std::sync::OnceLock;

use super::io::GridManifest;
use super::mesh::TriMesh;
use super::vec3::Vec3;
use crate::error::{Error, Result};

/// Scalar samples at `origin + cell_size · (i, j, k)`, `i` fastest. Values
/// greater than the iso level count as inside.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub resolution: usize,
    pub origin: Vec3,
    pub cell_size: f64,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(resolution: usize, origin: Vec3, cell_size: f64, values: Vec<f64>) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::InvalidArgument(format!("grid resolution must be >= 2, got {resolution}")));
        }
        if !(cell_size > 0.0) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {cell_size}")));
        }
        if values.len() != resolution.pow(3) {
            return Err(Error::InvalidArgument(format!(
                "grid of resolution {resolution} needs {} values, got {}",
                resolution.pow(3),
                values.len()
            )));
        }
        Ok(Self { resolution, origin, cell_size, values })
    }

    /// Grid nodes spanning `[lo, hi]³` in order matching `values`.
    pub fn nodes(resolution: usize, lo: f64, hi: f64) -> (Vec3, f64, Vec<Vec3>) {
        let cell = (hi - lo) / (resolution - 1) as f64;
        let mut pts = Vec::with_capacity(resolution.pow(3));
        for k in 0..resolution {
            for j in 0..resolution {
                for i in 0..resolution {
                    pts.push([lo + cell * i as f64, lo + cell * j as f64, lo + cell * k as f64]);
                }
            }
        }
        ([lo; 3], cell, pts)
    }

    pub fn manifest(&self, iso: f64) -> GridManifest {
        GridManifest { resolution: self.resolution, origin: self.origin, cell_size: self.cell_size, iso }
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[i + self.resolution * (j + self.resolution * k)]
    }

    fn node(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + self.cell_size * i as f64,
            self.origin[1] + self.cell_size * j as f64,
            self.origin[2] + self.cell_size * k as f64,
        ]
    }
}

/// Corner `c` of the unit cube sits at `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// Triangle corner codes at or above this refer to the centroid of a loop
/// (`code - CENTROID` numbers the loop within the cube).
const CENTROID: u8 = 12;

/// Cube faces touching edge `e`, as `(axis, side)` pairs.
fn faces_of(edge: (usize, usize)) -> [(usize, usize); 2] {
    let axis = (edge.0 ^ edge.1).trailing_zeros() as usize;
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    [(u, (edge.0 >> u) & 1), (v, (edge.0 >> v) & 1)]
}

/// Fans the loop from a vertex whose diagonals all cross the cube interior.
/// A diagonal lying in a cube face could be duplicated by the neighbouring
/// cube; when every start has one, fans from a fresh centroid vertex.
fn triangulate(cycle: &[u8], edges: &[(usize, usize); 12], loop_index: u8) -> Vec<[u8; 3]> {
    let n = cycle.len();
    if n == 3 {
        return vec![[cycle[0], cycle[1], cycle[2]]];
    }
    let shares_face = |a: u8, b: u8| {
        let (fa, fb) = (faces_of(edges[a as usize]), faces_of(edges[b as usize]));
        fa.iter().any(|f| fb.contains(f))
    };
    for s in 0..n {
        let v0 = cycle[s];
        if (2..n - 1).all(|i| !shares_face(v0, cycle[(s + i) % n])) {
            return (1..n - 1).map(|i| [v0, cycle[(s + i) % n], cycle[(s + i + 1) % n]]).collect();
        }
    }
    let c = CENTROID + loop_index;
    (0..n).map(|i| [c, cycle[i], cycle[(i + 1) % n]]).collect()
}

struct Tables {
    /// Edge `e` joins corners `edges[e].0 → edges[e].1`, which differ in one bit.
    edges: [(usize, usize); 12],
    /// Triangles as cube-edge triples, per inside-corner mask.
    cases: Vec<Vec<[u8; 3]>>,
}

fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(build_tables)
}

fn build_tables() -> Tables {
    let mut edges = [(0, 0); 12];
    let mut n = 0;
    for a in 0..8usize {
        for bit in 0..3 {
            if a & (1 << bit) == 0 {
                edges[n] = (a, a | (1 << bit));
                n += 1;
            }
        }
    }
    let edge_of = |a: usize, b: usize| edges.iter().position(|&(x, y)| (x, y) == (a.min(b), a.max(b))).unwrap();

    // Faces with corners counter-clockwise seen from outside the cube.
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let mut ring: Vec<usize> = [(0, 0), (1, 0), (1, 1), (0, 1)]
                .iter()
                .map(|&(du, dv)| (side << axis) | (du << u) | (dv << v))
                .collect();
            if side == 0 {
                ring.reverse();
            }
            faces.push(ring);
        }
    }

    let mut cases = Vec::with_capacity(256);
    for mask in 0..256usize {
        let inside = |c: usize| mask & (1 << c) != 0;
        let mut next = [usize::MAX; 12];
        for ring in &faces {
            for k in 0..4 {
                let (a, b) = (ring[k], ring[(k + 1) % 4]);
                if inside(a) || !inside(b) {
                    continue;
                }
                // Entering an inside run at edge (a, b); leave it at the first
                // inside → outside transition.
                let mut j = (k + 1) % 4;
                while inside(ring[(j + 1) % 4]) {
                    j = (j + 1) % 4;
                }
                next[edge_of(a, b)] = edge_of(ring[j], ring[(j + 1) % 4]);
            }
        }
        let mut seen = [false; 12];
        let mut tris = Vec::new();
        let mut centroids = 0;
        for s in 0..12 {
            if next[s] == usize::MAX || seen[s] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut e = s;
            while !seen[e] {
                seen[e] = true;
                cycle.push(e as u8);
                e = next[e];
            }
            tris.extend(triangulate(&cycle, &edges, centroids));
            if cycle.len() > 3 && tris.iter().any(|t| t.contains(&(CENTROID + centroids))) {
                centroids += 1;
            }
        }
        cases.push(tris);
    }
    Tables { edges, cases }
}

struct Welder<'a> {
    grid: &'a Grid,
    iso: f64,
    vertex_of: Vec<u32>,
    vertices: Vec<Vec3>,
}

impl Welder<'_> {
    /// Shared vertex on cube edge `e` of the cell at `cell`.
    fn edge_vertex(&mut self, cell: [usize; 3], edge: (usize, usize)) -> u32 {
        let r = self.grid.resolution;
        let (oa, ob) = (corner_offset(edge.0), corner_offset(edge.1));
        let na: [usize; 3] = std::array::from_fn(|d| cell[d] + oa[d]);
        let nb: [usize; 3] = std::array::from_fn(|d| cell[d] + ob[d]);
        let axis = (edge.0 ^ edge.1).trailing_zeros() as usize;
        let key = 3 * (na[0] + r * (na[1] + r * na[2])) + axis;
        if self.vertex_of[key] == u32::MAX {
            let (va, vb) = (self.grid.at(na[0], na[1], na[2]), self.grid.at(nb[0], nb[1], nb[2]));
            let s = ((self.iso - va) / (vb - va)).clamp(0.0, 1.0);
            let (pa, pb) = (self.grid.node(na[0], na[1], na[2]), self.grid.node(nb[0], nb[1], nb[2]));
            self.vertices.push(std::array::from_fn(|d| pa[d] + s * (pb[d] - pa[d])));
            self.vertex_of[key] = (self.vertices.len() - 1) as u32;
        }
        self.vertex_of[key]
    }
}

/// Extracts the `iso` level set as a welded triangle mesh. A constant-sign
/// grid yields an empty mesh.
pub fn marching_cubes(grid: &Grid, iso: f64) -> TriMesh {
    let t = tables();
    let r = grid.resolution;
    let mut w = Welder { grid, iso, vertex_of: vec![u32::MAX; 3 * r * r * r], vertices: Vec::new() };
    let mut faces = Vec::new();
    for k in 0..r - 1 {
        for j in 0..r - 1 {
            for i in 0..r - 1 {
                let mut mask = 0;
                for c in 0..8 {
                    let o = corner_offset(c);
                    if grid.at(i + o[0], j + o[1], k + o[2]) > iso {
                        mask |= 1 << c;
                    }
                }
                let case = &t.cases[mask];
                let mut centers: [Option<u32>; 4] = [None; 4];
                for tri in case {
                    let mut f = [0u32; 3];
                    for (slot, &code) in f.iter_mut().zip(tri) {
                        if code < CENTROID {
                            *slot = w.edge_vertex([i, j, k], t.edges[code as usize]);
                            continue;
                        }
                        let l = (code - CENTROID) as usize;
                        *slot = match centers[l] {
                            Some(id) => id,
                            None => {
                                let ring: Vec<u8> = case.iter().filter(|t| t[0] == code).map(|t| t[1]).collect();
                                let mut c = [0.0; 3];
                                for &e in &ring {
                                    let id = w.edge_vertex([i, j, k], t.edges[e as usize]);
                                    let p = w.vertices[id as usize];
                                    for d in 0..3 {
                                        c[d] += p[d] / ring.len() as f64;
                                    }
                                }
                                w.vertices.push(c);
                                let id = (w.vertices.len() - 1) as u32;
                                centers[l] = Some(id);
                                id
                            }
                        };
                    }
                    faces.push(f);
                }
            }
        }
    }
    TriMesh { vertices: w.vertices, faces }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vec3;

    fn field(r: usize, lo: f64, hi: f64, f: impl Fn(Vec3) -> f64) -> Grid {
        let (origin, cell, pts) = Grid::nodes(r, lo, hi);
        Grid::new(r, origin, cell, pts.into_iter().map(f).collect()).unwrap()
    }

    #[test]
    fn every_case_closes_its_loops() {
        let t = tables();
        assert_eq!(t.cases[0].len(), 0);
        assert_eq!(t.cases[255].len(), 0);
        for (mask, case) in t.cases.iter().enumerate() {
            let crossing = t.edges.iter().filter(|&&(a, b)| ((mask >> a) ^ (mask >> b)) & 1 == 1).count();
            let used: std::collections::BTreeSet<u8> = case.iter().flatten().copied().collect();
            assert_eq!(used.len(), crossing, "case {mask}");
        }
    }

    #[test]
    fn single_corner_faces_away_from_inside() {
        let mut v = vec![0.0; 8];
        v[0] = 1.0;
        let g = Grid::new(2, [0.0; 3], 1.0, v).unwrap();
        let m = marching_cubes(&g, 0.5);
        assert_eq!(m.faces.len(), 1);
        assert!(vec3::dot(m.face_cross(0), [1.0, 1.0, 1.0]) > 0.0);
    }

    #[test]
    fn sphere_radius_and_closure() {
        let g = field(64, -1.2, 1.2, |p| (vec3::norm(p) < 1.0) as u8 as f64);
        let m = marching_cubes(&g, 0.5);
        for p in &m.vertices {
            assert!((vec3::norm(*p) - 1.0).abs() < 1.5 * g.cell_size);
        }
        m.validate_watertight().unwrap();
        assert!(m.signed_volume() > 0.0);
    }

    #[test]
    fn random_fields_are_closed() {
        let mut r = crate::rng::rng(5);
        for _ in 0..20 {
            let mut g = field(9, 0.0, 1.0, |_| 0.0);
            let n = g.resolution;
            for k in 1..n - 1 {
                for j in 1..n - 1 {
                    for i in 1..n - 1 {
                        g.values[i + n * (j + n * k)] = rand::Rng::gen::<f64>(&mut r);
                    }
                }
            }
            let m = marching_cubes(&g, 0.5);
            if !m.is_empty() {
                m.validate_watertight().unwrap();
            }
        }
    }

    #[test]
    fn empty_and_planar() {
        let g = field(8, -1.0, 1.0, |_| 0.0);
        assert!(marching_cubes(&g, 0.5).is_empty());
        let n = vec3::normalize([0.3, -0.5, 0.8]);
        let g = field(24, -1.0, 1.0, |p| 0.1 - vec3::dot(p, n));
        let m = marching_cubes(&g, 0.0);
        assert!(!m.is_empty());
        for p in &m.vertices {
            assert!((vec3::dot(*p, n) - 0.1).abs() < g.cell_size);
        }
        for f in 0..m.faces.len() {
            if m.face_area(f) > 1e-12 {
                assert!(vec3::dot(m.face_normal(f), n) > 0.0);
            }
        }
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(Grid::new(1, [0.0; 3], 1.0, vec![0.0]).is_err());
        assert!(Grid::new(2, [0.0; 3], 1.0, vec![0.0; 7]).is_err());
    }
}
