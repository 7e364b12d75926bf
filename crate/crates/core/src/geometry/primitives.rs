//! Closed, outward-oriented triangle meshes for synthetic data and tests.

use std::collections::HashMap;

use super::mesh::TriMesh;
use super::vec3::{self, Vec3};

fn orient_outward(mut mesh: TriMesh) -> TriMesh {
    if mesh.signed_volume() < 0.0 {
        for f in &mut mesh.faces {
            f.swap(1, 2);
        }
    }
    mesh
}

/// Subdivided icosahedron projected onto a sphere of `radius`.
pub fn icosphere(radius: f64, subdivisions: usize) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|&p| vec3::normalize(p))
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vs: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = vec3::normalize(vec3::add(vs[a as usize], vs[b as usize]));
                vs.push(p);
                (vs.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = vertices.into_iter().map(|p| vec3::scale(p, radius)).collect();
    orient_outward(TriMesh { vertices, faces })
}

/// Icosphere scaled per axis.
pub fn ellipsoid(radii: Vec3, subdivisions: usize) -> TriMesh {
    icosphere(1.0, subdivisions).map_vertices(|p| [p[0] * radii[0], p[1] * radii[1], p[2] * radii[2]])
}

/// Axis-aligned box with each face split into `divisions`² quads.
pub fn cuboid(min: Vec3, max: Vec3, divisions: usize) -> TriMesh {
    let n = divisions.max(1);
    let mut index: HashMap<[usize; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vid = |g: [usize; 3], vs: &mut Vec<Vec3>| -> u32 {
        *index.entry(g).or_insert_with(|| {
            let p = std::array::from_fn(|k| min[k] + (max[k] - min[k]) * g[k] as f64 / n as f64);
            vs.push(p);
            (vs.len() - 1) as u32
        })
    };
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut g = [0; 3];
                        g[axis] = side;
                        g[u] = i + di;
                        g[v] = j + dj;
                        g
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
                    let q: Vec<u32> = q.iter().map(|&g| vid(g, &mut vertices)).collect();
                    if side == n {
                        faces.push([q[0], q[1], q[2]]);
                        faces.push([q[0], q[2], q[3]]);
                    } else {
                        faces.push([q[0], q[2], q[1]]);
                        faces.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    TriMesh { vertices, faces }
}

/// Surface of revolution about the z axis. `profile` lists interior
/// `(radius, z)` rings from bottom to top; poles are added at `z_bottom` and
/// `z_top`.
pub fn lathe(profile: &[(f64, f64)], z_bottom: f64, z_top: f64, segments: usize) -> TriMesh {
    let s = segments.max(3);
    let mut vertices = vec![[0.0, 0.0, z_bottom]];
    for &(r, z) in profile {
        for k in 0..s {
            let a = std::f64::consts::TAU * k as f64 / s as f64;
            vertices.push([r * a.cos(), r * a.sin(), z]);
        }
    }
    let top = vertices.len() as u32;
    vertices.push([0.0, 0.0, z_top]);
    let ring = |i: usize, k: usize| (1 + i * s + k % s) as u32;
    let mut faces = Vec::new();
    for k in 0..s {
        faces.push([0, ring(0, k + 1), ring(0, k)]);
    }
    for i in 0..profile.len().saturating_sub(1) {
        for k in 0..s {
            let (a, b, c, d) = (ring(i, k), ring(i, k + 1), ring(i + 1, k + 1), ring(i + 1, k));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    let last = profile.len() - 1;
    for k in 0..s {
        faces.push([top, ring(last, k), ring(last, k + 1)]);
    }
    orient_outward(TriMesh { vertices, faces })
}

/// Capsule along z: a cylinder of `half_length` capped by hemispheres.
pub fn capsule(radius: f64, half_length: f64, rings_per_cap: usize, segments: usize) -> TriMesh {
    let r = rings_per_cap.max(1);
    let mut profile = Vec::new();
    for i in 1..=r {
        let a = std::f64::consts::FRAC_PI_2 * i as f64 / r as f64;
        profile.push((radius * a.sin(), -half_length - radius * a.cos()));
    }
    for i in 0..r {
        let a = std::f64::consts::FRAC_PI_2 * i as f64 / r as f64;
        profile.push((radius * a.cos(), half_length + radius * a.sin()));
    }
    lathe(&profile, -half_length - radius, half_length + radius, segments)
}
