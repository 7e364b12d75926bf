//! Single-view visibility of surface samples.

use super::mesh::TriMesh;
use super::sampling::SurfaceSamples;
use super::vec3::{self, Vec3};

pub const VIEW_RESOLUTION: usize = 256;

/// Horizontal direction (1, −1, 0) tilted 45° downward (z is up).
pub fn default_view_dir() -> Vec3 {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [h * h, -h * h, -h]
}

/// Indices of samples visible to an orthographic camera looking along
/// `view_dir`, by a depth buffer of `VIEW_RESOLUTION`² pixels.
///
/// A sample is kept when its own face owns its pixel, or its depth is within
/// two pixel widths (plus the owning face's depth change across 1.5 pixels)
/// of the buffer. Samples landing on empty pixels are kept.
pub fn render_partial_view(mesh: &TriMesh, samples: &SurfaceSamples, view_dir: Vec3) -> Vec<usize> {
    let d = vec3::normalize(view_dir);
    let (u, v) = vec3::orthonormal_basis(d);
    let proj = |p: Vec3| [vec3::dot(p, u), vec3::dot(p, v), vec3::dot(p, d)];
    let verts: Vec<[f64; 3]> = mesh.vertices.iter().map(|&p| proj(p)).collect();
    let sample_proj: Vec<[f64; 3]> = samples.points.iter().map(|&p| proj(p)).collect();
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in verts.iter().chain(&sample_proj) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let res = VIEW_RESOLUTION;
    let extent = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * (1.0 + 1e-6);
    let pixel = extent / res as f64;
    let to_px = |x: f64, k: usize| (x - lo[k]) / pixel;

    let mut depth = vec![f64::INFINITY; res * res];
    let mut owner = vec![u32::MAX; res * res];
    let mut slope = vec![0.0; mesh.faces.len()];
    for (f, face) in mesh.faces.iter().enumerate() {
        let t = face.map(|i| verts[i as usize]);
        let px = t.map(|c| [to_px(c[0], 0), to_px(c[1], 1), c[2]]);
        let area = (px[1][0] - px[0][0]) * (px[2][1] - px[0][1]) - (px[2][0] - px[0][0]) * (px[1][1] - px[0][1]);
        if area == 0.0 {
            continue;
        }
        let gx = ((px[1][2] - px[0][2]) * (px[2][1] - px[0][1]) - (px[2][2] - px[0][2]) * (px[1][1] - px[0][1])) / area;
        let gy = ((px[2][2] - px[0][2]) * (px[1][0] - px[0][0]) - (px[1][2] - px[0][2]) * (px[2][0] - px[0][0])) / area;
        slope[f] = gx.hypot(gy);
        let range = |k: usize| {
            let a = px.iter().map(|c| c[k]).fold(f64::INFINITY, f64::min);
            let b = px.iter().map(|c| c[k]).fold(f64::NEG_INFINITY, f64::max);
            ((a - 0.5).ceil().max(0.0) as usize, ((b - 0.5).floor().max(-1.0) + 1.0).min(res as f64) as usize)
        };
        let ((x0, x1), (y0, y1)) = (range(0), range(1));
        for y in y0..y1 {
            for x in x0..x1 {
                let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = ((px[1][0] - cx) * (px[2][1] - cy) - (px[2][0] - cx) * (px[1][1] - cy)) / area;
                let w1 = ((px[2][0] - cx) * (px[0][1] - cy) - (px[0][0] - cx) * (px[2][1] - cy)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * px[0][2] + w1 * px[1][2] + w2 * px[2][2];
                let cell = y * res + x;
                if z < depth[cell] {
                    depth[cell] = z;
                    owner[cell] = f as u32;
                }
            }
        }
    }
    (0..samples.len())
        .filter(|&i| {
            let p = sample_proj[i];
            let x = (to_px(p[0], 0) as usize).min(res - 1);
            let y = (to_px(p[1], 1) as usize).min(res - 1);
            let cell = y * res + x;
            let o = owner[cell];
            o == u32::MAX || o == samples.face_index[i] || p[2] <= depth[cell] + 2.0 * pixel + 1.5 * slope[o as usize]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{primitives, sampling::sample_surface};

    #[test]
    fn default_direction_is_unit_and_tilted() {
        let d = default_view_dir();
        assert!((vec3::norm(d) - 1.0).abs() < 1e-12);
        assert!((d[2] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn sphere_shows_half() {
        let m = primitives::icosphere(1.0, 3);
        let s = sample_surface(&m, 4000, 1).unwrap();
        let kept = render_partial_view(&m, &s, default_view_dir());
        let frac = kept.len() as f64 / 4000.0;
        assert!((frac - 0.5).abs() < 0.05, "{frac}");
    }

    #[test]
    fn opposite_views_overlap_only_at_silhouette() {
        let m = primitives::icosphere(1.0, 3);
        let s = sample_surface(&m, 4000, 2).unwrap();
        let d = default_view_dir();
        let a = render_partial_view(&m, &s, d);
        let b = render_partial_view(&m, &s, vec3::scale(d, -1.0));
        for i in a.iter().filter(|i| b.contains(i)) {
            let along = vec3::dot(s.normals[*i], d).abs();
            assert!(along < 0.25, "sample {i} seen from both sides, |n·d| = {along}");
        }
        assert!(a.len() + b.len() >= 4000);
    }

    #[test]
    fn facing_plane_fully_visible() {
        let m = TriMesh::new(
            vec![[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let s = sample_surface(&m, 500, 3).unwrap();
        assert_eq!(render_partial_view(&m, &s, [0.0, 0.0, -1.0]).len(), 500);
    }
}
