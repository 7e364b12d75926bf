use std::collections::HashMap;

use super::vec3::{self, Vec3};
use crate::error::{Error, Result};

/// Indexed triangle mesh.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

/// `p' = (p − center) · scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Self = Self { center: [0.0; 3], scale: 1.0 };

    pub fn apply(&self, p: Vec3) -> Vec3 {
        vec3::scale(vec3::sub(p, self.center), self.scale)
    }

    pub fn invert(&self, p: Vec3) -> Vec3 {
        vec3::add(vec3::scale(p, 1.0 / self.scale), self.center)
    }

    /// Transform mapping `bbox` to a box centered at the origin whose longest
    /// edge is 1.
    pub fn from_bbox(min: Vec3, max: Vec3) -> Result<Self> {
        let ext = vec3::sub(max, min);
        let longest = ext[0].max(ext[1]).max(ext[2]);
        if !(longest > 0.0) || !longest.is_finite() {
            return Err(Error::InvalidMesh("bounding box has zero extent".into()));
        }
        Ok(Self { center: vec3::scale(vec3::add(min, max), 0.5), scale: 1.0 / longest })
    }
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidMesh(format!("face {f:?} indexes past {n} vertices")));
        }
        Ok(Self { vertices, faces })
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    pub fn corners(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a as usize], self.vertices[b as usize], self.vertices[c as usize]]
    }

    /// Un-normalized face normal; its length is twice the face area.
    pub fn face_cross(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.corners(face);
        vec3::cross(vec3::sub(b, a), vec3::sub(c, a))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        0.5 * vec3::norm(self.face_cross(face))
    }

    pub fn face_normal(&self, face: usize) -> Vec3 {
        vec3::normalize(self.face_cross(face))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Signed enclosed volume; positive for outward-oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.corners(f);
                vec3::dot(a, vec3::cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn bbox(&self) -> Option<(Vec3, Vec3)> {
        bbox_of(&self.vertices)
    }

    /// Every undirected edge is shared by exactly two faces that traverse it
    /// in opposite directions.
    pub fn validate_watertight(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::InvalidMesh("mesh has no faces".into()));
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("degenerate face {f:?}")));
            }
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::InvalidMesh(format!("edge ({a},{b}) used {count} times in one direction")));
            }
            if !directed.contains_key(&(b, a)) {
                return Err(Error::InvalidMesh(format!("edge ({a},{b}) is on a boundary")));
            }
        }
        Ok(())
    }

    pub fn is_watertight(&self) -> bool {
        self.validate_watertight().is_ok()
    }

    pub fn same_topology(&self, other: &TriMesh) -> bool {
        self.vertices.len() == other.vertices.len() && self.faces == other.faces
    }

    pub fn map_vertices(&self, f: impl Fn(Vec3) -> Vec3) -> TriMesh {
        TriMesh { vertices: self.vertices.iter().map(|&p| f(p)).collect(), faces: self.faces.clone() }
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<TriMesh> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(TriMesh { vertices, faces: self.faces.clone() })
    }
}

pub fn bbox_of(points: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(mut lo, mut hi), p| {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
        (lo, hi)
    }))
}

/// Centers the bounding box at the origin and scales its longest edge to 1.
pub fn normalize_mesh(mesh: &TriMesh) -> Result<(TriMesh, Normalization)> {
    let (lo, hi) = mesh.bbox().ok_or_else(|| Error::InvalidMesh("mesh has no vertices".into()))?;
    let t = Normalization::from_bbox(lo, hi)?;
    Ok((mesh.map_vertices(|p| t.apply(p)), t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives;

    #[test]
    fn cube_normalizes_to_unit_box() {
        let cube = primitives::cuboid([2.0, 2.0, 2.0], [4.0, 4.0, 4.0], 2);
        let (n, t) = normalize_mesh(&cube).unwrap();
        let (lo, hi) = n.bbox().unwrap();
        for k in 0..3 {
            assert!((lo[k] + 0.5).abs() < 1e-12 && (hi[k] - 0.5).abs() < 1e-12);
        }
        for (p, q) in cube.vertices.iter().zip(&n.vertices) {
            let back = t.invert(*q);
            assert!(vec3::dist2(*p, back) < 1e-20);
        }
    }

    #[test]
    fn normalized_mesh_gets_identity_transform() {
        let cube = primitives::cuboid([-0.5; 3], [0.5; 3], 1);
        let (_, t) = normalize_mesh(&cube).unwrap();
        assert_eq!(t, Normalization::IDENTITY);
    }

    #[test]
    fn anisotropic_box_keeps_aspect() {
        let b = primitives::cuboid([0.0; 3], [2.0, 1.0, 1.0], 1);
        let (n, _) = normalize_mesh(&b).unwrap();
        let (lo, hi) = n.bbox().unwrap();
        let ext = vec3::sub(hi, lo);
        assert!((ext[0] - 1.0).abs() < 1e-12);
        assert!((ext[1] - 0.5).abs() < 1e-12 && (ext[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn flat_mesh_is_rejected() {
        let m = TriMesh::new(vec![[1.0; 3]; 3], vec![[0, 1, 2]]).unwrap();
        assert!(normalize_mesh(&m).is_err());
    }

    #[test]
    fn watertight_validation() {
        let s = primitives::icosphere(1.0, 2);
        s.validate_watertight().unwrap();
        assert!(s.signed_volume() > 0.0);
        let mut open = s.clone();
        open.faces.pop();
        assert!(open.validate_watertight().is_err());
        let mut flipped = s.clone();
        flipped.faces[0].swap(0, 1);
        assert!(flipped.validate_watertight().is_err());
        assert!(TriMesh::new(vec![[0.0; 3]], vec![[0, 1, 2]]).is_err());
    }
}
