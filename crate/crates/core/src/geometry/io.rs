//! OBJ (positions and triangles), binary PLY, and grid sidecar manifests.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mesh::TriMesh;
use crate::error::{Error, Result};

pub fn obj_string(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.faces.len() * 20);
    for p in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", p[0], p[1], p[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriMesh) -> Result<()> {
    std::fs::write(path, obj_string(mesh))?;
    Ok(())
}

/// Parses `v` and `f` records. Face corners may carry `/vt/vn` suffixes and
/// negative (relative) indices; polygons other than triangles are rejected.
pub fn parse_obj(reader: impl Read) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let bad = |what: &str| Error::Format(format!("obj line {}: {what}", lineno + 1));
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for x in &mut p {
                    *x = it.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad vertex"))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let corners: Vec<&str> = it.collect();
                if corners.len() != 3 {
                    return Err(bad("only triangles are supported"));
                }
                let mut f = [0u32; 3];
                for (slot, c) in f.iter_mut().zip(&corners) {
                    let raw: i64 = c.split('/').next().and_then(|t| t.parse().ok()).ok_or_else(|| bad("bad index"))?;
                    let idx = if raw < 0 { vertices.len() as i64 + raw } else { raw - 1 };
                    if idx < 0 {
                        return Err(bad("index out of range"));
                    }
                    *slot = idx as u32;
                }
                faces.push(f);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
    parse_obj(std::fs::File::open(path)?)
}

/// Binary little-endian PLY with `float` positions and optional `uchar`
/// per-vertex colors.
pub fn ply_bytes(mesh: &TriMesh, colors: Option<&[[u8; 3]]>) -> Result<Vec<u8>> {
    if let Some(c) = colors {
        if c.len() != mesh.vertices.len() {
            return Err(Error::InvalidArgument(format!(
                "{} colors for {} vertices",
                c.len(),
                mesh.vertices.len()
            )));
        }
    }
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "element vertex {}", mesh.vertices.len());
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(header, "element face {}", mesh.faces.len());
    header.push_str("property list uchar int vertex_indices\nend_header\n");
    let mut out = header.into_bytes();
    for (i, p) in mesh.vertices.iter().enumerate() {
        for x in p {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        if let Some(c) = colors {
            out.extend_from_slice(&c[i]);
        }
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_ply(path: impl AsRef<Path>, mesh: &TriMesh, colors: Option<&[[u8; 3]]>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ply_bytes(mesh, colors)?)?;
    Ok(())
}

/// Reads the PLY layout produced by [`ply_bytes`].
pub fn parse_ply(bytes: &[u8]) -> Result<(TriMesh, Option<Vec<[u8; 3]>>)> {
    let bad = |m: &str| Error::Format(format!("ply: {m}"));
    let end = b"end_header\n";
    let split = bytes.windows(end.len()).position(|w| w == end).ok_or_else(|| bad("missing end_header"))? + end.len();
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| bad("header is not utf-8"))?;
    let (mut nv, mut nf, mut rgb) = (None, None, false);
    for line in header.lines() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", f, _] if *f != "binary_little_endian" => return Err(bad("unsupported format")),
            ["element", "vertex", n] => nv = n.parse::<usize>().ok(),
            ["element", "face", n] => nf = n.parse::<usize>().ok(),
            ["property", "uchar", "red"] => rgb = true,
            _ => {}
        }
    }
    let (nv, nf) = (nv.ok_or_else(|| bad("no vertex count"))?, nf.ok_or_else(|| bad("no face count"))?);
    let body = &bytes[split..];
    let stride = 12 + if rgb { 3 } else { 0 };
    if body.len() != nv * stride + nf * 13 {
        return Err(bad("body length does not match header"));
    }
    let f32_at = |o: usize| f32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as f64;
    let mut vertices = Vec::with_capacity(nv);
    let mut colors = rgb.then(|| Vec::with_capacity(nv));
    for i in 0..nv {
        let o = i * stride;
        vertices.push([f32_at(o), f32_at(o + 4), f32_at(o + 8)]);
        if let Some(c) = colors.as_mut() {
            c.push([body[o + 12], body[o + 13], body[o + 14]]);
        }
    }
    let mut faces = Vec::with_capacity(nf);
    for i in 0..nf {
        let o = nv * stride + i * 13;
        if body[o] != 3 {
            return Err(bad("non-triangle face"));
        }
        let idx = |k: usize| i32::from_le_bytes(body[o + 1 + 4 * k..o + 5 + 4 * k].try_into().unwrap());
        let f = [idx(0), idx(1), idx(2)];
        if f.iter().any(|&x| x < 0) {
            return Err(bad("negative index"));
        }
        faces.push(f.map(|x| x as u32));
    }
    Ok((TriMesh::new(vertices, faces)?, colors))
}

/// Placement of a sampled scalar grid, stored next to meshes extracted from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub resolution: usize,
    pub origin: [f64; 3],
    pub cell_size: f64,
    pub iso: f64,
}

impl GridManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        serde_json::from_str(&s).map_err(|e| Error::Format(e.to_string()))
    }
}
