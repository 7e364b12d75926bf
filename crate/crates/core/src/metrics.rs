//! Reconstruction metrics: volumetric IoU, Chamfer distance, correspondence
//! error, and per-vertex error maps.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::sampling::uniform_points;
use crate::geometry::{vec3, InsideTester, TriMesh, Vec3};
use crate::rng;

pub const IOU_SAMPLES: usize = 100_000;
pub const CHAMFER_SAMPLES: usize = 10_000;
pub const ERROR_MAP_CLAMP: f64 = 0.4;

/// Monte-Carlo IoU of the enclosed volumes, sampled uniformly in the union
/// bounding box.
pub fn volumetric_iou(pred: &TriMesh, gt: &TriMesh, samples: usize, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidArgument("volumetric_iou needs at least one sample".into()));
    }
    let (a, b) = (InsideTester::new(pred)?, InsideTester::new(gt)?);
    let (lo_a, hi_a) = pred.bbox().ok_or_else(|| Error::InvalidMesh("empty prediction".into()))?;
    let (lo_b, hi_b) = gt.bbox().ok_or_else(|| Error::InvalidMesh("empty ground truth".into()))?;
    let lo = [lo_a[0].min(lo_b[0]), lo_a[1].min(lo_b[1]), lo_a[2].min(lo_b[2])];
    let hi = [hi_a[0].max(hi_b[0]), hi_a[1].max(hi_b[1]), hi_a[2].max(hi_b[2])];
    let q = uniform_points(samples, lo, hi, &mut rng::rng(seed));
    let (oa, ob) = (a.query(&q), b.query(&q));
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in oa.iter().zip(&ob) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Uniform grid over a point set for exact nearest-neighbor distances.
#[derive(Clone, Debug)]
pub struct NearestGrid<'a> {
    points: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [i64; 3],
    starts: Vec<usize>,
    order: Vec<usize>,
}

impl<'a> NearestGrid<'a> {
    pub fn new(points: &'a [Vec3]) -> Result<Self> {
        let (lo, hi) = crate::geometry::bbox_of(points)
            .ok_or_else(|| Error::InvalidArgument("nearest-neighbor grid over an empty set".into()))?;
        let ext = vec3::sub(hi, lo);
        let longest = ext.iter().copied().fold(0.0, f64::max);
        // About two points per occupied cell on a surface-like set.
        let per_axis = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).clamp(1, 256);
        let cell = if longest > 0.0 { longest / per_axis as f64 } else { 1.0 };
        let dims = ext.map(|e| ((e / cell).floor() as i64 + 1).max(1));
        let mut grid = Self { points, origin: lo, cell, dims, starts: Vec::new(), order: Vec::new() };
        let ncell = (dims[0] * dims[1] * dims[2]) as usize;
        let keys: Vec<usize> = points.iter().map(|&p| grid.flat(grid.clamp(grid.cell_of(p)))).collect();
        let mut counts = vec![0usize; ncell + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            order[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.order = order;
        Ok(grid)
    }

    fn cell_of(&self, p: Vec3) -> [i64; 3] {
        [0, 1, 2].map(|a| ((p[a] - self.origin[a]) / self.cell).floor() as i64)
    }

    fn clamp(&self, c: [i64; 3]) -> [i64; 3] {
        [0, 1, 2].map(|a| c[a].clamp(0, self.dims[a] - 1))
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        ((c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]) as usize
    }

    /// Index and distance of the nearest point; ties resolve to the
    /// smallest index.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let qc = self.cell_of(q);
        // Chebyshev distance (in cells) from q's cell to the grid.
        let gap = (0..3).map(|a| (-qc[a]).max(qc[a] - (self.dims[a] - 1)).max(0)).max().unwrap_or(0);
        let reach = (0..3).map(|a| (qc[a]).abs().max((self.dims[a] - 1 - qc[a]).abs())).max().unwrap_or(0);
        let mut best = (usize::MAX, f64::INFINITY);
        let mut r = gap;
        loop {
            self.visit_ring(qc, r, |i| {
                let d = vec3::dist2(q, self.points[i]);
                if d < best.1 || (d == best.1 && i < best.0) {
                    best = (i, d);
                }
            });
            // Points in rings beyond r are at least r cells away.
            let bound = r as f64 * self.cell;
            if (best.0 != usize::MAX && best.1 < bound * bound) || r >= reach {
                break;
            }
            r += 1;
        }
        (best.0, best.1.sqrt())
    }

    fn visit_ring(&self, qc: [i64; 3], r: i64, mut f: impl FnMut(usize)) {
        let range = |a: usize| ((qc[a] - r).max(0), (qc[a] + r).min(self.dims[a] - 1));
        let ((x0, x1), (y0, y1), (z0, z1)) = (range(0), range(1), range(2));
        let mut cell = |x: i64, y: i64, z: i64| {
            let c = self.flat([x, y, z]);
            for &i in &self.order[self.starts[c]..self.starts[c + 1]] {
                f(i);
            }
        };
        for z in z0..=z1 {
            for y in y0..=y1 {
                if (z - qc[2]).abs() == r || (y - qc[1]).abs() == r {
                    for x in x0..=x1 {
                        cell(x, y, z);
                    }
                } else {
                    // Interior rows only touch the ring at both ends.
                    if qc[0] - r >= 0 && qc[0] - r < self.dims[0] {
                        cell(qc[0] - r, y, z);
                    }
                    if r > 0 && qc[0] + r >= 0 && qc[0] + r < self.dims[0] {
                        cell(qc[0] + r, y, z);
                    }
                }
            }
        }
    }
}

/// Nearest distance from every query to `points`.
pub fn nearest_distances(queries: &[Vec3], points: &[Vec3]) -> Result<Vec<f64>> {
    let grid = NearestGrid::new(points)?;
    Ok(queries.par_iter().with_min_len(256).map(|&q| grid.nearest(q).1).collect())
}

/// `0.5 · (mean_a min_b ‖a−b‖ + mean_b min_a ‖a−b‖)`.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument(format!("chamfer distance of sets sized {} and {}", a.len(), b.len())));
    }
    let ab: f64 = nearest_distances(a, b)?.iter().sum();
    let ba: f64 = nearest_distances(b, a)?.iter().sum();
    Ok(0.5 * (ab / a.len() as f64 + ba / b.len() as f64))
}

/// Mean distance between index-matched points.
pub fn correspondence_error(pred: &[Vec3], gt: &[Vec3]) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!("correspondence of {} vs {} points", pred.len(), gt.len())));
    }
    Ok(pred.iter().zip(gt).map(|(&p, &g)| vec3::dist2(p, g).sqrt()).sum::<f64>() / pred.len() as f64)
}

/// Linear blue-to-red ramp over `[0, clamp]`, as RGB in `[0, 1]`.
pub fn error_color(distance: f64, clamp: f64) -> [f64; 3] {
    let t = (distance / clamp).clamp(0.0, 1.0);
    [t, 0.0, 1.0 - t]
}

pub fn error_color_u8(distance: f64, clamp: f64) -> [u8; 3] {
    error_color(distance, clamp).map(|c| (c * 255.0).round() as u8)
}

/// A mesh with one color per vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct ColoredMesh {
    pub mesh: TriMesh,
    pub distances: Vec<f64>,
    pub colors: Vec<[u8; 3]>,
}

impl ColoredMesh {
    pub fn ply_bytes(&self) -> Result<Vec<u8>> {
        crate::geometry::io::ply_bytes(&self.mesh, Some(&self.colors))
    }
}

/// Colors each vertex of `pred` by its distance to the nearest ground-truth
/// point.
pub fn error_map_export(pred: &TriMesh, gt_points: &[Vec3], clamp: f64) -> Result<ColoredMesh> {
    if !(clamp > 0.0) {
        return Err(Error::InvalidArgument(format!("error map clamp must be positive, got {clamp}")));
    }
    let distances = nearest_distances(&pred.vertices, gt_points)?;
    let colors = distances.iter().map(|&d| error_color_u8(d, clamp)).collect();
    Ok(ColoredMesh { mesh: pred.clone(), distances, colors })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub sequence: String,
    /// 1-based frame index, or `None` for summary rows.
    pub frame: Option<usize>,
    pub iou: f64,
    pub chamfer: f64,
    pub corr: f64,
}

impl MetricsRow {
    fn check(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.iou) && self.chamfer >= 0.0 && self.corr >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("metrics out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Per-frame means over all sequences (`frame = t`, sequence `mean`) and the
/// overall mean (`sequence = mean`, frame `all`).
pub fn summary_rows(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let frames = rows.iter().filter_map(|r| r.frame).max().unwrap_or(0);
    let mean_of = |sel: &[&MetricsRow], frame| {
        let n = sel.len().max(1) as f64;
        MetricsRow {
            sequence: "mean".into(),
            frame,
            iou: sel.iter().map(|r| r.iou).sum::<f64>() / n,
            chamfer: sel.iter().map(|r| r.chamfer).sum::<f64>() / n,
            corr: sel.iter().map(|r| r.corr).sum::<f64>() / n,
        }
    };
    let mut out: Vec<MetricsRow> = (1..=frames)
        .map(|t| {
            let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.frame == Some(t)).collect();
            mean_of(&sel, Some(t))
        })
        .collect();
    let all: Vec<&MetricsRow> = rows.iter().filter(|r| r.frame.is_some()).collect();
    out.push(mean_of(&all, None));
    out
}

/// `sequence,frame,iou,chamfer,corr` with six decimals, per-frame rows
/// followed by summary rows.
pub fn metrics_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut s = String::from("sequence,frame,iou,chamfer,corr\n");
    for r in rows.iter().cloned().chain(summary_rows(rows)) {
        r.check()?;
        let frame = r.frame.map_or_else(|| "all".to_string(), |t| t.to_string());
        writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.sequence, frame, r.iou, r.chamfer, r.corr).unwrap();
    }
    Ok(s)
}
