//! Point clouds, normalization, resampling, and the task metrics.
//!
//! A cloud is an ordered list of 3-D points standing for an unordered set:
//! every metric here is permutation-invariant. Nearest-neighbor search is
//! brute force; clouds stay small enough (N <= 512) that correctness wins
//! over speed.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{directed_sq_nn, sorted_mean};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
}

/// Centroid/scale pair mapping a cloud to the unit frame and back.
///
/// The same frame (computed from the current cloud) is reused for the
/// context and goal clouds of one record so relative geometry survives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationFrame {
    pub centroid: [f64; 3],
    pub scale: f64,
    /// Set when the source cloud was degenerate (all points identical)
    /// and the scale was clamped to 1.
    pub degenerate: bool,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud("PointCloud::new"));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "point cloud coordinates".into(),
            });
        }
        Ok(PointCloud { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.points.iter().flatten().copied().collect();
        Tensor::new(vec![self.points.len(), 3], data).expect("cloud tensor shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 || t.cols() != 3 {
            return Err(Error::invalid(
                "PointCloud::from_tensor",
                format!("expected [n,3], got {:?}", t.shape()),
            ));
        }
        let points = t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        PointCloud::new(points)
    }

    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        let n = self.points.len() as f64;
        [c[0] / n, c[1] / n, c[2] / n]
    }

    pub fn translated(&self, offset: [f64; 3]) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                .collect(),
        }
    }

    pub fn map_points(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|&p| f(p)).collect(),
        }
    }
}

fn sq_dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Symmetric Chamfer distance: mean squared nearest-neighbor distance from
/// `a` to `b` plus the same from `b` to `a`. Zero iff the clouds are equal
/// as sets. Per-direction sums are sorted first, so the value is exactly
/// invariant under permutation of either cloud.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud("chamfer"));
    }
    let at = a.to_tensor();
    let bt = b.to_tensor();
    let (d_ab, _) = directed_sq_nn(at.data(), bt.data());
    let (d_ba, _) = directed_sq_nn(bt.data(), at.data());
    Ok(sorted_mean(&d_ab) + sorted_mean(&d_ba))
}

/// Minimum Chamfer distance over a set of candidate modes, with the
/// arg-min index. Ties break to the lowest index.
pub fn min_mode_chamfer(pred: &PointCloud, modes: &[PointCloud]) -> Result<(f64, usize)> {
    if modes.is_empty() {
        return Err(Error::invalid("min_mode_chamfer", "empty mode list"));
    }
    let mut best = f64::INFINITY;
    let mut best_idx = 0;
    for (i, m) in modes.iter().enumerate() {
        let d = chamfer(pred, m)?;
        if d < best {
            best = d;
            best_idx = i;
        }
    }
    Ok((best, best_idx))
}

/// Map a cloud to centroid 0 and max radius 1, returning the frame that
/// inverts the map. A degenerate cloud (all points identical) gets scale 1
/// and the frame is flagged.
pub fn normalize(c: &PointCloud) -> (PointCloud, NormalizationFrame) {
    let centroid = c.centroid();
    let mut max_r2: f64 = 0.0;
    for p in c.points() {
        max_r2 = max_r2.max(sq_dist(*p, centroid));
    }
    let degenerate = max_r2 == 0.0;
    let scale = if degenerate { 1.0 } else { max_r2.sqrt() };
    let frame = NormalizationFrame {
        centroid,
        scale,
        degenerate,
    };
    (apply_frame(c, &frame), frame)
}

/// Apply a frame computed elsewhere (context/goal clouds of one record).
pub fn apply_frame(c: &PointCloud, frame: &NormalizationFrame) -> PointCloud {
    c.map_points(|p| {
        [
            (p[0] - frame.centroid[0]) / frame.scale,
            (p[1] - frame.centroid[1]) / frame.scale,
            (p[2] - frame.centroid[2]) / frame.scale,
        ]
    })
}

/// Invert a frame, mapping a normalized cloud back to world coordinates.
pub fn denormalize(c: &PointCloud, frame: &NormalizationFrame) -> PointCloud {
    c.map_points(|p| {
        [
            p[0] * frame.scale + frame.centroid[0],
            p[1] * frame.scale + frame.centroid[1],
            p[2] * frame.scale + frame.centroid[2],
        ]
    })
}

/// Resample a cloud to exactly `n` points, deterministically given `seed`.
///
/// With at least `n` source points this is farthest-point subsampling from
/// a seeded start (ties to the lowest index); otherwise sampling with
/// replacement.
pub fn resample(c: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("resample", "target count must be >= 1"));
    }
    if c.is_empty() {
        return Err(Error::EmptyCloud("resample"));
    }
    let mut r = rng::stream(seed);
    let src = c.points();
    if src.len() >= n {
        let start = r.random_range(0..src.len());
        let mut selected = Vec::with_capacity(n);
        selected.push(start);
        // min squared distance from each source point to the selected set
        let mut min_d: Vec<f64> = src.iter().map(|&p| sq_dist(p, src[start])).collect();
        while selected.len() < n {
            let mut best = -1.0;
            let mut best_i = 0;
            for (i, &d) in min_d.iter().enumerate() {
                if d > best {
                    best = d;
                    best_i = i;
                }
            }
            selected.push(best_i);
            for (i, d) in min_d.iter_mut().enumerate() {
                let nd = sq_dist(src[i], src[best_i]);
                if nd < *d {
                    *d = nd;
                }
            }
        }
        PointCloud::new(selected.into_iter().map(|i| src[i]).collect())
    } else {
        let points = (0..n).map(|_| src[r.random_range(0..src.len())]).collect();
        PointCloud::new(points)
    }
}

/// Fraction of points with strictly positive signed distance to the plane.
/// Points exactly on the plane count as not passed. The normal must be
/// non-zero; it is normalized internally.
pub fn plane_pass_fraction(c: &PointCloud, point: [f64; 3], normal: [f64; 3]) -> Result<f64> {
    let norm = (normal[0].powi(2) + normal[1].powi(2) + normal[2].powi(2)).sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("plane_pass_fraction", "zero normal"));
    }
    if c.is_empty() {
        return Err(Error::EmptyCloud("plane_pass_fraction"));
    }
    let n = [normal[0] / norm, normal[1] / norm, normal[2] / norm];
    let passed = c
        .points()
        .iter()
        .filter(|p| {
            let d = (p[0] - point[0]) * n[0] + (p[1] - point[1]) * n[1] + (p[2] - point[2]) * n[2];
            d > 0.0
        })
        .count();
    Ok(passed as f64 / c.len() as f64)
}

/// Fraction of points inside or on the closed axis-aligned box.
pub fn box_coverage(c: &PointCloud, min: [f64; 3], max: [f64; 3]) -> Result<f64> {
    for a in 0..3 {
        if min[a] >= max[a] {
            return Err(Error::invalid(
                "box_coverage",
                format!("inverted box on axis {a}: min {} >= max {}", min[a], max[a]),
            ));
        }
    }
    if c.is_empty() {
        return Err(Error::EmptyCloud("box_coverage"));
    }
    let inside = c
        .points()
        .iter()
        .filter(|p| (0..3).all(|a| p[a] >= min[a] && p[a] <= max[a]))
        .count();
    Ok(inside as f64 / c.len() as f64)
}

/// Squared distance from a point to a finite segment; a zero-length
/// segment degrades to a point.
fn sq_dist_to_segment(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0)
    };
    let closest = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    sq_dist(p, closest)
}

/// True iff any point lies strictly inside the cylinder around the axis
/// segment (distance to the segment < radius). A point at distance exactly
/// `radius` does not collide.
pub fn cylinder_collision(
    c: &PointCloud,
    axis_a: [f64; 3],
    axis_b: [f64; 3],
    radius: f64,
) -> Result<bool> {
    if radius <= 0.0 {
        return Err(Error::invalid("cylinder_collision", "radius must be > 0"));
    }
    if c.is_empty() {
        return Err(Error::EmptyCloud("cylinder_collision"));
    }
    let r2 = radius * radius;
    Ok(c.points()
        .iter()
        .any(|&p| sq_dist_to_segment(p, axis_a, axis_b) < r2))
}

/// Write a cloud as CSV with header `x,y,z` and one point per row.
/// Values use Rust's shortest round-trip decimal form.
pub fn write_cloud_csv(path: &Path, c: &PointCloud) -> Result<()> {
    let mut out = String::with_capacity(c.len() * 32 + 8);
    out.push_str("x,y,z\n");
    for p in c.points() {
        out.push_str(&format!("{},{},{}\n", p[0], p[1], p[2]));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Read a cloud from the CSV format of [`write_cloud_csv`]. NaN and
/// infinite values are rejected.
pub fn read_cloud_csv(path: &Path) -> Result<PointCloud> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "x,y,z" {
        return Err(Error::Parse {
            path: path.display().to_string(),
            reason: format!("expected header 'x,y,z', got '{}'", header.trim()),
        });
    }
    let mut points = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let fields: Vec<&str> = t.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                reason: format!("row {}: expected 3 fields, got {}", lineno + 2, fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (a, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                reason: format!("row {}: {e}", lineno + 2),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    reason: format!("row {}: non-finite coordinate {v}", lineno + 2),
                });
            }
            p[a] = v;
        }
        points.push(p);
    }
    PointCloud::new(points)
}
