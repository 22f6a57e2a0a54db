//! Ground height model: per-cell height grid with a RANSAC plane fallback.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point;

pub const DEFAULT_CELL_SIZE: f64 = 0.5;
pub const DEFAULT_INLIER_THRESHOLD: f64 = 0.1;
pub const DEFAULT_RANSAC_ITERATIONS: usize = 200;
pub const GROUND_MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("need at least 3 ground points, got {0}")]
    TooFewPoints(usize),
    #[error("ground points are collinear")]
    Collinear,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("no ground points")]
    Empty,
}

/// Plane `a·x + b·y + c·z + d = 0` with unit, upward-facing normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Plane {
    /// Plane through `point` with the given normal; normalized and flipped to face up.
    pub fn from_point_normal(point: Vector3<f64>, normal: Vector3<f64>) -> Option<Plane> {
        let norm = normal.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return None;
        }
        let mut n = normal / norm;
        if n.z < 0.0 {
            n = -n;
        }
        Some(Plane { a: n.x, b: n.y, c: n.z, d: -n.dot(&point) })
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn distance(&self, x: f64, y: f64, z: f64) -> f64 {
        (self.a * x + self.b * y + self.c * z + self.d).abs()
    }

    /// Height of the plane above (x, y). Vertical planes evaluate to NaN.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        -(self.a * x + self.b * y + self.d) / self.c
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }
}

fn covariance(points: &[Vector3<f64>]) -> (Vector3<f64>, Matrix3<f64>) {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    (mean, cov)
}

/// Total-least-squares plane: normal is the covariance eigenvector of smallest eigenvalue.
fn fit_plane_lsq(points: &[Vector3<f64>]) -> Option<Plane> {
    if points.len() < 3 {
        return None;
    }
    let (mean, cov) = covariance(points);
    let eig = SymmetricEigen::new(cov);
    let (imin, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    Plane::from_point_normal(mean, eig.eigenvectors.column(imin).into_owned())
}

fn is_collinear(points: &[Vector3<f64>]) -> bool {
    let (_, cov) = covariance(points);
    let mut ev: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev[1] <= 1e-12 * ev[2].max(f64::MIN_POSITIVE)
}

/// Robust plane fit: RANSAC over 3-point samples, then a least-squares refit on the best inlier set.
pub fn fit_plane_ransac(
    ground_points: &[Point],
    inlier_threshold: f64,
    iterations: usize,
    seed: u64,
) -> Result<Plane, GroundError> {
    if !(inlier_threshold > 0.0) {
        return Err(GroundError::InvalidParameter("inlier_threshold must be positive"));
    }
    let pts: Vec<Vector3<f64>> = ground_points.iter().map(|p| Vector3::new(p.x, p.y, p.z)).collect();
    if pts.len() < 3 {
        return Err(GroundError::TooFewPoints(pts.len()));
    }
    if is_collinear(&pts) {
        return Err(GroundError::Collinear);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = pts.len();
    let mut best: Option<(usize, Plane)> = None;
    for _ in 0..iterations.max(1) {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let normal = (pts[j] - pts[i]).cross(&(pts[k] - pts[i]));
        let Some(plane) = Plane::from_point_normal(pts[i], normal) else {
            continue;
        };
        let count = pts
            .iter()
            .filter(|p| plane.distance(p.x, p.y, p.z) <= inlier_threshold)
            .count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, plane));
        }
    }

    // Every sampled triple was degenerate; fall back to the global fit.
    let Some((_, candidate)) = best else {
        return fit_plane_lsq(&pts).ok_or(GroundError::Collinear);
    };

    let inliers: Vec<Vector3<f64>> = pts
        .iter()
        .copied()
        .filter(|p| candidate.distance(p.x, p.y, p.z) <= inlier_threshold)
        .collect();
    if inliers.len() >= 3 && !is_collinear(&inliers) {
        Ok(fit_plane_lsq(&inliers).unwrap_or(candidate))
    } else {
        Ok(candidate)
    }
}

/// Axis-aligned x–y bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Extent {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

/// Queryable ground height: mean height per supported grid cell, plane elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundModel {
    pub version: u32,
    pub cell_size: f64,
    pub extent: Extent,
    pub nx: usize,
    pub ny: usize,
    /// Row-major (`iy * nx + ix`); `None` marks an unsupported cell that falls back to the plane.
    pub cells: Vec<Option<f64>>,
    pub plane: Plane,
}

#[derive(Debug, Clone, Copy)]
pub struct GridParams {
    pub cell_size: f64,
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            inlier_threshold: DEFAULT_INLIER_THRESHOLD,
            iterations: DEFAULT_RANSAC_ITERATIONS,
            seed: 0,
        }
    }
}

pub fn build_height_grid(ground_points: &[Point], params: &GridParams) -> Result<GroundModel, GroundError> {
    if ground_points.is_empty() {
        return Err(GroundError::Empty);
    }
    if !(params.cell_size > 0.0) {
        return Err(GroundError::InvalidParameter("cell_size must be positive"));
    }
    let plane = fit_plane_ransac(ground_points, params.inlier_threshold, params.iterations, params.seed)?;

    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in ground_points {
        min_x = min_x.min(p.x);
        min_y = min_y.min(p.y);
        max_x = max_x.max(p.x);
        max_y = max_y.max(p.y);
    }
    let cs = params.cell_size;
    let nx = ((max_x - min_x) / cs).floor() as usize + 1;
    let ny = ((max_y - min_y) / cs).floor() as usize + 1;
    let extent = Extent { min_x, min_y, max_x: min_x + nx as f64 * cs, max_y: min_y + ny as f64 * cs };

    let mut sums = vec![(0.0f64, 0usize); nx * ny];
    for p in ground_points {
        let ix = (((p.x - min_x) / cs).floor() as usize).min(nx - 1);
        let iy = (((p.y - min_y) / cs).floor() as usize).min(ny - 1);
        let s = &mut sums[iy * nx + ix];
        s.0 += p.z;
        s.1 += 1;
    }
    let cells = sums
        .into_iter()
        .map(|(sum, n)| (n > 0).then(|| sum / n as f64))
        .collect();

    Ok(GroundModel { version: GROUND_MODEL_VERSION, cell_size: cs, extent, nx, ny, cells, plane })
}

impl GroundModel {
    fn cell(&self, ix: usize, iy: usize) -> Option<f64> {
        self.cells[iy * self.nx + ix]
    }

    /// Whether the cell containing (x, y) has its own supporting points.
    pub fn is_supported(&self, x: f64, y: f64) -> bool {
        self.cell_index(x, y).is_some_and(|(ix, iy)| self.cell(ix, iy).is_some())
    }

    fn cell_index(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        if !self.extent.contains(x, y) {
            return None;
        }
        let ix = (((x - self.extent.min_x) / self.cell_size).floor() as usize).min(self.nx - 1);
        let iy = (((y - self.extent.min_y) / self.cell_size).floor() as usize).min(self.ny - 1);
        Some((ix, iy))
    }

    /// Ground height at (x, y).
    ///
    /// Inside a supported cell the height is bilinearly interpolated between
    /// neighbouring cell centers, with weights renormalized over the supported
    /// neighbours. Outside the grid or over an unsupported cell the plane is used.
    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        let Some((cx, cy)) = self.cell_index(x, y) else {
            return self.plane.height_at(x, y);
        };
        if self.cell(cx, cy).is_none() {
            return self.plane.height_at(x, y);
        }
        let fx = (x - self.extent.min_x) / self.cell_size - 0.5;
        let fy = (y - self.extent.min_y) / self.cell_size - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let clamp_x = |i: f64| i.clamp(0.0, (self.nx - 1) as f64) as usize;
        let clamp_y = |i: f64| i.clamp(0.0, (self.ny - 1) as f64) as usize;
        let corners = [
            (clamp_x(x0), clamp_y(y0), (1.0 - tx) * (1.0 - ty)),
            (clamp_x(x0 + 1.0), clamp_y(y0), tx * (1.0 - ty)),
            (clamp_x(x0), clamp_y(y0 + 1.0), (1.0 - tx) * ty),
            (clamp_x(x0 + 1.0), clamp_y(y0 + 1.0), tx * ty),
        ];
        let (mut acc, mut wsum) = (0.0, 0.0);
        for (ix, iy, w) in corners {
            if w <= 0.0 {
                continue;
            }
            if let Some(h) = self.cell(ix, iy) {
                acc += w * h;
                wsum += w;
            }
        }
        if wsum > 0.0 {
            acc / wsum
        } else {
            self.cell(cx, cy).unwrap_or_else(|| self.plane.height_at(x, y))
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> Result<Self, String> {
        let m: GroundModel = serde_json::from_str(s).map_err(|e| e.to_string())?;
        if m.version != GROUND_MODEL_VERSION {
            return Err(format!("unsupported ground model version {}", m.version));
        }
        if m.cells.len() != m.nx * m.ny {
            return Err("ground model cell count does not match grid shape".into());
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point {
        Point::new(x, y, z, 0.0)
    }

    #[test]
    fn flat_plane_exact() {
        let pts: Vec<Point> = (0..100).map(|i| p((i % 10) as f64, (i / 10) as f64, 0.0)).collect();
        let pl = fit_plane_ransac(&pts, 0.1, 200, 1).unwrap();
        assert!((pl.c - 1.0).abs() < 1e-12);
        assert!(pl.a.abs() < 1e-12 && pl.b.abs() < 1e-12 && pl.d.abs() < 1e-12);
    }

    #[test]
    fn three_points_unique_plane() {
        let pts = [p(0.0, 0.0, 1.0), p(1.0, 0.0, 2.0), p(0.0, 1.0, 1.0)];
        let pl = fit_plane_ransac(&pts, 0.05, 50, 3).unwrap();
        for q in &pts {
            assert!(pl.distance(q.x, q.y, q.z) < 1e-12);
        }
        assert!(pl.c > 0.0);
        assert!((pl.normal().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(fit_plane_ransac(&[p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)], 0.1, 10, 0), Err(GroundError::TooFewPoints(2)));
        let line: Vec<Point> = (0..10).map(|i| p(i as f64, 2.0 * i as f64, 0.5 * i as f64)).collect();
        assert_eq!(fit_plane_ransac(&line, 0.1, 10, 0), Err(GroundError::Collinear));
        assert!(build_height_grid(&[], &GridParams::default()).is_err());
    }

    #[test]
    fn grid_flat_all_zero() {
        let pts: Vec<Point> = (0..400).map(|i| p((i % 20) as f64 * 0.25, (i / 20) as f64 * 0.25, 0.0)).collect();
        let m = build_height_grid(&pts, &GridParams::default()).unwrap();
        assert!(m.cells.iter().all(|c| c.map_or(true, |h| h == 0.0)));
        assert_eq!(m.height_at(1.3, 2.1), 0.0);
    }

    #[test]
    fn bilinear_midpoint_and_fallback() {
        // Two supported cells side by side with heights 0 and 0.1, plus a far corner point.
        // Cell centers land at (0.25, 0.25) and (0.75, 0.25).
        let mut pts = vec![p(0.0, 0.0, 0.0), p(0.5, 0.0, 0.1), p(0.0, 0.4, 0.0), p(0.5, 0.4, 0.1)];
        pts.push(p(10.2, 10.2, 0.05));
        let m = build_height_grid(&pts, &GridParams::default()).unwrap();
        assert_eq!(m.height_at(0.25, 0.25), 0.0);
        assert!((m.height_at(0.5, 0.25) - 0.05).abs() < 1e-9);
        assert!((m.height_at(0.75, 0.25) - 0.1).abs() < 1e-12);
        // Inside the extent but unsupported.
        assert!(!m.is_supported(5.0, 5.0));
        assert_eq!(m.height_at(5.0, 5.0), m.plane.height_at(5.0, 5.0));
        // Outside the extent.
        assert_eq!(m.height_at(-30.0, 4.0), m.plane.height_at(-30.0, 4.0));
    }

    #[test]
    fn json_round_trip() {
        let pts = vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(0.0, 1.0, 0.0), p(3.0, 3.0, 0.0)];
        let m = build_height_grid(&pts, &GridParams::default()).unwrap();
        let back = GroundModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
