//! Oriented-box and point-cloud geometry.
//!
//! Yaw is measured counterclockwise from the +x axis in a right-handed,
//! z-up frame. A box's `length` runs along its heading and `width` across it.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value for {0}")]
    NonFinite(&'static str),
    #[error("box dimension {name} must be positive, got {value}")]
    NonPositiveSize { name: &'static str, value: f64 },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("unknown object class `{0}`")]
    UnknownClass(String),
}

/// Wrap an angle into `[-π, π)`.
pub fn normalize_yaw(angle: f64) -> Result<f64, GeometryError> {
    if !angle.is_finite() {
        return Err(GeometryError::NonFinite("angle"));
    }
    Ok(wrap_angle(angle))
}

/// Infallible variant of [`normalize_yaw`] for values already known to be finite.
#[inline]
pub fn wrap_angle(angle: f64) -> f64 {
    if (-PI..PI).contains(&angle) {
        return angle;
    }
    let mut r = (angle + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to TAU for tiny negative inputs.
    if r >= PI {
        r -= TAU;
    }
    if r < -PI {
        r = -PI;
    }
    r
}

/// Signed shortest-arc difference `to - from`, in `[-π, π)`.
#[inline]
pub fn angle_diff(to: f64, from: f64) -> f64 {
    wrap_angle(to - from)
}

/// Circular mean of a set of angles. Returns `None` for an empty input.
pub fn circular_mean(angles: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut c, mut n) = (0.0, 0.0, 0usize);
    for a in angles {
        s += a.sin();
        c += a.cos();
        n += 1;
    }
    (n > 0).then(|| wrap_angle(s.atan2(c)))
}

/// 7-DoF oriented 3D bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 7]", into = "[f64; 7]")]
pub struct Box7 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl Box7 {
    /// Builds a validated box; yaw is normalized.
    pub fn new(
        center: [f64; 3],
        size: [f64; 3],
        yaw: f64,
    ) -> Result<Self, GeometryError> {
        for (v, name) in center.iter().zip(["cx", "cy", "cz"]) {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(name));
            }
        }
        for (v, name) in size.iter().zip(["length", "width", "height"]) {
            if !v.is_finite() {
                return Err(GeometryError::NonFinite(name));
            }
            if *v <= 0.0 {
                return Err(GeometryError::NonPositiveSize { name, value: *v });
            }
        }
        Ok(Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            length: size[0],
            width: size[1],
            height: size[2],
            yaw: normalize_yaw(yaw)?,
        })
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn size(&self) -> [f64; 3] {
        [self.length, self.width, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn footprint_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn z_min(&self) -> f64 {
        self.cz - 0.5 * self.height
    }

    pub fn z_max(&self) -> f64 {
        self.cz + 0.5 * self.height
    }

    /// Horizontal distance between two box centers.
    pub fn center_distance_bev(&self, other: &Box7) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }

    pub fn with_center(mut self, center: [f64; 3]) -> Self {
        self.cx = center[0];
        self.cy = center[1];
        self.cz = center[2];
        self
    }

    pub fn with_yaw(mut self, yaw: f64) -> Self {
        self.yaw = wrap_angle(yaw);
        self
    }

    /// Footprint corners in counterclockwise order.
    pub fn corners_bev(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, ly]| [self.cx + c * lx - s * ly, self.cy + s * lx + c * ly])
    }

    /// Express a world point in the box frame (origin at center, x along heading).
    #[inline]
    pub fn to_local(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, z - self.cz]
    }

    /// Inverse of [`Box7::to_local`].
    #[inline]
    pub fn to_world(&self, lx: f64, ly: f64, lz: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [self.cx + c * lx - s * ly, self.cy + s * lx + c * ly, self.cz + lz]
    }

    /// Inside test with every face pushed outwards by `margin`.
    #[inline]
    pub fn contains(&self, x: f64, y: f64, z: f64, margin: f64) -> bool {
        let [lx, ly, lz] = self.to_local(x, y, z);
        lx.abs() <= 0.5 * self.length + margin
            && ly.abs() <= 0.5 * self.width + margin
            && lz.abs() <= 0.5 * self.height + margin
    }
}

impl From<Box7> for [f64; 7] {
    fn from(b: Box7) -> Self {
        [b.cx, b.cy, b.cz, b.length, b.width, b.height, b.yaw]
    }
}

impl TryFrom<[f64; 7]> for Box7 {
    type Error = GeometryError;

    fn try_from(v: [f64; 7]) -> Result<Self, Self::Error> {
        Box7::new([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[6])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub timestamp: f64,
    pub frame_index: usize,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, timestamp: f64, frame_index: usize) -> Self {
        Self { points, timestamp, frame_index }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Copy of the cloud holding only the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            timestamp: self.timestamp,
            frame_index: self.frame_index,
        }
    }
}

/// Object categories known to the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
    Cyclist,
    Motorcycle,
    Bus,
    Truck,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 6] = [
        ObjectClass::Vehicle,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
        ObjectClass::Motorcycle,
        ObjectClass::Bus,
        ObjectClass::Truck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Cyclist => "cyclist",
            ObjectClass::Motorcycle => "motorcycle",
            ObjectClass::Bus => "bus",
            ObjectClass::Truck => "truck",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| GeometryError::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: Box7,
    #[serde(rename = "class")]
    pub class: ObjectClass,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: Box7, class: ObjectClass, score: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::ScoreOutOfRange(score));
        }
        Ok(Self { bbox, class, score })
    }
}

/// Overlap measure used by NMS, association and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMetric {
    #[default]
    Bev,
    #[serde(rename = "3d")]
    ThreeD,
}

impl IouMetric {
    pub fn iou(self, a: &Box7, b: &Box7) -> f64 {
        match self {
            IouMetric::Bev => iou_bev(a, b),
            IouMetric::ThreeD => iou_3d(a, b),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IouMetric::Bev => "bev",
            IouMetric::ThreeD => "3d",
        }
    }
}

impl FromStr for IouMetric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bev" => Ok(IouMetric::Bev),
            "3d" => Ok(IouMetric::ThreeD),
            other => Err(format!("unknown IoU metric `{other}` (expected bev or 3d)")),
        }
    }
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % poly.len()];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc.abs()
}

/// Sutherland–Hodgman clip of `subject` against the convex, counterclockwise `clip` polygon.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output: Vec<[f64; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let s_cur = side(cur);
            let s_prev = side(prev);
            if s_cur >= 0.0 {
                if s_prev < 0.0 {
                    output.push(intersect(prev, cur, s_prev, s_cur));
                }
                output.push(cur);
            } else if s_prev >= 0.0 {
                output.push(intersect(prev, cur, s_prev, s_cur));
            }
        }
    }
    output
}

#[inline]
fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the intersection of the two boxes' footprints.
pub fn footprint_intersection_area(a: &Box7, b: &Box7) -> f64 {
    let ra = a.length.hypot(a.width) * 0.5;
    let rb = b.length.hypot(b.width) * 0.5;
    if a.center_distance_bev(b) > ra + rb {
        return 0.0;
    }
    let pa = a.corners_bev();
    let pb = b.corners_bev();
    polygon_area(&clip_convex(&pa, &pb))
}

fn vertical_overlap(a: &Box7, b: &Box7) -> f64 {
    (a.z_max().min(b.z_max()) - a.z_min().max(b.z_min())).max(0.0)
}

/// IoU of the rotated bird's-eye-view footprints.
pub fn iou_bev(a: &Box7, b: &Box7) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = footprint_intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.footprint_area() + b.footprint_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU: footprint intersection times vertical overlap over the union volume.
pub fn iou_3d(a: &Box7, b: &Box7) -> f64 {
    if a == b {
        return 1.0;
    }
    let dz = vertical_overlap(a, b);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = footprint_intersection_area(a, b) * dz;
    if inter <= 0.0 {
        return 0.0;
    }
    (inter / (a.volume() + b.volume() - inter)).clamp(0.0, 1.0)
}

/// Indices of the points inside `bbox` grown by `margin` on every face.
pub fn points_in_box(cloud: &PointCloud, bbox: &Box7, margin: f64) -> Vec<usize> {
    cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p.x, p.y, p.z, margin))
        .map(|(i, _)| i)
        .collect()
}

/// Class-aware greedy non-maximum suppression.
///
/// Detections are visited in descending score order (ties keep input order);
/// a detection is dropped when it overlaps an already kept detection of the
/// same class by more than `iou_threshold`. Survivors are returned in visit order.
pub fn nms(dets: &[Detection], iou_threshold: f64, metric: IouMetric) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].score.total_cmp(&dets[i].score));

    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        let d = &dets[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class == d.class && metric.iou(&k.bbox, &d.bbox) > iou_threshold);
        if !suppressed {
            kept.push(*d);
        }
    }
    kept
}
