//! Single-object propagation of one annotated box through later frames.
//!
//! Each step has two stages. A coarse motion vector comes from a translation
//! grid search that maximises the points captured by the moved box, followed
//! by trimmed-extent alignment and a discrete yaw search. The box is then
//! refined on the merged cloud: the previous target points, motion-compensated,
//! plus the current in-box points. Size never changes during a run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Box7, ObjectClass, Point, PointCloud};
use crate::scene::SceneSequence;
use crate::track::{EntrySource, TrackEntry};

pub const DEFAULT_HORIZON: usize = 100;
pub const KEYFRAME_EVERY: usize = 10;
/// Frame rate at which the default search radii are specified.
pub const REFERENCE_FRAME_RATE: f64 = 10.0;
/// Largest center correction applied by the refinement stage, meters.
pub const MAX_REFINE_CORRECTION: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SotError {
    #[error("invalid tracker parameters: {0}")]
    InvalidParams(&'static str),
    #[error("start frame {start} leaves no frame to propagate into (sequence has {len})")]
    StartFrame { start: usize, len: usize },
    #[error("no target points inside the start box")]
    EmptyTemplate,
    #[error("search region is empty; track lost")]
    EmptySearchRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotionVector {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dyaw: f64,
}

impl MotionVector {
    pub fn horizontal_norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// Move `b` by this motion: translate its center and turn it in place.
    pub fn apply(&self, b: &Box7) -> Box7 {
        Box7 { cx: b.cx + self.dx, cy: b.cy + self.dy, cz: b.cz + self.dz, yaw: wrap_angle(b.yaw + self.dyaw), ..*b }
    }

    /// Rigidly move a point attached to `from` along with the box.
    fn carry(&self, from: &Box7, p: &Point) -> Point {
        let (s, c) = self.dyaw.sin_cos();
        let (rx, ry) = (p.x - from.cx, p.y - from.cy);
        Point::new(
            from.cx + self.dx + c * rx - s * ry,
            from.cy + self.dy + s * rx + c * ry,
            p.z + self.dz,
            p.intensity,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SotParams {
    /// Largest horizontal displacement per frame, meters.
    pub search_radius: f64,
    pub horizon: usize,
    /// Inflation of the box when gating candidate points.
    pub target_margin: f64,
    pub yaw_search_halfwidth: f64,
    pub yaw_search_step: f64,
    /// Translation grid spacing for the coarse search.
    pub grid_step: f64,
    /// Points lower than this above the box bottom are treated as ground.
    pub ground_clearance: f64,
    pub min_points: usize,
    /// Consecutive weak frames after which the track is declared lost.
    pub lost_after: usize,
}

impl Default for SotParams {
    fn default() -> Self {
        Self::for_class(ObjectClass::Vehicle)
    }
}

impl SotParams {
    pub fn for_class(class: ObjectClass) -> Self {
        let search_radius = match class {
            ObjectClass::Pedestrian => 0.5,
            ObjectClass::Cyclist => 1.0,
            ObjectClass::Motorcycle => 1.5,
            ObjectClass::Vehicle | ObjectClass::Bus | ObjectClass::Truck => 2.0,
        };
        Self {
            search_radius,
            horizon: DEFAULT_HORIZON,
            target_margin: 0.2,
            yaw_search_halfwidth: 15f64.to_radians(),
            yaw_search_step: 1.5f64.to_radians(),
            grid_step: (search_radius / 4.0).min(0.25),
            ground_clearance: 0.3,
            min_points: 3,
            lost_after: 3,
        }
    }

    /// Rescale the search radius for a sequence captured at `frame_rate` Hz.
    pub fn at_frame_rate(mut self, frame_rate: f64) -> Self {
        let k = REFERENCE_FRAME_RATE / frame_rate;
        self.search_radius *= k;
        self.grid_step *= k;
        self
    }

    pub fn validate(&self) -> Result<(), SotError> {
        if !(self.search_radius > 0.0 && self.search_radius.is_finite()) {
            return Err(SotError::InvalidParams("search_radius must be positive"));
        }
        if self.horizon == 0 {
            return Err(SotError::InvalidParams("horizon must be at least 1"));
        }
        if !(self.yaw_search_step > 0.0 && self.yaw_search_halfwidth >= 0.0) {
            return Err(SotError::InvalidParams("yaw search needs a positive step"));
        }
        if !(self.grid_step > 0.0 && self.target_margin >= 0.0 && self.ground_clearance >= 0.0) {
            return Err(SotError::InvalidParams("grid_step must be positive and margins non-negative"));
        }
        if self.lost_after == 0 {
            return Err(SotError::InvalidParams("lost_after must be at least 1"));
        }
        Ok(())
    }
}

/// Points within horizontal distance `radius` of `center`.
pub fn crop_search_region(cloud: &PointCloud, center: [f64; 3], radius: f64) -> PointCloud {
    let r2 = radius * radius;
    let idx: Vec<usize> = cloud
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| (p.x - center[0]).powi(2) + (p.y - center[1]).powi(2) <= r2)
        .map(|(i, _)| i)
        .collect();
    cloud.select(&idx)
}

fn above_ground<'a>(points: &'a [Point], reference: &Box7, clearance: f64) -> impl Iterator<Item = &'a Point> {
    let floor = reference.z_min() + clearance.min(0.5 * reference.height);
    points.iter().filter(move |p| p.z >= floor)
}

fn captured_count(points: &[Point], b: &Box7, margin: f64) -> usize {
    points.iter().filter(|p| b.contains(p.x, p.y, p.z, margin)).count()
}

fn quantile_sorted(v: &[f64], lo_frac: f64) -> (f64, f64) {
    let n = v.len();
    let lo = ((n - 1) as f64 * lo_frac).round() as usize;
    (v[lo], v[n - 1 - lo])
}

const EXTENT_TRIM: f64 = 0.02;

/// Robust box center from the spread of points in `frame`'s local axes.
///
/// x and y use the midpoint of the trimmed extent; z hangs the box from the
/// trimmed top because the bottom is usually lost among ground returns.
fn extent_center(points: &[Point], frame: &Box7) -> Option<[f64; 3]> {
    if points.is_empty() {
        return None;
    }
    let local: Vec<[f64; 3]> = points.iter().map(|p| frame.to_local(p.x, p.y, p.z)).collect();
    let mut mid = [0.0; 3];
    for (axis, m) in mid.iter_mut().enumerate() {
        let mut v: Vec<f64> = local.iter().map(|l| l[axis]).collect();
        v.sort_by(f64::total_cmp);
        let (lo, hi) = quantile_sorted(&v, EXTENT_TRIM);
        *m = if axis < 2 { 0.5 * (lo + hi) } else { hi - 0.5 * frame.height };
    }
    Some(mid)
}

/// Median distance from points to the box surface.
fn surface_residual(points: &[Point], b: &Box7) -> f64 {
    let half = [0.5 * b.length, 0.5 * b.width, 0.5 * b.height];
    let mut d: Vec<f64> = points
        .iter()
        .map(|p| {
            let l = b.to_local(p.x, p.y, p.z);
            (0..3).map(|i| l[i].abs() - half[i]).fold(f64::NEG_INFINITY, f64::max).abs()
        })
        .collect();
    if d.is_empty() {
        return f64::INFINITY;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

fn clamp_horizontal(dx: f64, dy: f64, limit: f64) -> (f64, f64) {
    let n = dx.hypot(dy);
    if n > limit && n > 0.0 {
        (dx * limit / n, dy * limit / n)
    } else {
        (dx, dy)
    }
}

/// Coarse motion of the target between two frames.
///
/// `prior` seeds tie-breaking in the translation search (usually the previous
/// step's motion).
pub fn estimate_motion_with_prior(
    prev_target_points: &PointCloud,
    search_points: &PointCloud,
    prev_box: &Box7,
    params: &SotParams,
    prior: MotionVector,
) -> Result<MotionVector, SotError> {
    if prev_target_points.is_empty() {
        return Err(SotError::EmptyTemplate);
    }
    let candidates: Vec<Point> = above_ground(&search_points.points, prev_box, params.ground_clearance).copied().collect();
    if candidates.is_empty() {
        return Err(SotError::EmptySearchRegion);
    }
    let k = params.search_radius;

    // Translation grid over the disk of radius K.
    let steps = (k / params.grid_step).floor() as i64;
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for i in -steps..=steps {
        for j in -steps..=steps {
            let (dx, dy) = (i as f64 * params.grid_step, j as f64 * params.grid_step);
            if dx.hypot(dy) > k + 1e-12 {
                continue;
            }
            let moved = Box7 { cx: prev_box.cx + dx, cy: prev_box.cy + dy, ..*prev_box };
            let count = captured_count(&candidates, &moved, params.target_margin);
            let to_prior = (dx - prior.dx).hypot(dy - prior.dy);
            let better = match best {
                None => true,
                Some((c, _, _, d)) => count > c || (count == c && to_prior < d - 1e-12),
            };
            if better {
                best = Some((count, dx, dy, to_prior));
            }
        }
    }
    let (count, mut dx, mut dy, _) = best.expect("grid contains the origin");
    if count == 0 {
        return Err(SotError::EmptySearchRegion);
    }

    // Align the trimmed extents of the captured points with the template's.
    let template: Vec<Point> = above_ground(&prev_target_points.points, prev_box, params.ground_clearance).copied().collect();
    let mut dz = 0.0;
    if let Some(t_c) = extent_center(&template, prev_box) {
        for _ in 0..3 {
            let moved = Box7 { cx: prev_box.cx + dx, cy: prev_box.cy + dy, ..*prev_box };
            let inside: Vec<Point> =
                candidates.iter().filter(|p| moved.contains(p.x, p.y, p.z, params.target_margin)).copied().collect();
            let Some(c) = extent_center(&inside, &moved) else { break };
            let (s, co) = prev_box.yaw.sin_cos();
            let (lx, ly) = (c[0] - t_c[0], c[1] - t_c[1]);
            dx += co * lx - s * ly;
            dy += s * lx + co * ly;
            (dx, dy) = clamp_horizontal(dx, dy, k);
            dz = (c[2] - t_c[2]).clamp(-k, k);
        }
    }

    // Yaw: among headings that keep most of the points, take the one whose
    // surface fits best once re-centered.
    let n_yaw = (params.yaw_search_halfwidth / params.yaw_search_step).round() as i64;
    let mut scored = Vec::with_capacity((2 * n_yaw + 1) as usize);
    for s in -n_yaw..=n_yaw {
        let dyaw = s as f64 * params.yaw_search_step;
        let turned = Box7 { cx: prev_box.cx + dx, cy: prev_box.cy + dy, yaw: wrap_angle(prev_box.yaw + dyaw), ..*prev_box };
        let inside: Vec<Point> =
            candidates.iter().filter(|p| turned.contains(p.x, p.y, p.z, params.target_margin)).copied().collect();
        let fitted = match extent_center(&inside, &turned) {
            Some([lx, ly, _]) => {
                let [x, y, _] = turned.to_world(lx, ly, 0.0);
                Box7 { cx: x, cy: y, ..turned }
            }
            None => turned,
        };
        scored.push((dyaw, inside.len(), surface_residual(&inside, &fitted)));
    }
    let max_count = scored.iter().map(|s| s.1).max().unwrap_or(0);
    let dyaw = scored
        .iter()
        .filter(|s| s.1 as f64 >= 0.9 * max_count as f64)
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.abs().total_cmp(&b.0.abs())))
        .map_or(0.0, |s| s.0);

    Ok(MotionVector { dx, dy, dz, dyaw: wrap_angle(dyaw) })
}

/// Coarse motion with no prior.
pub fn estimate_motion(
    prev_target_points: &PointCloud,
    search_points: &PointCloud,
    prev_box: &Box7,
    params: &SotParams,
) -> Result<MotionVector, SotError> {
    estimate_motion_with_prior(prev_target_points, search_points, prev_box, params, MotionVector::default())
}

fn refine_with_offset(
    prev_target_points: &PointCloud,
    current_points: &PointCloud,
    coarse_box: &Box7,
    m: &MotionVector,
    margin: f64,
    offset: [f64; 3],
) -> Box7 {
    let prev_box = Box7 {
        cx: coarse_box.cx - m.dx,
        cy: coarse_box.cy - m.dy,
        cz: coarse_box.cz - m.dz,
        yaw: wrap_angle(coarse_box.yaw - m.dyaw),
        ..*coarse_box
    };
    let mut merged: Vec<Point> = prev_target_points.points.iter().map(|p| m.carry(&prev_box, p)).collect();
    merged.extend(current_points.points.iter().filter(|p| coarse_box.contains(p.x, p.y, p.z, margin)));
    let Some(mut c) = extent_center(&merged, coarse_box) else {
        return Box7 { yaw: wrap_angle(coarse_box.yaw), ..*coarse_box };
    };
    for (ci, oi) in c.iter_mut().zip(offset) {
        *ci += oi;
    }
    let norm = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    if norm > MAX_REFINE_CORRECTION {
        c = c.map(|v| v * MAX_REFINE_CORRECTION / norm);
    }
    let [x, y, z] = coarse_box.to_world(c[0], c[1], c[2]);
    Box7 { cx: x, cy: y, cz: z, yaw: wrap_angle(coarse_box.yaw), ..*coarse_box }
}

/// Re-center `coarse_box` on the merged previous and current target points.
///
/// The correction is clamped to `MAX_REFINE_CORRECTION`; size is kept.
pub fn refine_box(prev_target_points: &PointCloud, current_points: &PointCloud, coarse_box: &Box7, m: &MotionVector) -> Box7 {
    refine_with_offset(prev_target_points, current_points, coarse_box, m, MAX_REFINE_CORRECTION, [0.0; 3])
}

/// Outcome of one tracker step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub bbox: Box7,
    /// Target points supporting the estimate.
    pub support: usize,
}

/// A single-object tracker that can be driven frame by frame.
pub trait SotTracker {
    fn init(&mut self, cloud: &PointCloud, start_box: Box7) -> Result<(), SotError>;
    fn step(&mut self, cloud: &PointCloud) -> Result<StepResult, SotError>;
}

/// Geometric baseline tracker.
#[derive(Debug, Clone)]
pub struct GeometricTracker {
    params: SotParams,
    current: Option<Box7>,
    template: PointCloud,
    motion: MotionVector,
    /// Local-frame bias between the extent estimate and the annotated center.
    offset: [f64; 3],
}

impl GeometricTracker {
    pub fn new(params: SotParams) -> Self {
        Self { params, current: None, template: PointCloud::default(), motion: MotionVector::default(), offset: [0.0; 3] }
    }

    fn target_points(&self, cloud: &PointCloud, b: &Box7) -> PointCloud {
        let pts: Vec<Point> = above_ground(&cloud.points, b, self.params.ground_clearance)
            .filter(|p| b.contains(p.x, p.y, p.z, self.params.target_margin))
            .copied()
            .collect();
        PointCloud::new(pts, cloud.timestamp, cloud.frame_index)
    }
}

impl SotTracker for GeometricTracker {
    fn init(&mut self, cloud: &PointCloud, start_box: Box7) -> Result<(), SotError> {
        self.params.validate()?;
        let template = self.target_points(cloud, &start_box);
        if template.is_empty() {
            return Err(SotError::EmptyTemplate);
        }
        self.offset = match extent_center(&template.points, &start_box) {
            Some(c) => c.map(|v| -v),
            None => [0.0; 3],
        };
        self.template = template;
        self.current = Some(start_box);
        self.motion = MotionVector::default();
        Ok(())
    }

    fn step(&mut self, cloud: &PointCloud) -> Result<StepResult, SotError> {
        let prev = self.current.ok_or(SotError::EmptyTemplate)?;
        let p = self.params;
        let reach = p.search_radius + 0.5 * prev.length.hypot(prev.width) + p.target_margin;
        let search = crop_search_region(cloud, prev.center(), reach);
        let coarse_m = estimate_motion_with_prior(&self.template, &search, &prev, &p, self.motion)?;
        let coarse = coarse_m.apply(&prev);
        let current = self.target_points(&search, &coarse);
        let support = current.len();
        let elevated: Vec<Point> = above_ground(&search.points, &prev, p.ground_clearance).copied().collect();
        let elevated = PointCloud::new(elevated, cloud.timestamp, cloud.frame_index);

        let mut refined = if support >= p.min_points {
            refine_with_offset(&self.template, &elevated, &coarse, &coarse_m, MAX_REFINE_CORRECTION, self.offset)
        } else {
            coarse
        };
        let (dx, dy) = clamp_horizontal(refined.cx - prev.cx, refined.cy - prev.cy, p.search_radius);
        refined.cx = prev.cx + dx;
        refined.cy = prev.cy + dy;

        self.motion = MotionVector {
            dx,
            dy,
            dz: refined.cz - prev.cz,
            dyaw: wrap_angle(refined.yaw - prev.yaw),
        };
        if support >= p.min_points {
            self.template = self.target_points(&search, &refined);
        } else {
            // Carry the old template along so the next frame still has a reference.
            let pts = self.template.points.iter().map(|q| self.motion.carry(&prev, q)).collect();
            self.template = PointCloud::new(pts, cloud.timestamp, cloud.frame_index);
        }
        self.current = Some(refined);
        Ok(StepResult { bbox: refined, support })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropagationNotice {
    /// Support stayed below the minimum for too long starting at `frame`.
    LostTrack { frame: usize },
    /// The box left the area covered by the sequence at `frame`.
    LeftScene { frame: usize },
    /// The sequence ended before the requested horizon.
    SequenceEnd { frame: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    pub entries: Vec<TrackEntry>,
    pub notice: Option<PropagationNotice>,
}

fn scene_bounds(cloud: &PointCloud) -> Option<[f64; 4]> {
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in &cloud.points {
        b[0] = b[0].min(p.x);
        b[1] = b[1].min(p.y);
        b[2] = b[2].max(p.x);
        b[3] = b[3].max(p.y);
    }
    b[0].is_finite().then_some(b)
}

/// Propagate with any tracker implementation.
pub fn propagate_with<T: SotTracker>(
    tracker: &mut T,
    seq: &SceneSequence,
    start_box: Box7,
    start_frame: usize,
    horizon: usize,
    lost_after: usize,
    min_points: usize,
) -> Result<Propagation, SotError> {
    if start_frame + 1 >= seq.len() {
        return Err(SotError::StartFrame { start: start_frame, len: seq.len() });
    }
    tracker.init(&seq.frames[start_frame], start_box)?;
    let bounds = scene_bounds(&seq.frames[start_frame]);

    let last = (start_frame + horizon).min(seq.len() - 1);
    let mut entries = Vec::new();
    let mut weak_run = 0usize;
    let mut notice = None;
    for f in start_frame + 1..=last {
        let step = match tracker.step(&seq.frames[f]) {
            Ok(s) => Some(s),
            Err(SotError::EmptySearchRegion) => None,
            Err(e) => return Err(e),
        };
        match step {
            Some(s) if s.support >= min_points => weak_run = 0,
            _ => weak_run += 1,
        }
        if weak_run >= lost_after {
            let first_weak = f + 1 - weak_run;
            entries.retain(|e: &TrackEntry| e.frame < first_weak);
            notice = Some(PropagationNotice::LostTrack { frame: first_weak });
            break;
        }
        let Some(s) = step else {
            // No estimate this frame; hold the slot open and keep going.
            continue;
        };
        if let Some([x0, y0, x1, y1]) = bounds {
            if s.bbox.cx < x0 || s.bbox.cx > x1 || s.bbox.cy < y0 || s.bbox.cy > y1 {
                notice = Some(PropagationNotice::LeftScene { frame: f });
                break;
            }
        }
        let n = entries.len() + 1;
        entries.push(TrackEntry::new(f, s.bbox, EntrySource::AutoSot).keyframe(n % KEYFRAME_EVERY == 0));
    }
    if notice.is_none() && start_frame + horizon > seq.len() - 1 {
        notice = Some(PropagationNotice::SequenceEnd { frame: seq.len() - 1 });
    }
    Ok(Propagation { entries, notice })
}

/// Propagate `start_box` from `start_frame` for up to `params.horizon` frames
/// with the geometric tracker.
pub fn propagate(
    seq: &SceneSequence,
    start_box: Box7,
    start_frame: usize,
    params: &SotParams,
) -> Result<Propagation, SotError> {
    params.validate()?;
    let mut tracker = GeometricTracker::new(*params);
    propagate_with(&mut tracker, seq, start_box, start_frame, params.horizon, params.lost_after, params.min_points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, AgentSpec, SceneConfig};
    use std::f64::consts::FRAC_PI_2;

    /// Points on the four sides and top of `b`, on a regular lattice.
    fn surface_cloud(b: &Box7, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        let (l, w, h) = (b.length, b.width, b.height);
        let n = |s: f64| ((s / spacing).round() as usize).max(1);
        let lin = |s: f64, i: usize, n: usize| -0.5 * s + s * (i as f64 + 0.5) / n as f64;
        for i in 0..n(w) {
            for k in 0..n(h) {
                for sx in [-0.5, 0.5] {
                    let [x, y, z] = b.to_world(sx * l, lin(w, i, n(w)), lin(h, k, n(h)));
                    pts.push(Point::new(x, y, z, 0.0));
                }
            }
        }
        for i in 0..n(l) {
            for k in 0..n(h) {
                for sy in [-0.5, 0.5] {
                    let [x, y, z] = b.to_world(lin(l, i, n(l)), sy * w, lin(h, k, n(h)));
                    pts.push(Point::new(x, y, z, 0.0));
                }
            }
            for j in 0..n(w) {
                let [x, y, z] = b.to_world(lin(l, i, n(l)), lin(w, j, n(w)), 0.5 * h);
                pts.push(Point::new(x, y, z, 0.0));
            }
        }
        PointCloud::new(pts, 0.0, 0)
    }

    fn car(x: f64, y: f64, yaw: f64) -> Box7 {
        Box7::new([x, y, 0.75], [4.5, 1.8, 1.5], yaw).unwrap()
    }

    #[test]
    fn default_radii() {
        assert_eq!(SotParams::for_class(ObjectClass::Vehicle).search_radius, 2.0);
        assert_eq!(SotParams::for_class(ObjectClass::Pedestrian).search_radius, 0.5);
        assert_eq!(SotParams::default().horizon, 100);
        assert_eq!(SotParams::for_class(ObjectClass::Vehicle).at_frame_rate(20.0).search_radius, 1.0);
    }

    #[test]
    fn crop_is_exact_disk() {
        let cloud = PointCloud::new(
            vec![Point::new(0.0, 0.0, 5.0, 0.0), Point::new(2.0, 0.0, 0.0, 0.0), Point::new(1.5, 1.5, 0.0, 0.0)],
            0.0,
            0,
        );
        let c = crop_search_region(&cloud, [0.0, 0.0, 0.0], 2.0);
        assert_eq!(c.len(), 2);
        assert!(crop_search_region(&PointCloud::default(), [0.0; 3], 2.0).is_empty());
    }

    #[test]
    fn translation_recovered() {
        let b0 = car(10.0, 3.0, 0.3);
        let b1 = Box7 { cx: b0.cx + 0.5, ..b0 };
        let m = estimate_motion(&surface_cloud(&b0, 0.1), &surface_cloud(&b1, 0.1), &b0, &SotParams::default()).unwrap();
        assert!((m.dx - 0.5).abs() <= 0.02 && m.dy.abs() <= 0.02 && m.dz.abs() <= 0.02, "{m:?}");
        assert!(m.dyaw.abs() < 1e-9);
    }

    #[test]
    fn stationary_is_zero() {
        let b0 = car(-6.0, 8.0, -1.0);
        let cloud = surface_cloud(&b0, 0.1);
        let m = estimate_motion(&cloud, &cloud, &b0, &SotParams::default()).unwrap();
        assert!(m.horizontal_norm() < 0.02 && m.dyaw.abs() < 1e-9, "{m:?}");
    }

    #[test]
    fn rotation_recovered() {
        let p = SotParams::default();
        let b0 = car(12.0, -4.0, 0.2);
        let b1 = b0.with_yaw(0.2 + 10f64.to_radians());
        let m = estimate_motion(&surface_cloud(&b0, 0.1), &surface_cloud(&b1, 0.1), &b0, &p).unwrap();
        assert!((m.dyaw - 10f64.to_radians()).abs() <= p.yaw_search_step + 1e-9, "{}", m.dyaw.to_degrees());
    }

    #[test]
    fn empty_search_is_lost() {
        let b0 = car(0.0, 0.0, 0.0);
        let err = estimate_motion(&surface_cloud(&b0, 0.2), &PointCloud::default(), &b0, &SotParams::default());
        assert_eq!(err, Err(SotError::EmptySearchRegion));
    }

    #[test]
    fn refine_symmetric_cloud_is_fixed_point() {
        let b = car(5.0, 5.0, 0.7);
        let cloud = surface_cloud(&b, 0.1);
        let out = refine_box(&PointCloud::default(), &cloud, &b, &MotionVector::default());
        assert!(out.center_distance_bev(&b) < 1e-9 && (out.cz - b.cz).abs() < 1e-9);
    }

    #[test]
    fn refine_moves_toward_cloud_and_clamps() {
        let truth = car(5.0, 5.0, 0.0);
        let cloud = surface_cloud(&truth, 0.1);
        let coarse = Box7 { cx: 5.2, ..truth };
        let out = refine_box(&PointCloud::default(), &cloud, &coarse, &MotionVector::default());
        let moved = coarse.cx - out.cx;
        assert!(moved > 0.0 && moved <= 0.2 + 1e-9 && (out.cx - 5.0).abs() < 0.05, "{out:?}");

        let far = Box7 { cx: 3.0, ..truth };
        // The merged cloud sits 2 m away; only the clamp limits the move.
        let out = refine_box(&cloud, &PointCloud::default(), &far, &MotionVector::default());
        assert!((out.center_distance_bev(&far) - MAX_REFINE_CORRECTION).abs() < 1e-9);
        assert_eq!(out.size(), far.size());
    }

    #[test]
    fn propagation_keyframes_and_gate() {
        let mut agent = AgentSpec::line(ObjectClass::Vehicle, 0, [-10.0, 12.0], 0.0, 5.0);
        agent.size = [4.5, 1.8, 1.5];
        let cfg = SceneConfig { duration: 40, agents: vec![agent], noise_sigma: 0.01, seed: 4, ..SceneConfig::default() };
        let seq = generate_scene(&cfg);
        let start = seq.gt_tracks[0].entries[0].bbox;
        let p = SotParams::default();
        let out = propagate(&seq, start, 0, &p).unwrap();
        assert_eq!(out.entries.len(), 39);
        assert_eq!(out.notice, Some(PropagationNotice::SequenceEnd { frame: 39 }));
        let kf: Vec<usize> = out.entries.iter().filter(|e| e.keyframe).map(|e| e.frame).collect();
        assert_eq!(kf, vec![10, 20, 30]);
        let mut prev = start;
        for e in &out.entries {
            assert!(e.bbox.center_distance_bev(&prev) <= p.search_radius + 1e-9);
            assert_eq!(e.bbox.size(), start.size());
            assert_eq!(e.source, EntrySource::AutoSot);
            let gt = seq.gt_tracks[0].entry_at(e.frame).unwrap().bbox;
            assert!(e.bbox.center_distance_bev(&gt) < 0.3, "frame {} {:?} vs {:?}", e.frame, e.bbox, gt);
            prev = e.bbox;
        }
        assert_eq!(out, propagate(&seq, start, 0, &p).unwrap());
    }

    #[test]
    fn vanished_target_is_lost() {
        let agent = AgentSpec { despawn_frame: Some(5), ..AgentSpec::line(ObjectClass::Vehicle, 0, [10.0, 0.0], FRAC_PI_2, 0.0) };
        let cfg = SceneConfig { duration: 20, agents: vec![agent], ground_points: 200, ..SceneConfig::default() };
        let seq = generate_scene(&cfg);
        let start = seq.gt_tracks[0].entries[0].bbox;
        let out = propagate(&seq, start, 0, &SotParams::default()).unwrap();
        assert_eq!(out.notice, Some(PropagationNotice::LostTrack { frame: 5 }));
        assert_eq!(out.entries.last().map(|e| e.frame), Some(4));
    }

    #[test]
    fn start_frame_checked() {
        let cfg = SceneConfig { duration: 1, ..SceneConfig::default() };
        let seq = generate_scene(&cfg);
        assert!(matches!(propagate(&seq, car(0.0, 0.0, 0.0), 0, &SotParams::default()), Err(SotError::StartFrame { .. })));
    }
}
