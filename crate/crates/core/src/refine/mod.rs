//! Trajectory post-processing and batch edits on tracklets.

pub mod spline;

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angle_diff, circular_mean, wrap_angle, Box7, ObjectClass};
use crate::sot::SotParams;
use crate::track::{EntrySource, TrackEntry, Tracklet};

pub use spline::smoothing_spline;

pub const DEFAULT_SMOOTHING_WEIGHT: f64 = 0.5;
pub const DEFAULT_SPEED_FLOOR: f64 = 0.3;
/// Largest distance a smoothed endpoint may move from its input.
pub const ENDPOINT_TOLERANCE: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("track {id} has {found} keyframes; interpolation needs at least 2")]
    TooFewKeyframes { id: u64, found: usize },
    #[error("track {id} has {found} entries; smoothing needs at least 4")]
    TooShort { id: u64, found: usize },
    #[error("smoothing weight {0} outside [0, 1]")]
    BadWeight(f64),
    #[error("no track with id {0}")]
    UnknownTrack(u64),
    #[error("track {id} has no entries at or after frame {frame}")]
    NothingToMove { id: u64, frame: usize },
    #[error("track {new_id} already has entries between frames {first} and {last}")]
    IdConflict { new_id: u64, first: usize, last: usize },
    #[error("source and target ids are both {0}")]
    SameId(u64),
    #[error("frames {start}..={end} are not covered by track {id}")]
    RangeOutsideTrack { id: u64, start: usize, end: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    /// m/s
    pub max_speed: f64,
    /// frames
    pub min_track_length: usize,
    /// meters
    pub static_displacement: f64,
    /// meters per frame at the reference rate
    pub search_radius: f64,
}

impl ClassParams {
    pub fn for_class(class: ObjectClass) -> Self {
        let max_speed = match class {
            ObjectClass::Pedestrian => 2.0,
            ObjectClass::Cyclist => 12.0,
            ObjectClass::Motorcycle => 30.0,
            ObjectClass::Vehicle | ObjectClass::Bus | ObjectClass::Truck => 25.0,
        };
        Self {
            max_speed,
            min_track_length: 5,
            static_displacement: 0.5,
            search_radius: SotParams::for_class(class).search_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineParams {
    pub classes: BTreeMap<ObjectClass, ClassParams>,
    pub smoothing_weight: f64,
    pub speed_floor: f64,
    pub frame_rate: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            classes: ObjectClass::ALL.into_iter().map(|c| (c, ClassParams::for_class(c))).collect(),
            smoothing_weight: DEFAULT_SMOOTHING_WEIGHT,
            speed_floor: DEFAULT_SPEED_FLOOR,
            frame_rate: 10.0,
        }
    }
}

impl RefineParams {
    pub fn class(&self, class: ObjectClass) -> ClassParams {
        self.classes.get(&class).copied().unwrap_or_else(|| ClassParams::for_class(class))
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Box between `a` (s = 0) and `b` (s = 1); yaw takes the shorter arc.
pub fn interpolate_box(a: &Box7, b: &Box7, s: f64) -> Box7 {
    Box7 {
        cx: lerp(a.cx, b.cx, s),
        cy: lerp(a.cy, b.cy, s),
        cz: lerp(a.cz, b.cz, s),
        length: lerp(a.length, b.length, s),
        width: lerp(a.width, b.width, s),
        height: lerp(a.height, b.height, s),
        yaw: wrap_angle(a.yaw + s * angle_diff(b.yaw, a.yaw)),
    }
}

/// Fill every frame strictly between consecutive keyframes by interpolation.
///
/// Keyframes are untouched; entries before the first and after the last
/// keyframe are kept as they are.
pub fn interpolate_keyframes(track: &Tracklet) -> Result<Tracklet, RefineError> {
    let keys: Vec<&TrackEntry> = track.entries.iter().filter(|e| e.keyframe).collect();
    if keys.len() < 2 {
        return Err(RefineError::TooFewKeyframes { id: track.id, found: keys.len() });
    }
    let (first, last) = (keys[0].frame, keys[keys.len() - 1].frame);
    let mut entries: Vec<TrackEntry> = track.entries.iter().filter(|e| e.frame < first).copied().collect();
    for pair in keys.windows(2) {
        let (k0, k1) = (pair[0], pair[1]);
        entries.push(*k0);
        let span = (k1.frame - k0.frame) as f64;
        for f in k0.frame + 1..k1.frame {
            let s = (f - k0.frame) as f64 / span;
            entries.push(TrackEntry::new(f, interpolate_box(&k0.bbox, &k1.bbox, s), EntrySource::Interpolated));
        }
    }
    entries.push(*keys[keys.len() - 1]);
    entries.extend(track.entries.iter().filter(|e| e.frame > last).copied());
    Ok(Tracklet { entries, ..track.clone() })
}

/// Replace one entry with a manual edit and promote it to a keyframe.
pub fn edit_entry(track: &Tracklet, frame: usize, bbox: Box7) -> Tracklet {
    let mut out = track.clone();
    out.upsert(TrackEntry::new(frame, bbox, EntrySource::Manual).keyframe(true));
    out
}

fn times(track: &Tracklet, frame_rate: f64) -> Vec<f64> {
    track.entries.iter().map(|e| e.frame as f64 / frame_rate).collect()
}

/// Smooth the BEV centers with a cubic smoothing spline.
///
/// `weight` trades roughness (1) against fidelity (0); time is measured in
/// seconds. Size, z and yaw are left alone.
pub fn smooth_trajectory(track: &Tracklet, weight: f64, frame_rate: f64) -> Result<Tracklet, RefineError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(RefineError::BadWeight(weight));
    }
    if track.len() < 4 {
        return Err(RefineError::TooShort { id: track.id, found: track.len() });
    }
    let lambda = if weight >= 1.0 { f64::INFINITY } else { weight / (1.0 - weight) };
    let t = times(track, frame_rate);
    let xs: Vec<f64> = track.entries.iter().map(|e| e.bbox.cx).collect();
    let ys: Vec<f64> = track.entries.iter().map(|e| e.bbox.cy).collect();
    let fx = smoothing_spline(&t, &xs, lambda);
    let fy = smoothing_spline(&t, &ys, lambda);

    let mut out = track.clone();
    let n = out.entries.len();
    for (i, e) in out.entries.iter_mut().enumerate() {
        let (mut x, mut y) = (fx[i], fy[i]);
        if i == 0 || i == n - 1 {
            let (dx, dy) = (x - xs[i], y - ys[i]);
            let d = dx.hypot(dy);
            if d > ENDPOINT_TOLERANCE {
                x = xs[i] + dx * ENDPOINT_TOLERANCE / d;
                y = ys[i] + dy * ENDPOINT_TOLERANCE / d;
            }
        }
        e.bbox.cx = x;
        e.bbox.cy = y;
    }
    Ok(out)
}

/// Central-difference BEV velocity at each entry over a window of about one second.
fn velocities(track: &Tracklet, frame_rate: f64) -> Vec<[f64; 2]> {
    let n = track.len();
    let half = ((0.5 * frame_rate).round() as usize).max(1);
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            if lo == hi {
                return [0.0, 0.0];
            }
            let (a, b) = (&track.entries[lo], &track.entries[hi]);
            let dt = (b.frame - a.frame) as f64 / frame_rate;
            [(b.bbox.cx - a.bbox.cx) / dt, (b.bbox.cy - a.bbox.cy) / dt]
        })
        .collect()
}

/// Point each box along its direction of travel.
///
/// Below `speed_floor` an entry borrows the next moving direction; a trailing
/// stop holds the last moving direction; a track that never moves keeps the
/// first annotation's yaw throughout.
pub fn reorient_from_motion(track: &Tracklet, speed_floor: f64, frame_rate: f64) -> Tracklet {
    let mut out = track.clone();
    if track.is_empty() {
        return out;
    }
    let v = velocities(track, frame_rate);
    let heading: Vec<Option<f64>> =
        v.iter().map(|[vx, vy]| (vx.hypot(*vy) >= speed_floor).then(|| wrap_angle(vy.atan2(*vx)))).collect();
    let initial = track.entries[0].bbox.yaw;

    let mut next_moving: Option<f64> = None;
    let mut resolved = vec![None; heading.len()];
    for i in (0..heading.len()).rev() {
        if heading[i].is_some() {
            next_moving = heading[i];
        }
        resolved[i] = heading[i].or(next_moving);
    }
    let mut last_moving: Option<f64> = None;
    for (i, e) in out.entries.iter_mut().enumerate() {
        if heading[i].is_some() {
            last_moving = heading[i];
        }
        e.bbox.yaw = resolved[i].or(last_moving).unwrap_or(initial);
    }
    out
}

/// Collapse a barely moving track to its mean box.
pub fn average_static_boxes(track: &Tracklet, static_displacement: f64) -> Tracklet {
    if track.len() < 2 {
        return track.clone();
    }
    let c: Vec<[f64; 3]> = track.entries.iter().map(|e| e.bbox.center()).collect();
    let far = |a: &[f64; 3], b: &[f64; 3]| {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2) > static_displacement * static_displacement
    };
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            if far(&c[i], &c[j]) {
                return track.clone();
            }
        }
    }
    let n = track.len() as f64;
    let mean = |f: fn(&Box7) -> f64| track.entries.iter().map(|e| f(&e.bbox)).sum::<f64>() / n;
    let yaw = circular_mean(track.entries.iter().map(|e| e.bbox.yaw)).unwrap_or(track.entries[0].bbox.yaw);
    let avg = Box7 {
        cx: mean(|b| b.cx),
        cy: mean(|b| b.cy),
        cz: mean(|b| b.cz),
        length: mean(|b| b.length),
        width: mean(|b| b.width),
        height: mean(|b| b.height),
        yaw,
    };
    let mut out = track.clone();
    for e in &mut out.entries {
        e.bbox = avg;
    }
    out
}

/// Mean BEV speed using displacements over roughly one-second strides.
pub fn average_speed(track: &Tracklet, frame_rate: f64) -> f64 {
    let n = track.len();
    if n < 2 {
        return 0.0;
    }
    let stride = (frame_rate.round() as usize).clamp(1, n - 1);
    let speeds: Vec<f64> = (0..n - stride)
        .map(|i| {
            let (a, b) = (&track.entries[i], &track.entries[i + stride]);
            let dt = (b.frame - a.frame) as f64 / frame_rate;
            a.bbox.center_distance_bev(&b.bbox) / dt
        })
        .collect();
    speeds.iter().sum::<f64>() / speeds.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlagReason {
    Short { length: usize, min: usize },
    SpeedAnomaly { average_speed: f64, max_speed: f64, suggested_class: Option<ObjectClass> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedTrack {
    pub track: Tracklet,
    pub reasons: Vec<FlagReason>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub kept: Vec<Tracklet>,
    pub flagged: Vec<FlaggedTrack>,
}

fn suggest_class(class: ObjectClass) -> Option<ObjectClass> {
    match class {
        ObjectClass::Pedestrian => Some(ObjectClass::Cyclist),
        ObjectClass::Cyclist => Some(ObjectClass::Motorcycle),
        _ => None,
    }
}

/// Split tracks into kept and flagged sets without touching any box.
pub fn filter_tracks(tracks: &[Tracklet], params: &RefineParams) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for t in tracks {
        let cp = params.class(t.class);
        let mut reasons = Vec::new();
        if t.len() < cp.min_track_length {
            reasons.push(FlagReason::Short { length: t.len(), min: cp.min_track_length });
        }
        let speed = average_speed(t, params.frame_rate);
        if speed > cp.max_speed {
            reasons.push(FlagReason::SpeedAnomaly {
                average_speed: speed,
                max_speed: cp.max_speed,
                suggested_class: suggest_class(t.class),
            });
        }
        if reasons.is_empty() {
            out.kept.push(t.clone());
        } else {
            out.flagged.push(FlaggedTrack { track: t.clone(), reasons });
        }
    }
    out
}

/// Move every entry of `track_id` at or after `from_frame` to `new_id`.
///
/// The target is created when absent. Fails without changing anything when
/// the target already has an entry inside the moved frame span.
pub fn fix_id_switch(tracks: &[Tracklet], track_id: u64, from_frame: usize, new_id: u64) -> Result<Vec<Tracklet>, RefineError> {
    if track_id == new_id {
        return Err(RefineError::SameId(track_id));
    }
    let src = tracks.iter().position(|t| t.id == track_id).ok_or(RefineError::UnknownTrack(track_id))?;
    let moved: Vec<TrackEntry> = tracks[src].entries.iter().filter(|e| e.frame >= from_frame).copied().collect();
    let (Some(first), Some(last)) = (moved.first(), moved.last()) else {
        return Err(RefineError::NothingToMove { id: track_id, frame: from_frame });
    };
    let (first, last) = (first.frame, last.frame);
    let dst = tracks.iter().position(|t| t.id == new_id);
    if let Some(d) = dst {
        if tracks[d].entries.iter().any(|e| (first..=last).contains(&e.frame)) {
            return Err(RefineError::IdConflict { new_id, first, last });
        }
    }

    let mut out = tracks.to_vec();
    out[src].entries.retain(|e| e.frame < from_frame);
    match dst {
        Some(d) => {
            out[d].entries.extend(moved);
            out[d].entries.sort_by_key(|e| e.frame);
        }
        None => out.push(Tracklet::with_entries(new_id, tracks[src].class, moved)),
    }
    out.retain(|t| !t.is_empty());
    out.sort_by_key(|t| t.id);
    Ok(out)
}

/// Flip a heading by half a turn, staying in `[-π, π)`.
pub fn flip_yaw(yaw: f64) -> f64 {
    if yaw < 0.0 {
        yaw + std::f64::consts::PI
    } else {
        yaw - std::f64::consts::PI
    }
}

/// Reverse the heading of every entry whose frame is in `frames`.
pub fn flip_orientation(track: &Tracklet, frames: RangeInclusive<usize>) -> Result<Tracklet, RefineError> {
    let (start, end) = (*frames.start(), *frames.end());
    let covered = match (track.first_frame(), track.last_frame()) {
        (Some(a), Some(b)) => a <= start && end <= b && start <= end,
        _ => false,
    };
    if !covered {
        return Err(RefineError::RangeOutsideTrack { id: track.id, start, end });
    }
    let mut out = track.clone();
    for e in out.entries.iter_mut().filter(|e| frames.contains(&e.frame)) {
        e.bbox.yaw = flip_yaw(e.bbox.yaw);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn bx(x: f64, y: f64, yaw: f64) -> Box7 {
        Box7::new([x, y, 0.85], [0.6, 0.6, 1.7], yaw).unwrap()
    }

    fn track_of(id: u64, class: ObjectClass, boxes: impl IntoIterator<Item = (usize, Box7)>) -> Tracklet {
        Tracklet::with_entries(id, class, boxes.into_iter().map(|(f, b)| TrackEntry::new(f, b, EntrySource::AutoMot)).collect())
    }

    #[test]
    fn keyframe_midpoint_and_short_arc() {
        let mut t = Tracklet::new(1, ObjectClass::Vehicle);
        t.push(TrackEntry::new(0, bx(0.0, 0.0, 170f64.to_radians()), EntrySource::Manual).keyframe(true)).unwrap();
        t.push(TrackEntry::new(10, bx(10.0, 0.0, -170f64.to_radians()), EntrySource::Manual).keyframe(true)).unwrap();
        let out = interpolate_keyframes(&t).unwrap();
        assert_eq!(out.len(), 11);
        let mid = out.entry_at(5).unwrap();
        assert!((mid.bbox.cx - 5.0).abs() < 1e-12 && mid.source == EntrySource::Interpolated && !mid.keyframe);
        assert!((mid.bbox.yaw.abs() - PI).abs() < 1e-12);
        assert_eq!(interpolate_keyframes(&out).unwrap(), out);
        assert_eq!(out.entries[0], t.entries[0]);
    }

    #[test]
    fn edited_entry_splits_span() {
        let mut t = Tracklet::new(1, ObjectClass::Vehicle);
        t.push(TrackEntry::new(0, bx(0.0, 0.0, 0.0), EntrySource::Manual).keyframe(true)).unwrap();
        t.push(TrackEntry::new(10, bx(10.0, 0.0, 0.0), EntrySource::Manual).keyframe(true)).unwrap();
        let t = interpolate_keyframes(&t).unwrap();
        let t = interpolate_keyframes(&edit_entry(&t, 4, bx(4.0, 2.0, 0.0))).unwrap();
        assert!(t.entry_at(4).unwrap().keyframe);
        assert!((t.entry_at(2).unwrap().bbox.cy - 1.0).abs() < 1e-12);
        assert!((t.entry_at(7).unwrap().bbox.cy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_keyframes() {
        let t = track_of(3, ObjectClass::Vehicle, [(0, bx(0.0, 0.0, 0.0))]);
        assert_eq!(interpolate_keyframes(&t), Err(RefineError::TooFewKeyframes { id: 3, found: 0 }));
    }

    #[test]
    fn smoothing_limits() {
        let curve = track_of(1, ObjectClass::Pedestrian, (0..30).map(|f| (f, bx((f as f64 * 0.3).sin(), f as f64 * 0.1, 0.0))));
        let interp = smooth_trajectory(&curve, 0.0, 10.0).unwrap();
        for (a, b) in interp.entries.iter().zip(&curve.entries) {
            assert!(a.bbox.center_distance_bev(&b.bbox) < 1e-9);
        }
        let line = track_of(1, ObjectClass::Pedestrian, (0..30).map(|f| (f, bx(f as f64 * 0.12, 1.0 - f as f64 * 0.05, 0.3))));
        for w in [0.2, 0.5, 0.9, 1.0] {
            let s = smooth_trajectory(&line, w, 10.0).unwrap();
            for (a, b) in s.entries.iter().zip(&line.entries) {
                assert!(a.bbox.center_distance_bev(&b.bbox) < 1e-9);
                assert_eq!((a.bbox.cz, a.bbox.size(), a.bbox.yaw), (b.bbox.cz, b.bbox.size(), b.bbox.yaw));
            }
        }
        assert!(matches!(smooth_trajectory(&line, 1.5, 10.0), Err(RefineError::BadWeight(_))));
        let short = track_of(1, ObjectClass::Pedestrian, (0..3).map(|f| (f, bx(0.0, 0.0, 0.0))));
        assert!(matches!(smooth_trajectory(&short, 0.5, 10.0), Err(RefineError::TooShort { .. })));
    }

    #[test]
    fn smoothing_endpoints_stay_close() {
        let zig = track_of(1, ObjectClass::Pedestrian, (0..20).map(|f| (f, bx(if f % 2 == 0 { 0.0 } else { 3.0 }, f as f64, 0.0))));
        let s = smooth_trajectory(&zig, 0.99, 10.0).unwrap();
        for i in [0, 19] {
            assert!(s.entries[i].bbox.center_distance_bev(&zig.entries[i].bbox) <= ENDPOINT_TOLERANCE + 1e-12);
        }
    }

    #[test]
    fn reorient_rules() {
        let walk = track_of(1, ObjectClass::Pedestrian, (0..30).map(|f| (f, bx(f as f64 * 0.15, 0.0, 1.0))));
        assert!(reorient_from_motion(&walk, 0.3, 10.0).entries.iter().all(|e| e.bbox.yaw.abs() < 1e-12));

        let wait_then_go = track_of(
            2,
            ObjectClass::Pedestrian,
            (0..60).map(|f| (f, bx(0.0, if f <= 20 { 0.0 } else { (f - 20) as f64 * 0.15 }, -2.0))),
        );
        let out = reorient_from_motion(&wait_then_go, 0.3, 10.0);
        for e in &out.entries {
            assert!((e.bbox.yaw - FRAC_PI_2).abs() < 1e-12, "frame {} yaw {}", e.frame, e.bbox.yaw);
        }

        let mut still = track_of(3, ObjectClass::Pedestrian, (0..20).map(|f| (f, bx(1.0, 1.0, 0.4))));
        still.entries[7].bbox.yaw = 2.0;
        assert!(reorient_from_motion(&still, 0.3, 10.0).entries.iter().all(|e| e.bbox.yaw == 0.4));

        let go_then_stop = track_of(4, ObjectClass::Pedestrian, (0..40).map(|f| (f, bx(-(f.min(20) as f64) * 0.15, 0.0, 0.0))));
        let out = reorient_from_motion(&go_then_stop, 0.3, 10.0);
        assert!((out.entries[39].bbox.yaw.abs() - PI).abs() < 1e-12);
    }

    #[test]
    fn static_averaging() {
        let jitter = [0.05, -0.05, 0.03, -0.03, 0.0];
        let parked = track_of(1, ObjectClass::Vehicle, jitter.iter().enumerate().map(|(f, j)| (f, bx(10.0 + j, 5.0 - j, 0.1))));
        let out = average_static_boxes(&parked, 0.5);
        for e in &out.entries {
            assert!((e.bbox.cx - 10.0).abs() < 1e-12 && (e.bbox.cy - 5.0).abs() < 1e-12);
            assert_eq!(e.bbox, out.entries[0].bbox);
        }
        let moving = track_of(1, ObjectClass::Vehicle, (0..5).map(|f| (f, bx(f as f64 * 5.0, 0.0, 0.0))));
        assert_eq!(average_static_boxes(&moving, 0.5), moving);
        let wrapped = track_of(1, ObjectClass::Vehicle, [(0, bx(0.0, 0.0, 179f64.to_radians())), (1, bx(0.0, 0.0, -179f64.to_radians()))]);
        let yaw = average_static_boxes(&wrapped, 0.5).entries[0].bbox.yaw;
        assert!((yaw.abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn filters() {
        let p = RefineParams::default();
        let short = track_of(1, ObjectClass::Vehicle, [(0, bx(0.0, 0.0, 0.0)), (1, bx(0.1, 0.0, 0.0))]);
        let fast_ped = track_of(2, ObjectClass::Pedestrian, (0..30).map(|f| (f, bx(f as f64 * 0.3, 0.0, 0.0))));
        let car = track_of(3, ObjectClass::Vehicle, (0..30).map(|f| (f, bx(f as f64 * 0.8, 0.0, 0.0))));
        let out = filter_tracks(&[short.clone(), fast_ped.clone(), car.clone()], &p);
        assert_eq!(out.kept, vec![car]);
        assert_eq!(out.flagged[0].track, short);
        assert!(matches!(out.flagged[0].reasons[0], FlagReason::Short { length: 2, min: 5 }));
        assert_eq!(out.flagged[1].track, fast_ped);
        match out.flagged[1].reasons[0] {
            FlagReason::SpeedAnomaly { average_speed, suggested_class, .. } => {
                assert!((average_speed - 3.0).abs() < 1e-9);
                assert_eq!(suggested_class, Some(ObjectClass::Cyclist));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn id_switch_split_merge_conflict() {
        let a = track_of(1, ObjectClass::Vehicle, (0..100).map(|f| (f, bx(f as f64, 0.0, 0.0))));
        let out = fix_id_switch(&[a.clone()], 1, 50, 2).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].first_frame(), out[0].last_frame()), (Some(0), Some(49)));
        assert_eq!((out[1].first_frame(), out[1].last_frame()), (Some(50), Some(99)));

        let early = track_of(7, ObjectClass::Vehicle, (0..30).map(|f| (f, bx(f as f64, 9.0, 0.0))));
        let merged = fix_id_switch(&[a.clone(), early.clone()], 1, 30, 7).unwrap();
        let seven = merged.iter().find(|t| t.id == 7).unwrap();
        assert_eq!(seven.len(), 100);
        seven.validate().unwrap();

        let tracks = vec![a, early];
        assert_eq!(fix_id_switch(&tracks, 1, 10, 7), Err(RefineError::IdConflict { new_id: 7, first: 10, last: 99 }));
        assert_eq!(fix_id_switch(&tracks, 9, 10, 7), Err(RefineError::UnknownTrack(9)));
        assert!(matches!(fix_id_switch(&tracks, 1, 500, 8), Err(RefineError::NothingToMove { .. })));
    }

    #[test]
    fn flip_examples() {
        assert_eq!(flip_yaw(0.0), -PI);
        let t = track_of(1, ObjectClass::Vehicle, (0..30).map(|f| (f, bx(0.0, 0.0, 0.5))));
        let once = flip_orientation(&t, 10..=20).unwrap();
        assert!(once.entries[..10].iter().zip(&t.entries).all(|(a, b)| a == b));
        assert!((once.entries[15].bbox.yaw - (0.5 - PI)).abs() < 1e-15);
        let twice = flip_orientation(&once, 10..=20).unwrap();
        for (a, b) in twice.entries.iter().zip(&t.entries) {
            assert!((a.bbox.yaw - b.bbox.yaw).abs() <= 4.0 * f64::EPSILON);
        }
        assert!(flip_orientation(&t, 25..=40).is_err());
    }
}
