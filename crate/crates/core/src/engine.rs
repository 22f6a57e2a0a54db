//! Pipeline entry points shared by the command line and the HTTP service.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect_io::{preprocess, DetectionFrameSet, DEFAULT_NMS_IOU, DEFAULT_SCORE_FLOOR};
use crate::geometry::{Box7, ObjectClass, Point, PointCloud};
use crate::ground::{build_height_grid, fit_plane_ransac, GridParams, GroundError, GroundModel};
use crate::mot::{run_mot_on_timestamps, MotError, MotParams};
use crate::refine::{self, FilterOutcome, FlaggedTrack, RefineError, RefineParams};
use crate::scene::SceneSequence;
use crate::sot::{self, PropagationNotice, SotError, SotParams};
use crate::store::EditKind;
use crate::track::{next_free_id, EntrySource, TrackEntry, Tracklet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Mot(#[from] MotError),
    #[error(transparent)]
    Sot(#[from] SotError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error("no track with id {0}")]
    UnknownTrack(u64),
    #[error("frame {frame} out of range for a {len}-frame sequence")]
    FrameRange { frame: usize, len: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutolabelParams {
    pub score_floor: f64,
    pub nms_iou: f64,
    pub mot: MotParams,
    pub refine: RefineParams,
}

impl Default for AutolabelParams {
    fn default() -> Self {
        Self { score_floor: DEFAULT_SCORE_FLOOR, nms_iou: DEFAULT_NMS_IOU, mot: MotParams::default(), refine: RefineParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutolabelResult {
    /// Every produced track, flagged ones included, ordered by id.
    pub tracks: Vec<Tracklet>,
    pub flagged: Vec<FlaggedSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedSummary {
    pub id: u64,
    pub reasons: Vec<refine::FlagReason>,
}

/// Detections to tracklets: preprocessing, tracking, filters, static averaging.
pub fn autolabel(timestamps: &[f64], dets: &DetectionFrameSet, params: &AutolabelParams) -> Result<AutolabelResult, EngineError> {
    let clean = preprocess(dets, params.score_floor, params.nms_iou);
    let tracks = run_mot_on_timestamps(timestamps, &clean, &params.mot)?;
    let mut refine_params = params.refine.clone();
    if let (Some(a), Some(b)) = (timestamps.first(), timestamps.get(1)) {
        refine_params.frame_rate = 1.0 / (b - a);
    }
    let FilterOutcome { kept, flagged } = refine::filter_tracks(&tracks, &refine_params);
    let average = |t: &Tracklet| refine::average_static_boxes(t, refine_params.class(t.class).static_displacement);
    let mut all: Vec<Tracklet> = kept.iter().map(average).collect();
    all.extend(flagged.iter().map(|f| average(&f.track)));
    all.sort_by_key(|t| t.id);
    Ok(AutolabelResult {
        tracks: all,
        flagged: flagged.into_iter().map(|FlaggedTrack { track, reasons }| FlaggedSummary { id: track.id, reasons }).collect(),
    })
}

pub fn autolabel_sequence(seq: &SceneSequence, dets: &DetectionFrameSet, params: &AutolabelParams) -> Result<AutolabelResult, EngineError> {
    autolabel(&seq.timestamps(), dets, params)
}

/// Renumber freshly produced tracks so they do not collide with `existing`.
pub fn renumber_after(existing: &[Tracklet], fresh: Vec<Tracklet>) -> Vec<Tracklet> {
    let base = next_free_id(existing);
    fresh
        .into_iter()
        .enumerate()
        .map(|(i, mut t)| {
            t.id = base + i as u64;
            t
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagateRequest {
    pub start_frame: usize,
    #[serde(rename = "box")]
    pub bbox: Box7,
    pub class: ObjectClass,
    /// Track to extend; a new id is allocated when absent.
    #[serde(default)]
    pub track_id: Option<u64>,
    #[serde(default)]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagateOutcome {
    pub track: Tracklet,
    pub added: usize,
    pub notice: Option<PropagationNotice>,
}

/// Propagate a start box and merge it into a new or existing track.
///
/// The start box itself is stored as a manual keyframe.
pub fn propagate_into(seq: &SceneSequence, tracks: &[Tracklet], req: &PropagateRequest) -> Result<PropagateOutcome, EngineError> {
    let mut params = SotParams::for_class(req.class).at_frame_rate(seq.frame_rate);
    if let Some(n) = req.n {
        params.horizon = n;
    }
    let prop = sot::propagate(seq, req.bbox, req.start_frame, &params)?;
    let mut track = match req.track_id {
        Some(id) => tracks.iter().find(|t| t.id == id).cloned().unwrap_or_else(|| Tracklet::new(id, req.class)),
        None => Tracklet::new(next_free_id(tracks), req.class),
    };
    track.upsert(TrackEntry::new(req.start_frame, req.bbox, EntrySource::Manual).keyframe(true));
    let added = prop.entries.len();
    for e in prop.entries {
        track.upsert(e);
    }
    Ok(PropagateOutcome { track, added, notice: prop.notice })
}

/// Single-track refinement operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TrackOp {
    Interpolate,
    Smooth {
        #[serde(default = "default_weight")]
        weight: f64,
    },
    Reorient {
        #[serde(default = "default_speed_floor")]
        speed_floor: f64,
    },
    Flip { start: usize, end: usize },
    Idfix { from_frame: usize, new_id: u64 },
    Average {
        #[serde(default)]
        static_displacement: Option<f64>,
    },
}

fn default_weight() -> f64 {
    refine::DEFAULT_SMOOTHING_WEIGHT
}

fn default_speed_floor() -> f64 {
    refine::DEFAULT_SPEED_FLOOR
}

impl TrackOp {
    pub fn edit_kind(&self) -> EditKind {
        match self {
            TrackOp::Interpolate => EditKind::Interpolate,
            TrackOp::Smooth { .. } | TrackOp::Average { .. } => EditKind::Smooth,
            TrackOp::Reorient { .. } => EditKind::Reorient,
            TrackOp::Flip { .. } => EditKind::Flip,
            TrackOp::Idfix { .. } => EditKind::IdFix,
        }
    }
}

/// Result of a track operation: tracks to write and ids to drop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackOpResult {
    pub put: Vec<Tracklet>,
    pub remove: Vec<u64>,
}

pub fn apply_track_op(tracks: &[Tracklet], track_id: u64, op: &TrackOp, frame_rate: f64) -> Result<TrackOpResult, EngineError> {
    let track = tracks.iter().find(|t| t.id == track_id).ok_or(EngineError::UnknownTrack(track_id))?;
    let one = |t: Tracklet| Ok(TrackOpResult { put: vec![t], remove: Vec::new() });
    match op {
        TrackOp::Interpolate => one(refine::interpolate_keyframes(track)?),
        TrackOp::Smooth { weight } => one(refine::smooth_trajectory(track, *weight, frame_rate)?),
        TrackOp::Reorient { speed_floor } => one(refine::reorient_from_motion(track, *speed_floor, frame_rate)),
        TrackOp::Flip { start, end } => one(refine::flip_orientation(track, *start..=*end)?),
        TrackOp::Average { static_displacement } => {
            let d = static_displacement.unwrap_or_else(|| refine::ClassParams::for_class(track.class).static_displacement);
            one(refine::average_static_boxes(track, d))
        }
        TrackOp::Idfix { from_frame, new_id } => {
            let out = refine::fix_id_switch(tracks, track_id, *from_frame, *new_id)?;
            let touched = [track_id, *new_id];
            let put: Vec<Tracklet> = out.iter().filter(|t| touched.contains(&t.id)).cloned().collect();
            let remove = touched.iter().copied().filter(|id| !put.iter().any(|t| t.id == *id)).collect();
            Ok(TrackOpResult { put, remove })
        }
    }
}

/// Fit a ground model to one frame.
///
/// The plane comes from RANSAC over every point; the height grid only uses
/// points within the inlier band of that plane.
pub fn fit_ground(cloud: &PointCloud, params: &GridParams) -> Result<GroundModel, EngineError> {
    let plane = fit_plane_ransac(&cloud.points, params.inlier_threshold, params.iterations, params.seed)?;
    let ground: Vec<Point> =
        cloud.points.iter().copied().filter(|p| plane.distance(p.x, p.y, p.z) <= params.inlier_threshold).collect();
    Ok(build_height_grid(&ground, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{f1_report, DEFAULT_F1_IOU};
    use crate::geometry::IouMetric;
    use crate::synth::{generate_scene, intersection_preset, synth_detector, DetectorConfig};

    #[test]
    fn autolabel_perfect_detections() {
        let seq = generate_scene(&intersection_preset(6, 60, 2));
        let dets = synth_detector(&seq, &DetectorConfig::default(), 1);
        let out = autolabel_sequence(&seq, &dets, &AutolabelParams::default()).unwrap();
        let r = f1_report(&out.tracks, &seq.gt_tracks, DEFAULT_F1_IOU, IouMetric::Bev);
        assert_eq!(r.overall.f1, 1.0, "{}", r.to_table());
        let empty = DetectionFrameSet::empty(seq.len(), dets.source);
        assert!(autolabel_sequence(&seq, &empty, &AutolabelParams::default()).unwrap().tracks.is_empty());
    }

    #[test]
    fn track_ops_and_renumber() {
        let b = |x: f64| Box7::new([x, 0.0, 0.75], [4.0, 2.0, 1.5], 0.0).unwrap();
        let t = Tracklet::with_entries(4, ObjectClass::Vehicle, (0..10).map(|f| TrackEntry::new(f, b(f as f64), EntrySource::AutoMot)).collect());
        let r = apply_track_op(&[t.clone()], 4, &TrackOp::Idfix { from_frame: 5, new_id: 9 }, 10.0).unwrap();
        assert_eq!(r.put.iter().map(|t| t.id).collect::<Vec<_>>(), vec![4, 9]);
        let r = apply_track_op(&[t.clone()], 4, &TrackOp::Idfix { from_frame: 0, new_id: 9 }, 10.0).unwrap();
        assert_eq!(r.remove, vec![4]);
        assert!(matches!(apply_track_op(&[t.clone()], 5, &TrackOp::Interpolate, 10.0), Err(EngineError::UnknownTrack(5))));
        let fresh = renumber_after(&[t.clone()], vec![t.clone(), t]);
        assert_eq!(fresh.iter().map(|t| t.id).collect::<Vec<_>>(), vec![5, 6]);
        let op: TrackOp = serde_json::from_str(r#"{"op":"smooth"}"#).unwrap();
        assert_eq!(op, TrackOp::Smooth { weight: 0.5 });
    }
}
