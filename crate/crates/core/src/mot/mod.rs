//! Tracking-by-detection multi-object tracker.
//!
//! Per frame: predict every live track with the Kalman model, associate
//! detections in two score stages with Hungarian matching, update matched
//! tracks, coast unmatched ones, and spawn tentative tracks from confident
//! leftovers. Association only ever pairs tracks and detections of the same class.

pub mod assignment;
pub mod kalman;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou_bev, Box7, Detection, ObjectClass};
use crate::scene::SceneSequence;
use crate::detect_io::DetectionFrameSet;
use crate::track::{EntrySource, TrackEntry, Tracklet};

pub use assignment::{assignment_cost, hungarian, Assignment};
pub use kalman::{kf_init, kf_predict, kf_update, KalmanConfig, KalmanState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotError {
    #[error("detections cover {dets} frames but the sequence has {frames}")]
    Misaligned { frames: usize, dets: usize },
    #[error("frame timestamps must increase strictly (frame {0})")]
    NonIncreasingTime(usize),
    #[error("invalid association parameters for {class}: {reason}")]
    InvalidParams { class: ObjectClass, reason: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMetric {
    OneMinusBevIou,
    CenterDistance,
}

impl CostMetric {
    pub fn cost(self, predicted: &Box7, det: &Box7) -> f64 {
        match self {
            CostMetric::OneMinusBevIou => 1.0 - iou_bev(predicted, det),
            CostMetric::CenterDistance => predicted.center_distance_bev(det),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssocParams {
    pub stage1_score: f64,
    pub stage2_score: f64,
    pub cost_metric: CostMetric,
    /// Largest admissible association cost.
    pub gate: f64,
    pub hits_to_confirm: u32,
    pub max_misses: u32,
}

impl AssocParams {
    pub fn for_class(class: ObjectClass) -> Self {
        let (cost_metric, gate) = match class {
            ObjectClass::Pedestrian => (CostMetric::CenterDistance, 0.5),
            ObjectClass::Cyclist => (CostMetric::CenterDistance, 1.5),
            _ => (CostMetric::OneMinusBevIou, 0.9),
        };
        Self { stage1_score: 0.5, stage2_score: 0.2, cost_metric, gate, hits_to_confirm: 2, max_misses: 10 }
    }

    fn validate(&self, class: ObjectClass) -> Result<(), MotError> {
        let err = |reason| Err(MotError::InvalidParams { class, reason });
        if !(self.stage2_score > 0.0 && self.stage1_score < 1.0) {
            return err("stage scores must lie in (0, 1)");
        }
        if !(self.stage1_score > self.stage2_score) {
            return err("stage1_score must exceed stage2_score");
        }
        if !(self.gate > 0.0) {
            return err("gate must be positive");
        }
        if self.hits_to_confirm == 0 {
            return err("hits_to_confirm must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotParams {
    pub assoc: BTreeMap<ObjectClass, AssocParams>,
    pub kalman: KalmanConfig,
}

impl Default for MotParams {
    fn default() -> Self {
        Self {
            assoc: ObjectClass::ALL.into_iter().map(|c| (c, AssocParams::for_class(c))).collect(),
            kalman: KalmanConfig::default(),
        }
    }
}

impl MotParams {
    pub fn assoc_for(&self, class: ObjectClass) -> AssocParams {
        self.assoc.get(&class).copied().unwrap_or_else(|| AssocParams::for_class(class))
    }

    pub fn validate(&self) -> Result<(), MotError> {
        for (class, p) in &self.assoc {
            p.validate(*class)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lifecycle {
    Tentative,
    Confirmed,
    Dead,
}

/// A tracklet under construction together with its motion state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveTrack {
    pub tracklet: Tracklet,
    pub state: KalmanState,
    pub lifecycle: Lifecycle,
    pub misses: u32,
    pub hits: u32,
    /// Set once the track reaches `Confirmed`; survives death.
    pub ever_confirmed: bool,
}

impl ActiveTrack {
    pub fn id(&self) -> u64 {
        self.tracklet.id
    }

    pub fn class(&self) -> ObjectClass {
        self.tracklet.class
    }

    pub fn is_alive(&self) -> bool {
        self.lifecycle != Lifecycle::Dead
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Association {
    /// `(track index, detection index)` pairs.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_dets: Vec<usize>,
}

fn match_stage(
    predicted: &[Box7],
    dets: &[Detection],
    tracks: &[usize],
    candidates: &[usize],
    params: &AssocParams,
) -> Vec<(usize, usize)> {
    if tracks.is_empty() || candidates.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<f64>> = tracks
        .iter()
        .map(|&t| {
            candidates
                .iter()
                .map(|&d| {
                    let c = params.cost_metric.cost(&predicted[t], &dets[d].bbox);
                    if c <= params.gate {
                        c
                    } else {
                        f64::INFINITY
                    }
                })
                .collect()
        })
        .collect();
    hungarian(&cost)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (tracks[r], candidates[c])))
        .collect()
}

/// Two-stage association of predicted track boxes with one class's detections.
///
/// Stage one matches against detections scoring at least `stage1_score`;
/// stage two matches the leftover tracks against every remaining detection
/// scoring at least `stage2_score`. Pairs costlier than `gate` never match.
pub fn associate_two_stage(predicted: &[Box7], dets: &[Detection], params: &AssocParams) -> Association {
    let all_tracks: Vec<usize> = (0..predicted.len()).collect();
    let high: Vec<usize> = (0..dets.len()).filter(|&d| dets[d].score >= params.stage1_score).collect();
    let mut matches = match_stage(predicted, dets, &all_tracks, &high, params);

    let mut track_used = vec![false; predicted.len()];
    let mut det_used = vec![false; dets.len()];
    for &(t, d) in &matches {
        track_used[t] = true;
        det_used[d] = true;
    }
    let rest_tracks: Vec<usize> = all_tracks.iter().copied().filter(|&t| !track_used[t]).collect();
    let low: Vec<usize> = (0..dets.len())
        .filter(|&d| !det_used[d] && dets[d].score >= params.stage2_score)
        .collect();
    for (t, d) in match_stage(predicted, dets, &rest_tracks, &low, params) {
        track_used[t] = true;
        det_used[d] = true;
        matches.push((t, d));
    }
    matches.sort_unstable();

    Association {
        matches,
        unmatched_tracks: (0..predicted.len()).filter(|&t| !track_used[t]).collect(),
        unmatched_dets: (0..dets.len()).filter(|&d| !det_used[d]).collect(),
    }
}

/// Advance every live track by one frame.
///
/// `next_id` supplies fresh track ids and is advanced for each spawned track.
pub fn mot_step(
    tracks: &mut Vec<ActiveTrack>,
    next_id: &mut u64,
    frame_dets: &[Detection],
    frame_index: usize,
    dt: f64,
    params: &MotParams,
) {
    let cfg = &params.kalman;
    let live: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].is_alive()).collect();
    let mut predicted: BTreeMap<usize, (KalmanState, Box7)> = BTreeMap::new();
    for &i in &live {
        predicted.insert(i, kf_predict(&tracks[i].state, dt, cfg));
    }

    let mut spawn: Vec<Detection> = Vec::new();
    for class in ObjectClass::ALL {
        let ap = params.assoc_for(class);
        let class_tracks: Vec<usize> = live.iter().copied().filter(|&i| tracks[i].class() == class).collect();
        let class_dets: Vec<Detection> = frame_dets.iter().copied().filter(|d| d.class == class).collect();
        if class_tracks.is_empty() && class_dets.is_empty() {
            continue;
        }
        let boxes: Vec<Box7> = class_tracks.iter().map(|i| predicted[i].1).collect();
        let assoc = associate_two_stage(&boxes, &class_dets, &ap);

        for &(t, d) in &assoc.matches {
            let ti = class_tracks[t];
            let det = &class_dets[d];
            let track = &mut tracks[ti];
            track.state = kf_update(&predicted[&ti].0, det, cfg);
            track.misses = 0;
            track.hits += 1;
            if track.lifecycle == Lifecycle::Tentative && track.hits >= ap.hits_to_confirm {
                track.lifecycle = Lifecycle::Confirmed;
                track.ever_confirmed = true;
            }
            let entry = TrackEntry::new(frame_index, track.state.to_box(), EntrySource::AutoMot);
            track.tracklet.push(entry).expect("frames advance monotonically");
        }
        for &t in &assoc.unmatched_tracks {
            let ti = class_tracks[t];
            let track = &mut tracks[ti];
            let (state, pbox) = predicted[&ti].clone();
            track.state = state;
            track.misses += 1;
            track.hits = 0;
            if track.lifecycle == Lifecycle::Tentative || track.misses > ap.max_misses {
                track.lifecycle = Lifecycle::Dead;
                continue;
            }
            let entry = TrackEntry::new(frame_index, pbox, EntrySource::AutoMotPredicted);
            track.tracklet.push(entry).expect("frames advance monotonically");
        }
        spawn.extend(
            assoc
                .unmatched_dets
                .iter()
                .map(|&d| class_dets[d])
                .filter(|d| d.score >= ap.stage1_score),
        );
    }

    for det in spawn {
        let ap = params.assoc_for(det.class);
        let state = kf_init(&det, cfg);
        let mut tracklet = Tracklet::new(*next_id, det.class);
        *next_id += 1;
        tracklet
            .push(TrackEntry::new(frame_index, det.bbox, EntrySource::AutoMot))
            .expect("fresh tracklet");
        let lifecycle = if ap.hits_to_confirm <= 1 { Lifecycle::Confirmed } else { Lifecycle::Tentative };
        let ever_confirmed = lifecycle == Lifecycle::Confirmed;
        tracks.push(ActiveTrack { tracklet, state, lifecycle, misses: 0, hits: 1, ever_confirmed });
    }
}

/// Drop coasted predictions after a track's last real match.
fn trim_trailing_predictions(t: &mut Tracklet) {
    while t.entries.last().is_some_and(|e| e.source == EntrySource::AutoMotPredicted) {
        t.entries.pop();
    }
}

/// Run the tracker over a whole sequence and return every confirmed tracklet, ordered by id.
pub fn run_mot(seq: &SceneSequence, dets: &DetectionFrameSet, params: &MotParams) -> Result<Vec<Tracklet>, MotError> {
    run_mot_on_timestamps(&seq.timestamps(), dets, params)
}

pub fn run_mot_on_timestamps(
    timestamps: &[f64],
    dets: &DetectionFrameSet,
    params: &MotParams,
) -> Result<Vec<Tracklet>, MotError> {
    if timestamps.len() != dets.frame_count() {
        return Err(MotError::Misaligned { frames: timestamps.len(), dets: dets.frame_count() });
    }
    params.validate()?;
    let mut tracks: Vec<ActiveTrack> = Vec::new();
    let mut next_id = 1u64;
    for (f, frame_dets) in dets.frames.iter().enumerate() {
        let dt = if f == 0 { 0.0 } else { timestamps[f] - timestamps[f - 1] };
        if f > 0 && !(dt > 0.0) {
            return Err(MotError::NonIncreasingTime(f));
        }
        mot_step(&mut tracks, &mut next_id, frame_dets, f, dt, params);
    }

    let mut out: Vec<Tracklet> = tracks
        .into_iter()
        .filter(|t| t.ever_confirmed)
        .map(|t| {
            let mut tracklet = t.tracklet;
            trim_trailing_predictions(&mut tracklet);
            tracklet
        })
        .filter(|t| !t.is_empty())
        .collect();
    out.sort_by_key(|t| t.id);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(x: f64, y: f64, score: f64) -> Detection {
        Detection::new(Box7::new([x, y, 0.75], [4.0, 2.0, 1.5], 0.0).unwrap(), ObjectClass::Vehicle, score).unwrap()
    }

    #[test]
    fn stage_one_match() {
        let p = AssocParams::for_class(ObjectClass::Vehicle);
        let pred = [car(0.0, 0.0, 1.0).bbox];
        let a = associate_two_stage(&pred, &[car(0.3, 0.0, 0.9)], &p);
        assert_eq!(a.matches, vec![(0, 0)]);
        assert!(a.unmatched_dets.is_empty() && a.unmatched_tracks.is_empty());
    }

    #[test]
    fn stage_two_rescues_low_score() {
        let p = AssocParams::for_class(ObjectClass::Vehicle);
        let pred = [car(0.0, 0.0, 1.0).bbox];
        let a = associate_two_stage(&pred, &[car(0.0, 0.0, 0.3)], &p);
        assert_eq!(a.matches, vec![(0, 0)]);
        // Below the stage-two floor nothing matches.
        let a = associate_two_stage(&pred, &[car(0.0, 0.0, 0.1)], &p);
        assert!(a.matches.is_empty());
    }

    #[test]
    fn gate_rejects_far_detection() {
        let p = AssocParams::for_class(ObjectClass::Vehicle);
        let pred = [car(0.0, 0.0, 1.0).bbox];
        let a = associate_two_stage(&pred, &[car(30.0, 0.0, 0.9)], &p);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_dets, vec![0]);
        assert_eq!(a.unmatched_tracks, vec![0]);
    }

    #[test]
    fn lifecycle_birth_confirm_death() {
        let params = MotParams::default();
        let max_misses = params.assoc_for(ObjectClass::Vehicle).max_misses as usize;
        let mut tracks = Vec::new();
        let mut next_id = 1;
        mot_step(&mut tracks, &mut next_id, &[car(0.0, 0.0, 0.9)], 0, 0.1, &params);
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].lifecycle, Lifecycle::Tentative);
        mot_step(&mut tracks, &mut next_id, &[car(0.0, 0.0, 0.9)], 1, 0.1, &params);
        assert_eq!(tracks[0].lifecycle, Lifecycle::Confirmed);
        for k in 0..=max_misses {
            assert!(tracks[0].is_alive());
            mot_step(&mut tracks, &mut next_id, &[], 2 + k, 0.1, &params);
        }
        assert_eq!(tracks[0].lifecycle, Lifecycle::Dead);
        assert_eq!(tracks[0].tracklet.len(), 2 + max_misses);
    }

    #[test]
    fn tentative_dies_on_miss() {
        let params = MotParams::default();
        let mut tracks = Vec::new();
        let mut next_id = 1;
        mot_step(&mut tracks, &mut next_id, &[car(0.0, 0.0, 0.9)], 0, 0.1, &params);
        mot_step(&mut tracks, &mut next_id, &[], 1, 0.1, &params);
        assert_eq!(tracks[0].lifecycle, Lifecycle::Dead);
    }

    #[test]
    fn low_score_does_not_spawn() {
        let params = MotParams::default();
        let mut tracks = Vec::new();
        let mut next_id = 1;
        mot_step(&mut tracks, &mut next_id, &[car(0.0, 0.0, 0.3)], 0, 0.1, &params);
        assert!(tracks.is_empty());
    }

    #[test]
    fn invalid_params_rejected() {
        let mut params = MotParams::default();
        params.assoc.get_mut(&ObjectClass::Bus).unwrap().stage2_score = 0.6;
        let dets = DetectionFrameSet::empty(2, crate::detect_io::DetectionSource::File);
        assert!(run_mot_on_timestamps(&[0.0, 0.1], &dets, &params).is_err());
        let err = run_mot_on_timestamps(&[0.0], &dets, &MotParams::default()).unwrap_err();
        assert_eq!(err, MotError::Misaligned { frames: 1, dets: 2 });
    }
}
