use std::collections::BTreeMap;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use ptlabel_core::detect_io::DetectionFrameSet;
use ptlabel_core::engine::{self, AutolabelParams, PropagateRequest, TrackOp};
use ptlabel_core::eval::{count_id_switches, f1_report, full_report, EvalReport, DEFAULT_F1_IOU};
use ptlabel_core::geometry::IouMetric;
use ptlabel_core::ground::GridParams;
use ptlabel_core::refine::FlagReason;
use ptlabel_core::sot::PropagationNotice;
use ptlabel_core::store::frames::decimated_payload;
use ptlabel_core::store::{EditKind, EditOp, EditRecord};
use ptlabel_core::track::Tracklet;

use crate::error::{ApiError, ApiResult};
use crate::{lock, Shared};

pub async fn health() -> &'static str {
    "ok"
}

#[derive(Debug, Serialize)]
pub struct SequenceSummary {
    pub id: String,
    pub frame_count: usize,
    pub frame_rate: f64,
    pub has_detections: bool,
    pub has_ground_truth: bool,
    pub has_ground_model: bool,
}

fn summary(state: &Shared, id: &str) -> ApiResult<SequenceSummary> {
    let project = state.project();
    let e = project.entry(id)?;
    Ok(SequenceSummary {
        id: e.id.clone(),
        frame_count: e.frame_count,
        frame_rate: e.frame_rate,
        has_detections: e.detections.is_some(),
        has_ground_truth: e.ground_truth.is_some(),
        has_ground_model: e.ground_model.is_some(),
    })
}

pub async fn list_sequences(State(state): State<Shared>) -> ApiResult<Json<Vec<SequenceSummary>>> {
    let ids = state.project().sequence_ids();
    Ok(Json(ids.iter().map(|id| summary(&state, id)).collect::<ApiResult<_>>()?))
}

#[derive(Debug, Serialize)]
pub struct SequenceInfo {
    #[serde(flatten)]
    pub summary: SequenceSummary,
    pub revision: u64,
    pub undo_depth: usize,
    pub track_count: usize,
}

pub async fn sequence_info(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<SequenceInfo>> {
    let summary = summary(&state, &id)?;
    let seq = state.sequence(&id)?;
    let ann = lock(&seq);
    Ok(Json(SequenceInfo { summary, revision: ann.revision(), undo_depth: ann.undo_depth(), track_count: ann.tracks().len() }))
}

#[derive(Debug, Deserialize)]
pub struct PointsQuery {
    #[serde(default)]
    pub decimate: Option<usize>,
}

pub async fn frame_points(
    State(state): State<Shared>,
    Path((id, t)): Path<(String, usize)>,
    Query(q): Query<PointsQuery>,
) -> ApiResult<Response> {
    let k = q.decimate.unwrap_or(1);
    if k == 0 {
        return Err(ApiError::BadRequest("decimate must be at least 1".into()));
    }
    let cloud = tokio::task::spawn_blocking(move || state.project().load_frame(&id, t))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))??;
    let payload = decimated_payload(&cloud, k);
    let count = payload.len() / 16;
    Ok((
        [(header::CONTENT_TYPE, "application/octet-stream".to_string()), (header::HeaderName::from_static("x-point-count"), count.to_string())],
        payload,
    )
        .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationsBody {
    pub revision: u64,
    pub tracks: Vec<Tracklet>,
}

pub async fn get_annotations(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<AnnotationsBody>> {
    let seq = state.sequence(&id)?;
    let ann = lock(&seq);
    Ok(Json(AnnotationsBody { revision: ann.revision(), tracks: ann.tracks() }))
}

#[derive(Debug, Serialize)]
pub struct RecordSummary {
    pub id: u64,
    pub kind: EditKind,
    pub frames: Option<[usize; 2]>,
    pub track_ids: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub undoes: Option<u64>,
}

impl From<&EditRecord> for RecordSummary {
    fn from(r: &EditRecord) -> Self {
        RecordSummary { id: r.id, kind: r.kind, frames: r.frames, track_ids: r.track_ids(), undoes: r.undoes }
    }
}

#[derive(Debug, Serialize)]
pub struct Mutation {
    pub revision: u64,
    pub record: RecordSummary,
}

fn apply(state: &Shared, id: &str, revision: u64, op: &EditOp) -> ApiResult<Mutation> {
    let seq = state.sequence(id)?;
    let mut ann = lock(&seq);
    let record = ann.apply(revision, op)?;
    Ok(Mutation { revision: ann.revision(), record: (&record).into() })
}

pub async fn put_annotations(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<AnnotationsBody>,
) -> ApiResult<Json<Mutation>> {
    Ok(Json(apply(&state, &id, body.revision, &EditOp::ReplaceAll { tracks: body.tracks })?))
}

#[derive(Debug, Deserialize)]
pub struct EditBody {
    pub revision: u64,
    pub edit: EditOp,
}

pub async fn post_edit(State(state): State<Shared>, Path(id): Path<String>, Json(body): Json<EditBody>) -> ApiResult<Json<Mutation>> {
    Ok(Json(apply(&state, &id, body.revision, &body.edit)?))
}

pub async fn edit_log(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Vec<RecordSummary>>> {
    let seq = state.sequence(&id)?;
    let ann = lock(&seq);
    Ok(Json(ann.log().iter().map(RecordSummary::from).collect()))
}

#[derive(Debug, Deserialize)]
pub struct RevisionBody {
    pub revision: u64,
}

pub async fn undo(State(state): State<Shared>, Path(id): Path<String>, Json(body): Json<RevisionBody>) -> ApiResult<Json<Mutation>> {
    let seq = state.sequence(&id)?;
    let mut ann = lock(&seq);
    let record = ann.undo(body.revision)?;
    Ok(Json(Mutation { revision: ann.revision(), record: (&record).into() }))
}

// Autolabel jobs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct FlaggedTrack {
    pub id: u64,
    pub reasons: Vec<FlagReason>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AutolabelOutcome {
    pub revision: u64,
    pub record: u64,
    pub track_ids: Vec<u64>,
    /// Tracks that need review first; ids refer to the stored tracks.
    pub flagged: Vec<FlaggedTrack>,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: u64,
    pub sequence: String,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<AutolabelOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct AutolabelBody {
    pub revision: u64,
    #[serde(default)]
    pub params: AutolabelParams,
    /// Block until the job finishes and return its final status.
    #[serde(default)]
    pub wait: bool,
}

fn run_autolabel(state: &Shared, id: &str, revision: u64, params: &AutolabelParams) -> ApiResult<AutolabelOutcome> {
    let (dets, frame_rate): (DetectionFrameSet, f64) = {
        let project = state.project();
        (project.load_detections(id)?, project.entry(id)?.frame_rate)
    };
    let timestamps: Vec<f64> = (0..dets.frame_count()).map(|f| f as f64 / frame_rate).collect();
    let result = engine::autolabel(&timestamps, &dets, params)?;

    let seq = state.sequence(id)?;
    let mut ann = lock(&seq);
    let existing = ann.tracks();
    let renumbered = engine::renumber_after(&existing, result.tracks.clone());
    let new_id: BTreeMap<u64, u64> = result.tracks.iter().zip(&renumbered).map(|(a, b)| (a.id, b.id)).collect();
    let record = ann.apply(revision, &EditOp::PutTracks { kind: EditKind::Autolabel, tracks: renumbered.clone(), remove: Vec::new() })?;
    Ok(AutolabelOutcome {
        revision: ann.revision(),
        record: record.id,
        track_ids: renumbered.iter().map(|t| t.id).collect(),
        flagged: result.flagged.into_iter().map(|f| FlaggedTrack { id: new_id[&f.id], reasons: f.reasons }).collect(),
    })
}

pub async fn autolabel(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<AutolabelBody>,
) -> ApiResult<(StatusCode, Json<JobStatus>)> {
    {
        let seq = state.sequence(&id)?;
        let ann = lock(&seq);
        if ann.revision() != body.revision {
            return Err(ApiError::Conflict {
                message: format!("revision conflict: expected {}, current is {}", body.revision, ann.revision()),
                current_revision: Some(ann.revision()),
            });
        }
    }
    if !state.project().has_detections(&id) {
        return Err(ApiError::Unprocessable(format!("sequence `{id}` has no detections")));
    }
    if !lock(&state.busy).insert(id.clone()) {
        return Err(ApiError::Conflict { message: format!("an autolabel job is already running on `{id}`"), current_revision: None });
    }

    let job = state.new_job_id();
    let status = JobStatus { id: job, sequence: id.clone(), state: JobState::Running, result: None, error: None };
    lock(&state.jobs).insert(job, status.clone());

    let worker = state.clone();
    let handle = tokio::task::spawn_blocking(move || {
        let outcome = run_autolabel(&worker, &id, body.revision, &body.params);
        let mut jobs = lock(&worker.jobs);
        let s = jobs.get_mut(&job).expect("job registered");
        match outcome {
            Ok(r) => {
                s.state = JobState::Done;
                s.result = Some(r);
            }
            Err(e) => {
                s.state = JobState::Failed;
                s.error = Some(e.message().to_string());
            }
        }
        let done = s.clone();
        drop(jobs);
        lock(&worker.busy).remove(&id);
        done
    });
    if body.wait {
        let done = handle.await.map_err(|e| ApiError::Internal(e.to_string()))?;
        return Ok((StatusCode::OK, Json(done)));
    }
    Ok((StatusCode::ACCEPTED, Json(status)))
}

pub async fn job_status(State(state): State<Shared>, Path(job): Path<u64>) -> ApiResult<Json<JobStatus>> {
    lock(&state.jobs).get(&job).cloned().map(Json).ok_or_else(|| ApiError::NotFound(format!("no job {job}")))
}

// Propagation and track operations

#[derive(Debug, Deserialize)]
pub struct PropagateBody {
    pub revision: u64,
    #[serde(flatten)]
    pub request: PropagateRequest,
}

#[derive(Debug, Serialize)]
pub struct PropagateResponse {
    pub revision: u64,
    pub record: RecordSummary,
    pub track_id: u64,
    pub added: usize,
    pub notice: Option<PropagationNotice>,
}

pub async fn propagate(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<PropagateBody>,
) -> ApiResult<Json<PropagateResponse>> {
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let scene = worker.scene(&id)?;
        if body.request.start_frame >= scene.len() {
            return Err(ApiError::NotFound(format!("frame {} out of range for a {}-frame sequence", body.request.start_frame, scene.len())));
        }
        let seq = worker.sequence(&id)?;
        let base = lock(&seq).tracks();
        let out = engine::propagate_into(&scene, &base, &body.request)?;
        let mut ann = lock(&seq);
        let op = EditOp::PutTracks { kind: EditKind::Propagate, tracks: vec![out.track.clone()], remove: Vec::new() };
        let record = ann.apply(body.revision, &op)?;
        Ok(Json(PropagateResponse {
            revision: ann.revision(),
            record: (&record).into(),
            track_id: out.track.id,
            added: out.added,
            notice: out.notice,
        }))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
}

pub async fn track_op(
    State(state): State<Shared>,
    Path((id, tid, op)): Path<(String, u64, String)>,
    Json(mut body): Json<serde_json::Value>,
) -> ApiResult<Json<Mutation>> {
    const OPS: [&str; 6] = ["interpolate", "smooth", "reorient", "flip", "idfix", "average"];
    if !OPS.contains(&op.as_str()) {
        return Err(ApiError::NotFound(format!("unknown track operation `{op}`")));
    }
    let obj = body.as_object_mut().ok_or_else(|| ApiError::BadRequest("body must be a JSON object".into()))?;
    let revision = obj
        .remove("revision")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ApiError::BadRequest("missing revision".into()))?;
    obj.insert("op".into(), op.into());
    let track_op: TrackOp = serde_json::from_value(body).map_err(|e| ApiError::BadRequest(e.to_string()))?;

    let frame_rate = state.project().entry(&id)?.frame_rate;
    let seq = state.sequence(&id)?;
    let mut ann = lock(&seq);
    let result = engine::apply_track_op(&ann.tracks(), tid, &track_op, frame_rate)?;
    let record = ann.apply(revision, &EditOp::PutTracks { kind: track_op.edit_kind(), tracks: result.put, remove: result.remove })?;
    Ok(Json(Mutation { revision: ann.revision(), record: (&record).into() }))
}

// Ground

#[derive(Debug, Deserialize)]
pub struct GroundQuery {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Serialize)]
pub struct GroundHeight {
    pub z: f64,
    pub supported: bool,
}

pub async fn ground_height(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<GroundQuery>,
) -> ApiResult<Json<GroundHeight>> {
    let model = state.project().load_ground_model(&id)?.ok_or_else(|| ApiError::NotFound(format!("sequence `{id}` has no ground model")))?;
    Ok(Json(GroundHeight { z: model.height_at(q.x, q.y), supported: model.is_supported(q.x, q.y) }))
}

#[derive(Debug, Deserialize)]
pub struct FitGroundBody {
    #[serde(default)]
    pub frame: usize,
    #[serde(default)]
    pub cell_size: Option<f64>,
    #[serde(default)]
    pub inlier_threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Serialize)]
pub struct FitGroundResponse {
    pub plane: [f64; 4],
    pub nx: usize,
    pub ny: usize,
}

pub async fn fit_ground(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Json(body): Json<FitGroundBody>,
) -> ApiResult<Json<FitGroundResponse>> {
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let cloud = worker.project().load_frame(&id, body.frame)?;
        let defaults = GridParams::default();
        let params = GridParams {
            cell_size: body.cell_size.unwrap_or(defaults.cell_size),
            inlier_threshold: body.inlier_threshold.unwrap_or(defaults.inlier_threshold),
            seed: body.seed,
            ..defaults
        };
        let model = engine::fit_ground(&cloud, &params)?;
        worker.project_mut().save_ground_model(&id, &model)?;
        Ok(Json(FitGroundResponse { plane: model.plane.as_array(), nx: model.nx, ny: model.ny }))
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?
}

// Evaluation

#[derive(Debug, Deserialize)]
pub struct EvalBody {
    /// Evaluate this sequence's annotations against its stored ground truth.
    #[serde(default)]
    pub sequence: Option<String>,
    #[serde(default)]
    pub predictions: Option<Vec<Tracklet>>,
    #[serde(default)]
    pub ground_truth: Option<Vec<Tracklet>>,
    #[serde(default = "default_iou")]
    pub iou: f64,
    #[serde(default = "default_metric")]
    pub metric: IouMetric,
}

fn default_iou() -> f64 {
    DEFAULT_F1_IOU
}

fn default_metric() -> IouMetric {
    IouMetric::Bev
}

#[derive(Debug, Serialize)]
pub struct EvalResponse {
    #[serde(flatten)]
    pub report: EvalReport,
    pub id_switches: usize,
}

pub async fn eval(State(state): State<Shared>, Json(body): Json<EvalBody>) -> ApiResult<Json<EvalResponse>> {
    if !(body.iou > 0.0 && body.iou <= 1.0) {
        return Err(ApiError::BadRequest("iou must be in (0, 1]".into()));
    }
    let mut dets = None;
    let (preds, gt) = match &body.sequence {
        Some(id) => {
            let preds = match body.predictions {
                Some(p) => p,
                None => lock(&*state.sequence(id)?).tracks(),
            };
            let project = state.project();
            let gt = match body.ground_truth {
                Some(g) => g,
                None => project.ground_truth(id)?.ok_or_else(|| ApiError::Unprocessable(format!("sequence `{id}` has no ground truth")))?,
            };
            if project.has_detections(id) {
                dets = Some(project.load_detections(id)?);
            }
            (preds, gt)
        }
        None => match (body.predictions, body.ground_truth) {
            (Some(p), Some(g)) => (p, g),
            _ => return Err(ApiError::BadRequest("give a sequence or both predictions and ground_truth".into())),
        },
    };
    let report = match &dets {
        Some(d) => full_report(&preds, d, &gt, body.iou, body.metric),
        None => f1_report(&preds, &gt, body.iou, body.metric),
    };
    Ok(Json(EvalResponse { report, id_switches: count_id_switches(&preds, &gt, body.iou) }))
}
