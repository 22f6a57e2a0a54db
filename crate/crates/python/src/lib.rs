//! Python bindings. Boxes are a native class; tracks, reports and
//! parameters cross the boundary as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use ptlabel_core::detect_io::{detections_to_json, parse_detections_json, preprocess};
use ptlabel_core::engine::{self, AutolabelParams, EngineError, PropagateRequest, TrackOp};
use ptlabel_core::eval::{count_id_switches, f1_report, full_report};
use ptlabel_core::geometry::{self, Box7, IouMetric, ObjectClass};
use ptlabel_core::ground::GridParams;
use ptlabel_core::store::{EditKind, EditOp, FrameFormat, Project as CoreProject, StoreError};
use ptlabel_core::synth::{generate_scene, intersection_preset, synth_detector, DetectorConfig};
use ptlabel_core::Tracklet;

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::UnknownSequence(_) | StoreError::FrameRange { .. } => PyKeyError::new_err(e.to_string()),
        StoreError::Conflict { .. } | StoreError::Edit(_) | StoreError::NoDetections(_) | StoreError::DuplicateSequence(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn engine_err(e: EngineError) -> PyErr {
    match e {
        EngineError::UnknownTrack(_) | EngineError::FrameRange { .. } => PyKeyError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py(py: Python<'_>, v: &impl Serialize) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn parse_class(s: &str) -> PyResult<ObjectClass> {
    s.parse().map_err(|e: geometry::GeometryError| PyValueError::new_err(e.to_string()))
}

fn parse_metric(s: &str) -> PyResult<IouMetric> {
    match s {
        "bev" => Ok(IouMetric::Bev),
        "3d" => Ok(IouMetric::ThreeD),
        _ => Err(PyValueError::new_err(format!("unknown metric `{s}`; expected bev or 3d"))),
    }
}

/// Oriented 3D box: center, size (length, width, height) and yaw.
#[pyclass(name = "Box", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyBox(Box7);

#[pymethods]
impl PyBox {
    #[new]
    fn new(cx: f64, cy: f64, cz: f64, length: f64, width: f64, height: f64, yaw: f64) -> PyResult<Self> {
        Box7::new([cx, cy, cz], [length, width, height], yaw).map(PyBox).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_list(v: [f64; 7]) -> PyResult<Self> {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6])
    }

    fn to_list(&self) -> [f64; 7] {
        self.0.into()
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.0.center()
    }

    #[getter]
    fn size(&self) -> [f64; 3] {
        self.0.size()
    }

    #[getter]
    fn yaw(&self) -> f64 {
        self.0.yaw
    }

    fn volume(&self) -> f64 {
        self.0.volume()
    }

    fn iou_bev(&self, other: &PyBox) -> f64 {
        geometry::iou_bev(&self.0, &other.0)
    }

    fn iou_3d(&self, other: &PyBox) -> f64 {
        geometry::iou_3d(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        let b = self.0;
        format!("Box(cx={}, cy={}, cz={}, length={}, width={}, height={}, yaw={})", b.cx, b.cy, b.cz, b.length, b.width, b.height, b.yaw)
    }

    fn __eq__(&self, other: &PyBox) -> bool {
        self.0 == other.0
    }
}

/// Bird's-eye-view IoU of two boxes.
#[pyfunction]
fn iou_bev(a: &PyBox, b: &PyBox) -> f64 {
    geometry::iou_bev(&a.0, &b.0)
}

#[pyfunction]
fn iou_3d(a: &PyBox, b: &PyBox) -> f64 {
    geometry::iou_3d(&a.0, &b.0)
}

/// Per-class F1 of predicted tracks against ground truth (both lists of track dicts).
#[pyfunction]
#[pyo3(signature = (pred, gt, iou = 0.3, metric = "bev"))]
fn evaluate_f1(py: Python<'_>, pred: &Bound<'_, PyAny>, gt: &Bound<'_, PyAny>, iou: f64, metric: &str) -> PyResult<Py<PyAny>> {
    let pred: Vec<Tracklet> = from_py(pred)?;
    let gt: Vec<Tracklet> = from_py(gt)?;
    let report = f1_report(&pred, &gt, iou, parse_metric(metric)?);
    let mut v = serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    v["id_switches"] = json!(count_id_switches(&pred, &gt, iou));
    to_py(py, &v)
}

/// Score-floor filtering followed by per-class NMS over a list of
/// `{frame, class, score, box}` records.
#[pyfunction]
#[pyo3(signature = (detections, score_floor = 0.3, nms_iou = 0.5))]
fn preprocess_detections(py: Python<'_>, detections: &Bound<'_, PyAny>, score_floor: f64, nms_iou: f64) -> PyResult<Py<PyAny>> {
    let text: String = py.import("json")?.call_method1("dumps", (detections,))?.extract()?;
    let records: Vec<Value> = serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let frames = records.iter().filter_map(|r| r["frame"].as_u64()).max().map_or(0, |f| f as usize + 1);
    let set = parse_detections_json(&text, frames).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let out = detections_to_json(&preprocess(&set, score_floor, nms_iou));
    Ok(py.import("json")?.call_method1("loads", (out,))?.unbind())
}

/// A project directory holding sequences, detections and annotations.
#[pyclass(name = "Project")]
struct PyProject {
    inner: CoreProject,
}

impl PyProject {
    fn frame_rate(&self, seq: &str) -> PyResult<f64> {
        Ok(self.inner.entry(seq).map_err(store_err)?.frame_rate)
    }

    fn put(&self, seq: &str, kind: EditKind, tracks: Vec<Tracklet>, remove: Vec<u64>) -> PyResult<(u64, Vec<u64>)> {
        let mut ann = self.inner.annotations(seq).map_err(store_err)?;
        let rev = ann.revision();
        let rec = ann.apply(rev, &EditOp::PutTracks { kind, tracks, remove }).map_err(store_err)?;
        Ok((ann.revision(), rec.track_ids()))
    }
}

#[pymethods]
impl PyProject {
    #[staticmethod]
    fn create(path: PathBuf) -> PyResult<Self> {
        Ok(PyProject { inner: CoreProject::create(&path).map_err(store_err)? })
    }

    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<Self> {
        Ok(PyProject { inner: CoreProject::open(&path).map_err(store_err)? })
    }

    fn sequences(&self) -> Vec<String> {
        self.inner.sequence_ids()
    }

    /// Generate a synthetic sequence with ground truth and detections.
    #[pyo3(signature = (sequence, seed = 0, objects = 10, frames = 100, dropout = 0.0, fp_rate = 0.0, box_noise = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn synth(&mut self, sequence: &str, seed: u64, objects: usize, frames: usize, dropout: f64, fp_rate: f64, box_noise: f64) -> PyResult<usize> {
        let cfg = intersection_preset(objects, frames, seed);
        let seq = generate_scene(&cfg);
        self.inner.add_sequence(sequence, &seq, FrameFormat::Bin).map_err(store_err)?;
        let dc = DetectorConfig { dropout, fp_rate, box_noise, ..DetectorConfig::default() };
        self.inner.save_detections(sequence, &synth_detector(&seq, &dc, seed)).map_err(store_err)?;
        Ok(seq.len())
    }

    fn revision(&self, sequence: &str) -> PyResult<u64> {
        Ok(self.inner.annotations(sequence).map_err(store_err)?.revision())
    }

    fn annotations(&self, py: Python<'_>, sequence: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.annotations(sequence).map_err(store_err)?.tracks())
    }

    fn ground_truth(&self, py: Python<'_>, sequence: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.ground_truth(sequence).map_err(store_err)?)
    }

    /// Replace all tracks; fails when `revision` is stale.
    fn replace_annotations(&self, sequence: &str, revision: u64, tracks: &Bound<'_, PyAny>) -> PyResult<u64> {
        let tracks: Vec<Tracklet> = from_py(tracks)?;
        let mut ann = self.inner.annotations(sequence).map_err(store_err)?;
        ann.apply(revision, &EditOp::ReplaceAll { tracks }).map_err(store_err)?;
        Ok(ann.revision())
    }

    fn undo(&self, sequence: &str) -> PyResult<u64> {
        let mut ann = self.inner.annotations(sequence).map_err(store_err)?;
        let rev = ann.revision();
        ann.undo(rev).map_err(store_err)?;
        Ok(ann.revision())
    }

    /// Run the auto-labeling pipeline on stored detections and store the tracks.
    #[pyo3(signature = (sequence, params = None))]
    fn autolabel(&self, py: Python<'_>, sequence: &str, params: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let params: AutolabelParams = params.map(from_py).transpose()?.unwrap_or_default();
        let entry = self.inner.entry(sequence).map_err(store_err)?.clone();
        let dets = self.inner.load_detections(sequence).map_err(store_err)?;
        let ts: Vec<f64> = (0..entry.frame_count).map(|f| f as f64 / entry.frame_rate).collect();
        let result = py.detach(|| engine::autolabel(&ts, &dets, &params)).map_err(engine_err)?;
        let existing = self.inner.annotations(sequence).map_err(store_err)?.tracks();
        let tracks = engine::renumber_after(&existing, result.tracks.clone());
        let remap: std::collections::HashMap<u64, u64> = result.tracks.iter().zip(&tracks).map(|(a, b)| (a.id, b.id)).collect();
        let (revision, ids) = self.put(sequence, EditKind::Autolabel, tracks, Vec::new())?;
        let flagged: Vec<Value> = result.flagged.iter().map(|f| json!({"id": remap[&f.id], "reasons": f.reasons})).collect();
        to_py(py, &json!({"revision": revision, "track_ids": ids, "flagged": flagged}))
    }

    /// Propagate `box` from `frame` with the single-object tracker.
    #[pyo3(signature = (sequence, frame, r#box, class_name, track_id = None, n = None))]
    #[allow(clippy::too_many_arguments)]
    fn propagate(
        &self,
        py: Python<'_>,
        sequence: &str,
        frame: usize,
        r#box: &PyBox,
        class_name: &str,
        track_id: Option<u64>,
        n: Option<usize>,
    ) -> PyResult<Py<PyAny>> {
        let seq = self.inner.load_sequence(sequence).map_err(store_err)?;
        let tracks = self.inner.annotations(sequence).map_err(store_err)?.tracks();
        let req = PropagateRequest { start_frame: frame, bbox: r#box.0, class: parse_class(class_name)?, track_id, n };
        let out = py.detach(|| engine::propagate_into(&seq, &tracks, &req)).map_err(engine_err)?;
        let id = out.track.id;
        let (revision, _) = self.put(sequence, EditKind::Propagate, vec![out.track], Vec::new())?;
        to_py(py, &json!({"revision": revision, "track_id": id, "added": out.added, "notice": out.notice}))
    }

    /// Apply a refinement to one track. `op` is a dict such as `{"op": "smooth", "weight": 0.5}`.
    fn refine(&self, py: Python<'_>, sequence: &str, track_id: u64, op: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let op: TrackOp = from_py(op)?;
        let tracks = self.inner.annotations(sequence).map_err(store_err)?.tracks();
        let res = engine::apply_track_op(&tracks, track_id, &op, self.frame_rate(sequence)?).map_err(engine_err)?;
        let (revision, ids) = self.put(sequence, op.edit_kind(), res.put, res.remove)?;
        to_py(py, &json!({"revision": revision, "track_ids": ids}))
    }

    /// Score stored annotations against stored ground truth.
    #[pyo3(signature = (sequence, iou = 0.3, metric = "bev"))]
    fn evaluate(&self, py: Python<'_>, sequence: &str, iou: f64, metric: &str) -> PyResult<Py<PyAny>> {
        let metric = parse_metric(metric)?;
        let pred = self.inner.annotations(sequence).map_err(store_err)?.tracks();
        let gt = self
            .inner
            .ground_truth(sequence)
            .map_err(store_err)?
            .ok_or_else(|| PyValueError::new_err(format!("sequence `{sequence}` has no ground truth")))?;
        let report = if self.inner.has_detections(sequence) {
            full_report(&pred, &self.inner.load_detections(sequence).map_err(store_err)?, &gt, iou, metric)
        } else {
            f1_report(&pred, &gt, iou, metric)
        };
        let mut v = serde_json::to_value(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        v["id_switches"] = json!(count_id_switches(&pred, &gt, iou));
        to_py(py, &v)
    }

    /// Fit and store a ground model from one frame; returns the plane coefficients.
    #[pyo3(signature = (sequence, frame = 0, seed = 0))]
    fn fit_ground(&mut self, sequence: &str, frame: usize, seed: u64) -> PyResult<[f64; 4]> {
        let cloud = self.inner.load_frame(sequence, frame).map_err(store_err)?;
        let model = engine::fit_ground(&cloud, &GridParams { seed, ..GridParams::default() }).map_err(engine_err)?;
        self.inner.save_ground_model(sequence, &model).map_err(store_err)?;
        Ok(model.plane.as_array())
    }

    fn frame_count(&self, sequence: &str) -> PyResult<usize> {
        Ok(self.inner.entry(sequence).map_err(store_err)?.frame_count)
    }

    /// Points of one frame as a list of (x, y, z, intensity).
    fn points(&self, sequence: &str, frame: usize) -> PyResult<Vec<[f64; 4]>> {
        let cloud = self.inner.load_frame(sequence, frame).map_err(store_err)?;
        Ok(cloud.points.iter().map(|p| [p.x, p.y, p.z, p.intensity]).collect())
    }
}

#[pymodule]
fn ptlabel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_class::<PyProject>()?;
    m.add_function(wrap_pyfunction!(iou_bev, m)?)?;
    m.add_function(wrap_pyfunction!(iou_3d, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_f1, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess_detections, m)?)?;
    m.add("CLASSES", ObjectClass::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
