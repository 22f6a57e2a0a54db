//! On-disk project layout.
//!
//! ```text
//! <root>/project.json
//! <root>/sequences/<id>/frames/000000.bin
//! <root>/sequences/<id>/annotations.json
//! <root>/sequences/<id>/edits.jsonl
//! <root>/sequences/<id>/detections.json   (optional)
//! <root>/sequences/<id>/ground_truth.json (optional)
//! <root>/sequences/<id>/ground.json       (optional)
//! ```
//!
//! All paths inside the manifest are relative to the root.

pub mod edits;
pub mod frames;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect_io::{self, DetectionFormat, DetectionFrameSet};
use crate::geometry::{ObjectClass, PointCloud};
use crate::ground::GroundModel;
use crate::scene::SceneSequence;
use crate::track::{validate_tracks, Tracklet};

pub use edits::{EditError, EditKind, EditOp, EditRecord, TrackChange};
pub use frames::FrameFormat;

pub const MANIFEST_FILE: &str = "project.json";
pub const SCHEMA_VERSION: u32 = 1;
pub const ANNOTATION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("unsupported {what} version {found}")]
    Version { what: &'static str, found: u32 },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("unknown sequence `{0}`")]
    UnknownSequence(String),
    #[error("sequence `{0}` already exists")]
    DuplicateSequence(String),
    #[error("frame {frame} ({path}): {message}")]
    Frame { frame: usize, path: PathBuf, message: String },
    #[error("frame {frame} out of range for a {len}-frame sequence")]
    FrameRange { frame: usize, len: usize },
    #[error("sequence `{0}` has no detections")]
    NoDetections(String),
    #[error("revision conflict: expected {expected}, current is {current}")]
    Conflict { expected: u64, current: u64 },
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Detections(#[from] detect_io::DetectIoError),
}

type Result<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    frames::write_atomic(path, text.as_bytes()).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub frame_count: usize,
    pub frame_rate: f64,
    #[serde(default)]
    pub frame_format: FrameFormat,
    pub frames: Vec<String>,
    pub annotations: String,
    pub edit_log: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub version: u32,
    pub classes: Vec<ObjectClass>,
    pub sequences: Vec<SequenceEntry>,
}

impl Default for ProjectManifest {
    fn default() -> Self {
        Self { version: SCHEMA_VERSION, classes: ObjectClass::ALL.to_vec(), sequences: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnnotationFile {
    version: u32,
    tracks: Vec<Tracklet>,
}

pub fn annotations_to_json(tracks: &[Tracklet]) -> String {
    serde_json::to_string_pretty(&AnnotationFile { version: ANNOTATION_VERSION, tracks: tracks.to_vec() }).expect("serializable")
}

pub fn annotations_from_json(text: &str) -> std::result::Result<Vec<Tracklet>, String> {
    let f: AnnotationFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if f.version != ANNOTATION_VERSION {
        return Err(format!("unsupported annotation version {}", f.version));
    }
    validate_tracks(&f.tracks).map_err(|e| e.to_string())?;
    Ok(f.tracks)
}

/// Atomically replace an annotation file.
pub fn save_annotations(path: &Path, tracks: &[Tracklet]) -> Result<()> {
    validate_tracks(tracks).map_err(EditError::from)?;
    frames::write_atomic(path, annotations_to_json(tracks).as_bytes()).map_err(io_err(path))
}

pub fn load_annotations(path: &Path) -> Result<Vec<Tracklet>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    annotations_from_json(&text).map_err(|message| StoreError::Parse { path: path.to_path_buf(), message })
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// A project directory with its manifest.
#[derive(Debug, Clone)]
pub struct Project {
    root: PathBuf,
    manifest: ProjectManifest,
}

impl Project {
    /// Create an empty project, or fail if a manifest already exists.
    pub fn create(root: &Path) -> Result<Project> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let path = root.join(MANIFEST_FILE);
        if path.exists() {
            return Err(StoreError::InvalidManifest(format!("{} already exists", path.display())));
        }
        let p = Project { root: root.to_path_buf(), manifest: ProjectManifest::default() };
        p.write_manifest()?;
        Ok(p)
    }

    pub fn open(root: &Path) -> Result<Project> {
        let manifest: ProjectManifest = read_json(&root.join(MANIFEST_FILE))?;
        if manifest.version != SCHEMA_VERSION {
            return Err(StoreError::Version { what: "manifest", found: manifest.version });
        }
        let p = Project { root: root.to_path_buf(), manifest };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        for (i, s) in self.manifest.sequences.iter().enumerate() {
            if self.manifest.sequences[..i].iter().any(|o| o.id == s.id) {
                return Err(StoreError::InvalidManifest(format!("duplicate sequence id `{}`", s.id)));
            }
            if s.frame_count == 0 || s.frames.len() != s.frame_count {
                return Err(StoreError::InvalidManifest(format!(
                    "sequence `{}` lists {} frame files for frame_count {}",
                    s.id,
                    s.frames.len(),
                    s.frame_count
                )));
            }
            if !(s.frame_rate > 0.0) {
                return Err(StoreError::InvalidManifest(format!("sequence `{}` has frame_rate {}", s.id, s.frame_rate)));
            }
            let referenced = s.frames.iter().chain([&s.annotations]).chain(s.detections.iter()).chain(s.ground_truth.iter()).chain(s.ground_model.iter());
            for rel in referenced {
                let p = self.root.join(rel);
                if !p.exists() {
                    return Err(StoreError::InvalidManifest(format!("missing file {}", p.display())));
                }
            }
        }
        Ok(())
    }

    fn write_manifest(&self) -> Result<()> {
        write_json(&self.root.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &ProjectManifest {
        &self.manifest
    }

    pub fn sequence_ids(&self) -> Vec<String> {
        self.manifest.sequences.iter().map(|s| s.id.clone()).collect()
    }

    pub fn entry(&self, id: &str) -> Result<&SequenceEntry> {
        self.manifest.sequences.iter().find(|s| s.id == id).ok_or_else(|| StoreError::UnknownSequence(id.to_string()))
    }

    fn entry_mut(&mut self, id: &str) -> Result<&mut SequenceEntry> {
        self.manifest.sequences.iter_mut().find(|s| s.id == id).ok_or_else(|| StoreError::UnknownSequence(id.to_string()))
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Write a sequence's frames (and ground truth when present) and register it.
    pub fn add_sequence(&mut self, id: &str, seq: &SceneSequence, format: FrameFormat) -> Result<()> {
        if self.manifest.sequences.iter().any(|s| s.id == id) {
            return Err(StoreError::DuplicateSequence(id.to_string()));
        }
        if seq.is_empty() {
            return Err(StoreError::InvalidManifest(format!("sequence `{id}` has no frames")));
        }
        let base = format!("sequences/{id}");
        let frame_dir = self.root.join(&base).join("frames");
        fs::create_dir_all(&frame_dir).map_err(io_err(&frame_dir))?;
        let mut frames_rel = Vec::with_capacity(seq.len());
        for (i, cloud) in seq.frames.iter().enumerate() {
            let rel = format!("{base}/frames/{i:06}.{}", format.extension());
            let p = self.path(&rel);
            frames::write_frame(&p, cloud, format).map_err(io_err(&p))?;
            frames_rel.push(rel);
        }
        let annotations = format!("{base}/annotations.json");
        save_annotations(&self.path(&annotations), &[])?;
        let edit_log = format!("{base}/edits.jsonl");
        let log_path = self.path(&edit_log);
        fs::write(&log_path, b"").map_err(io_err(&log_path))?;
        let ground_truth = if seq.gt_tracks.is_empty() {
            None
        } else {
            let rel = format!("{base}/ground_truth.json");
            save_annotations(&self.path(&rel), &seq.gt_tracks)?;
            Some(rel)
        };
        self.manifest.sequences.push(SequenceEntry {
            id: id.to_string(),
            frame_count: seq.len(),
            frame_rate: seq.frame_rate,
            frame_format: format,
            frames: frames_rel,
            annotations,
            edit_log,
            detections: None,
            ground_truth,
            ground_model: None,
        });
        self.write_manifest()
    }

    pub fn load_frame(&self, id: &str, frame: usize) -> Result<PointCloud> {
        let e = self.entry(id)?;
        let rel = e.frames.get(frame).ok_or(StoreError::FrameRange { frame, len: e.frame_count })?;
        let path = self.path(rel);
        frames::read_frame(&path, e.frame_format, frame as f64 / e.frame_rate, frame)
            .map_err(|message| StoreError::Frame { frame, path, message })
    }

    /// Decode every frame plus any stored ground truth.
    pub fn load_sequence(&self, id: &str) -> Result<SceneSequence> {
        let e = self.entry(id)?;
        let frames = (0..e.frame_count).map(|f| self.load_frame(id, f)).collect::<Result<Vec<_>>>()?;
        let gt_tracks = match &e.ground_truth {
            Some(rel) => load_annotations(&self.path(rel))?,
            None => Vec::new(),
        };
        Ok(SceneSequence { frames, frame_rate: e.frame_rate, gt_tracks, ground_plane: None })
    }

    pub fn ground_truth(&self, id: &str) -> Result<Option<Vec<Tracklet>>> {
        match &self.entry(id)?.ground_truth {
            Some(rel) => load_annotations(&self.path(rel)).map(Some),
            None => Ok(None),
        }
    }

    pub fn save_detections(&mut self, id: &str, dets: &DetectionFrameSet) -> Result<()> {
        let rel = format!("sequences/{id}/detections.json");
        let path = self.path(&rel);
        self.entry(id)?;
        frames::write_atomic(&path, detect_io::detections_to_json(dets).as_bytes()).map_err(io_err(&path))?;
        self.entry_mut(id)?.detections = Some(rel);
        self.write_manifest()
    }

    pub fn load_detections(&self, id: &str) -> Result<DetectionFrameSet> {
        let e = self.entry(id)?;
        let rel = e.detections.as_ref().ok_or_else(|| StoreError::NoDetections(id.to_string()))?;
        Ok(detect_io::load_detections(&self.path(rel), DetectionFormat::Json, e.frame_count)?)
    }

    pub fn has_detections(&self, id: &str) -> bool {
        self.entry(id).map(|e| e.detections.is_some()).unwrap_or(false)
    }

    pub fn save_ground_model(&mut self, id: &str, model: &GroundModel) -> Result<()> {
        let rel = format!("sequences/{id}/ground.json");
        let path = self.path(&rel);
        self.entry(id)?;
        let text = model.to_json().expect("serializable");
        frames::write_atomic(&path, text.as_bytes()).map_err(io_err(&path))?;
        self.entry_mut(id)?.ground_model = Some(rel);
        self.write_manifest()
    }

    pub fn load_ground_model(&self, id: &str) -> Result<Option<GroundModel>> {
        let Some(rel) = &self.entry(id)?.ground_model else { return Ok(None) };
        let path = self.path(rel);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        GroundModel::from_json(&text).map(Some).map_err(|message| StoreError::Parse { path, message })
    }

    /// Open the annotation state of one sequence for reading and editing.
    pub fn annotations(&self, id: &str) -> Result<SequenceAnnotations> {
        let e = self.entry(id)?;
        SequenceAnnotations::open(self.path(&e.annotations), self.path(&e.edit_log))
    }
}

/// Current tracks of a sequence plus the edit log behind them.
///
/// The revision is the number of records in the log. Writers must quote the
/// revision they based their edit on; a mismatch is rejected untouched.
#[derive(Debug, Clone)]
pub struct SequenceAnnotations {
    annotation_path: PathBuf,
    log_path: PathBuf,
    tracks: edits::TrackMap,
    log: Vec<EditRecord>,
}

impl SequenceAnnotations {
    pub fn open(annotation_path: PathBuf, log_path: PathBuf) -> Result<Self> {
        let tracks = edits::to_map(&load_annotations(&annotation_path)?);
        let log = if log_path.exists() {
            let text = fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str(l).map_err(|e| StoreError::Parse { path: log_path.clone(), message: e.to_string() }))
                .collect::<Result<Vec<EditRecord>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { annotation_path, log_path, tracks, log })
    }

    pub fn revision(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn tracks(&self) -> Vec<Tracklet> {
        edits::from_map(&self.tracks)
    }

    pub fn track(&self, id: u64) -> Option<&Tracklet> {
        self.tracks.get(&id)
    }

    pub fn log(&self) -> &[EditRecord] {
        &self.log
    }

    pub fn undo_depth(&self) -> usize {
        edits::undo_stack(&self.log).len()
    }

    fn check_revision(&self, expected: u64) -> Result<()> {
        if expected != self.revision() {
            return Err(StoreError::Conflict { expected, current: self.revision() });
        }
        Ok(())
    }

    fn commit(&mut self, kind: EditKind, changes: Vec<TrackChange>, undoes: Option<u64>) -> Result<EditRecord> {
        let mut next = self.tracks.clone();
        edits::apply_changes(&mut next, &changes, false);
        let record = EditRecord {
            id: self.log.last().map_or(1, |r| r.id + 1),
            kind,
            timestamp_ms: now_ms(),
            frames: edits::frame_span(&changes),
            changes,
            undoes,
        };
        let mut line = serde_json::to_string(&record).expect("serializable");
        line.push('\n');
        let mut f = fs::OpenOptions::new().create(true).append(true).open(&self.log_path).map_err(io_err(&self.log_path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&self.log_path))?;
        f.sync_all().map_err(io_err(&self.log_path))?;
        save_annotations(&self.annotation_path, &edits::from_map(&next))?;
        self.tracks = next;
        self.log.push(record.clone());
        Ok(record)
    }

    /// Validate and apply an edit made against revision `expected`.
    pub fn apply(&mut self, expected: u64, op: &EditOp) -> Result<EditRecord> {
        self.check_revision(expected)?;
        let (kind, changes) = edits::plan(&self.tracks, op)?;
        self.commit(kind, changes, None)
    }

    /// Revert the most recent edit that has not been undone yet.
    pub fn undo(&mut self, expected: u64) -> Result<EditRecord> {
        self.check_revision(expected)?;
        let target = *edits::undo_stack(&self.log).last().ok_or(EditError::NothingToUndo)?;
        let original = self.log.iter().find(|r| r.id == target).expect("stack ids come from the log");
        let changes = edits::inverse(&original.changes);
        self.commit(EditKind::Undo, changes, Some(target))
    }

    /// Tracks obtained by replaying the log from an empty state.
    pub fn replayed(&self) -> Vec<Tracklet> {
        edits::from_map(&edits::replay(&self.log))
    }
}
