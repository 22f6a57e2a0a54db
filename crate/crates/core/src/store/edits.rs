//! Undoable edits on a sequence's tracks.
//!
//! Every edit stores the affected tracks before and after, so undo is an
//! exact swap. Undo itself is recorded as a new edit, which keeps the log
//! append-only: replaying every record from an empty state reproduces the
//! current tracks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geometry::ObjectClass;
use crate::track::{validate_tracks, TrackEntry, TrackError, Tracklet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Create,
    Move,
    Resize,
    Rotate,
    Delete,
    IdFix,
    Flip,
    Propagate,
    Autolabel,
    Interpolate,
    Smooth,
    Reorient,
    Replace,
    Undo,
}

/// State of one track id before and after an edit; `None` means absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackChange {
    pub id: u64,
    pub before: Option<Tracklet>,
    pub after: Option<Tracklet>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub id: u64,
    pub kind: EditKind,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    /// Affected frame span, inclusive.
    pub frames: Option<[usize; 2]>,
    pub changes: Vec<TrackChange>,
    /// For undo records, the edit that was reverted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub undoes: Option<u64>,
}

impl EditRecord {
    pub fn track_ids(&self) -> Vec<u64> {
        self.changes.iter().map(|c| c.id).collect()
    }
}

/// Requested mutation, before it is checked against the current state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditOp {
    /// Insert or replace one entry; creates the track when `class` is given.
    UpsertEntry {
        track_id: u64,
        #[serde(default)]
        class: Option<ObjectClass>,
        entry: TrackEntry,
        #[serde(default = "default_upsert_kind")]
        kind: EditKind,
    },
    DeleteEntry { track_id: u64, frame: usize },
    DeleteTrack { track_id: u64 },
    /// Set the listed tracks to the given content; other tracks are untouched.
    PutTracks { kind: EditKind, tracks: Vec<Tracklet>, #[serde(default)] remove: Vec<u64> },
    /// Replace the whole annotation set.
    ReplaceAll { tracks: Vec<Tracklet> },
}

fn default_upsert_kind() -> EditKind {
    EditKind::Move
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EditError {
    #[error("no track with id {0}")]
    UnknownTrack(u64),
    #[error("track {id} has no entry at frame {frame}")]
    UnknownEntry { id: u64, frame: usize },
    #[error("new track {0} needs a class")]
    MissingClass(u64),
    #[error(transparent)]
    Invalid(#[from] TrackError),
    #[error("nothing to undo")]
    NothingToUndo,
}

pub type TrackMap = BTreeMap<u64, Tracklet>;

pub fn to_map(tracks: &[Tracklet]) -> TrackMap {
    tracks.iter().map(|t| (t.id, t.clone())).collect()
}

pub fn from_map(map: &TrackMap) -> Vec<Tracklet> {
    map.values().cloned().collect()
}

/// Resolve an op into concrete per-track changes, without applying them.
pub fn plan(current: &TrackMap, op: &EditOp) -> Result<(EditKind, Vec<TrackChange>), EditError> {
    let change = |id: u64, after: Option<Tracklet>| TrackChange { id, before: current.get(&id).cloned(), after };
    let (kind, changes) = match op {
        EditOp::UpsertEntry { track_id, class, entry, kind } => {
            let mut t = match (current.get(track_id), class) {
                (Some(t), _) => t.clone(),
                (None, Some(c)) => Tracklet::new(*track_id, *c),
                (None, None) => return Err(EditError::MissingClass(*track_id)),
            };
            if let (Some(c), true) = (class, current.contains_key(track_id)) {
                t.class = *c;
            }
            let kind = if current.contains_key(track_id) { *kind } else { EditKind::Create };
            t.upsert(*entry);
            (kind, vec![change(*track_id, Some(t))])
        }
        EditOp::DeleteEntry { track_id, frame } => {
            let mut t = current.get(track_id).cloned().ok_or(EditError::UnknownTrack(*track_id))?;
            let i = t.entry_index(*frame).ok_or(EditError::UnknownEntry { id: *track_id, frame: *frame })?;
            t.entries.remove(i);
            let after = (!t.is_empty()).then_some(t);
            (EditKind::Delete, vec![change(*track_id, after)])
        }
        EditOp::DeleteTrack { track_id } => {
            if !current.contains_key(track_id) {
                return Err(EditError::UnknownTrack(*track_id));
            }
            (EditKind::Delete, vec![change(*track_id, None)])
        }
        EditOp::PutTracks { kind, tracks, remove } => {
            validate_tracks(tracks)?;
            let mut changes: Vec<TrackChange> = tracks.iter().map(|t| change(t.id, Some(t.clone()))).collect();
            changes.extend(remove.iter().filter(|id| !tracks.iter().any(|t| t.id == **id)).map(|&id| change(id, None)));
            (*kind, changes)
        }
        EditOp::ReplaceAll { tracks } => {
            validate_tracks(tracks)?;
            let next = to_map(tracks);
            let mut changes: Vec<TrackChange> = tracks.iter().map(|t| change(t.id, Some(t.clone()))).collect();
            changes.extend(current.keys().filter(|id| !next.contains_key(id)).map(|&id| change(id, None)));
            (EditKind::Replace, changes)
        }
    };
    let changes: Vec<TrackChange> = changes.into_iter().filter(|c| c.before != c.after).collect();
    let mut next = current.clone();
    apply_changes(&mut next, &changes, false);
    validate_tracks(&from_map(&next))?;
    Ok((kind, changes))
}

/// Apply changes forwards (`after`) or backwards (`before`).
pub fn apply_changes(state: &mut TrackMap, changes: &[TrackChange], backwards: bool) {
    let ordered: Box<dyn Iterator<Item = &TrackChange>> =
        if backwards { Box::new(changes.iter().rev()) } else { Box::new(changes.iter()) };
    for c in ordered {
        let target = if backwards { &c.before } else { &c.after };
        match target {
            Some(t) => {
                state.insert(c.id, t.clone());
            }
            None => {
                state.remove(&c.id);
            }
        }
    }
}

pub fn inverse(changes: &[TrackChange]) -> Vec<TrackChange> {
    changes
        .iter()
        .rev()
        .map(|c| TrackChange { id: c.id, before: c.after.clone(), after: c.before.clone() })
        .collect()
}

pub fn frame_span(changes: &[TrackChange]) -> Option<[usize; 2]> {
    let frames = changes.iter().flat_map(|c| {
        c.before.iter().chain(c.after.iter()).flat_map(|t| t.entries.iter().map(|e| e.frame))
    });
    frames.fold(None, |acc, f| match acc {
        None => Some([f, f]),
        Some([a, b]) => Some([a.min(f), b.max(f)]),
    })
}

/// Rebuild the track state by replaying a log from empty.
pub fn replay(records: &[EditRecord]) -> TrackMap {
    let mut state = TrackMap::new();
    for r in records {
        apply_changes(&mut state, &r.changes, false);
    }
    state
}

/// Ids of edits that can still be undone, oldest first.
pub fn undo_stack(records: &[EditRecord]) -> Vec<u64> {
    let mut stack = Vec::new();
    for r in records {
        match r.undoes {
            Some(_) => {
                stack.pop();
            }
            None => stack.push(r.id),
        }
    }
    stack
}
