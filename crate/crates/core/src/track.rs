use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Box7, ObjectClass};

/// Where a tracklet entry came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    AutoMot,
    /// Motion-model prediction recorded while the MOT tracker had no matching detection.
    AutoMotPredicted,
    AutoSot,
    Interpolated,
    Manual,
}

impl EntrySource {
    pub fn as_str(self) -> &'static str {
        match self {
            EntrySource::AutoMot => "auto_mot",
            EntrySource::AutoMotPredicted => "auto_mot_predicted",
            EntrySource::AutoSot => "auto_sot",
            EntrySource::Interpolated => "interpolated",
            EntrySource::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: Box7,
    pub source: EntrySource,
    pub keyframe: bool,
}

impl TrackEntry {
    pub fn new(frame: usize, bbox: Box7, source: EntrySource) -> Self {
        Self { frame, bbox, source, keyframe: false }
    }

    pub fn keyframe(mut self, keyframe: bool) -> Self {
        self.keyframe = keyframe;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("track {id}: frame {frame} does not follow frame {prev}")]
    Unordered { id: u64, prev: usize, frame: usize },
    #[error("duplicate track id {0}")]
    DuplicateId(u64),
}

/// One object's identified sequence of per-frame boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: u64,
    #[serde(rename = "class")]
    pub class: ObjectClass,
    pub entries: Vec<TrackEntry>,
}

impl Tracklet {
    pub fn new(id: u64, class: ObjectClass) -> Self {
        Self { id, class, entries: Vec::new() }
    }

    pub fn with_entries(id: u64, class: ObjectClass, entries: Vec<TrackEntry>) -> Self {
        Self { id, class, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.entries.first().map(|e| e.frame)
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.entries.last().map(|e| e.frame)
    }

    pub fn entry_at(&self, frame: usize) -> Option<&TrackEntry> {
        self.entries
            .binary_search_by_key(&frame, |e| e.frame)
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn entry_index(&self, frame: usize) -> Option<usize> {
        self.entries.binary_search_by_key(&frame, |e| e.frame).ok()
    }

    /// Append an entry; its frame must be later than the current last frame.
    pub fn push(&mut self, entry: TrackEntry) -> Result<(), TrackError> {
        if let Some(prev) = self.last_frame() {
            if entry.frame <= prev {
                return Err(TrackError::Unordered { id: self.id, prev, frame: entry.frame });
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Insert or replace the entry at `entry.frame`, keeping frames sorted.
    pub fn upsert(&mut self, entry: TrackEntry) {
        match self.entries.binary_search_by_key(&entry.frame, |e| e.frame) {
            Ok(i) => self.entries[i] = entry,
            Err(i) => self.entries.insert(i, entry),
        }
    }

    pub fn keyframe_count(&self) -> usize {
        self.entries.iter().filter(|e| e.keyframe).count()
    }

    pub fn validate(&self) -> Result<(), TrackError> {
        for w in self.entries.windows(2) {
            if w[1].frame <= w[0].frame {
                return Err(TrackError::Unordered { id: self.id, prev: w[0].frame, frame: w[1].frame });
            }
        }
        Ok(())
    }
}

/// Check ordering within every track and id uniqueness across them.
pub fn validate_tracks(tracks: &[Tracklet]) -> Result<(), TrackError> {
    let mut seen = BTreeSet::new();
    for t in tracks {
        if !seen.insert(t.id) {
            return Err(TrackError::DuplicateId(t.id));
        }
        t.validate()?;
    }
    Ok(())
}

pub fn next_free_id(tracks: &[Tracklet]) -> u64 {
    tracks.iter().map(|t| t.id + 1).max().unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64) -> Box7 {
        Box7::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap()
    }

    #[test]
    fn push_rejects_out_of_order() {
        let mut t = Tracklet::new(1, ObjectClass::Vehicle);
        t.push(TrackEntry::new(3, b(0.0), EntrySource::Manual)).unwrap();
        assert!(t.push(TrackEntry::new(3, b(0.0), EntrySource::Manual)).is_err());
        assert!(t.push(TrackEntry::new(1, b(0.0), EntrySource::Manual)).is_err());
        t.push(TrackEntry::new(4, b(0.0), EntrySource::Manual)).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn upsert_keeps_order() {
        let mut t = Tracklet::new(1, ObjectClass::Vehicle);
        for f in [5, 1, 3, 3] {
            t.upsert(TrackEntry::new(f, b(f as f64), EntrySource::Manual));
        }
        assert_eq!(t.entries.iter().map(|e| e.frame).collect::<Vec<_>>(), vec![1, 3, 5]);
        assert_eq!(t.entry_at(3).unwrap().bbox.cx, 3.0);
        t.validate().unwrap();
    }

    #[test]
    fn duplicate_ids_rejected() {
        let a = Tracklet::new(2, ObjectClass::Vehicle);
        assert_eq!(validate_tracks(&[a.clone(), a]), Err(TrackError::DuplicateId(2)));
    }
}
