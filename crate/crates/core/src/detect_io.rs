//! Detection files and tracker-input pre-processing.
//!
//! JSON layout: an array of `{"frame": int, "class": str, "score": float,
//! "box": [cx, cy, cz, l, w, h, yaw]}`. The CSV mirror has the header
//! `frame,class,score,cx,cy,cz,l,w,h,yaw`.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geometry::{nms, Box7, Detection, IouMetric, ObjectClass};

pub const DEFAULT_SCORE_FLOOR: f64 = 0.1;
pub const DEFAULT_NMS_IOU: f64 = 0.25;

const CSV_HEADER: [&str; 10] = ["frame", "class", "score", "cx", "cy", "cz", "l", "w", "h", "yaw"];

#[derive(Debug, Error)]
pub enum DetectIoError {
    #[error("cannot read detections: {0}")]
    Io(#[from] std::io::Error),
    #[error("detection file is not valid {format}: {message}")]
    Parse { format: &'static str, message: String },
    #[error("record {record} (frame {frame}): field `{field}`: {reason}")]
    Field { record: usize, frame: String, field: &'static str, reason: String },
    #[error("frame count mismatch: detections have {found} frames, sequence has {expected}")]
    FrameCount { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    File,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFormat {
    Json,
    Csv,
}

impl DetectionFormat {
    /// Guess from the file extension; anything other than `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DetectionFormat::Csv,
            _ => DetectionFormat::Json,
        }
    }
}

/// Per-frame detections aligned with a sequence's frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrameSet {
    pub frames: Vec<Vec<Detection>>,
    pub source: DetectionSource,
}

impl DetectionFrameSet {
    pub fn empty(frame_count: usize, source: DetectionSource) -> Self {
        Self { frames: vec![Vec::new(); frame_count], source }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn total(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    /// Flatten into `(frame, detection)` pairs in frame order.
    pub fn iter_flat(&self) -> impl Iterator<Item = (usize, &Detection)> {
        self.frames.iter().enumerate().flat_map(|(f, ds)| ds.iter().map(move |d| (f, d)))
    }
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    frame: usize,
    class: &'a str,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 7],
}

struct RawRecord {
    frame: i64,
    class: String,
    score: f64,
    bbox: [f64; 7],
}

fn field_err(record: usize, frame: Option<i64>, field: &'static str, reason: impl Into<String>) -> DetectIoError {
    DetectIoError::Field {
        record,
        frame: frame.map_or_else(|| "?".to_string(), |f| f.to_string()),
        field,
        reason: reason.into(),
    }
}

fn validate(record: usize, raw: RawRecord, frame_count: usize) -> Result<(usize, Detection), DetectIoError> {
    let frame = Some(raw.frame);
    if raw.frame < 0 || raw.frame as usize >= frame_count {
        return Err(field_err(record, frame, "frame", format!("outside 0..{frame_count}")));
    }
    let class = ObjectClass::from_str(&raw.class).map_err(|e| field_err(record, frame, "class", e.to_string()))?;
    if !raw.score.is_finite() || !(0.0..=1.0).contains(&raw.score) {
        return Err(field_err(record, frame, "score", format!("{} not in [0, 1]", raw.score)));
    }
    let bbox = Box7::try_from(raw.bbox).map_err(|e| field_err(record, frame, "box", e.to_string()))?;
    Ok((raw.frame as usize, Detection { bbox, class, score: raw.score }))
}

fn parse_json_record(record: usize, v: &Value) -> Result<RawRecord, DetectIoError> {
    let obj = v.as_object().ok_or_else(|| field_err(record, None, "record", "expected an object"))?;
    let frame = obj
        .get("frame")
        .and_then(Value::as_i64)
        .ok_or_else(|| field_err(record, None, "frame", "missing or not an integer"))?;
    let f = Some(frame);
    let class = obj
        .get("class")
        .and_then(Value::as_str)
        .ok_or_else(|| field_err(record, f, "class", "missing or not a string"))?
        .to_string();
    let score = obj
        .get("score")
        .and_then(Value::as_f64)
        .ok_or_else(|| field_err(record, f, "score", "missing or not a number"))?;
    let arr = obj
        .get("box")
        .and_then(Value::as_array)
        .ok_or_else(|| field_err(record, f, "box", "missing or not an array"))?;
    if arr.len() != 7 {
        return Err(field_err(record, f, "box", format!("expected 7 values, got {}", arr.len())));
    }
    let mut bbox = [0.0; 7];
    for (slot, x) in bbox.iter_mut().zip(arr) {
        *slot = x.as_f64().ok_or_else(|| field_err(record, f, "box", "non-numeric entry"))?;
    }
    Ok(RawRecord { frame, class, score, bbox })
}

pub fn parse_detections_json(text: &str, frame_count: usize) -> Result<DetectionFrameSet, DetectIoError> {
    let mut set = DetectionFrameSet::empty(frame_count, DetectionSource::File);
    if text.trim().is_empty() {
        return Ok(set);
    }
    let root: Value = serde_json::from_str(text)
        .map_err(|e| DetectIoError::Parse { format: "json", message: e.to_string() })?;
    let records = root
        .as_array()
        .ok_or_else(|| DetectIoError::Parse { format: "json", message: "top level must be an array".into() })?;
    for (i, v) in records.iter().enumerate() {
        let (frame, det) = validate(i, parse_json_record(i, v)?, frame_count)?;
        set.frames[frame].push(det);
    }
    Ok(set)
}

pub fn parse_detections_csv(text: &str, frame_count: usize) -> Result<DetectionFrameSet, DetectIoError> {
    let mut set = DetectionFrameSet::empty(frame_count, DetectionSource::File);
    if text.trim().is_empty() {
        return Ok(set);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| DetectIoError::Parse { format: "csv", message: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(DetectIoError::Parse {
            format: "csv",
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| DetectIoError::Parse { format: "csv", message: e.to_string() })?;
        let frame: i64 = row[0].parse().map_err(|_| field_err(i, None, "frame", "not an integer"))?;
        let f = Some(frame);
        let score: f64 = row[2].parse().map_err(|_| field_err(i, f, "score", "not a number"))?;
        let mut bbox = [0.0; 7];
        for (k, slot) in bbox.iter_mut().enumerate() {
            *slot = row[3 + k].parse().map_err(|_| field_err(i, f, "box", format!("column `{}` not a number", CSV_HEADER[3 + k])))?;
        }
        let raw = RawRecord { frame, class: row[1].to_string(), score, bbox };
        let (frame, det) = validate(i, raw, frame_count)?;
        set.frames[frame].push(det);
    }
    Ok(set)
}

pub fn load_detections(path: &Path, format: DetectionFormat, frame_count: usize) -> Result<DetectionFrameSet, DetectIoError> {
    let text = fs::read_to_string(path)?;
    match format {
        DetectionFormat::Json => parse_detections_json(&text, frame_count),
        DetectionFormat::Csv => parse_detections_csv(&text, frame_count),
    }
}

pub fn detections_to_json(set: &DetectionFrameSet) -> String {
    let records: Vec<JsonRecord> = set
        .iter_flat()
        .map(|(frame, d)| JsonRecord { frame, class: d.class.as_str(), score: d.score, bbox: d.bbox.into() })
        .collect();
    serde_json::to_string(&records).expect("detection records always serialize")
}

pub fn detections_to_csv(set: &DetectionFrameSet) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for (frame, d) in set.iter_flat() {
        let b: [f64; 7] = d.bbox.into();
        let mut row = vec![frame.to_string(), d.class.to_string(), d.score.to_string()];
        row.extend(b.iter().map(|v| v.to_string()));
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn save_detections(path: &Path, set: &DetectionFrameSet, format: DetectionFormat) -> std::io::Result<()> {
    let body = match format {
        DetectionFormat::Json => detections_to_json(set),
        DetectionFormat::Csv => detections_to_csv(set),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(body.as_bytes())
}

/// Drop detections below `score_floor`, then run class-aware BEV NMS frame by frame.
pub fn preprocess(dets: &DetectionFrameSet, score_floor: f64, nms_iou: f64) -> DetectionFrameSet {
    let frames = dets
        .frames
        .iter()
        .map(|frame| {
            let confident: Vec<Detection> = frame.iter().copied().filter(|d| d.score >= score_floor).collect();
            nms(&confident, nms_iou, IouMetric::Bev)
        })
        .collect();
    DetectionFrameSet { frames, source: dets.source }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, class: ObjectClass, score: f64) -> Detection {
        Detection::new(Box7::new([cx, 0.0, 0.0], [4.0, 2.0, 1.5], 0.0).unwrap(), class, score).unwrap()
    }

    #[test]
    fn empty_file_yields_empty_frames() {
        let set = parse_detections_json("", 10).unwrap();
        assert_eq!(set.frames.len(), 10);
        assert!(set.frames.iter().all(Vec::is_empty));
        let set = parse_detections_csv("", 4).unwrap();
        assert_eq!(set.frames.len(), 4);
    }

    #[test]
    fn single_record() {
        let text = r#"[{"frame": 3, "class": "vehicle", "score": 0.8, "box": [1,2,0,4,2,1.5,0.1]}]"#;
        let set = parse_detections_json(text, 5).unwrap();
        assert_eq!(set.total(), 1);
        assert_eq!(set.frames[3].len(), 1);
        assert_eq!(set.frames[3][0].class, ObjectClass::Vehicle);
        assert_eq!(set.frames[3][0].score, 0.8);
    }

    #[test]
    fn bad_score_names_frame_and_field() {
        let text = r#"[{"frame": 2, "class": "vehicle", "score": 1.7, "box": [1,2,0,4,2,1.5,0.1]}]"#;
        let err = parse_detections_json(text, 5).unwrap_err().to_string();
        assert!(err.contains("frame 2") && err.contains("score"), "{err}");
    }

    #[test]
    fn unknown_class_rejected() {
        let text = r#"[{"frame": 0, "class": "tram", "score": 0.5, "box": [1,2,0,4,2,1.5,0.1]}]"#;
        let err = parse_detections_json(text, 5).unwrap_err().to_string();
        assert!(err.contains("class") && err.contains("tram"), "{err}");
    }

    #[test]
    fn malformed_box_rejected() {
        let text = r#"[{"frame": 1, "class": "bus", "score": 0.5, "box": [1,2,0]}]"#;
        assert!(parse_detections_json(text, 5).unwrap_err().to_string().contains("box"));
        let csv = "frame,class,score,cx,cy,cz,l,w,h,yaw\n1,bus,0.5,1,2,0,x,2,3,0\n";
        assert!(parse_detections_csv(csv, 5).unwrap_err().to_string().contains("`l`"));
    }

    #[test]
    fn json_and_csv_agree() {
        let mut set = DetectionFrameSet::empty(3, DetectionSource::File);
        set.frames[0].push(det(1.25, ObjectClass::Vehicle, 0.75));
        set.frames[2].push(det(-3.5, ObjectClass::Pedestrian, 0.3));
        let from_json = parse_detections_json(&detections_to_json(&set), 3).unwrap();
        let from_csv = parse_detections_csv(&detections_to_csv(&set), 3).unwrap();
        assert_eq!(from_json, set);
        assert_eq!(from_csv, set);
    }

    #[test]
    fn preprocess_examples() {
        let mut set = DetectionFrameSet::empty(1, DetectionSource::File);
        set.frames[0] = vec![det(0.0, ObjectClass::Vehicle, 0.05), det(9.0, ObjectClass::Vehicle, 0.08)];
        assert!(preprocess(&set, 0.1, 0.25).frames[0].is_empty());

        // Shift of 0.2 m along a 4 m box: IoU = 3.8/4.2 ≈ 0.905.
        set.frames[0] = vec![det(0.0, ObjectClass::Vehicle, 0.9), det(0.2, ObjectClass::Vehicle, 0.7)];
        let out = preprocess(&set, 0.1, 0.25);
        assert_eq!(out.frames[0], vec![set.frames[0][0]]);

        set.frames[0] = vec![det(0.0, ObjectClass::Vehicle, 0.9), det(0.2, ObjectClass::Truck, 0.7)];
        assert_eq!(preprocess(&set, 0.1, 0.25).frames[0].len(), 2);
    }
}
