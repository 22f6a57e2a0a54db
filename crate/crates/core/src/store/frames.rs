//! Point-cloud frame files.
//!
//! Binary frames are flat little-endian `f32` records of `x y z intensity`.
//! The ASCII variant holds one whitespace-separated record per line.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Point, PointCloud};

const RECORD_BYTES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameFormat {
    #[default]
    Bin,
    Ascii,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Bin => "bin",
            FrameFormat::Ascii => "txt",
        }
    }
}

pub fn encode_bin(points: &[Point]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * RECORD_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_bin(bytes: &[u8]) -> Result<Vec<Point>, String> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(format!("{} bytes is not a whole number of {RECORD_BYTES}-byte points", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(RECORD_BYTES)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[4 * i], c[4 * i + 1], c[4 * i + 2], c[4 * i + 3]]) as f64;
            Point::new(f(0), f(1), f(2), f(3))
        })
        .collect())
}

pub fn encode_ascii(points: &[Point]) -> String {
    let mut s = String::with_capacity(points.len() * 40);
    for p in points {
        s.push_str(&format!("{} {} {} {}\n", p.x as f32, p.y as f32, p.z as f32, p.intensity as f32));
    }
    s
}

pub fn decode_ascii(text: &str) -> Result<Vec<Point>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let v: Result<Vec<f32>, _> = l.split_whitespace().map(str::parse::<f32>).collect();
            match v {
                Ok(v) if v.len() == 4 => Ok(Point::new(v[0] as f64, v[1] as f64, v[2] as f64, v[3] as f64)),
                Ok(v) => Err(format!("line {}: expected 4 values, found {}", n + 1, v.len())),
                Err(e) => Err(format!("line {}: {e}", n + 1)),
            }
        })
        .collect()
}

/// Write `data` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, data: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_frame(path: &Path, cloud: &PointCloud, format: FrameFormat) -> std::io::Result<()> {
    match format {
        FrameFormat::Bin => write_atomic(path, &encode_bin(&cloud.points)),
        FrameFormat::Ascii => write_atomic(path, encode_ascii(&cloud.points).as_bytes()),
    }
}

pub fn read_frame(path: &Path, format: FrameFormat, timestamp: f64, frame_index: usize) -> Result<PointCloud, String> {
    let bytes = fs::read(path).map_err(|e| e.to_string())?;
    let points = match format {
        FrameFormat::Bin => decode_bin(&bytes)?,
        FrameFormat::Ascii => decode_ascii(std::str::from_utf8(&bytes).map_err(|e| e.to_string())?)?,
    };
    Ok(PointCloud::new(points, timestamp, frame_index))
}

/// Every `k`-th point starting with the first, as a binary payload.
pub fn decimated_payload(cloud: &PointCloud, k: usize) -> Vec<u8> {
    let k = k.max(1);
    let pts: Vec<Point> = cloud.points.iter().step_by(k).copied().collect();
    encode_bin(&pts)
}
