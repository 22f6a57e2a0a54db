use serde::{Deserialize, Serialize};

use crate::geometry::PointCloud;
use crate::ground::Plane;
use crate::track::Tracklet;

/// Ordered frames of a point-cloud sequence plus optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSequence {
    pub frames: Vec<PointCloud>,
    pub frame_rate: f64,
    #[serde(default)]
    pub gt_tracks: Vec<Tracklet>,
    #[serde(default)]
    pub ground_plane: Option<Plane>,
}

impl SceneSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }
}
