//! Semi-automated LiDAR annotation engine.
//!
//! Tracking-by-detection auto-labeling, single-object propagation,
//! trajectory post-processing, evaluation metrics, persistence, and a
//! synthetic scene generator for end-to-end checks.

pub mod detect_io;
pub mod engine;
pub mod eval;
pub mod geometry;
pub mod ground;
pub mod mot;
pub mod refine;
pub mod scene;
pub mod sot;
pub mod store;
pub mod synth;
pub mod track;

pub use geometry::{Box7, Detection, IouMetric, ObjectClass, Point, PointCloud};
pub use scene::SceneSequence;
pub use track::{EntrySource, TrackEntry, Tracklet};
