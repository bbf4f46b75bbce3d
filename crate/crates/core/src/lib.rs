//! Benchmarking toolkit for stereo bounding-box trackers.
//!
//! Trackers are initialised at anchor frames and run to the end of each
//! video. Their stereo predictions are scored per anchor in 2D (IoU,
//! centre error, robustness) and 3D (triangulated error, robustness),
//! aggregated with frame-count weights up to video, case and subset level,
//! and ranked by expected average overlap (EAO).
//!
//! Ground-truth boxes are derived from annotated keypoints by projecting a
//! small virtual sphere around the triangulated point into both views.

pub mod config;
pub mod dataset;
pub mod eao;
pub mod geometry;
pub mod harness;
pub mod image_ops;
pub mod metrics2d;
pub mod metrics3d;
pub mod report;
pub mod scoring;
pub mod stats;
pub mod synth;
pub mod types;

pub use config::{EvalConfig, StereoIouCombine};
pub use types::{
    AnchorRun, BBox, CaseRecord, FrameLabel, FramePrediction, Keypoint2D, Outcome, Point3D, StereoBBox, StereoCalibration, SubsetRecord,
    VideoRecord, View,
};
