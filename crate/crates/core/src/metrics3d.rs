//! Per-anchor 3D scores from triangulated box centres.

use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::geometry::reproject_bbox;
use crate::metrics2d::{find_streak, mean, Failure, RobustnessBase};
use crate::types::{AnchorRun, FrameLabel, StereoCalibration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameStatus3D {
    Valid,
    Ignore,
    /// Predicted boxes with `d <= 0`; cannot be triangulated.
    NonPositiveDisparity,
    NoPrediction,
    ExcessPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome3D {
    pub frame_index: usize,
    pub status: FrameStatus3D,
    /// Predicted disparity, when a prediction exists.
    pub disparity_px: Option<f64>,
    pub error_mm: Option<f64>,
}

pub fn frame_outcomes_3d(run: &AnchorRun, labels: &[FrameLabel], calib: &StereoCalibration) -> Vec<FrameOutcome3D> {
    run.predictions
        .iter()
        .map(|p| {
            let label = &labels[p.frame_index];
            let pred = p.outcome.bbox();
            let disparity_px = pred.map(|b| b.disparity());
            let (status, error_mm) = match (label.valid_bbox(), pred) {
                (Some(gt), Some(pred)) => match (reproject_bbox(pred, calib), reproject_bbox(gt, calib)) {
                    (Ok(p3), Ok(g3)) => (FrameStatus3D::Valid, Some(p3.distance(&g3))),
                    _ => (FrameStatus3D::NonPositiveDisparity, None),
                },
                (Some(_), None) => (FrameStatus3D::NoPrediction, None),
                (None, Some(_)) if !label.is_visible_in_both_stereo => (FrameStatus3D::ExcessPrediction, None),
                (None, _) => (FrameStatus3D::Ignore, None),
            };
            FrameOutcome3D { frame_index: p.frame_index, status, disparity_px, error_mm }
        })
        .collect()
}

/// 3D failure: `streak` consecutive frames whose error exceeds
/// `threshold_mm` or whose disparity is not positive. Missing predictions
/// on valid frames also count as bad.
pub fn detect_failure_3d(outcomes: &[FrameOutcome3D], threshold_mm: f64, streak: usize) -> Option<Failure> {
    find_streak(
        outcomes.iter().map(|o| match o.status {
            FrameStatus3D::Valid => Some(o.error_mm.is_some_and(|e| e > threshold_mm)),
            FrameStatus3D::NonPositiveDisparity | FrameStatus3D::NoPrediction => Some(true),
            FrameStatus3D::Ignore | FrameStatus3D::ExcessPrediction => None,
        }),
        streak,
    )
}

/// Mean 3D error over triangulable frames before the failure streak.
pub fn error_3d(outcomes: &[FrameOutcome3D], failure: Option<Failure>) -> (Option<f64>, usize) {
    let end = failure.map_or(outcomes.len(), |f| f.streak_start);
    mean(outcomes[..end].iter().filter_map(|o| match o.status {
        FrameStatus3D::Valid => o.error_mm,
        _ => None,
    }))
}

pub fn success_frames_3d(outcomes: &[FrameOutcome3D], failure: Option<Failure>, threshold_mm: f64) -> usize {
    let end = failure.map_or(outcomes.len(), |f| f.index + 1);
    outcomes[..end].iter().filter(|o| o.status == FrameStatus3D::Valid && o.error_mm.is_some_and(|e| e <= threshold_mm)).count()
}

pub fn robustness_3d(outcomes: &[FrameOutcome3D], failure: Option<Failure>, threshold_mm: f64, base: &RobustnessBase) -> Option<f64> {
    base.ratio(success_frames_3d(outcomes, failure, threshold_mm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResult3D {
    pub error_3d_mm: Option<f64>,
    pub n: usize,
    pub robustness: Option<f64>,
    pub n_success: usize,
    pub failure: Option<Failure>,
    pub failure_frame: Option<usize>,
}

pub fn score_anchor_3d(
    run: &AnchorRun,
    labels: &[FrameLabel],
    calib: &StereoCalibration,
    base: &RobustnessBase,
    cfg: &EvalConfig,
) -> (AnchorResult3D, Vec<FrameOutcome3D>) {
    let outcomes = frame_outcomes_3d(run, labels, calib);
    let failure = detect_failure_3d(&outcomes, cfg.err3d_fail_mm, cfg.fail_streak);
    let (error_3d_mm, n) = error_3d(&outcomes, failure);
    let n_success = success_frames_3d(&outcomes, failure, cfg.err3d_fail_mm);
    let result = AnchorResult3D {
        error_3d_mm,
        n,
        robustness: base.ratio(n_success),
        n_success,
        failure,
        failure_frame: failure.map(|f| outcomes[f.index].frame_index),
    };
    (result, outcomes)
}
