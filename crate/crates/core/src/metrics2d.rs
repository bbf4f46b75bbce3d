//! Per-anchor 2D scores: IoU, failure detection, accuracy, centre error and
//! robustness.

use serde::{Deserialize, Serialize};

use crate::config::{EvalConfig, StereoIouCombine};
use crate::types::{AnchorRun, BBox, FrameLabel, StereoBBox};

/// Intersection over union of two axis-aligned boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.u_max.min(b.u_max) - a.u_min.max(b.u_min)).max(0.0);
    let h = (a.v_max.min(b.v_max) - a.v_min.max(b.v_min)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Per-view IoU and their combination.
pub fn frame_iou(pred: &StereoBBox, gt: &StereoBBox, combine: StereoIouCombine) -> (f64, f64, f64) {
    let left = iou(&pred.left, &gt.left);
    let right = iou(&pred.right, &gt.right);
    (left, right, combine.combine(left, right))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrameStatus2D {
    /// Valid ground truth and a prediction.
    Valid,
    /// Ground truth difficult or not visible, and no excess prediction.
    Ignore,
    /// Valid ground truth but the tracker reported no target.
    NoPredictionVisible,
    /// The tracker predicted while the target was not visible.
    ExcessPrediction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutcome2D {
    pub frame_index: usize,
    pub status: FrameStatus2D,
    /// `(left, right, combined)`, present for `Valid` frames.
    pub iou: Option<(f64, f64, f64)>,
    /// Mean of the two views' centre distances, present for `Valid` frames.
    pub centre_error_px: Option<f64>,
}

impl FrameOutcome2D {
    fn min_view_iou(&self) -> Option<f64> {
        self.iou.map(|(l, r, _)| l.min(r))
    }
}

/// Position of a completed failure streak within an outcome sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Position of the first bad frame of the streak.
    pub streak_start: usize,
    /// Position of the frame that completed the streak.
    pub index: usize,
}

/// Finds the first run of `streak` bad frames.
///
/// `Some(true)` is bad, `Some(false)` resets the streak, `None` is skipped
/// without resetting it.
pub fn find_streak<I: IntoIterator<Item = Option<bool>>>(flags: I, streak: usize) -> Option<Failure> {
    let mut count = 0;
    let mut start = 0;
    for (pos, flag) in flags.into_iter().enumerate() {
        match flag {
            None => {}
            Some(false) => count = 0,
            Some(true) => {
                if count == 0 {
                    start = pos;
                }
                count += 1;
                if count == streak {
                    return Some(Failure { streak_start: start, index: pos });
                }
            }
        }
    }
    None
}

/// Classifies every frame of `run` against the labels.
pub fn frame_outcomes_2d(run: &AnchorRun, labels: &[FrameLabel], combine: StereoIouCombine) -> Vec<FrameOutcome2D> {
    run.predictions
        .iter()
        .map(|p| {
            let label = &labels[p.frame_index];
            let pred = p.outcome.bbox();
            let (status, iou, centre_error_px) = match (label.valid_bbox(), pred) {
                (Some(gt), Some(pred)) => {
                    let err = (pred.left.centre().distance(&gt.left.centre()) + pred.right.centre().distance(&gt.right.centre())) / 2.0;
                    (FrameStatus2D::Valid, Some(frame_iou(pred, gt, combine)), Some(err))
                }
                (Some(_), None) => (FrameStatus2D::NoPredictionVisible, None, None),
                (None, Some(_)) if !label.is_visible_in_both_stereo => (FrameStatus2D::ExcessPrediction, None, None),
                (None, _) => (FrameStatus2D::Ignore, None, None),
            };
            FrameOutcome2D { frame_index: p.frame_index, status, iou, centre_error_px }
        })
        .collect()
}

/// 2D failure: `streak` consecutive frames where either view's IoU is below
/// `threshold` or the tracker gave no box for a valid frame.
pub fn detect_failure_2d(outcomes: &[FrameOutcome2D], threshold: f64, streak: usize) -> Option<Failure> {
    find_streak(
        outcomes.iter().map(|o| match o.status {
            FrameStatus2D::Valid => Some(o.min_view_iou().is_some_and(|m| m < threshold)),
            FrameStatus2D::NoPredictionVisible => Some(true),
            FrameStatus2D::Ignore | FrameStatus2D::ExcessPrediction => None,
        }),
        streak,
    )
}

/// Frames scored by accuracy and centre error: valid frames with a
/// prediction, before the failure streak began.
fn accuracy_window(outcomes: &[FrameOutcome2D], failure: Option<Failure>) -> impl Iterator<Item = &FrameOutcome2D> {
    let end = failure.map_or(outcomes.len(), |f| f.streak_start);
    outcomes[..end].iter().filter(|o| o.status == FrameStatus2D::Valid)
}

/// Mean combined IoU and frame count. `None` when no frame qualifies.
pub fn accuracy(outcomes: &[FrameOutcome2D], failure: Option<Failure>) -> (Option<f64>, usize) {
    mean(accuracy_window(outcomes, failure).map(|o| o.iou.map_or(0.0, |(_, _, c)| c)))
}

/// Mean centre distance in pixels and frame count.
pub fn error_2d(outcomes: &[FrameOutcome2D], failure: Option<Failure>) -> (Option<f64>, usize) {
    mean(accuracy_window(outcomes, failure).map(|o| o.centre_error_px.unwrap_or(0.0)))
}

pub(crate) fn mean<I: Iterator<Item = f64>>(values: I) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        (None, 0)
    } else {
        (Some(sum / n as f64), n)
    }
}

/// Denominator shared by 2D and 3D robustness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RobustnessBase {
    pub n_vis_not_diff: usize,
    pub n_excess: usize,
}

impl RobustnessBase {
    pub fn from_outcomes(outcomes: &[FrameOutcome2D]) -> Self {
        let mut base = RobustnessBase::default();
        for o in outcomes {
            match o.status {
                FrameStatus2D::Valid | FrameStatus2D::NoPredictionVisible => base.n_vis_not_diff += 1,
                FrameStatus2D::ExcessPrediction => base.n_excess += 1,
                FrameStatus2D::Ignore => {}
            }
        }
        base
    }

    pub fn denominator(&self) -> usize {
        self.n_vis_not_diff + self.n_excess
    }

    pub fn ratio(&self, successes: usize) -> Option<f64> {
        match self.denominator() {
            0 => None,
            d => Some(successes as f64 / d as f64),
        }
    }
}

/// Frames where both views exceed `threshold`, up to the failure frame.
pub fn success_frames_2d(outcomes: &[FrameOutcome2D], failure: Option<Failure>, threshold: f64) -> usize {
    let end = failure.map_or(outcomes.len(), |f| f.index + 1);
    outcomes[..end].iter().filter(|o| o.status == FrameStatus2D::Valid && o.min_view_iou().is_some_and(|m| m > threshold)).count()
}

pub fn robustness_2d(outcomes: &[FrameOutcome2D], failure: Option<Failure>, threshold: f64) -> Option<f64> {
    RobustnessBase::from_outcomes(outcomes).ratio(success_frames_2d(outcomes, failure, threshold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorResult2D {
    pub accuracy: Option<f64>,
    pub error_2d_px: Option<f64>,
    /// Frames behind `accuracy` and `error_2d_px`.
    pub n: usize,
    pub robustness: Option<f64>,
    pub n_success: usize,
    pub base: RobustnessBase,
    pub failure: Option<Failure>,
    /// Absolute frame index at which the failure streak completed.
    pub failure_frame: Option<usize>,
}

pub fn score_anchor_2d(run: &AnchorRun, labels: &[FrameLabel], cfg: &EvalConfig) -> (AnchorResult2D, Vec<FrameOutcome2D>) {
    let outcomes = frame_outcomes_2d(run, labels, cfg.stereo_iou_combine);
    let failure = detect_failure_2d(&outcomes, cfg.iou_fail_threshold, cfg.fail_streak);
    let (accuracy, n) = accuracy(&outcomes, failure);
    let (error_2d_px, _) = error_2d(&outcomes, failure);
    let base = RobustnessBase::from_outcomes(&outcomes);
    let n_success = success_frames_2d(&outcomes, failure, cfg.iou_fail_threshold);
    let result = AnchorResult2D {
        accuracy,
        error_2d_px,
        n,
        robustness: base.ratio(n_success),
        n_success,
        base,
        failure,
        failure_frame: failure.map(|f| outcomes[f.index].frame_index),
    };
    (result, outcomes)
}
