//! Descriptive statistics of a labelled video.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{disparity, reproject};
use crate::image_ops::{zncc, GrayImage, ImageError};
use crate::types::{FrameLabel, Point3D, StereoCalibration, VideoRecord, View};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("{0}: no valid frames")]
    NoValidFrames(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoStats {
    pub video: String,
    pub frame_count: usize,
    /// Mean left-view keypoint displacement between consecutive valid frames.
    pub avg_2d_velocity_px: Option<f64>,
    /// Mean triangulated displacement between consecutive valid frames.
    pub avg_3d_velocity_mm: Option<f64>,
    pub pct_ignore: f64,
    /// Mean over anchors of the mean template similarity; `None` when
    /// frames were not read or no anchor has a later valid frame.
    pub avg_ncc: Option<f64>,
}

fn triangulate(label: &FrameLabel, calib: &StereoCalibration) -> Option<Point3D> {
    let (kl, kr) = (label.keypoint_left?, label.keypoint_right?);
    reproject(kl, disparity(kl, kr), calib).ok()
}

/// Average speeds over pairs of consecutive frames that are both valid.
pub fn velocities(labels: &[FrameLabel], calib: &StereoCalibration) -> (Option<f64>, Option<f64>) {
    let (mut sum2, mut sum3, mut n) = (0.0, 0.0, 0usize);
    for w in labels.windows(2) {
        if !(w[0].is_valid() && w[1].is_valid()) {
            continue;
        }
        let (Some(a), Some(b)) = (w[0].keypoint_left, w[1].keypoint_left) else { continue };
        let (Some(p), Some(q)) = (triangulate(&w[0], calib), triangulate(&w[1], calib)) else { continue };
        sum2 += a.distance(&b);
        sum3 += p.distance(&q);
        n += 1;
    }
    if n == 0 {
        (None, None)
    } else {
        (Some(sum2 / n as f64), Some(sum3 / n as f64))
    }
}

pub fn pct_ignore(labels: &[FrameLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    100.0 * labels.iter().filter(|l| !l.is_valid()).count() as f64 / labels.len() as f64
}

/// Left-view similarity of every later valid ground-truth patch to the
/// anchor patch, resampled to the anchor box's pixel size. Averaged per
/// anchor, then across anchors.
pub fn average_ncc(video: &VideoRecord) -> Result<Option<f64>, StatsError> {
    let mut per_anchor = Vec::new();
    for &a in &video.anchors {
        let Some(anchor_box) = video.labels[a].valid_bbox() else { continue };
        let w = (anchor_box.left.width().round() as usize).max(2);
        let h = (anchor_box.left.height().round() as usize).max(2);
        let template = GrayImage::load(&video.frame_path(View::Left, a))?.resample(&anchor_box.left, w, h);
        let (mut sum, mut n) = (0.0, 0usize);
        for label in &video.labels[a + 1..] {
            let Some(b) = label.valid_bbox() else { continue };
            let img = GrayImage::load(&video.frame_path(View::Left, label.frame_index))?;
            sum += zncc(&template, &img.resample(&b.left, w, h));
            n += 1;
        }
        if n > 0 {
            per_anchor.push(sum / n as f64);
        }
    }
    Ok((!per_anchor.is_empty()).then(|| per_anchor.iter().sum::<f64>() / per_anchor.len() as f64))
}

/// All statistics of one video. `with_ncc` reads frame images.
pub fn dataset_stats(video: &VideoRecord, with_ncc: bool) -> Result<VideoStats, StatsError> {
    if !video.labels.iter().any(FrameLabel::is_valid) {
        return Err(StatsError::NoValidFrames(video.key()));
    }
    let (v2, v3) = velocities(&video.labels, &video.calibration);
    Ok(VideoStats {
        video: video.key(),
        frame_count: video.frame_count,
        avg_2d_velocity_px: v2,
        avg_3d_velocity_mm: v3,
        pct_ignore: pct_ignore(&video.labels),
        avg_ncc: if with_ncc { average_ncc(video)? } else { None },
    })
}
