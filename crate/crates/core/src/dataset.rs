//! On-disk dataset layout and prediction files.
//!
//! ```text
//! root/<case_id>/<video_id>/calibration.json
//!                           labels.json
//!                           anchors.json
//!                           frames_left/000000.png ...
//!                           frames_right/000000.png ...
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, epipolar_consistent};
use crate::types::{
    AnchorRun, BBox, CaseRecord, FrameLabel, FramePrediction, Keypoint2D, Outcome, StereoBBox, StereoCalibration, SubsetRecord,
    VideoRecord, View,
};

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const LABELS_FILE: &str = "labels.json";
pub const ANCHORS_FILE: &str = "anchors.json";

const DEFAULT_FRAME_RATE_HZ: f64 = 25.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{0}: missing calibration.json")]
    MissingCalibration(PathBuf),
    #[error("{path}: invalid calibration: {reason}")]
    InvalidCalibration { path: PathBuf, reason: String },
    #[error("{path}: malformed label: {reason}")]
    MalformedLabel { path: PathBuf, reason: String },
    #[error("{path}: frame {frame}: keypoint rows differ by {offset_px} px (tolerance {tol_px} px)")]
    EpipolarViolation { path: PathBuf, frame: usize, offset_px: f64, tol_px: f64 },
    #[error("{path}: frame {frame}: ground-truth disparity {disparity_px} px is not positive")]
    NonPositiveDisparity { path: PathBuf, frame: usize, disparity_px: f64 },
    #[error("{path}: anchors are not strictly increasing: {anchors:?}")]
    NonIncreasingAnchors { path: PathBuf, anchors: Vec<usize> },
    #[error("{path}: anchor {anchor} is not a valid frame")]
    InvalidAnchor { path: PathBuf, anchor: usize },
    #[error("{0}: no cases or videos")]
    Empty(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    SchemaMismatch { path: PathBuf, reason: String },
}

impl DatasetError {
    fn io(path: &Path, source: io::Error) -> Self {
        DatasetError::Io { path: path.to_path_buf(), source }
    }
}

/// Load-time options.
#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub epipolar_tol_px: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { epipolar_tol_px: geometry::DEFAULT_EPIPOLAR_TOL_PX }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline_mm: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

impl CalibrationFile {
    pub fn calibration(&self) -> StereoCalibration {
        StereoCalibration {
            focal_px: self.f,
            cx_px: self.cx,
            cy_px: self.cy,
            baseline_mm: self.baseline_mm,
            image_width: self.width,
            image_height: self.height,
        }
    }

    pub fn new(calib: &StereoCalibration, fps: f64) -> Self {
        Self {
            f: calib.focal_px,
            cx: calib.cx_px,
            cy: calib.cy_px,
            baseline_mm: calib.baseline_mm,
            width: calib.image_width,
            height: calib.image_height,
            fps: Some(fps),
        }
    }
}

/// One entry of `labels.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub frame: usize,
    pub kpt_left: Option<Keypoint2D>,
    pub kpt_right: Option<Keypoint2D>,
    pub bbox_left: Option<BBox>,
    pub bbox_right: Option<BBox>,
    pub is_difficult: bool,
    pub is_visible_in_both_stereo: bool,
}

impl From<&FrameLabel> for LabelEntry {
    fn from(l: &FrameLabel) -> Self {
        Self {
            frame: l.frame_index,
            kpt_left: l.keypoint_left,
            kpt_right: l.keypoint_right,
            bbox_left: l.bbox.map(|b| b.left),
            bbox_right: l.bbox.map(|b| b.right),
            is_difficult: l.is_difficult,
            is_visible_in_both_stereo: l.is_visible_in_both_stereo,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::SchemaMismatch { path: path.to_path_buf(), reason: e.to_string() })
}

/// Writes JSON via a temporary sibling and a rename.
pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))? {
        let entry = entry.map_err(|e| DatasetError::io(dir, e))?;
        let name = entry.file_name();
        if entry.path().is_dir() && !name.to_string_lossy().starts_with('.') {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn dir_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads and validates every case and video under `root`.
pub fn load_dataset(root: &Path, opts: &LoadOptions) -> Result<SubsetRecord, DatasetError> {
    let mut cases = Vec::new();
    for case_dir in sorted_subdirs(root)? {
        let mut videos = Vec::new();
        for video_dir in sorted_subdirs(&case_dir)? {
            videos.push(load_video(&video_dir, &dir_name(&case_dir), opts)?);
        }
        if videos.is_empty() {
            return Err(DatasetError::Empty(case_dir));
        }
        cases.push(CaseRecord { id: dir_name(&case_dir), videos });
    }
    if cases.is_empty() {
        return Err(DatasetError::Empty(root.to_path_buf()));
    }
    Ok(SubsetRecord { id: dir_name(root), cases })
}

pub fn load_calibration(video_dir: &Path) -> Result<(StereoCalibration, f64), DatasetError> {
    let path = video_dir.join(CALIBRATION_FILE);
    if !path.exists() {
        return Err(DatasetError::MissingCalibration(video_dir.to_path_buf()));
    }
    let file: CalibrationFile = read_json(&path)?;
    let calib = file.calibration();
    calib.check().map_err(|reason| DatasetError::InvalidCalibration { path: path.clone(), reason })?;
    let fps = file.fps.unwrap_or(DEFAULT_FRAME_RATE_HZ);
    if !(fps.is_finite() && fps > 0.0) {
        return Err(DatasetError::InvalidCalibration { path, reason: format!("fps {fps}") });
    }
    Ok((calib, fps))
}

pub fn load_labels(path: &Path, opts: &LoadOptions) -> Result<Vec<FrameLabel>, DatasetError> {
    let entries: Vec<LabelEntry> = read_json(path)?;
    entries.iter().enumerate().map(|(i, e)| validate_label(path, i, e, opts)).collect()
}

fn validate_label(path: &Path, position: usize, e: &LabelEntry, opts: &LoadOptions) -> Result<FrameLabel, DatasetError> {
    let malformed = |reason: String| DatasetError::MalformedLabel { path: path.to_path_buf(), reason };
    if e.frame != position {
        return Err(malformed(format!("entry {position} has frame {}", e.frame)));
    }
    let bbox = match (e.bbox_left, e.bbox_right) {
        (Some(l), Some(r)) => Some(StereoBBox::new(l, r)),
        (None, None) => None,
        _ => return Err(malformed(format!("frame {}: only one view has a box", e.frame))),
    };
    if let Some(b) = &bbox {
        if !b.left.is_valid() || !b.right.is_valid() {
            return Err(malformed(format!("frame {}: degenerate box", e.frame)));
        }
    }
    for k in [e.kpt_left, e.kpt_right].into_iter().flatten() {
        if !k.is_finite() {
            return Err(malformed(format!("frame {}: non-finite keypoint", e.frame)));
        }
    }
    let label = FrameLabel {
        frame_index: e.frame,
        keypoint_left: e.kpt_left,
        keypoint_right: e.kpt_right,
        bbox,
        is_difficult: e.is_difficult,
        is_visible_in_both_stereo: e.is_visible_in_both_stereo,
    };
    if label.is_valid() && (e.kpt_left.is_none() || e.kpt_right.is_none() || bbox.is_none()) {
        return Err(malformed(format!("frame {}: valid frame lacks keypoints or box", e.frame)));
    }
    if let (Some(kl), Some(kr)) = (e.kpt_left, e.kpt_right) {
        if !epipolar_consistent(kl, kr, opts.epipolar_tol_px) {
            return Err(DatasetError::EpipolarViolation {
                path: path.to_path_buf(),
                frame: e.frame,
                offset_px: (kl.v - kr.v).abs(),
                tol_px: opts.epipolar_tol_px,
            });
        }
    }
    if let Some(b) = &bbox {
        let (cl, cr) = (b.left.centre(), b.right.centre());
        if !epipolar_consistent(cl, cr, opts.epipolar_tol_px) {
            return Err(DatasetError::EpipolarViolation {
                path: path.to_path_buf(),
                frame: e.frame,
                offset_px: (cl.v - cr.v).abs(),
                tol_px: opts.epipolar_tol_px,
            });
        }
        if !(b.disparity() > 0.0) {
            return Err(DatasetError::NonPositiveDisparity { path: path.to_path_buf(), frame: e.frame, disparity_px: b.disparity() });
        }
    }
    Ok(label)
}

pub fn load_anchors(path: &Path, labels: &[FrameLabel]) -> Result<Vec<usize>, DatasetError> {
    let anchors: Vec<usize> = read_json(path)?;
    if anchors.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::NonIncreasingAnchors { path: path.to_path_buf(), anchors });
    }
    for &a in &anchors {
        if !labels.get(a).is_some_and(FrameLabel::is_valid) {
            return Err(DatasetError::InvalidAnchor { path: path.to_path_buf(), anchor: a });
        }
    }
    Ok(anchors)
}

pub fn load_video(video_dir: &Path, case_id: &str, opts: &LoadOptions) -> Result<VideoRecord, DatasetError> {
    let (calibration, frame_rate_hz) = load_calibration(video_dir)?;
    let labels = load_labels(&video_dir.join(LABELS_FILE), opts)?;
    if labels.is_empty() {
        return Err(DatasetError::MalformedLabel { path: video_dir.join(LABELS_FILE), reason: "no frames".into() });
    }
    let anchors = load_anchors(&video_dir.join(ANCHORS_FILE), &labels)?;
    Ok(VideoRecord {
        case_id: case_id.to_string(),
        id: dir_name(video_dir),
        frame_count: labels.len(),
        frame_rate_hz,
        dir: video_dir.to_path_buf(),
        labels,
        anchors,
        calibration,
    })
}

/// Writes calibration, labels and anchors of `video` into `video.dir`.
pub fn write_video_metadata(video: &VideoRecord) -> io::Result<()> {
    fs::create_dir_all(&video.dir)?;
    write_json_atomic(&video.dir.join(CALIBRATION_FILE), &CalibrationFile::new(&video.calibration, video.frame_rate_hz))?;
    let entries: Vec<LabelEntry> = video.labels.iter().map(LabelEntry::from).collect();
    write_json_atomic(&video.dir.join(LABELS_FILE), &entries)?;
    write_json_atomic(&video.dir.join(ANCHORS_FILE), &video.anchors)
}

/// Frames whose image files are missing on disk.
pub fn missing_frames(video: &VideoRecord) -> Vec<(View, usize)> {
    let mut out = Vec::new();
    for i in 0..video.frame_count {
        for view in [View::Left, View::Right] {
            if !video.frame_path(view, i).is_file() {
                out.push((view, i));
            }
        }
    }
    out
}

/// A stored box that disagrees with the one rebuilt from its keypoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RederiveMismatch {
    pub video: String,
    pub frame: usize,
    pub max_edge_error_px: f64,
}

/// Rebuilds every labelled box from its keypoints and reports the frames
/// whose stored box differs by more than `tol_px` on any edge.
pub fn rederive_bboxes(video: &VideoRecord, radius_mm: f64, tol_px: f64) -> Vec<RederiveMismatch> {
    let mut out = Vec::new();
    for label in &video.labels {
        let (Some(kl), Some(kr), Some(stored)) = (label.keypoint_left, label.keypoint_right, label.bbox) else {
            continue;
        };
        let err = match geometry::keypoints_to_bbox(kl, kr, radius_mm, &video.calibration) {
            Ok(derived) => max_edge_error(&stored, &derived),
            Err(_) => f64::INFINITY,
        };
        if !(err <= tol_px) {
            out.push(RederiveMismatch { video: video.key(), frame: label.frame_index, max_edge_error_px: err });
        }
    }
    out
}

pub fn max_edge_error(a: &StereoBBox, b: &StereoBBox) -> f64 {
    let (al, ar): ([f64; 4], [f64; 4]) = (a.left.into(), a.right.into());
    let (bl, br): ([f64; 4], [f64; 4]) = (b.left.into(), b.right.into());
    al.iter().chain(ar.iter()).zip(bl.iter().chain(br.iter())).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "lowercase", deny_unknown_fields)]
enum PredictionEntry {
    None { frame: usize },
    Bbox { frame: usize, left: BBox, right: BBox },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunEntry {
    video: String,
    anchor_frame: usize,
    frames: Vec<PredictionEntry>,
}

impl From<&AnchorRun> for RunEntry {
    fn from(run: &AnchorRun) -> Self {
        Self {
            video: run.video.clone(),
            anchor_frame: run.anchor_frame,
            frames: run
                .predictions
                .iter()
                .map(|p| match p.outcome {
                    Outcome::NoTarget => PredictionEntry::None { frame: p.frame_index },
                    Outcome::Predicted(b) => PredictionEntry::Bbox { frame: p.frame_index, left: b.left, right: b.right },
                })
                .collect(),
        }
    }
}

impl From<RunEntry> for AnchorRun {
    fn from(e: RunEntry) -> Self {
        AnchorRun {
            video: e.video,
            anchor_frame: e.anchor_frame,
            predictions: e
                .frames
                .into_iter()
                .map(|p| match p {
                    PredictionEntry::None { frame } => FramePrediction { frame_index: frame, outcome: Outcome::NoTarget },
                    PredictionEntry::Bbox { frame, left, right } => {
                        FramePrediction { frame_index: frame, outcome: Outcome::Predicted(StereoBBox::new(left, right)) }
                    }
                })
                .collect(),
        }
    }
}

pub fn predictions_to_json(runs: &[AnchorRun]) -> String {
    let entries: Vec<RunEntry> = runs.iter().map(RunEntry::from).collect();
    serde_json::to_string(&entries).expect("prediction entries always serialise")
}

pub fn predictions_from_json(text: &str, path: &Path) -> Result<Vec<AnchorRun>, DatasetError> {
    let entries: Vec<RunEntry> =
        serde_json::from_str(text).map_err(|e| DatasetError::SchemaMismatch { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(entries.into_iter().map(AnchorRun::from).collect())
}

pub fn save_predictions(runs: &[AnchorRun], path: &Path) -> Result<(), DatasetError> {
    if runs.iter().flat_map(|r| &r.predictions).any(|p| {
        p.outcome.bbox().is_some_and(|b| {
            let (l, r): ([f64; 4], [f64; 4]) = (b.left.into(), b.right.into());
            l.iter().chain(r.iter()).any(|x| !x.is_finite())
        })
    }) {
        return Err(DatasetError::SchemaMismatch { path: path.to_path_buf(), reason: "non-finite coordinate".into() });
    }
    fs::write(path, predictions_to_json(runs)).map_err(|e| DatasetError::io(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<AnchorRun>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    predictions_from_json(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sbox(u: f64) -> StereoBBox {
        StereoBBox::new(BBox::new(u, 10.0, u + 8.0, 18.0), BBox::new(u - 5.0, 10.0, u + 3.0, 18.0))
    }

    #[test]
    fn predictions_round_trip() {
        let run = AnchorRun {
            video: "case1/video1".into(),
            anchor_frame: 4,
            predictions: vec![
                FramePrediction { frame_index: 5, outcome: Outcome::Predicted(sbox(0.1 + 0.2)) },
                FramePrediction { frame_index: 6, outcome: Outcome::NoTarget },
                FramePrediction { frame_index: 7, outcome: Outcome::Predicted(sbox(1.0 / 3.0)) },
            ],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        save_predictions(std::slice::from_ref(&run), &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), vec![run]);

        let empty = AnchorRun { video: "c/v".into(), anchor_frame: 0, predictions: vec![] };
        save_predictions(std::slice::from_ref(&empty), &path).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), vec![empty]);
        save_predictions(&[], &path).unwrap();
        assert!(load_predictions(&path).unwrap().is_empty());
    }

    #[test]
    fn unknown_outcome_tag_is_schema_mismatch() {
        let text = r#"[{"video":"c/v","anchor_frame":0,"frames":[{"frame":1,"outcome":"lost"}]}]"#;
        assert!(matches!(predictions_from_json(text, Path::new("x")), Err(DatasetError::SchemaMismatch { .. })));
    }

    #[test]
    fn wire_shape_of_prediction_entries() {
        let run = AnchorRun {
            video: "c/v".into(),
            anchor_frame: 0,
            predictions: vec![
                FramePrediction { frame_index: 1, outcome: Outcome::NoTarget },
                FramePrediction { frame_index: 2, outcome: Outcome::Predicted(sbox(10.0)) },
            ],
        };
        let v: serde_json::Value = serde_json::from_str(&predictions_to_json(&[run])).unwrap();
        assert_eq!(v[0]["frames"][0], serde_json::json!({"frame": 1, "outcome": "none"}));
        assert_eq!(v[0]["frames"][1]["outcome"], "bbox");
        assert_eq!(v[0]["frames"][1]["left"], serde_json::json!([10.0, 10.0, 18.0, 18.0]));
    }

    proptest! {
        #[test]
        fn finite_coordinates_round_trip_bit_exact(
            coords in proptest::collection::vec(
                (-1e6..1e6f64, -1e6..1e6f64, 1e-9..1e3f64, 1e-9..1e3f64, proptest::bool::ANY), 0..20)
        ) {
            let predictions = coords.iter().enumerate().map(|(i, &(u, v, w, h, none))| FramePrediction {
                frame_index: i + 1,
                outcome: if none {
                    Outcome::NoTarget
                } else {
                    let b = BBox::new(u, v, u + w, v + h);
                    Outcome::Predicted(StereoBBox::new(b, BBox::new(u - w, v, u, v + h)))
                },
            }).collect();
            let runs = vec![AnchorRun { video: "c/v".into(), anchor_frame: 0, predictions }];
            let back = predictions_from_json(&predictions_to_json(&runs), Path::new("x")).unwrap();
            prop_assert_eq!(back, runs);
        }
    }
}
