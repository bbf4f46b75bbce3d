//! On-disk annotation state.
//!
//! Each video directory holds `annotation.json` with the draft labels, a
//! revision counter and review sign-offs. `labels.json` and `anchors.json`
//! are (re)written whenever every frame has been committed, so the dataset
//! files are either absent or fully valid. Sessions live under
//! `<root>/.sessions/`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surgt_core::dataset::{self, write_json_atomic, DatasetError, LabelEntry, LoadOptions, ANCHORS_FILE, LABELS_FILE};
use surgt_core::geometry::{keypoints_to_bbox, GeometryError};
use surgt_core::harness::generate_anchors;
use surgt_core::types::{FrameLabel, Keypoint2D, StereoBBox, StereoCalibration, View};
use thiserror::Error;

pub const DRAFT_FILE: &str = "annotation.json";
pub const SESSIONS_DIR: &str = ".sessions";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("frame {index} out of range (video has {frame_count} frames)")]
    OutOfRange { index: usize, frame_count: usize },
    #[error("revision {given} is stale; current revision is {current}")]
    ConcurrentEdit { given: u64, current: u64 },
    #[error("disparity {0} px is not positive")]
    NonPositiveDisparity(f64),
    #[error("keypoints are {0} px apart vertically")]
    EpipolarViolation(f64),
    #[error("{0}")]
    Geometry(#[from] GeometryError),
    #[error("frame {0} has no keypoints; place them before marking it visible")]
    MissingKeypoints(usize),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpipolarMode {
    /// Move the right keypoint onto the left keypoint's row.
    #[default]
    Snap,
    /// Refuse keypoints further apart than the tolerance.
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub sphere_radius_mm: f64,
    pub epipolar_mode: EpipolarMode,
    pub epipolar_tol_px: f64,
    pub drift_threshold_px: f64,
    pub anchor_spacing: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            sphere_radius_mm: 2.5,
            epipolar_mode: EpipolarMode::Snap,
            epipolar_tol_px: 1.0,
            drift_threshold_px: 10.0,
            anchor_spacing: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftFrame {
    #[serde(flatten)]
    pub label: LabelEntry,
    pub committed: bool,
    pub annotator: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignOff {
    pub reviewer: String,
    pub approved: bool,
    pub note: String,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub revision: u64,
    pub frames: Vec<DraftFrame>,
    pub reviews: Vec<SignOff>,
}

impl Draft {
    pub fn committed(&self) -> usize {
        self.frames.iter().filter(|f| f.committed).count()
    }

    pub fn is_complete(&self) -> bool {
        self.frames.iter().all(|f| f.committed)
    }
}

/// A video directory below the root.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoDir {
    pub case_id: String,
    pub video_id: String,
    pub dir: PathBuf,
}

impl VideoDir {
    pub fn key(&self) -> String {
        format!("{}/{}", self.case_id, self.video_id)
    }

    pub fn frame_path(&self, view: View, index: usize) -> PathBuf {
        let sub = match view {
            View::Left => "frames_left",
            View::Right => "frames_right",
        };
        self.dir.join(sub).join(format!("{index:06}.png"))
    }

    pub fn calibration(&self) -> Result<StereoCalibration, StoreError> {
        Ok(dataset::load_calibration(&self.dir)?.0)
    }

    fn frame_count_on_disk(&self) -> Result<usize, StoreError> {
        let dir = self.dir.join("frames_left");
        let entries = fs::read_dir(&dir).map_err(io_err(&dir))?;
        let mut n = 0;
        for e in entries {
            let e = e.map_err(io_err(&dir))?;
            n += usize::from(e.path().extension().is_some_and(|x| x == "png"));
        }
        Ok(n)
    }
}

fn is_safe_component(s: &str) -> bool {
    !s.is_empty() && !s.starts_with('.') && !s.contains(['/', '\\'])
}

/// Video directories: `<root>/<case>/<video>` with a calibration file.
pub fn list_videos(root: &Path) -> Result<Vec<VideoDir>, StoreError> {
    let mut out = Vec::new();
    let mut cases: Vec<_> = fs::read_dir(root).map_err(io_err(root))?.filter_map(Result::ok).collect();
    cases.sort_by_key(|e| e.file_name());
    for case in cases {
        let case_id = case.file_name().to_string_lossy().into_owned();
        if !is_safe_component(&case_id) || !case.path().is_dir() {
            continue;
        }
        let mut videos: Vec<_> = fs::read_dir(case.path()).map_err(io_err(&case.path()))?.filter_map(Result::ok).collect();
        videos.sort_by_key(|e| e.file_name());
        for v in videos {
            let video_id = v.file_name().to_string_lossy().into_owned();
            if is_safe_component(&video_id) && v.path().join(dataset::CALIBRATION_FILE).is_file() {
                out.push(VideoDir { case_id: case_id.clone(), video_id, dir: v.path() });
            }
        }
    }
    Ok(out)
}

pub fn find_video(root: &Path, case_id: &str, video_id: &str) -> Result<VideoDir, StoreError> {
    let unknown = || StoreError::UnknownVideo(format!("{case_id}/{video_id}"));
    if !is_safe_component(case_id) || !is_safe_component(video_id) {
        return Err(unknown());
    }
    let dir = root.join(case_id).join(video_id);
    if !dir.join(dataset::CALIBRATION_FILE).is_file() {
        return Err(unknown());
    }
    Ok(VideoDir { case_id: case_id.into(), video_id: video_id.into(), dir })
}

/// Loads the draft, seeding it from `labels.json` (all committed) or from
/// the frame files (nothing committed) on first use.
pub fn load_draft(video: &VideoDir) -> Result<Draft, StoreError> {
    let path = video.dir.join(DRAFT_FILE);
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        return serde_json::from_str(&text).map_err(|e| StoreError::BadRequest(format!("{}: {e}", path.display())));
    }
    let labels_path = video.dir.join(LABELS_FILE);
    let frames = if labels_path.is_file() {
        let opts = LoadOptions::default();
        dataset::load_labels(&labels_path, &opts)?
            .iter()
            .map(|l| DraftFrame { label: LabelEntry::from(l), committed: true, annotator: None })
            .collect()
    } else {
        (0..video.frame_count_on_disk()?)
            .map(|i| DraftFrame { label: LabelEntry::from(&FrameLabel::not_visible(i)), committed: false, annotator: None })
            .collect()
    };
    Ok(Draft { revision: 0, frames, reviews: Vec::new() })
}

/// Writes the draft and, once every frame is committed, the dataset files.
pub fn save_draft(video: &VideoDir, draft: &Draft, cfg: &ServiceConfig) -> Result<(), StoreError> {
    let path = video.dir.join(DRAFT_FILE);
    write_json_atomic(&path, draft).map_err(io_err(&path))?;
    if !draft.is_complete() {
        return Ok(());
    }
    let labels: Vec<FrameLabel> = draft.frames.iter().map(|f| to_label(&f.label)).collect();
    let labels_path = video.dir.join(LABELS_FILE);
    let entries: Vec<&LabelEntry> = draft.frames.iter().map(|f| &f.label).collect();
    write_json_atomic(&labels_path, &entries).map_err(io_err(&labels_path))?;
    let anchors_path = video.dir.join(ANCHORS_FILE);
    match generate_anchors(&labels, cfg.anchor_spacing) {
        Ok(anchors) => write_json_atomic(&anchors_path, &anchors).map_err(io_err(&anchors_path)),
        // Without a usable anchor the video cannot be evaluated; leave no
        // anchors file rather than an invalid one.
        Err(_) => match fs::remove_file(&anchors_path) {
            Err(e) if e.kind() != io::ErrorKind::NotFound => Err(io_err(&anchors_path)(e)),
            _ => Ok(()),
        },
    }
}

pub fn to_label(e: &LabelEntry) -> FrameLabel {
    FrameLabel {
        frame_index: e.frame,
        keypoint_left: e.kpt_left,
        keypoint_right: e.kpt_right,
        bbox: match (e.bbox_left, e.bbox_right) {
            (Some(l), Some(r)) => Some(StereoBBox::new(l, r)),
            _ => None,
        },
        is_difficult: e.is_difficult,
        is_visible_in_both_stereo: e.is_visible_in_both_stereo,
    }
}

fn check_index(draft: &Draft, index: usize) -> Result<(), StoreError> {
    if index >= draft.frames.len() {
        return Err(StoreError::OutOfRange { index, frame_count: draft.frames.len() });
    }
    Ok(())
}

fn check_revision(draft: &Draft, given: u64) -> Result<(), StoreError> {
    if given != draft.revision {
        return Err(StoreError::ConcurrentEdit { given, current: draft.revision });
    }
    Ok(())
}

/// Applies the epipolar rule and derives the stereo box.
pub fn derive_label(
    index: usize,
    left: Keypoint2D,
    right: Keypoint2D,
    is_difficult: bool,
    calib: &StereoCalibration,
    cfg: &ServiceConfig,
) -> Result<LabelEntry, StoreError> {
    if !left.is_finite() || !right.is_finite() {
        return Err(StoreError::BadRequest("keypoints must be finite".into()));
    }
    let right = match cfg.epipolar_mode {
        EpipolarMode::Snap => Keypoint2D::new(right.u, left.v),
        EpipolarMode::Reject if (left.v - right.v).abs() > cfg.epipolar_tol_px => {
            return Err(StoreError::EpipolarViolation((left.v - right.v).abs()));
        }
        EpipolarMode::Reject => right,
    };
    let d = left.u - right.u;
    if !(d > 0.0) {
        return Err(StoreError::NonPositiveDisparity(d));
    }
    let bbox = keypoints_to_bbox(left, right, cfg.sphere_radius_mm, calib)?;
    Ok(LabelEntry {
        frame: index,
        kpt_left: Some(left),
        kpt_right: Some(right),
        bbox_left: Some(bbox.left),
        bbox_right: Some(bbox.right),
        is_difficult,
        is_visible_in_both_stereo: true,
    })
}

/// Stores keypoints for a frame. Identical repeats are accepted without a
/// new revision.
pub fn put_keypoints(
    video: &VideoDir,
    index: usize,
    left: Keypoint2D,
    right: Keypoint2D,
    revision: u64,
    annotator: Option<String>,
    cfg: &ServiceConfig,
) -> Result<(Draft, LabelEntry), StoreError> {
    let mut draft = load_draft(video)?;
    check_index(&draft, index)?;
    let current = &draft.frames[index];
    let label = derive_label(index, left, right, current.label.is_difficult, &video.calibration()?, cfg)?;
    if current.committed && current.label == label {
        return Ok((draft, label));
    }
    check_revision(&draft, revision)?;
    draft.frames[index] = DraftFrame { label: label.clone(), committed: true, annotator };
    draft.revision += 1;
    save_draft(video, &draft, cfg)?;
    Ok((draft, label))
}

/// Sets the two flags of a frame. Marking a frame not visible clears its
/// keypoints and box; marking it visible requires keypoints.
pub fn put_flags(
    video: &VideoDir,
    index: usize,
    is_difficult: bool,
    is_visible_in_both_stereo: bool,
    revision: u64,
    annotator: Option<String>,
    cfg: &ServiceConfig,
) -> Result<Draft, StoreError> {
    let mut draft = load_draft(video)?;
    check_index(&draft, index)?;
    let mut label = draft.frames[index].label.clone();
    label.is_difficult = is_difficult;
    if is_visible_in_both_stereo {
        if label.kpt_left.is_none() || label.kpt_right.is_none() || label.bbox_left.is_none() {
            return Err(StoreError::MissingKeypoints(index));
        }
    } else {
        label.kpt_left = None;
        label.kpt_right = None;
        label.bbox_left = None;
        label.bbox_right = None;
    }
    label.is_visible_in_both_stereo = is_visible_in_both_stereo;
    if draft.frames[index].committed && draft.frames[index].label == label {
        return Ok(draft);
    }
    check_revision(&draft, revision)?;
    draft.frames[index] = DraftFrame { label, committed: true, annotator };
    draft.revision += 1;
    save_draft(video, &draft, cfg)?;
    Ok(draft)
}

pub fn sign_off(video: &VideoDir, signoff: SignOff, cfg: &ServiceConfig) -> Result<Draft, StoreError> {
    let mut draft = load_draft(video)?;
    check_revision(&draft, signoff.revision)?;
    draft.reviews.push(signoff);
    save_draft(video, &draft, cfg)?;
    Ok(draft)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftEntry {
    pub frame: usize,
    /// Previous frame with a left keypoint.
    pub previous: usize,
    pub displacement_px: f64,
    pub flagged: bool,
}

/// Left keypoint displacement of each labelled frame from the previous
/// labelled one; displacements above `threshold` are flagged.
pub fn review_diff(draft: &Draft, threshold: f64) -> Vec<DriftEntry> {
    let mut out = Vec::new();
    let mut prev: Option<(usize, Keypoint2D)> = None;
    for f in &draft.frames {
        let Some(k) = f.label.kpt_left else { continue };
        if let Some((pi, pk)) = prev {
            let d = k.distance(&pk);
            out.push(DriftEntry { frame: f.label.frame, previous: pi, displacement_px: d, flagged: d > threshold });
        }
        prev = Some((f.label.frame, k));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub video: String,
    pub cursor: usize,
    pub annotator: String,
    pub review_mode: bool,
}

fn session_path(root: &Path, id: &str) -> Result<PathBuf, StoreError> {
    if !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-') || id.is_empty() {
        return Err(StoreError::UnknownSession(id.to_string()));
    }
    Ok(root.join(SESSIONS_DIR).join(format!("{id}.json")))
}

pub fn create_session(root: &Path, video: &VideoDir, annotator: String, review_mode: bool) -> Result<Session, StoreError> {
    let dir = root.join(SESSIONS_DIR);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let n = fs::read_dir(&dir).map_err(io_err(&dir))?.count();
    let mut k = n + 1;
    let id = loop {
        let id = format!("s{k}");
        if !dir.join(format!("{id}.json")).exists() {
            break id;
        }
        k += 1;
    };
    let session = Session { id, video: video.key(), cursor: 0, annotator, review_mode };
    save_session(root, &session)?;
    Ok(session)
}

pub fn load_session(root: &Path, id: &str) -> Result<Session, StoreError> {
    let path = session_path(root, id)?;
    let text = fs::read_to_string(&path).map_err(|_| StoreError::UnknownSession(id.to_string()))?;
    serde_json::from_str(&text).map_err(|e| StoreError::BadRequest(e.to_string()))
}

pub fn save_session(root: &Path, session: &Session) -> Result<(), StoreError> {
    let path = session_path(root, &session.id)?;
    write_json_atomic(&path, session).map_err(io_err(&path))
}
