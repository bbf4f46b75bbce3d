//! Domain types shared by every stage of the benchmark.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

/// Rectified pinhole parameters shared by the left and right views.
///
/// Both views use the same focal length and principal point; the right
/// camera sits `baseline_mm` to the right of the left one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoCalibration {
    pub focal_px: f64,
    pub cx_px: f64,
    pub cy_px: f64,
    pub baseline_mm: f64,
    pub image_width: u32,
    pub image_height: u32,
}

impl StereoCalibration {
    /// Checks the invariants; returns a description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err(format!("focal length must be positive, got {}", self.focal_px));
        }
        if !(self.baseline_mm.is_finite() && self.baseline_mm > 0.0) {
            return Err(format!("baseline must be positive, got {}", self.baseline_mm));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err("image dimensions must be positive".into());
        }
        if !(self.cx_px >= 0.0 && self.cx_px < self.image_width as f64) {
            return Err(format!("cx {} outside [0, {})", self.cx_px, self.image_width));
        }
        if !(self.cy_px >= 0.0 && self.cy_px < self.image_height as f64) {
            return Err(format!("cy {} outside [0, {})", self.cy_px, self.image_height));
        }
        Ok(())
    }
}

/// Stereo view selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Left,
    Right,
}

/// Pixel position; `u` runs along the (horizontal) epipolar line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Keypoint2D {
    pub u: f64,
    pub v: f64,
}

impl Keypoint2D {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Keypoint2D) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

impl From<[f64; 2]> for Keypoint2D {
    fn from(a: [f64; 2]) -> Self {
        Self { u: a[0], v: a[1] }
    }
}

impl From<Keypoint2D> for [f64; 2] {
    fn from(k: Keypoint2D) -> Self {
        [k.u, k.v]
    }
}

/// Axis-aligned box in pixel coordinates, stored as `[u_min, v_min, u_max, v_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn new(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Self {
        Self { u_min, v_min, u_max, v_max }
    }

    /// Box of the given size centred on `centre`.
    pub fn from_centre(centre: Keypoint2D, width: f64, height: f64) -> Self {
        Self {
            u_min: centre.u - width / 2.0,
            v_min: centre.v - height / 2.0,
            u_max: centre.u + width / 2.0,
            v_max: centre.v + height / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn centre(&self) -> Keypoint2D {
        Keypoint2D::new((self.u_min + self.u_max) / 2.0, (self.v_min + self.v_max) / 2.0)
    }

    /// Finite with strictly positive extent along both axes.
    pub fn is_valid(&self) -> bool {
        [self.u_min, self.v_min, self.u_max, self.v_max].iter().all(|x| x.is_finite()) && self.u_min < self.u_max && self.v_min < self.v_max
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.u_min, b.v_min, b.u_max, b.v_max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StereoBBox {
    pub left: BBox,
    pub right: BBox,
}

impl StereoBBox {
    pub fn new(left: BBox, right: BBox) -> Self {
        Self { left, right }
    }

    pub fn view(&self, view: View) -> &BBox {
        match view {
            View::Left => &self.left,
            View::Right => &self.right,
        }
    }

    /// `u` of the left centre minus `u` of the right centre.
    pub fn disparity(&self) -> f64 {
        self.left.centre().u - self.right.centre().u
    }
}

/// Camera-centred point in the left rectified camera frame, millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3D {
    pub x_mm: f64,
    pub y_mm: f64,
    pub z_mm: f64,
}

impl Point3D {
    pub fn new(x_mm: f64, y_mm: f64, z_mm: f64) -> Self {
        Self { x_mm, y_mm, z_mm }
    }

    pub fn distance(&self, other: &Point3D) -> f64 {
        let dx = self.x_mm - other.x_mm;
        let dy = self.y_mm - other.y_mm;
        let dz = self.z_mm - other.z_mm;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn norm(&self) -> f64 {
        (self.x_mm * self.x_mm + self.y_mm * self.y_mm + self.z_mm * self.z_mm).sqrt()
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLabel {
    pub frame_index: usize,
    pub keypoint_left: Option<Keypoint2D>,
    pub keypoint_right: Option<Keypoint2D>,
    pub bbox: Option<StereoBBox>,
    pub is_difficult: bool,
    pub is_visible_in_both_stereo: bool,
}

impl FrameLabel {
    /// Visible in both views and not flagged difficult.
    pub fn is_valid(&self) -> bool {
        self.is_visible_in_both_stereo && !self.is_difficult
    }

    /// Label for a frame where the target cannot be seen.
    pub fn not_visible(frame_index: usize) -> Self {
        Self { frame_index, keypoint_left: None, keypoint_right: None, bbox: None, is_difficult: false, is_visible_in_both_stereo: false }
    }

    /// Valid-frame ground-truth box. `None` for frames that are not valid.
    pub fn valid_bbox(&self) -> Option<&StereoBBox> {
        if self.is_valid() {
            self.bbox.as_ref()
        } else {
            None
        }
    }
}

/// One video of a case, fully validated.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub case_id: String,
    pub id: String,
    pub frame_count: usize,
    pub frame_rate_hz: f64,
    /// Directory holding `frames_left/` and `frames_right/`.
    pub dir: PathBuf,
    pub labels: Vec<FrameLabel>,
    pub anchors: Vec<usize>,
    pub calibration: StereoCalibration,
}

impl VideoRecord {
    /// `case/video`, the key used in prediction files and reports.
    pub fn key(&self) -> String {
        format!("{}/{}", self.case_id, self.id)
    }

    pub fn frame_path(&self, view: View, index: usize) -> PathBuf {
        let sub = match view {
            View::Left => "frames_left",
            View::Right => "frames_right",
        };
        self.dir.join(sub).join(format!("{index:06}.png"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub id: String,
    pub videos: Vec<VideoRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRecord {
    pub id: String,
    pub cases: Vec<CaseRecord>,
}

impl SubsetRecord {
    pub fn videos(&self) -> impl Iterator<Item = &VideoRecord> {
        self.cases.iter().flat_map(|c| c.videos.iter())
    }

    pub fn find_video(&self, key: &str) -> Option<&VideoRecord> {
        self.videos().find(|v| v.key() == key)
    }
}

/// What a tracker reported for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Predicted(StereoBBox),
    /// The tracker classified the target as not visible.
    NoTarget,
}

impl Outcome {
    pub fn bbox(&self) -> Option<&StereoBBox> {
        match self {
            Outcome::Predicted(b) => Some(b),
            Outcome::NoTarget => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePrediction {
    pub frame_index: usize,
    pub outcome: Outcome,
}

/// One tracker execution from an anchor to the end of its video.
///
/// Holds exactly one prediction per frame in `(anchor_frame, frame_count)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRun {
    /// `case/video` key.
    pub video: String,
    pub anchor_frame: usize,
    pub predictions: Vec<FramePrediction>,
}

impl AnchorRun {
    /// Checks that predictions cover `anchor+1 .. frame_count` contiguously.
    pub fn check_coverage(&self, frame_count: usize) -> Result<(), String> {
        let expected = frame_count.saturating_sub(self.anchor_frame + 1);
        if self.predictions.len() != expected {
            return Err(format!(
                "run {}@{} has {} predictions, expected {}",
                self.video,
                self.anchor_frame,
                self.predictions.len(),
                expected
            ));
        }
        for (offset, p) in self.predictions.iter().enumerate() {
            let want = self.anchor_frame + 1 + offset;
            if p.frame_index != want {
                return Err(format!(
                    "run {}@{}: prediction {} has frame {}, expected {}",
                    self.video, self.anchor_frame, offset, p.frame_index, want
                ));
            }
        }
        Ok(())
    }
}
