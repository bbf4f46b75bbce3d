//! Template-matching baseline.
//!
//! Each view keeps the patch under the anchor box as its template and
//! searches a square neighbourhood of the previous centre for the ZNCC peak.
//! Box size follows the disparity: a target twice as close has twice the
//! disparity and twice the box side.

use super::{FrameRef, Tracker, TrackerError};
use crate::config::EvalConfig;
use crate::image_ops::{match_template, GrayImage};
use crate::types::{BBox, Keypoint2D, Outcome, StereoBBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NccParams {
    pub search_radius_px: usize,
    /// Peaks below this in either view are reported as no target.
    pub occlusion_threshold: f64,
}

impl From<&EvalConfig> for NccParams {
    fn from(cfg: &EvalConfig) -> Self {
        Self { search_radius_px: cfg.ncc_search_radius_px as usize, occlusion_threshold: cfg.ncc_occlusion_threshold }
    }
}

/// Template of one view and where the box centre sits relative to it.
#[derive(Debug, Clone)]
struct ViewState {
    template: GrayImage,
    offset: Keypoint2D,
    size: (f64, f64),
    centre: Keypoint2D,
}

impl ViewState {
    fn capture(image: &GrayImage, bbox: &BBox) -> Option<Self> {
        // Pixels whose centres fall inside the box.
        let x = (bbox.u_min + 0.5).round() as i64;
        let y = (bbox.v_min + 0.5).round() as i64;
        let w = (bbox.width().round() as usize).max(3);
        let h = (bbox.height().round() as usize).max(3);
        let template = image.crop(x, y, w, h)?;
        let centre = bbox.centre();
        Some(Self {
            template,
            offset: Keypoint2D::new(centre.u - x as f64, centre.v - y as f64),
            size: (bbox.width(), bbox.height()),
            centre,
        })
    }

    /// Best match around the previous centre: (new centre, peak score).
    fn search(&self, image: &GrayImage, radius: usize) -> Option<(Keypoint2D, f64)> {
        let x0 = (self.centre.u - self.offset.u).round() as i64;
        let y0 = (self.centre.v - self.offset.v).round() as i64;
        let m = match_template(image, &self.template, x0, y0, radius)?;
        Some((Keypoint2D::new(m.x + self.offset.u, m.y + self.offset.v), m.score))
    }
}

pub struct NccTracker {
    params: NccParams,
    views: Option<[ViewState; 2]>,
    anchor_disparity: f64,
    /// Peak scores of the most recent frame, left then right.
    pub last_scores: Option<(f64, f64)>,
}

impl NccTracker {
    pub fn new(params: NccParams) -> Self {
        Self { params, views: None, anchor_disparity: 0.0, last_scores: None }
    }
}

fn load(path: &std::path::Path) -> Result<GrayImage, TrackerError> {
    GrayImage::load(path).map_err(|e| TrackerError::Frame(e.to_string()))
}

impl Tracker for NccTracker {
    fn init(&mut self, frame: &FrameRef, bbox: StereoBBox) -> Result<(), TrackerError> {
        let left = ViewState::capture(&load(&frame.left)?, &bbox.left);
        let right = ViewState::capture(&load(&frame.right)?, &bbox.right);
        match (left, right) {
            (Some(l), Some(r)) => {
                self.views = Some([l, r]);
                self.anchor_disparity = bbox.disparity();
                self.last_scores = None;
                Ok(())
            }
            _ => {
                self.views = None;
                Err(TrackerError::TemplateOutOfBounds(bbox))
            }
        }
    }

    fn track(&mut self, frame: &FrameRef) -> Result<Outcome, TrackerError> {
        let Some(views) = self.views.as_mut() else {
            return Ok(Outcome::NoTarget);
        };
        let images = [load(&frame.left)?, load(&frame.right)?];
        let radius = self.params.search_radius_px;
        let found: Vec<_> = views.iter().zip(&images).map(|(v, img)| v.search(img, radius)).collect();
        let (Some((cl, sl)), Some((cr, sr))) = (found[0], found[1]) else {
            self.last_scores = None;
            return Ok(Outcome::NoTarget);
        };
        self.last_scores = Some((sl, sr));
        if sl < self.params.occlusion_threshold || sr < self.params.occlusion_threshold {
            return Ok(Outcome::NoTarget);
        }
        views[0].centre = cl;
        views[1].centre = cr;

        let d = cl.u - cr.u;
        let scale = if d > 0.0 && self.anchor_disparity > 0.0 { d / self.anchor_disparity } else { 1.0 };
        let make = |v: &ViewState| BBox::from_centre(v.centre, v.size.0 * scale, v.size.1 * scale);
        Ok(Outcome::Predicted(StereoBBox::new(make(&views[0]), make(&views[1]))))
    }
}
