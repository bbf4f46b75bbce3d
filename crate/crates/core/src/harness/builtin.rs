use super::{FrameRef, Tracker, TrackerError};
use crate::types::{FrameLabel, Outcome, StereoBBox};

/// Echoes the ground truth; no target whenever the target is not visible.
pub struct OracleTracker {
    labels: Vec<FrameLabel>,
}

impl OracleTracker {
    pub fn new(labels: Vec<FrameLabel>) -> Self {
        Self { labels }
    }
}

impl Tracker for OracleTracker {
    fn init(&mut self, _: &FrameRef, _: StereoBBox) -> Result<(), TrackerError> {
        Ok(())
    }

    fn track(&mut self, frame: &FrameRef) -> Result<Outcome, TrackerError> {
        Ok(match self.labels.get(frame.index) {
            Some(l) if l.is_visible_in_both_stereo => l.bbox.map_or(Outcome::NoTarget, Outcome::Predicted),
            _ => Outcome::NoTarget,
        })
    }
}

/// Never reports a target.
pub struct NullTracker;

impl Tracker for NullTracker {
    fn init(&mut self, _: &FrameRef, _: StereoBBox) -> Result<(), TrackerError> {
        Ok(())
    }

    fn track(&mut self, _: &FrameRef) -> Result<Outcome, TrackerError> {
        Ok(Outcome::NoTarget)
    }
}

/// Repeats the anchor box forever.
#[derive(Default)]
pub struct StaticTracker {
    bbox: Option<StereoBBox>,
}

impl Tracker for StaticTracker {
    fn init(&mut self, _: &FrameRef, bbox: StereoBBox) -> Result<(), TrackerError> {
        self.bbox = Some(bbox);
        Ok(())
    }

    fn track(&mut self, _: &FrameRef) -> Result<Outcome, TrackerError> {
        Ok(self.bbox.map_or(Outcome::NoTarget, Outcome::Predicted))
    }
}
