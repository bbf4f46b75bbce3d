//! Runs trackers over every anchor of every video.
//!
//! A tracker is initialised on the anchor frame with the ground-truth box
//! and then fed each later frame in order until the end of the video. The
//! resulting [`AnchorRun`]s feed the scoring engine.

mod builtin;
mod external;
mod ncc;

use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EvalConfig;
use crate::scoring::{self, MetricsReport, ScoringError};
use crate::types::{AnchorRun, FrameLabel, FramePrediction, Outcome, StereoBBox, SubsetRecord, VideoRecord, View};

pub use builtin::{NullTracker, OracleTracker, StaticTracker};
pub use external::ExternalTracker;
pub use ncc::{NccParams, NccTracker};

/// Frames after an anchor required for the anchor to be usable.
pub const MIN_FRAMES_AFTER_ANCHOR: usize = 10;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("tracker process exited: {0}")]
    Crashed(String),
    #[error("no response within {0} ms")]
    Timeout(u64),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("template box {0:?} leaves the image")]
    TemplateOutOfBounds(StereoBBox),
    #[error("cannot start tracker `{command}`: {source}")]
    Spawn { command: String, source: std::io::Error },
    #[error("cannot read frame: {0}")]
    Frame(String),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("unknown tracker `{0}`; expected builtin:<oracle|null|static|ncc> or exec:<command>")]
    UnknownTracker(String),
    #[error("{video}@{anchor}: {source}")]
    Protocol { video: String, anchor: usize, source: TrackerError },
    #[error("cannot start tracker: {0}")]
    Spawn(TrackerError),
    #[error("no valid frames to anchor on")]
    NoValidFrames,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Paths and index of one stereo frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub index: usize,
    pub left: PathBuf,
    pub right: PathBuf,
}

impl FrameRef {
    pub fn of(video: &VideoRecord, index: usize) -> Self {
        Self { index, left: video.frame_path(View::Left, index), right: video.frame_path(View::Right, index) }
    }
}

/// A stereo tracker. `init` is called at every anchor; `track` once per
/// following frame, in order.
pub trait Tracker: Send {
    fn init(&mut self, frame: &FrameRef, bbox: StereoBBox) -> Result<(), TrackerError>;
    fn track(&mut self, frame: &FrameRef) -> Result<Outcome, TrackerError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrackerKind {
    Builtin(String),
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackerHandle {
    pub kind: TrackerKind,
    pub deterministic: bool,
}

pub const BUILTINS: [&str; 4] = ["oracle", "null", "static", "ncc"];

impl FromStr for TrackerHandle {
    type Err = HarnessError;

    /// Parses `builtin:<name>` or `exec:<command line>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(name) = s.strip_prefix("builtin:") {
            if BUILTINS.contains(&name) {
                return Ok(Self { kind: TrackerKind::Builtin(name.to_string()), deterministic: true });
            }
        } else if let Some(cmd) = s.strip_prefix("exec:") {
            if !cmd.trim().is_empty() {
                return Ok(Self { kind: TrackerKind::External(cmd.to_string()), deterministic: false });
            }
        }
        Err(HarnessError::UnknownTracker(s.to_string()))
    }
}

impl TrackerHandle {
    /// Name used in reports.
    pub fn name(&self) -> String {
        match &self.kind {
            TrackerKind::Builtin(n) => format!("builtin:{n}"),
            TrackerKind::External(c) => format!("exec:{c}"),
        }
    }

    /// A fresh tracker for one video.
    pub fn instantiate(&self, video: &VideoRecord, cfg: &EvalConfig) -> Result<Box<dyn Tracker>, TrackerError> {
        Ok(match &self.kind {
            TrackerKind::Builtin(n) => match n.as_str() {
                "oracle" => Box::new(OracleTracker::new(video.labels.clone())),
                "null" => Box::new(NullTracker),
                "static" => Box::new(StaticTracker::default()),
                _ => Box::new(NccTracker::new(NccParams::from(cfg))),
            },
            TrackerKind::External(cmd) => Box::new(ExternalTracker::spawn(cmd, Duration::from_millis(cfg.frame_timeout_ms))?),
        })
    }
}

/// Something that went wrong in a run without aborting the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub video: String,
    pub anchor_frame: usize,
    /// First frame recorded as no-target because of the incident.
    pub frame_index: usize,
    pub kind: IncidentKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentKind {
    Crashed,
    Timeout,
    InitFailed,
}

/// Anchors at roughly `spacing`-frame intervals on valid frames.
///
/// Starts at the first valid frame; each next anchor is the first valid
/// frame at least `spacing` after the previous one. Anchors need
/// [`MIN_FRAMES_AFTER_ANCHOR`] frames after them.
pub fn generate_anchors(labels: &[FrameLabel], spacing: usize) -> Result<Vec<usize>, HarnessError> {
    let spacing = spacing.max(1);
    let last = labels.len().checked_sub(MIN_FRAMES_AFTER_ANCHOR + 1);
    let mut anchors: Vec<usize> = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        if last.is_none_or(|l| i > l) {
            break;
        }
        let due = anchors.last().is_none_or(|&a| i >= a + spacing);
        if due && label.is_valid() {
            anchors.push(i);
        }
    }
    if anchors.is_empty() {
        return Err(HarnessError::NoValidFrames);
    }
    Ok(anchors)
}

fn incident(video: &VideoRecord, anchor: usize, frame: usize, err: &TrackerError) -> Option<Incident> {
    let kind = match err {
        TrackerError::Crashed(_) => IncidentKind::Crashed,
        TrackerError::Timeout(_) => IncidentKind::Timeout,
        TrackerError::TemplateOutOfBounds(_) | TrackerError::Frame(_) => IncidentKind::InitFailed,
        TrackerError::Protocol(_) | TrackerError::Spawn { .. } => return None,
    };
    Some(Incident { video: video.key(), anchor_frame: anchor, frame_index: frame, kind, message: err.to_string() })
}

/// Runs `tracker` over every anchor of one video.
///
/// A crash or timeout fills the rest of that anchor run with no-target
/// predictions; the tracker is restarted for the next anchor. Protocol
/// violations abort.
pub fn run_video(video: &VideoRecord, handle: &TrackerHandle, cfg: &EvalConfig) -> Result<(Vec<AnchorRun>, Vec<Incident>), HarnessError> {
    let mut runs = Vec::with_capacity(video.anchors.len());
    let mut incidents = Vec::new();
    let mut tracker: Option<Box<dyn Tracker>> = None;
    for &anchor in &video.anchors {
        let gt = video.labels[anchor].bbox.expect("anchors sit on labelled frames");
        let mut predictions = Vec::with_capacity(video.frame_count - anchor - 1);
        let protocol = |source| HarnessError::Protocol { video: video.key(), anchor, source };

        if tracker.is_none() {
            tracker = Some(handle.instantiate(video, cfg).map_err(HarnessError::Spawn)?);
        }
        let t = tracker.as_mut().expect("just created");
        let mut failed = match t.init(&FrameRef::of(video, anchor), gt) {
            Ok(()) => false,
            Err(e @ TrackerError::Protocol(_)) => return Err(protocol(e)),
            Err(e) => {
                incidents.extend(incident(video, anchor, anchor + 1, &e));
                true
            }
        };
        for i in anchor + 1..video.frame_count {
            let outcome = if failed {
                Outcome::NoTarget
            } else {
                match t.track(&FrameRef::of(video, i)) {
                    Ok(o) => o,
                    Err(e @ TrackerError::Protocol(_)) => return Err(protocol(e)),
                    Err(e) => {
                        incidents.extend(incident(video, anchor, i, &e));
                        failed = true;
                        Outcome::NoTarget
                    }
                }
            };
            predictions.push(FramePrediction { frame_index: i, outcome });
        }
        if failed && matches!(handle.kind, TrackerKind::External(_)) {
            tracker = None;
        }
        runs.push(AnchorRun { video: video.key(), anchor_frame: anchor, predictions });
    }
    Ok((runs, incidents))
}

/// Everything an evaluation produces.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub runs: Vec<AnchorRun>,
    pub incidents: Vec<Incident>,
    pub report: MetricsReport,
}

/// Runs `handle` over `dataset` with up to `jobs` videos in parallel, then
/// scores the runs. Output order follows the dataset, not completion order.
pub fn evaluate(dataset: &SubsetRecord, handle: &TrackerHandle, cfg: &EvalConfig, jobs: usize) -> Result<Evaluation, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    let videos: Vec<&VideoRecord> = dataset.videos().collect();
    let per_video: Vec<_> = pool.install(|| videos.par_iter().map(|v| run_video(v, handle, cfg)).collect::<Result<Vec<_>, _>>())?;
    let mut runs = Vec::new();
    let mut incidents = Vec::new();
    for (r, i) in per_video {
        runs.extend(r);
        incidents.extend(i);
    }
    let report = scoring::score(dataset, &runs, cfg, &handle.name())?;
    Ok(Evaluation { runs, incidents, report })
}
