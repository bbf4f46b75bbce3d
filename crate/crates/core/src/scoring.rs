//! Turns anchor runs into a full metrics report: per-anchor scores, then
//! frame-weighted averages for videos, cases and the subset, plus EAO at
//! each level.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EvalConfig;
use crate::eao::{self, EaoError, EaoWindow, ScoreSequence};
use crate::metrics2d::{score_anchor_2d, AnchorResult2D};
use crate::metrics3d::{score_anchor_3d, AnchorResult3D};
use crate::types::{AnchorRun, SubsetRecord, VideoRecord};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("no run for {video} at anchor {anchor}")]
    MissingRun { video: String, anchor: usize },
    #[error("run for unknown video/anchor {video}@{anchor}")]
    UnexpectedRun { video: String, anchor: usize },
    #[error("{0}")]
    Coverage(String),
    #[error(transparent)]
    Eao(#[from] EaoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorScores {
    pub anchor_frame: usize,
    pub metrics_2d: AnchorResult2D,
    pub metrics_3d: AnchorResult3D,
    pub eao: Option<f64>,
    #[serde(skip)]
    pub sequence: ScoreSequence,
}

/// Scores aggregated over a set of anchors.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy_2d: Option<f64>,
    pub error_2d_px: Option<f64>,
    pub error_2d_std_px: Option<f64>,
    /// Frames behind the accuracy and 2D error averages.
    pub n_2d: usize,
    pub robustness_2d: Option<f64>,
    pub robustness_3d: Option<f64>,
    /// Robustness denominators summed: valid frames plus excess predictions.
    pub n_robustness: usize,
    pub error_3d_mm: Option<f64>,
    pub error_3d_std_mm: Option<f64>,
    pub n_3d: usize,
    pub eao: Option<f64>,
}

impl Aggregate {
    fn from_anchor(a: &AnchorScores) -> Self {
        Aggregate {
            accuracy_2d: a.metrics_2d.accuracy,
            error_2d_px: a.metrics_2d.error_2d_px,
            error_2d_std_px: a.metrics_2d.error_2d_px.map(|_| 0.0),
            n_2d: a.metrics_2d.n,
            robustness_2d: a.metrics_2d.robustness,
            robustness_3d: a.metrics_3d.robustness,
            n_robustness: a.metrics_2d.base.denominator(),
            error_3d_mm: a.metrics_3d.error_3d_mm,
            error_3d_std_mm: a.metrics_3d.error_3d_mm.map(|_| 0.0),
            n_3d: a.metrics_3d.n,
            eao: a.eao,
        }
    }

    /// Frame-weighted combination of child aggregates. The spreads are
    /// taken over the per-anchor means of every anchor underneath.
    fn combine(children: &[Aggregate], anchors: &[&AnchorScores], eao: Option<f64>) -> Self {
        let avg = |f: fn(&Aggregate) -> (Option<f64>, usize)| {
            eao::weighted_average(children.iter().map(|c| {
                let (v, w) = f(c);
                (v, w as f64)
            }))
            .ok()
        };
        let e2: Vec<_> = anchors.iter().map(|a| (a.metrics_2d.error_2d_px, a.metrics_2d.n as f64)).collect();
        let e3: Vec<_> = anchors.iter().map(|a| (a.metrics_3d.error_3d_mm, a.metrics_3d.n as f64)).collect();
        Aggregate {
            accuracy_2d: avg(|c| (c.accuracy_2d, c.n_2d)),
            error_2d_px: avg(|c| (c.error_2d_px, c.n_2d)),
            error_2d_std_px: eao::weighted_std(e2.iter().copied()),
            n_2d: children.iter().map(|c| c.n_2d).sum(),
            robustness_2d: avg(|c| (c.robustness_2d, c.n_robustness)),
            robustness_3d: avg(|c| (c.robustness_3d, c.n_robustness)),
            n_robustness: children.iter().map(|c| c.n_robustness).sum(),
            error_3d_mm: avg(|c| (c.error_3d_mm, c.n_3d)),
            error_3d_std_mm: eao::weighted_std(e3.iter().copied()),
            n_3d: children.iter().map(|c| c.n_3d).sum(),
            eao,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub case_id: String,
    pub video_id: String,
    pub aggregate: Aggregate,
    pub anchors: Vec<AnchorScores>,
    #[serde(skip)]
    pub sequence: ScoreSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_id: String,
    pub aggregate: Aggregate,
    pub videos: Vec<VideoReport>,
    #[serde(skip)]
    pub sequence: ScoreSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tracker: String,
    pub subset_id: String,
    pub config: EvalConfig,
    pub window: EaoWindow,
    pub subset: Aggregate,
    pub cases: Vec<CaseReport>,
    #[serde(skip)]
    pub sequence: ScoreSequence,
}

/// Length of a video's merged sequence: frames after its first anchor.
pub fn video_sequence_length(video: &VideoRecord) -> usize {
    video.anchors.first().map_or(0, |&a| video.frame_count - a - 1)
}

/// EAO window shared by every tracker evaluated on `dataset`.
///
/// A single-video subset has no length spread; its window is the whole
/// sequence.
pub fn dataset_window(dataset: &SubsetRecord) -> Result<EaoWindow, EaoError> {
    let lengths: Vec<usize> = dataset.videos().map(video_sequence_length).collect();
    if lengths.len() == 1 {
        return EaoWindow::new(1, lengths[0].max(2));
    }
    eao::eao_window(&lengths)
}

pub fn score_run(run: &AnchorRun, video: &VideoRecord, cfg: &EvalConfig, window: EaoWindow) -> AnchorScores {
    let (metrics_2d, outcomes) = score_anchor_2d(run, &video.labels, cfg);
    let (metrics_3d, _) = score_anchor_3d(run, &video.labels, &video.calibration, &metrics_2d.base, cfg);
    let sequence = eao::anchor_sequence(&outcomes, metrics_2d.failure);
    AnchorScores {
        anchor_frame: run.anchor_frame,
        eao: eao::eao_within(&sequence, window, cfg.eao_literal_denominator).ok(),
        metrics_2d,
        metrics_3d,
        sequence,
    }
}

/// Scores every run against `dataset`. Runs may arrive in any order but
/// must cover every anchor of every video exactly once.
pub fn score(dataset: &SubsetRecord, runs: &[AnchorRun], cfg: &EvalConfig, tracker: &str) -> Result<MetricsReport, ScoringError> {
    let window = dataset_window(dataset)?;
    let mut by_key: HashMap<(&str, usize), &AnchorRun> = HashMap::new();
    for run in runs {
        let known = dataset.find_video(&run.video).is_some_and(|v| v.anchors.contains(&run.anchor_frame));
        if !known || by_key.insert((run.video.as_str(), run.anchor_frame), run).is_some() {
            return Err(ScoringError::UnexpectedRun { video: run.video.clone(), anchor: run.anchor_frame });
        }
    }

    let mut cases = Vec::with_capacity(dataset.cases.len());
    for case in &dataset.cases {
        let mut videos = Vec::with_capacity(case.videos.len());
        for video in &case.videos {
            let key = video.key();
            let mut anchors = Vec::with_capacity(video.anchors.len());
            for &a in &video.anchors {
                let run = by_key.get(&(key.as_str(), a)).ok_or_else(|| ScoringError::MissingRun { video: key.clone(), anchor: a })?;
                run.check_coverage(video.frame_count).map_err(ScoringError::Coverage)?;
                anchors.push(score_run(run, video, cfg, window));
            }
            let seqs: Vec<&ScoreSequence> = anchors.iter().map(|a| &a.sequence).collect();
            let sequence = eao::merge_anchor_sequences(&seqs)?;
            let children: Vec<Aggregate> = anchors.iter().map(Aggregate::from_anchor).collect();
            let refs: Vec<&AnchorScores> = anchors.iter().collect();
            let eao_v = eao::eao_within(&sequence, window, cfg.eao_literal_denominator).ok();
            videos.push(VideoReport {
                case_id: case.id.clone(),
                video_id: video.id.clone(),
                aggregate: Aggregate::combine(&children, &refs, eao_v),
                anchors,
                sequence,
            });
        }
        let seqs: Vec<&ScoreSequence> = videos.iter().map(|v| &v.sequence).collect();
        let sequence = eao::merge_video_sequences(&seqs)?;
        let children: Vec<Aggregate> = videos.iter().map(|v| v.aggregate.clone()).collect();
        let refs: Vec<&AnchorScores> = videos.iter().flat_map(|v| &v.anchors).collect();
        let eao_c = eao::eao_within(&sequence, window, cfg.eao_literal_denominator).ok();
        cases.push(CaseReport { case_id: case.id.clone(), aggregate: Aggregate::combine(&children, &refs, eao_c), videos, sequence });
    }

    let seqs: Vec<&ScoreSequence> = cases.iter().flat_map(|c| c.videos.iter().map(|v| &v.sequence)).collect();
    let sequence = eao::merge_video_sequences(&seqs)?;
    let children: Vec<Aggregate> = cases.iter().map(|c| c.aggregate.clone()).collect();
    let refs: Vec<&AnchorScores> = cases.iter().flat_map(|c| c.videos.iter().flat_map(|v| &v.anchors)).collect();
    let eao_s = eao::eao(&sequence, window, cfg.eao_literal_denominator).ok();
    Ok(MetricsReport {
        tracker: tracker.to_string(),
        subset_id: dataset.id.clone(),
        config: cfg.clone(),
        window,
        subset: Aggregate::combine(&children, &refs, eao_s),
        cases,
        sequence,
    })
}
