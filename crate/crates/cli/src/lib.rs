//! Subcommand implementations behind the `surgt` binary.
//!
//! Every command returns a JSON value that `main` prints on stdout, or a
//! [`CliError`] that becomes an error object on stderr and an exit code.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use surgt_core::dataset::{self, write_json_atomic, DatasetError, LoadOptions};
use surgt_core::harness::{self, HarnessError, TrackerHandle};
use surgt_core::report::{emit_report, ReportOptions};
use surgt_core::scoring::{self, ScoringError};
use surgt_core::stats::{self, StatsError};
use surgt_core::synth::{self, SubsetSpec, SynthError};
use surgt_core::{EvalConfig, StereoIouCombine, SubsetRecord};
use thiserror::Error;

pub const PREDICTIONS_FILE: &str = "predictions.json";
pub const RUN_FILE: &str = "run.json";
pub const INCIDENTS_FILE: &str = "incidents.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Protocol(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Protocol(_) => "tracker_protocol",
            CliError::Io(_) => "io",
        }
    }

    pub fn to_json(&self) -> Value {
        json!({ "error": self.kind(), "exit_code": self.exit_code(), "message": self.to_string() })
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Protocol { .. } | HarnessError::Spawn(_) => CliError::Protocol(e.to_string()),
            HarnessError::Pool(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ScoringError> for CliError {
    fn from(e: ScoringError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } | SynthError::Image(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::Image(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// `--config` plus per-field overrides. Flags win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON file with flat EvalConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub iou_fail_threshold: Option<f64>,
    #[arg(long)]
    pub fail_streak: Option<usize>,
    #[arg(long)]
    pub err3d_fail_mm: Option<f64>,
    #[arg(long)]
    pub anchor_spacing: Option<usize>,
    #[arg(long, value_parser = parse_combine)]
    pub stereo_iou_combine: Option<StereoIouCombine>,
    #[arg(long)]
    pub sphere_radius_mm: Option<f64>,
    #[arg(long)]
    pub eao_literal_denominator: bool,
    #[arg(long)]
    pub frame_timeout_ms: Option<u64>,
    #[arg(long)]
    pub epipolar_tol_px: Option<f64>,
    #[arg(long)]
    pub ncc_search_radius_px: Option<u32>,
    #[arg(long)]
    pub ncc_occlusion_threshold: Option<f64>,
}

fn parse_combine(s: &str) -> Result<StereoIouCombine, String> {
    match s {
        "mean" => Ok(StereoIouCombine::Mean),
        "min" => Ok(StereoIouCombine::Min),
        _ => Err(format!("expected mean or min, got {s}")),
    }
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<EvalConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_error(path))?;
                serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?
            }
            None => EvalConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            )*};
        }
        apply!(
            iou_fail_threshold,
            fail_streak,
            err3d_fail_mm,
            anchor_spacing,
            stereo_iou_combine,
            sphere_radius_mm,
            frame_timeout_ms,
            epipolar_tol_px,
            ncc_search_radius_px,
            ncc_occlusion_threshold
        );
        if self.eao_literal_denominator {
            cfg.eao_literal_denominator = true;
        }
        cfg.check().map_err(CliError::Validation)?;
        Ok(cfg)
    }
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load(dataset: &Path, cfg: &EvalConfig) -> Result<SubsetRecord, CliError> {
    Ok(dataset::load_dataset(dataset, &LoadOptions { epipolar_tol_px: cfg.epipolar_tol_px })?)
}

/// What an evaluation directory was produced from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tracker: String,
    pub dataset: PathBuf,
    pub config: EvalConfig,
}

pub struct EvaluateArgs {
    pub dataset: PathBuf,
    pub tracker: String,
    pub out: PathBuf,
    pub config: EvalConfig,
    pub jobs: usize,
    pub svg: bool,
}

/// Runs a tracker and writes predictions, incidents and the report to `out`.
pub fn evaluate(args: &EvaluateArgs) -> Result<Value, CliError> {
    let handle: TrackerHandle = args.tracker.parse()?;
    let data = load(&args.dataset, &args.config)?;
    let eval = harness::evaluate(&data, &handle, &args.config, args.jobs.max(1))?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(io_error(out))?;
    dataset::save_predictions(&eval.runs, &out.join(PREDICTIONS_FILE))?;
    let manifest = RunManifest { tracker: handle.name(), dataset: args.dataset.clone(), config: args.config.clone() };
    write_json_atomic(&out.join(RUN_FILE), &manifest).map_err(io_error(out))?;
    write_json_atomic(&out.join(INCIDENTS_FILE), &eval.incidents).map_err(io_error(out))?;
    emit_report(std::slice::from_ref(&eval.report), out, ReportOptions { svg: args.svg }).map_err(io_error(out))?;
    for i in &eval.incidents {
        log::warn!("{}@{} frame {}: {}", i.video, i.anchor_frame, i.frame_index, i.message);
    }
    let s = &eval.report.subset;
    Ok(json!({
        "tracker": manifest.tracker,
        "out": out,
        "anchor_runs": eval.runs.len(),
        "incidents": eval.incidents.len(),
        "eao": s.eao,
        "accuracy_2d": s.accuracy_2d,
        "robustness_2d": s.robustness_2d,
        "robustness_3d": s.robustness_3d,
    }))
}

/// Rescores persisted runs and writes one combined report.
pub fn report(dataset: Option<&Path>, runs: &[PathBuf], out: &Path, svg: bool) -> Result<Value, CliError> {
    if runs.is_empty() {
        return Err(CliError::Validation("at least one --run directory is required".into()));
    }
    let mut reports = Vec::new();
    let mut cache: Option<(PathBuf, SubsetRecord)> = None;
    for run in runs {
        let path = run.join(RUN_FILE);
        let text = fs::read_to_string(&path).map_err(io_error(&path))?;
        let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let root = dataset.map_or_else(|| manifest.dataset.clone(), Path::to_path_buf);
        if cache.as_ref().is_none_or(|(p, _)| *p != root) {
            cache = Some((root.clone(), load(&root, &manifest.config)?));
        }
        let data = &cache.as_ref().expect("dataset loaded above").1;
        let predictions = dataset::load_predictions(&run.join(PREDICTIONS_FILE))?;
        reports.push(scoring::score(data, &predictions, &manifest.config, &manifest.tracker)?);
    }
    emit_report(&reports, out, ReportOptions { svg }).map_err(io_error(out))?;
    let ranking: Vec<_> =
        surgt_core::report::ranking(&reports).iter().map(|r| json!({ "tracker": r.tracker, "eao": r.subset.eao })).collect();
    Ok(json!({ "out": out, "ranking": ranking }))
}

pub fn synth(out: &Path, spec: &SubsetSpec) -> Result<Value, CliError> {
    if spec.videos == 0 {
        return Err(CliError::Validation("--videos must be at least 1".into()));
    }
    let data = synth::generate_subset(out, spec)?;
    Ok(json!({
        "out": out,
        "cases": data.cases.len(),
        "videos": data.videos().count(),
        "frames_per_video": spec.frame_count,
    }))
}

pub fn stats(dataset: &Path, with_ncc: bool) -> Result<Value, CliError> {
    let data = load(dataset, &EvalConfig::default())?;
    let rows = data.videos().map(|v| stats::dataset_stats(v, with_ncc)).collect::<Result<Vec<_>, _>>()?;
    Ok(serde_json::to_value(rows).expect("stats serialise"))
}

/// Full dataset check. Problems are listed in the output; any problem is
/// also a validation error.
pub fn validate_dataset(dataset: &Path, rederive: bool, tol_px: f64, check_frames: bool) -> Result<Value, CliError> {
    let cfg = EvalConfig::default();
    let data = load(dataset, &cfg)?;
    let mut problems = Vec::new();
    let mut frames = 0;
    for video in data.videos() {
        frames += video.frame_count;
        if check_frames {
            for (view, i) in dataset::missing_frames(video) {
                problems.push(json!({ "video": video.key(), "frame": i, "problem": format!("missing {view:?} frame image") }));
            }
        }
        if rederive {
            for m in dataset::rederive_bboxes(video, cfg.sphere_radius_mm, tol_px) {
                problems.push(json!({
                    "video": m.video,
                    "frame": m.frame,
                    "problem": "stored box differs from the one derived from the keypoints",
                    "max_edge_error_px": m.max_edge_error_px,
                }));
            }
        }
    }
    let summary = json!({
        "dataset": dataset,
        "cases": data.cases.len(),
        "videos": data.videos().count(),
        "frames": frames,
        "problems": problems,
    });
    if !problems.is_empty() {
        println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
        return Err(CliError::Validation(format!("{} problem(s) found", problems.len())));
    }
    Ok(summary)
}

pub fn annotate_serve(
    root: PathBuf,
    addr: SocketAddr,
    static_dir: Option<PathBuf>,
    config: surgt_annotate::ServiceConfig,
) -> Result<Value, CliError> {
    if !root.is_dir() {
        return Err(CliError::Io(format!("{}: not a directory", root.display())));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    let state = surgt_annotate::AppState::new(root, config);
    runtime.block_on(surgt_annotate::serve(addr, state, static_dir)).map_err(|e| CliError::Io(format!("{addr}: {e}")))?;
    Ok(Value::Null)
}
