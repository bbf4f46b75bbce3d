//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes and returns JSON strings. The `*_json` functions hold
//! the logic and are callable natively.

use serde::{Deserialize, Serialize};
use surgt_core::eao::{self, EaoWindow, Score, ScoreSequence};
use surgt_core::geometry::sphere_to_bbox;
use surgt_core::metrics2d::{find_streak, Failure};
use surgt_core::{Point3D, StereoBBox, StereoCalibration};
use thiserror::Error;
use wasm_bindgen::prelude::*;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("malformed input: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

impl From<eao::EaoError> for DemoError {
    fn from(e: eao::EaoError) -> Self {
        DemoError::Invalid(e.to_string())
    }
}

#[derive(Debug, Deserialize)]
pub struct SphereQuery {
    pub calibration: StereoCalibration,
    pub centre: Point3D,
    pub radius_mm: f64,
}

#[derive(Debug, Serialize)]
pub struct SphereAnswer {
    pub bbox: StereoBBox,
    pub disparity_px: f64,
}

/// Projects a sphere into both views.
pub fn sphere_bbox_json(query: &str) -> Result<String, DemoError> {
    let q: SphereQuery = serde_json::from_str(query)?;
    q.calibration.check().map_err(DemoError::Invalid)?;
    let bbox = sphere_to_bbox(q.centre, q.radius_mm, &q.calibration).map_err(|e| DemoError::Invalid(e.to_string()))?;
    let disparity_px = q.calibration.focal_px * q.calibration.baseline_mm / q.centre.z_mm;
    Ok(serde_json::to_string(&SphereAnswer { bbox, disparity_px })?)
}

fn to_sequence(values: &[Option<f64>]) -> ScoreSequence {
    ScoreSequence::new(values.iter().map(|v| v.map_or(Score::Ignore, Score::Value)).collect())
}

#[derive(Debug, Serialize)]
pub struct CurveAnswer {
    /// Per-position mean over sequences; `null` where every entry is ignored.
    pub merged: Vec<Option<f64>>,
    pub window: EaoWindow,
    pub eao: f64,
}

/// Merges per-video overlap sequences (`null` = ignored) and scores the
/// result over the window implied by their lengths.
pub fn eao_curve_json(sequences: &str) -> Result<String, DemoError> {
    let raw: Vec<Vec<Option<f64>>> = serde_json::from_str(sequences)?;
    if let Some(v) = raw.iter().flatten().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(DemoError::Invalid(format!("overlap {v} outside [0, 1]")));
    }
    let seqs: Vec<ScoreSequence> = raw.iter().map(|s| to_sequence(s)).collect();
    let refs: Vec<&ScoreSequence> = seqs.iter().collect();
    let merged = eao::merge_video_sequences(&refs)?;
    let window = match seqs.as_slice() {
        [only] => EaoWindow::new(1, only.len().max(2))?,
        _ => eao::eao_window(&seqs.iter().map(ScoreSequence::len).collect::<Vec<_>>())?,
    };
    let eao = eao::eao(&merged, window, false)?;
    let merged = merged.entries.iter().map(|s| s.value()).collect();
    Ok(serde_json::to_string(&CurveAnswer { merged, window, eao })?)
}

#[derive(Debug, Deserialize)]
pub struct TraceQuery {
    /// Per-frame overlap; `null` for frames that are not scored.
    pub ious: Vec<Option<f64>>,
    pub threshold: f64,
    pub streak: usize,
}

#[derive(Debug, Serialize)]
pub struct TraceAnswer {
    pub bad: Vec<Option<bool>>,
    pub failure: Option<Failure>,
    /// Mean overlap of scored frames before the failing streak.
    pub accuracy: Option<f64>,
}

/// Marks bad frames and locates the first failure streak.
pub fn failure_trace_json(query: &str) -> Result<String, DemoError> {
    let q: TraceQuery = serde_json::from_str(query)?;
    if q.streak == 0 {
        return Err(DemoError::Invalid("streak must be at least 1".into()));
    }
    let bad: Vec<Option<bool>> = q.ious.iter().map(|v| v.map(|v| v < q.threshold)).collect();
    let failure = find_streak(bad.iter().copied(), q.streak);
    let end = failure.map_or(q.ious.len(), |f| f.streak_start);
    let kept: Vec<f64> = q.ious[..end].iter().flatten().copied().collect();
    let accuracy = (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64);
    Ok(serde_json::to_string(&TraceAnswer { bad, failure, accuracy })?)
}

fn js(r: Result<String, DemoError>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = sphereBbox)]
pub fn sphere_bbox(query: &str) -> Result<String, JsError> {
    js(sphere_bbox_json(query))
}

#[wasm_bindgen(js_name = eaoCurve)]
pub fn eao_curve(sequences: &str) -> Result<String, JsError> {
    js(eao_curve_json(sequences))
}

#[wasm_bindgen(js_name = failureTrace)]
pub fn failure_trace(query: &str) -> Result<String, JsError> {
    js(failure_trace_json(query))
}
