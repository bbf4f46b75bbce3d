//! Evaluation parameters.
//!
//! The JSON form uses flat keys matching the field names; missing keys fall
//! back to the defaults, which are the challenge constants.

use serde::{Deserialize, Serialize};

use crate::geometry::{DEFAULT_EPIPOLAR_TOL_PX, DEFAULT_SPHERE_RADIUS_MM};

/// How the per-view IoUs of a stereo pair combine into one frame score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StereoIouCombine {
    #[default]
    Mean,
    Min,
}

impl StereoIouCombine {
    pub fn combine(self, left: f64, right: f64) -> f64 {
        match self {
            StereoIouCombine::Mean => (left + right) / 2.0,
            StereoIouCombine::Min => left.min(right),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// A view with IoU below this counts as a bad frame for 2D failure.
    pub iou_fail_threshold: f64,
    /// Consecutive bad frames that constitute a tracking failure.
    pub fail_streak: usize,
    /// 3D error above this (mm) counts as a bad frame for 3D failure.
    pub err3d_fail_mm: f64,
    pub anchor_spacing: usize,
    pub stereo_iou_combine: StereoIouCombine,
    pub sphere_radius_mm: f64,
    /// Divide EAO by `n_max - n_min` instead of the count of non-ignored entries.
    pub eao_literal_denominator: bool,
    pub frame_timeout_ms: u64,
    pub epipolar_tol_px: f64,
    pub ncc_search_radius_px: u32,
    pub ncc_occlusion_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_fail_threshold: 0.1,
            fail_streak: 10,
            err3d_fail_mm: 100.0,
            anchor_spacing: 50,
            stereo_iou_combine: StereoIouCombine::Mean,
            sphere_radius_mm: DEFAULT_SPHERE_RADIUS_MM,
            eao_literal_denominator: false,
            frame_timeout_ms: 10_000,
            epipolar_tol_px: DEFAULT_EPIPOLAR_TOL_PX,
            ncc_search_radius_px: 32,
            ncc_occlusion_threshold: 0.4,
        }
    }
}

impl EvalConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let cfg: EvalConfig = serde_json::from_str(text).map_err(|e| e.to_string())?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), String> {
        let positive = [
            ("iou_fail_threshold", self.iou_fail_threshold),
            ("err3d_fail_mm", self.err3d_fail_mm),
            ("sphere_radius_mm", self.sphere_radius_mm),
            ("epipolar_tol_px", self.epipolar_tol_px),
            ("ncc_occlusion_threshold", self.ncc_occlusion_threshold),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(format!("{name} must be positive, got {value}"));
            }
        }
        if self.fail_streak < 1 {
            return Err("fail_streak must be at least 1".into());
        }
        if self.anchor_spacing < 1 {
            return Err("anchor_spacing must be at least 1".into());
        }
        if self.frame_timeout_ms == 0 {
            return Err("frame_timeout_ms must be positive".into());
        }
        Ok(())
    }
}
