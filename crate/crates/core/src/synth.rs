//! Deterministic synthetic stereo videos with exact ground truth.
//!
//! A target point follows a parametric 3D path. Each view shows a
//! band-limited value-noise texture attached to the target's projection, so
//! the whole image translates rigidly with it. During occlusion windows a
//! flat rectangle covers the target.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{self, write_json_atomic};
use crate::geometry::{self, sphere_to_bbox, DEFAULT_SPHERE_RADIUS_MM};
use crate::harness::{generate_anchors, HarnessError};
use crate::image_ops::{GrayImage, ImageError};
use crate::types::{CaseRecord, FrameLabel, Keypoint2D, Point3D, StereoCalibration, SubsetRecord, VideoRecord, View};

pub const SCENE_FILE: &str = "scene.json";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("target at frame {frame} is behind the camera or too close (z = {z_mm} mm, disparity = {disparity_px} px)")]
    TrajectoryBehindCamera { frame: usize, z_mm: f64, disparity_px: f64 },
    #[error("target box at frame {frame} leaves the {view:?} image")]
    TargetOutOfView { frame: usize, view: View },
    #[error("occlusion window [{0}, {1}] is outside the video")]
    BadOcclusionWindow(usize, usize),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Anchors(#[from] HarnessError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    /// Straight segments between `(frame, point)` waypoints; constant before
    /// the first and after the last.
    PiecewiseLinear { waypoints: Vec<(usize, Point3D)> },
    /// `centre + amplitude · sin(2π·t/period + phase)` per axis.
    Sinusoidal { centre: Point3D, amplitude_mm: Point3D, period_frames: f64, phase: f64 },
}

impl Trajectory {
    pub fn at(&self, frame: usize) -> Point3D {
        match self {
            Trajectory::PiecewiseLinear { waypoints } => {
                let t = frame as f64;
                let (first, last) = (waypoints[0], waypoints[waypoints.len() - 1]);
                if frame <= first.0 {
                    return first.1;
                }
                if frame >= last.0 {
                    return last.1;
                }
                let k = waypoints.windows(2).find(|w| frame < w[1].0).expect("frame is inside the path");
                let (f0, p0) = k[0];
                let (f1, p1) = k[1];
                let a = (t - f0 as f64) / (f1 - f0) as f64;
                Point3D::new(p0.x_mm + a * (p1.x_mm - p0.x_mm), p0.y_mm + a * (p1.y_mm - p0.y_mm), p0.z_mm + a * (p1.z_mm - p0.z_mm))
            }
            Trajectory::Sinusoidal { centre, amplitude_mm, period_frames, phase } => {
                let s = (std::f64::consts::TAU * frame as f64 / period_frames + phase).sin();
                Point3D::new(centre.x_mm + amplitude_mm.x_mm * s, centre.y_mm + amplitude_mm.y_mm * s, centre.z_mm + amplitude_mm.z_mm * s)
            }
        }
    }
}

/// Value-noise octaves: lattice spacing halves and amplitude scales by
/// `persistence` at each octave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureSpec {
    pub cell_px: f64,
    pub octaves: u32,
    pub persistence: f64,
    /// Peak deviation from mid-grey.
    pub contrast: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        Self { cell_px: 8.0, octaves: 3, persistence: 0.5, contrast: 90.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub frame_count: usize,
    pub calibration: StereoCalibration,
    pub frame_rate_hz: f64,
    pub trajectory: Trajectory,
    pub texture: TextureSpec,
    /// Inclusive `[start, end]` frame ranges where the target is hidden.
    pub occlusion_windows: Vec<[usize; 2]>,
    pub difficult_frames: Vec<usize>,
    pub sphere_radius_mm: f64,
    pub anchor_spacing: usize,
}

pub fn default_calibration() -> StereoCalibration {
    StereoCalibration { focal_px: 300.0, cx_px: 128.0, cy_px: 128.0, baseline_mm: 5.0, image_width: 256, image_height: 256 }
}

impl SceneSpec {
    /// A static target at 80 mm in front of the left camera.
    pub fn still(seed: u64, frame_count: usize) -> Self {
        Self {
            seed,
            frame_count,
            calibration: default_calibration(),
            frame_rate_hz: 25.0,
            trajectory: Trajectory::PiecewiseLinear { waypoints: vec![(0, Point3D::new(2.5, 0.0, 80.0))] },
            texture: TextureSpec::default(),
            occlusion_windows: Vec::new(),
            difficult_frames: Vec::new(),
            sphere_radius_mm: DEFAULT_SPHERE_RADIUS_MM,
            anchor_spacing: 50,
        }
    }

    pub fn is_occluded(&self, frame: usize) -> bool {
        self.occlusion_windows.iter().any(|w| (w[0]..=w[1]).contains(&frame))
    }

    fn check(&self) -> Result<(), SynthError> {
        self.calibration.check().map_err(SynthError::InvalidSpec)?;
        if self.frame_count == 0 {
            return Err(SynthError::InvalidSpec("frame_count must be positive".into()));
        }
        if let Trajectory::PiecewiseLinear { waypoints } = &self.trajectory {
            if waypoints.is_empty() || waypoints.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(SynthError::InvalidSpec("waypoint frames must be increasing".into()));
            }
        }
        if let Trajectory::Sinusoidal { period_frames, .. } = &self.trajectory {
            if !(*period_frames > 0.0) {
                return Err(SynthError::InvalidSpec("period must be positive".into()));
            }
        }
        for w in &self.occlusion_windows {
            if w[0] > w[1] || w[1] >= self.frame_count {
                return Err(SynthError::BadOcclusionWindow(w[0], w[1]));
            }
        }
        if self.texture.cell_px <= 0.0 || self.texture.octaves == 0 {
            return Err(SynthError::InvalidSpec("texture needs positive cell size and octaves".into()));
        }
        Ok(())
    }
}

/// Smoothly interpolated lattice noise in `[-1, 1]`, keyed by seed.
#[derive(Debug, Clone)]
pub struct ValueNoise {
    seed: u64,
    spec: TextureSpec,
    norm: f64,
}

impl ValueNoise {
    pub fn new(seed: u64, spec: TextureSpec) -> Self {
        let norm = (0..spec.octaves).map(|o| spec.persistence.powi(o as i32)).sum();
        Self { seed, spec, norm }
    }

    fn lattice(&self, octave: u32, ix: i64, iy: i64) -> f64 {
        // SplitMix64 over the packed coordinates.
        let mut z = self
            .seed
            .wrapping_add(u64::from(octave).wrapping_mul(0xD1B5_4A32_D192_ED03))
            .wrapping_add((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .wrapping_add((iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    fn octave(&self, octave: u32, x: f64, y: f64) -> f64 {
        let (fx, fy) = (x.floor(), y.floor());
        let (ix, iy) = (fx as i64, fy as i64);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (sx, sy) = (smooth(x - fx), smooth(y - fy));
        let top = self.lattice(octave, ix, iy) * (1.0 - sx) + self.lattice(octave, ix + 1, iy) * sx;
        let bottom = self.lattice(octave, ix, iy + 1) * (1.0 - sx) + self.lattice(octave, ix + 1, iy + 1) * sx;
        top * (1.0 - sy) + bottom * sy
    }

    pub fn at(&self, u: f64, v: f64) -> f64 {
        let mut total = 0.0;
        let mut scale = 1.0 / self.spec.cell_px;
        let mut amp = 1.0;
        for o in 0..self.spec.octaves {
            total += amp * self.octave(o, u * scale, v * scale);
            scale *= 2.0;
            amp *= self.spec.persistence;
        }
        total / self.norm
    }
}

/// Ground truth of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthFrame {
    pub point: Point3D,
    pub left: Keypoint2D,
    pub right: Keypoint2D,
    pub label: FrameLabel,
}

/// Ground truth for every frame, without rendering.
pub fn ground_truth(spec: &SceneSpec) -> Result<Vec<TruthFrame>, SynthError> {
    spec.check()?;
    let calib = &spec.calibration;
    (0..spec.frame_count)
        .map(|i| {
            let point = spec.trajectory.at(i);
            let behind = || SynthError::TrajectoryBehindCamera {
                frame: i,
                z_mm: point.z_mm,
                disparity_px: calib.focal_px * calib.baseline_mm / point.z_mm,
            };
            let left = geometry::project(point, calib, View::Left).map_err(|_| behind())?;
            let right = geometry::project(point, calib, View::Right).map_err(|_| behind())?;
            if !(geometry::disparity(left, right) > 0.0) {
                return Err(behind());
            }
            let bbox = sphere_to_bbox(point, spec.sphere_radius_mm, calib).map_err(|_| behind())?;
            let (w, h) = (f64::from(calib.image_width), f64::from(calib.image_height));
            for view in [View::Left, View::Right] {
                let b = bbox.view(view);
                if b.u_min < -0.5 || b.v_min < -0.5 || b.u_max > w - 0.5 || b.v_max > h - 0.5 {
                    return Err(SynthError::TargetOutOfView { frame: i, view });
                }
            }
            let label = if spec.is_occluded(i) {
                FrameLabel::not_visible(i)
            } else {
                FrameLabel {
                    frame_index: i,
                    keypoint_left: Some(left),
                    keypoint_right: Some(right),
                    bbox: Some(bbox),
                    is_difficult: spec.difficult_frames.contains(&i),
                    is_visible_in_both_stereo: true,
                }
            };
            Ok(TruthFrame { point, left, right, label })
        })
        .collect()
}

/// Renders one view of one frame.
pub fn render_view(spec: &SceneSpec, noise: &ValueNoise, truth: &TruthFrame, view: View) -> GrayImage {
    let calib = &spec.calibration;
    let kp = match view {
        View::Left => truth.left,
        View::Right => truth.right,
    };
    let (w, h) = (calib.image_width as usize, calib.image_height as usize);
    let mut img = GrayImage::from_fn(w, h, |x, y| (128.0 + spec.texture.contrast * noise.at(x as f64 - kp.u, y as f64 - kp.v)) as f32);
    if spec.is_occluded(truth.label.frame_index) {
        // Three times the sphere's image radius around the target.
        let half = 3.0 * calib.focal_px * spec.sphere_radius_mm / truth.point.z_mm;
        let x0 = (kp.u - half).floor().max(0.0) as usize;
        let y0 = (kp.v - half).floor().max(0.0) as usize;
        let x1 = ((kp.u + half).ceil() as usize).min(w - 1);
        let y1 = ((kp.v + half).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                img.set(x, y, 40.0);
            }
        }
    }
    img
}

/// Writes a complete video directory and returns its record.
pub fn generate(spec: &SceneSpec, case_id: &str, video_dir: &Path) -> Result<VideoRecord, SynthError> {
    let truth = ground_truth(spec)?;
    let labels: Vec<FrameLabel> = truth.iter().map(|t| t.label.clone()).collect();
    let anchors = generate_anchors(&labels, spec.anchor_spacing)?;
    let video = VideoRecord {
        case_id: case_id.to_string(),
        id: video_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        frame_count: spec.frame_count,
        frame_rate_hz: spec.frame_rate_hz,
        dir: video_dir.to_path_buf(),
        labels,
        anchors,
        calibration: spec.calibration,
    };
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    for view in [View::Left, View::Right] {
        let dir = video.frame_path(view, 0).parent().expect("frame has a directory").to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    }
    dataset::write_video_metadata(&video).map_err(io_err(video_dir))?;
    let scene = video_dir.join(SCENE_FILE);
    write_json_atomic(&scene, spec).map_err(io_err(&scene))?;

    let noise = ValueNoise::new(spec.seed, spec.texture.clone());
    for t in &truth {
        for view in [View::Left, View::Right] {
            render_view(spec, &noise, t, view).save_png(&video.frame_path(view, t.label.frame_index))?;
        }
    }
    Ok(video)
}

/// Options for a whole synthetic subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSpec {
    pub seed: u64,
    pub videos: usize,
    pub frame_count: usize,
    pub videos_per_case: usize,
}

impl Default for SubsetSpec {
    fn default() -> Self {
        Self { seed: 0, videos: 4, frame_count: 150, videos_per_case: 2 }
    }
}

/// Scene of the `index`-th video of a subset.
///
/// Even indices are pure translations at constant depth with no occlusion.
/// Odd indices move sinusoidally in depth as well, with one occlusion window
/// and a run of difficult frames.
pub fn subset_scene(seed: u64, index: usize, frame_count: usize) -> SceneSpec {
    let video_seed = seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed);
    let mut spec = SceneSpec::still(video_seed, frame_count);
    let z = rng.random_range(75.0..90.0);
    if index.is_multiple_of(2) {
        // Waypoints every 20 to 40 frames, within ±15 mm laterally.
        let mut waypoints = vec![(0, Point3D::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), z))];
        let mut f = 0;
        while f < frame_count {
            f += rng.random_range(20..40);
            waypoints.push((f, Point3D::new(rng.random_range(-15.0..15.0), rng.random_range(-12.0..12.0), z)));
        }
        spec.trajectory = Trajectory::PiecewiseLinear { waypoints };
    } else {
        spec.trajectory = Trajectory::Sinusoidal {
            centre: Point3D::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), z),
            amplitude_mm: Point3D::new(rng.random_range(4.0..10.0), rng.random_range(2.0..6.0), rng.random_range(5.0..12.0)),
            period_frames: rng.random_range(60.0..120.0),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        };
        let len = (frame_count / 10).max(1);
        let start = rng.random_range(frame_count / 3..(2 * frame_count / 3).max(frame_count / 3 + 1));
        spec.occlusion_windows = vec![[start, (start + len - 1).min(frame_count - 1)]];
        let d0 = rng.random_range(5..(frame_count / 4).max(6));
        spec.difficult_frames = (d0..(d0 + 4).min(frame_count)).collect();
    }
    spec
}

/// Generates `spec.videos` videos under `root/caseNN/videoNN`.
pub fn generate_subset(root: &Path, spec: &SubsetSpec) -> Result<SubsetRecord, SynthError> {
    let per_case = spec.videos_per_case.max(1);
    let videos: Vec<VideoRecord> = (0..spec.videos)
        .into_par_iter()
        .map(|i| {
            let case_id = format!("case{:02}", i / per_case + 1);
            let dir = root.join(&case_id).join(format!("video{:02}", i % per_case + 1));
            generate(&subset_scene(spec.seed, i, spec.frame_count), &case_id, &dir)
        })
        .collect::<Result<_, _>>()?;
    let mut cases: Vec<CaseRecord> = Vec::new();
    for v in videos {
        match cases.last_mut() {
            Some(c) if c.id == v.case_id => c.videos.push(v),
            _ => cases.push(CaseRecord { id: v.case_id.clone(), videos: vec![v] }),
        }
    }
    let id = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(SubsetRecord { id, cases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::reproject;

    fn moving(frames: usize) -> SceneSpec {
        let mut s = SceneSpec::still(3, frames);
        s.trajectory = Trajectory::PiecewiseLinear {
            waypoints: vec![(0, Point3D::new(-10.0, 0.0, 80.0)), (frames - 1, Point3D::new(10.0, 4.0, 90.0))],
        };
        s
    }

    #[test]
    fn piecewise_linear_interpolates_and_clamps() {
        let t = Trajectory::PiecewiseLinear { waypoints: vec![(10, Point3D::new(0.0, 0.0, 50.0)), (20, Point3D::new(10.0, -10.0, 70.0))] };
        assert_eq!(t.at(0), Point3D::new(0.0, 0.0, 50.0));
        assert_eq!(t.at(15), Point3D::new(5.0, -5.0, 60.0));
        assert_eq!(t.at(99), Point3D::new(10.0, -10.0, 70.0));
    }

    #[test]
    fn keypoints_reproject_to_trajectory() {
        let spec = moving(40);
        for t in ground_truth(&spec).unwrap() {
            let p = reproject(t.left, geometry::disparity(t.left, t.right), &spec.calibration).unwrap();
            assert!(p.distance(&t.point) < 1e-6, "{p:?} vs {:?}", t.point);
            assert_eq!(t.left.v, t.right.v);
        }
    }

    #[test]
    fn flags_follow_spec() {
        let mut spec = moving(30);
        spec.occlusion_windows = vec![[5, 7]];
        spec.difficult_frames = vec![10];
        let truth = ground_truth(&spec).unwrap();
        assert!(truth.iter().filter(|t| !t.label.is_valid()).map(|t| t.label.frame_index).eq([5, 6, 7, 10]));
        assert!(truth[10].label.bbox.is_some());
        assert!(truth[6].label.keypoint_left.is_none());
    }

    #[test]
    fn rejects_bad_scenes() {
        let mut spec = moving(30);
        spec.trajectory = Trajectory::PiecewiseLinear { waypoints: vec![(0, Point3D::new(0.0, 0.0, -5.0))] };
        assert!(matches!(ground_truth(&spec), Err(SynthError::TrajectoryBehindCamera { frame: 0, .. })));
        spec.trajectory = Trajectory::PiecewiseLinear { waypoints: vec![(0, Point3D::new(80.0, 0.0, 80.0))] };
        assert!(matches!(ground_truth(&spec), Err(SynthError::TargetOutOfView { .. })));
        let mut spec = moving(30);
        spec.occlusion_windows = vec![[25, 30]];
        assert!(matches!(ground_truth(&spec), Err(SynthError::BadOcclusionWindow(25, 30))));
    }

    #[test]
    fn noise_is_deterministic_and_bounded() {
        let a = ValueNoise::new(9, TextureSpec::default());
        let b = ValueNoise::new(9, TextureSpec::default());
        let c = ValueNoise::new(10, TextureSpec::default());
        let mut differs = false;
        for i in 0..500 {
            let (u, v) = (i as f64 * 0.73 - 100.0, i as f64 * 1.31 - 50.0);
            assert_eq!(a.at(u, v), b.at(u, v));
            assert!(a.at(u, v).abs() <= 1.0);
            differs |= a.at(u, v) != c.at(u, v);
        }
        assert!(differs);
    }

    #[test]
    fn texture_moves_with_target() {
        let spec = moving(20);
        let noise = ValueNoise::new(spec.seed, spec.texture.clone());
        let truth = ground_truth(&spec).unwrap();
        let img = render_view(&spec, &noise, &truth[7], View::Left);
        let kp = truth[7].left;
        let expect = 128.0 + spec.texture.contrast * noise.at(100.0 - kp.u, 60.0 - kp.v);
        assert!((f64::from(img.get(100, 60)) - expect).abs() < 1e-3);
    }

    #[test]
    fn occluder_covers_target() {
        let mut spec = moving(20);
        spec.occlusion_windows = vec![[4, 4]];
        let noise = ValueNoise::new(spec.seed, spec.texture.clone());
        let truth = ground_truth(&spec).unwrap();
        let img = render_view(&spec, &noise, &truth[4], View::Right);
        let kp = truth[4].right;
        assert_eq!(img.get(kp.u.round() as usize, kp.v.round() as usize), 40.0);
    }

    #[test]
    fn generated_video_loads_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut spec = moving(30);
        spec.occlusion_windows = vec![[12, 14]];
        let a = generate(&spec, "c", &dir.path().join("c/a")).unwrap();
        let b = generate(&spec, "c", &dir.path().join("c/b")).unwrap();
        let loaded = dataset::load_video(&a.dir, "c", &Default::default()).unwrap();
        assert_eq!(loaded, a);
        assert!(dataset::missing_frames(&a).is_empty());
        assert!(dataset::rederive_bboxes(&a, spec.sphere_radius_mm, 1e-9).is_empty());
        for i in 0..30 {
            for view in [View::Left, View::Right] {
                assert_eq!(fs::read(a.frame_path(view, i)).unwrap(), fs::read(b.frame_path(view, i)).unwrap());
            }
        }
        assert_eq!(a.anchors, b.anchors);
    }

    #[test]
    fn subset_scenes_are_valid() {
        for seed in 0..20 {
            for i in 0..6 {
                let spec = subset_scene(seed, i, 150);
                let truth = ground_truth(&spec).unwrap_or_else(|e| panic!("seed {seed} video {i}: {e}"));
                assert!(generate_anchors(&truth.into_iter().map(|t| t.label).collect::<Vec<_>>(), 50).is_ok());
                assert_eq!(spec.occlusion_windows.is_empty(), i % 2 == 0);
            }
        }
    }
}
