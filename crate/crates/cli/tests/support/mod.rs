//! Naive reference scorer and random run generator.
//!
//! The scorer is written from the metric definitions with plain loops over
//! frames and shares no code with the engine beyond the data types. It uses
//! the same operation order (sums in frame order, `hypot` for pixel
//! distances, `b/d` factored out when triangulating) so results can be
//! compared bit for bit.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surgt_core::geometry::sphere_to_bbox;
use surgt_core::harness::generate_anchors;
use surgt_core::synth::default_calibration;
use surgt_core::{
    AnchorRun, BBox, CaseRecord, EvalConfig, FrameLabel, FramePrediction, Outcome, Point3D, StereoBBox, StereoCalibration, SubsetRecord,
    VideoRecord,
};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefScores {
    pub accuracy: Option<f64>,
    pub n_2d: usize,
    pub error_2d: Option<f64>,
    pub robustness_2d: Option<f64>,
    pub robustness_3d: Option<f64>,
    pub denominator: usize,
    pub error_3d: Option<f64>,
    pub n_3d: usize,
    pub eao: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RefReport {
    /// `[case][video][anchor]`
    pub anchors: Vec<Vec<Vec<RefScores>>>,
    pub videos: Vec<Vec<RefScores>>,
    pub cases: Vec<RefScores>,
    pub subset: RefScores,
    pub window: (usize, usize),
}

fn area(b: &BBox) -> f64 {
    (b.u_max - b.u_min) * (b.v_max - b.v_min)
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let mut w = a.u_max.min(b.u_max) - a.u_min.max(b.u_min);
    let mut h = a.v_max.min(b.v_max) - a.v_min.max(b.v_min);
    if w < 0.0 {
        w = 0.0;
    }
    if h < 0.0 {
        h = 0.0;
    }
    let inter = w * h;
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

fn centre(b: &BBox) -> (f64, f64) {
    ((b.u_min + b.u_max) / 2.0, (b.v_min + b.v_max) / 2.0)
}

fn centre_distance(a: &BBox, b: &BBox) -> f64 {
    let (au, av) = centre(a);
    let (bu, bv) = centre(b);
    (au - bu).hypot(av - bv)
}

/// Triangulated box centre, or `None` for non-positive disparity.
fn triangulate(b: &StereoBBox, c: &StereoCalibration) -> Option<(f64, f64, f64)> {
    let (ul, vl) = centre(&b.left);
    let (ur, _) = centre(&b.right);
    let d = ul - ur;
    if d <= 0.0 || d.is_nan() {
        return None;
    }
    let k = c.baseline_mm / d;
    Some(((ul - c.cx_px) * k, (vl - c.cy_px) * k, c.focal_px * k))
}

fn window_mean(seq: &[Option<f64>], window: (usize, usize), past_end_is_zero: bool) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for pos in window.0..=window.1 {
        let entry = if pos <= seq.len() {
            seq[pos - 1]
        } else if past_end_is_zero {
            Some(0.0)
        } else {
            None
        };
        if let Some(v) = entry {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

fn merge(seqs: &[&Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let mut len = 0;
    for s in seqs {
        if s.len() > len {
            len = s.len();
        }
    }
    let mut out = Vec::new();
    for i in 0..len {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in seqs {
            if i < s.len() {
                if let Some(v) = s[i] {
                    sum += v;
                    n += 1;
                }
            }
        }
        out.push(if n == 0 { None } else { Some(sum / n as f64) });
    }
    out
}

fn weighted(pairs: &[(Option<f64>, usize)]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(v, w) in pairs {
        if let Some(v) = v {
            if w > 0 {
                num += v * w as f64;
                den += w as f64;
            }
        }
    }
    if den > 0.0 {
        Some(num / den)
    } else {
        None
    }
}

fn combine(children: &[RefScores], eao: Option<f64>) -> RefScores {
    let pick = |f: &dyn Fn(&RefScores) -> (Option<f64>, usize)| weighted(&children.iter().map(f).collect::<Vec<_>>());
    RefScores {
        accuracy: pick(&|c| (c.accuracy, c.n_2d)),
        n_2d: children.iter().map(|c| c.n_2d).sum(),
        error_2d: pick(&|c| (c.error_2d, c.n_2d)),
        robustness_2d: pick(&|c| (c.robustness_2d, c.denominator)),
        robustness_3d: pick(&|c| (c.robustness_3d, c.denominator)),
        denominator: children.iter().map(|c| c.denominator).sum(),
        error_3d: pick(&|c| (c.error_3d, c.n_3d)),
        n_3d: children.iter().map(|c| c.n_3d).sum(),
        eao,
    }
}

fn window(lengths: &[usize]) -> (usize, usize) {
    if lengths.len() == 1 {
        return (1, lengths[0].max(2));
    }
    let n = lengths.len() as f64;
    let mut mean = 0.0;
    for &l in lengths {
        mean += l as f64;
    }
    mean /= n;
    let mut var = 0.0;
    for &l in lengths {
        var += (l as f64 - mean).powi(2);
    }
    let std = (var / n).sqrt();
    let longest = *lengths.iter().max().unwrap();
    let mut hi = ((mean + std).round() as usize).min(longest).max(2);
    let mut lo = (mean - std).round().max(1.0) as usize;
    if lo >= hi {
        lo = (hi - 1).max(1);
        hi = lo + 1;
    }
    (lo, hi)
}

/// One anchor: scores plus the overlap sequence.
fn score_anchor(run: &AnchorRun, video: &VideoRecord, cfg: &EvalConfig, win: (usize, usize)) -> (RefScores, Vec<Option<f64>>) {
    let m = run.predictions.len();
    let mut valid = vec![false; m];
    let mut excess = vec![false; m];
    let mut ious = vec![(0.0, 0.0); m];
    let mut pred: Vec<Option<StereoBBox>> = vec![None; m];
    for k in 0..m {
        let p = &run.predictions[k];
        let label = &video.labels[p.frame_index];
        pred[k] = match p.outcome {
            Outcome::Predicted(b) => Some(b),
            Outcome::NoTarget => None,
        };
        valid[k] = label.is_visible_in_both_stereo && !label.is_difficult;
        excess[k] = !label.is_visible_in_both_stereo && pred[k].is_some();
        if valid[k] {
            if let Some(b) = pred[k] {
                let gt = label.bbox.unwrap();
                ious[k] = (overlap(&b.left, &gt.left), overlap(&b.right, &gt.right));
            }
        }
    }

    // 2D failure: ten consecutive bad frames, counting only valid frames.
    let (mut count, mut start, mut fail2) = (0, 0, None);
    for k in 0..m {
        if !valid[k] {
            continue;
        }
        let bad = match pred[k] {
            None => true,
            Some(_) => ious[k].0.min(ious[k].1) < cfg.iou_fail_threshold,
        };
        if !bad {
            count = 0;
            continue;
        }
        if count == 0 {
            start = k;
        }
        count += 1;
        if count == cfg.fail_streak {
            fail2 = Some((start, k));
            break;
        }
    }
    let end2 = fail2.map_or(m, |f| f.0);
    let last2 = fail2.map_or(m, |f| f.1 + 1);

    let (mut acc_sum, mut err_sum, mut n2) = (0.0, 0.0, 0usize);
    for k in 0..end2 {
        if valid[k] {
            if let Some(b) = pred[k] {
                let gt = video.labels[run.predictions[k].frame_index].bbox.unwrap();
                acc_sum += (ious[k].0 + ious[k].1) / 2.0;
                err_sum += (centre_distance(&b.left, &gt.left) + centre_distance(&b.right, &gt.right)) / 2.0;
                n2 += 1;
            }
        }
    }
    let mut success2 = 0usize;
    for k in 0..last2 {
        if valid[k] && pred[k].is_some() && ious[k].0.min(ious[k].1) > cfg.iou_fail_threshold {
            success2 += 1;
        }
    }
    let mut denominator = 0usize;
    for k in 0..m {
        if valid[k] || excess[k] {
            denominator += 1;
        }
    }

    // 3D.
    let mut err3 = vec![None; m];
    for k in 0..m {
        if valid[k] {
            if let Some(b) = pred[k] {
                let gt = video.labels[run.predictions[k].frame_index].bbox.unwrap();
                if let (Some(p), Some(g)) = (triangulate(&b, &video.calibration), triangulate(&gt, &video.calibration)) {
                    let (dx, dy, dz) = (p.0 - g.0, p.1 - g.1, p.2 - g.2);
                    err3[k] = Some((dx * dx + dy * dy + dz * dz).sqrt());
                }
            }
        }
    }
    let (mut count, mut start, mut fail3) = (0, 0, None);
    for k in 0..m {
        if !valid[k] {
            continue;
        }
        let bad = match err3[k] {
            None => true,
            Some(e) => e > cfg.err3d_fail_mm,
        };
        if !bad {
            count = 0;
            continue;
        }
        if count == 0 {
            start = k;
        }
        count += 1;
        if count == cfg.fail_streak {
            fail3 = Some((start, k));
            break;
        }
    }
    let end3 = fail3.map_or(m, |f| f.0);
    let last3 = fail3.map_or(m, |f| f.1 + 1);
    let (mut e3_sum, mut n3) = (0.0, 0usize);
    for e in err3.iter().take(end3).flatten() {
        e3_sum += e;
        n3 += 1;
    }
    let mut success3 = 0usize;
    for e in err3.iter().take(last3).flatten() {
        if *e <= cfg.err3d_fail_mm {
            success3 += 1;
        }
    }

    let mut seq = Vec::with_capacity(m);
    for k in 0..m {
        seq.push(if k >= end2 {
            Some(0.0)
        } else if valid[k] {
            Some(if pred[k].is_some() { (ious[k].0 + ious[k].1) / 2.0 } else { 0.0 })
        } else {
            None
        });
    }

    let ratio = |s: usize| if denominator == 0 { None } else { Some(s as f64 / denominator as f64) };
    let scores = RefScores {
        accuracy: (n2 > 0).then(|| acc_sum / n2 as f64),
        n_2d: n2,
        error_2d: (n2 > 0).then(|| err_sum / n2 as f64),
        robustness_2d: ratio(success2),
        robustness_3d: ratio(success3),
        denominator,
        error_3d: (n3 > 0).then(|| e3_sum / n3 as f64),
        n_3d: n3,
        eao: window_mean(&seq, win, false),
    };
    (scores, seq)
}

pub fn evaluate(dataset: &SubsetRecord, runs: &[AnchorRun], cfg: &EvalConfig) -> RefReport {
    let mut lengths = Vec::new();
    for case in &dataset.cases {
        for v in &case.videos {
            lengths.push(v.frame_count - v.anchors[0] - 1);
        }
    }
    let win = window(&lengths);
    let mut report = RefReport { window: win, ..RefReport::default() };
    let mut all_video_seqs = Vec::new();
    for case in &dataset.cases {
        let mut case_anchors = Vec::new();
        let mut case_videos = Vec::new();
        let mut video_seqs = Vec::new();
        for video in &case.videos {
            let mut anchors = Vec::new();
            let mut seqs = Vec::new();
            for &a in &video.anchors {
                let run = runs.iter().find(|r| r.video == video.key() && r.anchor_frame == a).expect("run for every anchor");
                let (s, seq) = score_anchor(run, video, cfg, win);
                anchors.push(s);
                seqs.push(seq);
            }
            let merged = merge(&seqs.iter().collect::<Vec<_>>());
            case_videos.push(combine(&anchors, window_mean(&merged, win, false)));
            case_anchors.push(anchors);
            video_seqs.push(merged);
        }
        let merged = merge(&video_seqs.iter().collect::<Vec<_>>());
        report.cases.push(combine(&case_videos, window_mean(&merged, win, false)));
        report.videos.push(case_videos);
        report.anchors.push(case_anchors);
        all_video_seqs.extend(video_seqs);
    }
    let merged = merge(&all_video_seqs.iter().collect::<Vec<_>>());
    report.subset = combine(&report.cases, window_mean(&merged, win, true));
    report
}

/// A labelled video with random motion, occlusions and difficult frames.
/// Frames are never read, so `dir` is a placeholder.
pub fn random_video(rng: &mut ChaCha8Rng, case_id: &str, id: &str) -> VideoRecord {
    let calib = default_calibration();
    let n = rng.random_range(40..220);
    let mut p = Point3D::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(60.0..120.0));
    let mut labels = Vec::with_capacity(n);
    let mut hidden_until = 0;
    for i in 0..n {
        p = Point3D::new(
            (p.x_mm + rng.random_range(-0.6..0.6)).clamp(-20.0, 20.0),
            (p.y_mm + rng.random_range(-0.6..0.6)).clamp(-20.0, 20.0),
            (p.z_mm + rng.random_range(-0.8..0.8)).clamp(50.0, 150.0),
        );
        if i >= hidden_until && rng.random_bool(0.02) {
            hidden_until = i + rng.random_range(1..15);
        }
        if i < hidden_until {
            labels.push(FrameLabel::not_visible(i));
            continue;
        }
        let bbox = sphere_to_bbox(p, 2.5, &calib).unwrap();
        labels.push(FrameLabel {
            frame_index: i,
            keypoint_left: Some(bbox.left.centre()),
            keypoint_right: Some(bbox.right.centre()),
            bbox: Some(bbox),
            is_difficult: rng.random_bool(0.04),
            is_visible_in_both_stereo: true,
        });
    }
    // Anchors need a valid frame early enough; force one.
    labels[0] = FrameLabel { is_difficult: false, ..labels[0].clone() };
    if labels[0].bbox.is_none() {
        let bbox = sphere_to_bbox(p, 2.5, &calib).unwrap();
        labels[0] = FrameLabel {
            frame_index: 0,
            keypoint_left: Some(bbox.left.centre()),
            keypoint_right: Some(bbox.right.centre()),
            bbox: Some(bbox),
            is_difficult: false,
            is_visible_in_both_stereo: true,
        };
    }
    let anchors = generate_anchors(&labels, 50).unwrap();
    VideoRecord {
        case_id: case_id.into(),
        id: id.into(),
        frame_count: n,
        frame_rate_hz: 25.0,
        dir: PathBuf::from(format!("/nonexistent/{case_id}/{id}")),
        labels,
        anchors,
        calibration: calib,
    }
}

fn shift(b: &StereoBBox, dl: (f64, f64), dr: (f64, f64), scale: f64) -> StereoBBox {
    let s = |x: &BBox, (du, dv): (f64, f64)| {
        let c = x.centre();
        BBox::from_centre(surgt_core::Keypoint2D::new(c.u + du, c.v + dv), x.width() * scale, x.height() * scale)
    };
    StereoBBox::new(s(&b.left, dl), s(&b.right, dr))
}

/// Tracker behaviour held for a random number of frames.
#[derive(Debug, Clone, Copy)]
enum Mode {
    Close,
    Jitter,
    Lost,
    Silent,
    OneViewLost,
    Crossed,
    Deep,
}

/// A run that mixes good tracking with every failure mode.
pub fn random_run(rng: &mut ChaCha8Rng, video: &VideoRecord, anchor: usize) -> AnchorRun {
    let modes = [Mode::Close, Mode::Close, Mode::Jitter, Mode::Lost, Mode::Silent, Mode::OneViewLost, Mode::Crossed, Mode::Deep];
    let held = video.labels[anchor].bbox.unwrap();
    let mut last = held;
    let mut mode = Mode::Close;
    let mut left = 0;
    let mut predictions = Vec::new();
    for i in anchor + 1..video.frame_count {
        if left == 0 {
            mode = modes[rng.random_range(0..modes.len())];
            left = rng.random_range(1..16);
        }
        left -= 1;
        let gt = video.labels[i].bbox;
        let base = gt.unwrap_or(last);
        let outcome = match mode {
            Mode::Close => Outcome::Predicted(shift(&base, (0.3, -0.2), (0.3, -0.2), 1.0)),
            Mode::Jitter => {
                let j = |rng: &mut ChaCha8Rng| (rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
                let (a, b) = (j(rng), j(rng));
                Outcome::Predicted(shift(&base, a, (b.0, a.1), rng.random_range(0.7..1.4)))
            }
            Mode::Lost => Outcome::Predicted(shift(&base, (60.0, 40.0), (60.0, 40.0), 1.0)),
            Mode::Silent => Outcome::NoTarget,
            Mode::OneViewLost => Outcome::Predicted(shift(&base, (0.0, 0.0), (-70.0, 0.0), 1.0)),
            Mode::Crossed => {
                let d = base.disparity();
                Outcome::Predicted(shift(&base, (0.0, 0.0), (d + 1.5, 0.0), 1.0))
            }
            Mode::Deep => {
                let d = base.disparity();
                Outcome::Predicted(shift(&base, (0.0, 0.0), (d * 0.95, 0.0), 1.0))
            }
        };
        if let Some(g) = gt {
            last = g;
        }
        predictions.push(FramePrediction { frame_index: i, outcome });
    }
    AnchorRun { video: video.key(), anchor_frame: anchor, predictions }
}

/// A random subset and one run per anchor.
pub fn random_subset(seed: u64) -> (SubsetRecord, Vec<AnchorRun>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::new();
    let mut runs = Vec::new();
    for c in 0..rng.random_range(1..4) {
        let case_id = format!("case{c:02}");
        let mut videos = Vec::new();
        for v in 0..rng.random_range(1..4) {
            let video = random_video(&mut rng, &case_id, &format!("video{v:02}"));
            for &a in &video.anchors {
                runs.push(random_run(&mut rng, &video, a));
            }
            videos.push(video);
        }
        cases.push(CaseRecord { id: case_id, videos });
    }
    (SubsetRecord { id: format!("random{seed}"), cases }, runs)
}
