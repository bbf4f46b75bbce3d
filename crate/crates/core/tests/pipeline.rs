use std::fs;
use std::path::Path;

use surgt_core::dataset::{self, load_predictions, save_predictions, LoadOptions};
use surgt_core::harness::{evaluate, run_video, HarnessError, IncidentKind, TrackerHandle};
use surgt_core::metrics2d::iou;
use surgt_core::report::{emit_report, ReportOptions};
use surgt_core::scoring::score;
use surgt_core::synth::{generate, generate_subset, SceneSpec, SubsetSpec, Trajectory};
use surgt_core::{EvalConfig, Outcome, Point3D, SubsetRecord};

fn subset(dir: &Path, videos: usize, frames: usize) -> SubsetRecord {
    generate_subset(dir, &SubsetSpec { seed: 11, videos, frame_count: frames, videos_per_case: 2 }).unwrap();
    dataset::load_dataset(dir, &LoadOptions::default()).unwrap()
}

fn handle(s: &str) -> TrackerHandle {
    s.parse().unwrap()
}

#[test]
fn oracle_scores_perfectly_and_null_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = subset(dir.path(), 5, 120);
    let cfg = EvalConfig::default();

    let perfect = evaluate(&data, &handle("builtin:oracle"), &cfg, 2).unwrap().report.subset;
    assert_eq!(perfect.accuracy_2d, Some(1.0));
    assert_eq!(perfect.error_2d_px, Some(0.0));
    assert_eq!(perfect.robustness_2d, Some(1.0));
    assert_eq!(perfect.robustness_3d, Some(1.0));
    assert_eq!(perfect.error_3d_mm, Some(0.0));
    assert_eq!(perfect.eao, Some(1.0));

    let null = evaluate(&data, &handle("builtin:null"), &cfg, 2).unwrap().report.subset;
    assert_eq!(null.accuracy_2d, None);
    assert_eq!(null.robustness_2d, Some(0.0));
    assert_eq!(null.robustness_3d, Some(0.0));
    assert_eq!(null.eao, Some(0.0));
}

#[test]
fn static_tracker_matches_hand_trace() {
    // Constant velocity of 0.5 mm/frame along x at 80 mm: about 1.9 px/frame.
    let dir = tempfile::tempdir().unwrap();
    let mut spec = SceneSpec::still(5, 80);
    spec.trajectory =
        Trajectory::PiecewiseLinear { waypoints: vec![(0, Point3D::new(-15.0, 0.0, 80.0)), (79, Point3D::new(24.5, 0.0, 80.0))] };
    let video = generate(&spec, "case", &dir.path().join("case/v")).unwrap();
    let data = SubsetRecord { id: "s".into(), cases: vec![surgt_core::CaseRecord { id: "case".into(), videos: vec![video.clone()] }] };
    let cfg = EvalConfig::default();
    let report = evaluate(&data, &handle("builtin:static"), &cfg, 1).unwrap().report;

    for anchor in &report.cases[0].videos[0].anchors {
        let a = anchor.anchor_frame;
        let held = video.labels[a].bbox.unwrap();
        let (mut run, mut fail_at, mut sum, mut n, mut success) = (0, None, 0.0, 0, 0);
        for i in a + 1..video.frame_count {
            let gt = video.labels[i].bbox.unwrap();
            let (l, r) = (iou(&held.left, &gt.left), iou(&held.right, &gt.right));
            if l.min(r) < 0.1 {
                run += 1;
            } else {
                run = 0;
                success += 1;
            }
            if run == 10 {
                fail_at = Some(i);
                break;
            }
        }
        let stop = fail_at.map_or(video.frame_count, |f| f - 9);
        for i in a + 1..stop {
            let gt = video.labels[i].bbox.unwrap();
            sum += (iou(&held.left, &gt.left) + iou(&held.right, &gt.right)) / 2.0;
            n += 1;
        }
        let m = &anchor.metrics_2d;
        assert_eq!(m.failure_frame, fail_at, "anchor {a}");
        assert!(fail_at.is_some(), "static box should drift off a moving target");
        assert_eq!(m.n, n);
        assert_eq!(m.accuracy, Some(sum / n as f64));
        assert_eq!(m.n_success, success);
        assert_eq!(m.robustness, Some(success as f64 / (video.frame_count - a - 1) as f64));
    }
}

#[test]
fn ncc_tracks_pure_translation() {
    let dir = tempfile::tempdir().unwrap();
    let data = subset(dir.path(), 2, 100);
    let eval = evaluate(&data, &handle("builtin:ncc"), &EvalConfig::default(), 2).unwrap();
    let translation = &data.cases[0].videos[0];
    let (mut good, mut total) = (0, 0);
    for run in eval.runs.iter().filter(|r| r.video == translation.key()) {
        for p in &run.predictions {
            let gt = translation.labels[p.frame_index].bbox.unwrap();
            total += 1;
            if let Outcome::Predicted(b) = p.outcome {
                let e = b.left.centre().distance(&gt.left.centre()).max(b.right.centre().distance(&gt.right.centre()));
                good += usize::from(e <= 1.0);
            }
        }
    }
    assert!(good as f64 >= 0.95 * total as f64, "{good}/{total}");
    assert!(eval.incidents.is_empty());
}

#[test]
fn persisted_predictions_reproduce_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = subset(&dir.path().join("data"), 3, 80);
    let cfg = EvalConfig::default();
    let first = evaluate(&data, &handle("builtin:ncc"), &cfg, 3).unwrap();
    let again = evaluate(&data, &handle("builtin:ncc"), &cfg, 1).unwrap();
    assert_eq!(first.runs, again.runs, "evaluation depends on scheduling");

    let file = dir.path().join("predictions.json");
    save_predictions(&first.runs, &file).unwrap();
    let reloaded = load_predictions(&file).unwrap();
    assert_eq!(reloaded, first.runs);
    let rescored = score(&data, &reloaded, &cfg, "builtin:ncc").unwrap();
    assert_eq!(rescored, first.report);

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    emit_report(std::slice::from_ref(&first.report), &a, ReportOptions { svg: true }).unwrap();
    emit_report(&[rescored], &b, ReportOptions { svg: true }).unwrap();
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

const SILENT: &str = r#"while read l; do case "$l" in *init*) echo '{"type":"ready"}';; *) echo '{"type":"none"}';; esac; done"#;

#[test]
fn external_tracker_matches_builtin_null() {
    let dir = tempfile::tempdir().unwrap();
    let data = subset(dir.path(), 2, 40);
    let cfg = EvalConfig::default();
    let ext = evaluate(&data, &handle(&format!("exec:{SILENT}")), &cfg, 2).unwrap();
    let null = evaluate(&data, &handle("builtin:null"), &cfg, 2).unwrap();
    assert_eq!(ext.runs, null.runs);
    assert_eq!(ext.report.subset, null.report.subset);
}

#[test]
fn crash_fills_rest_of_run_with_no_target() {
    let dir = tempfile::tempdir().unwrap();
    let data = subset(dir.path(), 1, 40);
    let video = data.cases[0].videos[0].clone();
    // Answers init and three frames with a box, then exits.
    let script = r#"read l; echo '{"type":"ready"}'; for i in 1 2 3; do read l; echo '{"type":"bbox","left":[10,10,20,20],"right":[5,10,15,20]}'; done"#;
    let (runs, incidents) = run_video(&video, &handle(&format!("exec:{script}")), &EvalConfig::default()).unwrap();
    let run = &runs[0];
    assert!(run.predictions[..3].iter().all(|p| p.outcome != Outcome::NoTarget));
    assert!(run.predictions[3..].iter().all(|p| p.outcome == Outcome::NoTarget));
    assert_eq!(incidents[0].kind, IncidentKind::Crashed);
    assert_eq!(incidents[0].frame_index, video.anchors[0] + 4);
    assert_eq!(run.predictions.len(), video.frame_count - video.anchors[0] - 1);
}

#[test]
fn slow_tracker_times_out() {
    let dir = tempfile::tempdir().unwrap();
    let data = subset(dir.path(), 1, 30);
    let video = &data.cases[0].videos[0];
    let cfg = EvalConfig { frame_timeout_ms: 300, ..EvalConfig::default() };
    let script = r#"read l; echo '{"type":"ready"}'; read l; sleep 5"#;
    let (runs, incidents) = run_video(video, &handle(&format!("exec:{script}")), &cfg).unwrap();
    assert_eq!(incidents[0].kind, IncidentKind::Timeout);
    assert!(runs[0].predictions.iter().all(|p| p.outcome == Outcome::NoTarget));
}

#[test]
fn protocol_violation_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let data = subset(dir.path(), 1, 30);
    let err = evaluate(&data, &handle(r#"exec:read l; echo '{"type":"bbox"}'"#), &EvalConfig::default(), 1).unwrap_err();
    assert!(matches!(err, HarnessError::Protocol { .. }), "{err}");
}
