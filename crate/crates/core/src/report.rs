//! Report files for one or more trackers evaluated on the same subset.
//!
//! | file            | content                                              |
//! |-----------------|------------------------------------------------------|
//! | `summary.json`  | every tracker's full report, config included         |
//! | `cases.csv`     | per-case and overall rows of the score table         |
//! | `tables.md`     | the same table with `mean ± std` error columns       |
//! | `eao_curve.csv` | merged overlap per frame, one column per tracker     |
//! | `ranking.csv`   | trackers by EAO, best first                          |
//! | `ar_plot.csv`   | robustness and accuracy per tracker                  |
//! | `*.svg`         | optional plots of the curve, ranking and AR points   |

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::eao::Score;
use crate::scoring::{Aggregate, MetricsReport};

pub const OVERALL: &str = "ALL";

#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    pub svg: bool,
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Reports sorted best first: EAO descending, undefined last, ties by name.
pub fn ranking(reports: &[MetricsReport]) -> Vec<&MetricsReport> {
    let mut sorted: Vec<&MetricsReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        let key = |r: &MetricsReport| r.subset.eao.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a)).then_with(|| a.tracker.cmp(&b.tracker))
    });
    sorted
}

#[derive(Serialize)]
struct Summary<'a> {
    trackers: &'a [MetricsReport],
    ranking: Vec<&'a str>,
}

const TABLE_HEADER: [&str; 12] =
    ["tracker", "case", "Rob2D", "Acc2D", "Err2D", "Err2D_std", "Rob3D", "Err3D", "Err3D_std", "EAO", "n_2d", "n_3d"];

fn table_row(tracker: &str, case: &str, a: &Aggregate) -> Vec<String> {
    vec![
        tracker.to_string(),
        case.to_string(),
        num(a.robustness_2d),
        num(a.accuracy_2d),
        num(a.error_2d_px),
        num(a.error_2d_std_px),
        num(a.robustness_3d),
        num(a.error_3d_mm),
        num(a.error_3d_std_mm),
        num(a.eao),
        a.n_2d.to_string(),
        a.n_3d.to_string(),
    ]
}

fn rows(reports: &[MetricsReport]) -> impl Iterator<Item = (&str, &str, &Aggregate)> {
    reports.iter().flat_map(|r| {
        r.cases.iter().map(move |c| (r.tracker.as_str(), c.case_id.as_str(), &c.aggregate)).chain(std::iter::once((
            r.tracker.as_str(),
            OVERALL,
            &r.subset,
        )))
    })
}

fn write_cases(path: &Path, reports: &[MetricsReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TABLE_HEADER).map_err(csv_err)?;
    for (t, c, a) in rows(reports) {
        w.write_record(table_row(t, c, a)).map_err(csv_err)?;
    }
    w.flush()
}

fn pm(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.1} ± {s:.1}"),
        (Some(m), None) => format!("{m:.1}"),
        _ => "-".to_string(),
    }
}

fn fixed(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

fn tables_md(reports: &[MetricsReport]) -> String {
    let mut out = String::from("| Tracker | Case | Rob2D | Acc2D | Err2D (px) | Rob3D | Err3D (mm) | EAO |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for (t, c, a) in rows(reports) {
        let _ = writeln!(
            out,
            "| {t} | {c} | {} | {} | {} | {} | {} | {} |",
            fixed(a.robustness_2d),
            fixed(a.accuracy_2d),
            pm(a.error_2d_px, a.error_2d_std_px),
            fixed(a.robustness_3d),
            pm(a.error_3d_mm, a.error_3d_std_mm),
            fixed(a.eao),
        );
    }
    out
}

fn write_eao_curve(path: &Path, reports: &[MetricsReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["frame".to_string()];
    header.extend(reports.iter().map(|r| r.tracker.clone()));
    header.push("in_window".to_string());
    w.write_record(&header).map_err(csv_err)?;
    let len = reports.iter().map(|r| r.sequence.len()).max().unwrap_or(0);
    let window = reports.first().map(|r| r.window);
    for pos in 1..=len {
        let mut row = vec![pos.to_string()];
        for r in reports {
            row.push(match r.sequence.entries.get(pos - 1) {
                Some(Score::Value(v)) => v.to_string(),
                _ => String::new(),
            });
        }
        let inside = window.is_some_and(|w| (w.n_min..=w.n_max).contains(&pos));
        row.push(u8::from(inside).to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

fn write_ranking(path: &Path, ranked: &[&MetricsReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["rank", "tracker", "EAO"]).map_err(csv_err)?;
    for (i, r) in ranked.iter().enumerate() {
        w.write_record([(i + 1).to_string(), r.tracker.clone(), num(r.subset.eao)]).map_err(csv_err)?;
    }
    w.flush()
}

fn write_ar(path: &Path, reports: &[MetricsReport]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["tracker", "robustness_2d", "accuracy_2d"]).map_err(csv_err)?;
    for r in reports {
        w.write_record([r.tracker.clone(), num(r.subset.robustness_2d), num(r.subset.accuracy_2d)]).map_err(csv_err)?;
    }
    w.flush()
}

/// Writes every report file into `out_dir`, creating it if needed.
pub fn emit_report(reports: &[MetricsReport], out_dir: &Path, opts: ReportOptions) -> io::Result<()> {
    fs::create_dir_all(out_dir)?;
    let ranked = ranking(reports);
    let summary = Summary { trackers: reports, ranking: ranked.iter().map(|r| r.tracker.as_str()).collect() };
    let json = serde_json::to_string_pretty(&summary).map_err(io::Error::other)?;
    fs::write(out_dir.join("summary.json"), json + "\n")?;
    write_cases(&out_dir.join("cases.csv"), reports)?;
    fs::write(out_dir.join("tables.md"), tables_md(reports))?;
    write_eao_curve(&out_dir.join("eao_curve.csv"), reports)?;
    write_ranking(&out_dir.join("ranking.csv"), &ranked)?;
    write_ar(&out_dir.join("ar_plot.csv"), reports)?;
    if opts.svg {
        fs::write(out_dir.join("eao_curve.svg"), svg::eao_curves(reports))?;
        fs::write(out_dir.join("eao_rank.svg"), svg::eao_rank(&ranked))?;
        fs::write(out_dir.join("ar_plot.svg"), svg::ar_plot(reports))?;
    }
    Ok(())
}

mod svg {
    use std::fmt::Write as _;

    use crate::eao::Score;
    use crate::scoring::MetricsReport;

    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

    fn colour(i: usize) -> &'static str {
        COLOURS[i % COLOURS.len()]
    }

    fn frame(title: &str, x_label: &str, y_label: &str, body: &str) -> String {
        let (x1, y1) = (W - PAD, H - PAD);
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
             <text x=\"{}\" y=\"16\" text-anchor=\"middle\">{title}</text>\n\
             <line x1=\"{PAD}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"black\"/>\n\
             <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y1}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n\
             <text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">{y_label}</text>\n\
             {body}</svg>\n",
            W / 2.0,
            W / 2.0,
            H - 8.0,
            H / 2.0,
            H / 2.0,
        )
    }

    fn sx(t: f64) -> f64 {
        PAD + t * (W - 2.0 * PAD)
    }

    fn sy(t: f64) -> f64 {
        H - PAD - t * (H - 2.0 * PAD)
    }

    fn escape(s: &str) -> String {
        s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
    }

    pub fn eao_curves(reports: &[MetricsReport]) -> String {
        let len = reports.iter().map(|r| r.sequence.len()).max().unwrap_or(1).max(2) as f64;
        let mut body = String::new();
        if let Some(w) = reports.first().map(|r| r.window) {
            let (a, b) = (sx((w.n_min as f64 - 1.0) / (len - 1.0)), sx((w.n_max as f64 - 1.0) / (len - 1.0)));
            let _ = writeln!(body, "<rect x=\"{a:.2}\" y=\"{PAD}\" width=\"{:.2}\" height=\"{}\" fill=\"#eee\"/>", b - a, H - 2.0 * PAD);
        }
        for (i, r) in reports.iter().enumerate() {
            let pts: Vec<String> = r
                .sequence
                .entries
                .iter()
                .enumerate()
                .filter_map(|(k, s)| match s {
                    Score::Value(v) => Some(format!("{:.2},{:.2}", sx(k as f64 / (len - 1.0)), sy(*v))),
                    Score::Ignore => None,
                })
                .collect();
            let _ = writeln!(body, "<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"/>", colour(i), pts.join(" "));
            let _ = writeln!(
                body,
                "<text x=\"{:.2}\" y=\"{:.2}\" fill=\"{}\">{}</text>",
                W - PAD - 100.0,
                PAD + 14.0 * i as f64,
                colour(i),
                escape(&r.tracker)
            );
        }
        frame("Merged overlap per frame", "frame", "IoU", &body)
    }

    pub fn eao_rank(ranked: &[&MetricsReport]) -> String {
        let n = ranked.len().max(2) as f64;
        let mut body = String::new();
        for (i, r) in ranked.iter().enumerate() {
            let (x, y) = (sx(i as f64 / (n - 1.0)), sy(r.subset.eao.unwrap_or(0.0)));
            let _ = writeln!(body, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\"/>", colour(i));
            let _ = writeln!(body, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", x + 6.0, y - 6.0, escape(&r.tracker));
        }
        frame("EAO by rank", "rank", "EAO", &body)
    }

    pub fn ar_plot(reports: &[MetricsReport]) -> String {
        let mut body = String::new();
        for (i, r) in reports.iter().enumerate() {
            let (Some(rob), Some(acc)) = (r.subset.robustness_2d, r.subset.accuracy_2d) else { continue };
            let (x, y) = (sx(rob), sy(acc));
            let _ = writeln!(body, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"{}\"/>", colour(i));
            let _ = writeln!(body, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", x + 6.0, y - 6.0, escape(&r.tracker));
        }
        frame("Accuracy vs robustness", "robustness", "accuracy", &body)
    }
}
