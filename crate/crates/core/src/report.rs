//! Plain SVG charts and a text summary rendered from a sweep.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::analysis::{CohortFilter, FeatureSet, SweepResult, SweepRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 180.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        escape(title)
    );
}

/// Line chart over checkpoints. The x axis is log2(t) since the grid is roughly geometric.
pub fn line_chart(title: &str, y_label: &str, series: &[Series], y_range: (f64, f64)) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let xs: Vec<f64> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.0))
        .filter(|x| *x > 0.0)
        .collect();
    let (x_lo, x_hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (x_lo, x_hi) = if xs.is_empty() { (1.0, 2.0) } else { (x_lo.log2(), x_hi.log2().max(x_lo.log2() + 1.0)) };
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x.log2() - x_lo) / (x_hi - x_lo) * plot_w;
    let py = |y: f64| MARGIN_TOP + (1.0 - (y - y_range.0) / (y_range.1 - y_range.0)) * plot_h;

    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let y = y_range.0 + (y_range.1 - y_range.0) * f64::from(i) / 5.0;
        let (x2, yy, tx) = (MARGIN_LEFT + plot_w, py(y), MARGIN_LEFT - 6.0);
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN_LEFT}" x2="{x2:.1}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{tx:.1}" y="{:.1}" text-anchor="end">{y:.2}</text>"##,
            yy + 4.0
        );
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(t),
            MARGIN_TOP + plot_h + 16.0,
            t
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">prefix length t (reasoning tokens)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0 > 0.0)
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
            for p in &pts {
                let (cx, cy) = p.split_once(',').expect("formatted pair");
                let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{color}"/>"#);
            }
        }
        let ly = MARGIN_TOP + 12.0 + 18.0 * i as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx}" x2="{:.1}" y1="{ly:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart with one bar per label.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut out = String::new();
    svg_open(&mut out, title);
    let plot_w = WIDTH - MARGIN_LEFT - 40.0;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let max = bars.iter().map(|b| b.1).fold(0.0f64, f64::max).max(1.0);
    let slot = plot_w / bars.len().max(1) as f64;
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN_LEFT}" x2="{:.1}" y1="{1:.1}" y2="{1:.1}" stroke="black"/>"#,
        MARGIN_LEFT + plot_w,
        MARGIN_TOP + plot_h
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = v / max * plot_h;
        let x = MARGIN_LEFT + slot * i as f64 + slot * 0.15;
        let y = MARGIN_TOP + plot_h - h;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{h:.1}" fill="#1f77b4"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text><text x="{2:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
            slot * 0.7,
            x + slot * 0.35,
            y - 4.0,
            v,
            MARGIN_TOP + plot_h + 16.0,
            escape(label)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(y_label)
    );
    out.push_str("</svg>\n");
    out
}

fn slug(cohort: &CohortFilter) -> String {
    cohort
        .to_string()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Fixed-width table of every sweep row.
pub fn summary_table(sweep: &SweepResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>5}  {:<20} {:<15} {:>7} {:>6} {:>11} {:>8} {:>7}",
        "t", "cohort", "feature_set", "n_train", "n_test", "train_prior", "accuracy", "roc_auc"
    );
    for row in &sweep.rows {
        match row {
            SweepRow::Evaluated(r) => {
                let auc = r.report.roc_auc.map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
                let _ = writeln!(
                    out,
                    "{:>5}  {:<20} {:<15} {:>7} {:>6} {:>11.4} {:>8.4} {:>7}",
                    r.t,
                    r.cohort.to_string(),
                    r.feature_set.as_str(),
                    r.n_train,
                    r.n_test,
                    r.train_prior,
                    r.report.accuracy,
                    auc
                );
            }
            SweepRow::Skipped {
                t,
                cohort,
                feature_set,
                reason,
                ..
            } => {
                let _ = writeln!(
                    out,
                    "{:>5}  {:<20} {:<15} skipped: {reason}",
                    t,
                    cohort.to_string(),
                    feature_set.as_str()
                );
            }
        }
    }
    out
}

fn metric_series(
    sweep: &SweepResult,
    cohort: CohortFilter,
    feature_set: FeatureSet,
    metric: impl Fn(&SweepRow) -> Option<f64>,
) -> Vec<(f64, f64)> {
    sweep
        .rows_for(cohort, feature_set)
        .filter_map(|r| metric(r).map(|v| (f64::from(r.t()), v)))
        .collect()
}

fn accuracy_of(r: &SweepRow) -> Option<f64> {
    r.result().map(|c| c.report.accuracy)
}

/// Writes per-cohort metric curves, survival bar charts, a cross-cohort AUC
/// chart and `summary.txt` into `dir`. Returns the written paths.
pub fn render_report(sweep: &SweepResult, dir: impl AsRef<Path>) -> io::Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> io::Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    for cohort in &sweep.cohorts {
        let mut series = Vec::new();
        for &fs_ in &sweep.feature_sets {
            series.push(Series {
                name: format!("AUC {fs_}"),
                points: metric_series(sweep, *cohort, fs_, SweepRow::roc_auc),
            });
            series.push(Series {
                name: format!("acc {fs_}"),
                points: metric_series(sweep, *cohort, fs_, accuracy_of),
            });
        }
        write(
            format!("curves_{}.svg", slug(cohort)),
            line_chart(&format!("Probe metrics vs prefix ({cohort})"), "ROC-AUC / accuracy", &series, (0.0, 1.0)),
        )?;

        // survivors do not depend on the feature set; take the first row per t
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for r in sweep.rows.iter().filter(|r| r.cohort() == *cohort) {
            counts.entry(r.t()).or_insert(r.n_survivors());
        }
        let bars: Vec<(String, f64)> = counts.iter().map(|(t, n)| (t.to_string(), *n as f64)).collect();
        write(
            format!("survival_{}.svg", slug(cohort)),
            bar_chart(&format!("Survivors per checkpoint ({cohort})"), "examples", &bars),
        )?;
    }

    for &fs_ in &sweep.feature_sets {
        let series: Vec<Series> = sweep
            .cohorts
            .iter()
            .map(|c| Series {
                name: c.to_string(),
                points: metric_series(sweep, *c, fs_, SweepRow::roc_auc),
            })
            .collect();
        write(
            format!("auc_by_cohort_{fs_}.svg"),
            line_chart(&format!("ROC-AUC by cohort ({fs_})"), "ROC-AUC", &series, (0.0, 1.0)),
        )?;
    }

    write("summary.txt".into(), summary_table(sweep))?;
    Ok(written)
}
