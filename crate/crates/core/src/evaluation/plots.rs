//! Static SVG charts: one bar chart per metric and an overflow histogram.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{EvaluationReport, MetricSummary, NUMERIC_METRICS};
use crate::error::{Error, Result};

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = [
    "#3b6ea8", "#d9822b", "#4f9a56", "#b8434a", "#7d5ba6", "#8c8c8c",
];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axes(out: &mut String, top: f64) {
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{MARGIN}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">0</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        WIDTH - MARGIN / 2.0,
        x0 - 4.0,
        y0 + 4.0,
        x0 - 4.0,
        MARGIN + 4.0,
        format_tick(top)
    );
}

fn format_tick(x: f64) -> String {
    if x != 0.0 && (x.abs() < 1e-2 || x.abs() >= 1e3) {
        format!("{x:.1e}")
    } else {
        format!("{x:.3}")
    }
}

/// Bars of mean ± standard error, one per mechanism, for a single metric.
pub fn bar_chart_svg(metric: &str, summaries: &[MetricSummary]) -> String {
    let bars: Vec<&MetricSummary> = summaries.iter().filter(|s| s.metric == metric).collect();
    let mut out = header(metric);
    let top = bars
        .iter()
        .map(|s| (s.mean + s.std_error).abs().max(s.mean.abs()))
        .fold(0.0, f64::max);
    let top = if top > 0.0 && top.is_finite() {
        top * 1.1
    } else {
        1.0
    };
    axes(&mut out, top);
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let slot = (WIDTH - 1.5 * MARGIN) / bars.len().max(1) as f64;
    for (i, s) in bars.iter().enumerate() {
        let h = (s.mean.abs() / top * plot_h).min(plot_h);
        let x = MARGIN + slot * (i as f64 + 0.2);
        let w = slot * 0.6;
        let y = HEIGHT - MARGIN - h;
        let cx = x + w / 2.0;
        let e = s.std_error / top * plot_h;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{}\"/>\n\
             <line x1=\"{cx:.2}\" y1=\"{:.2}\" x2=\"{cx:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n\
             <text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"{cx:.2}\" y=\"{:.2}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            PALETTE[i % PALETTE.len()],
            y - e,
            y + e,
            HEIGHT - MARGIN + 16.0,
            escape(&s.mechanism),
            (y - e - 4.0).max(MARGIN - 2.0),
            format_tick(s.mean)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram of per-instance overflow Ω per mechanism, with the slack K
/// and 1.05 K marked.
pub fn overflow_histogram_svg(report: &EvaluationReport, bins: usize) -> String {
    let bins = bins.max(1);
    let mut out = header("overflow per instance");
    let mechs = report.mechanisms();
    let all: Vec<f64> = report.rows.iter().map(|r| r.overflow).collect();
    let slack = report.rows.first().map_or(0.0, |r| r.slack);
    let hi = all.iter().copied().fold(1.05 * slack, f64::max).max(1e-9) * 1.05;
    let width = hi / bins as f64;
    let counts: Vec<Vec<usize>> = mechs
        .iter()
        .map(|m| {
            let mut c = vec![0; bins];
            for r in report.rows_of(m) {
                c[((r.overflow / width) as usize).min(bins - 1)] += 1;
            }
            c
        })
        .collect();
    let top = counts.iter().flatten().copied().max().unwrap_or(1).max(1) as f64;
    axes(&mut out, top);
    let plot_w = WIDTH - 1.5 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let bin_w = plot_w / bins as f64;
    let bar_w = bin_w / mechs.len().max(1) as f64;
    for (k, c) in counts.iter().enumerate() {
        for (b, &n) in c.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let h = n as f64 / top * plot_h;
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"{}\"/>",
                MARGIN + b as f64 * bin_w + k as f64 * bar_w,
                HEIGHT - MARGIN - h,
                bar_w,
                PALETTE[k % PALETTE.len()]
            );
        }
        let _ = writeln!(
            out,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            WIDTH - 120.0,
            MARGIN + 14.0 * k as f64,
            PALETTE[k % PALETTE.len()],
            WIDTH - 105.0,
            MARGIN + 9.0 + 14.0 * k as f64,
            escape(&mechs[k])
        );
    }
    for (label, x) in [("K", slack), ("1.05K", 1.05 * slack)] {
        let px = MARGIN + x / hi * plot_w;
        let _ = writeln!(
            out,
            "<line x1=\"{px:.2}\" y1=\"{MARGIN}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#444\" stroke-dasharray=\"4 3\"/>\n\
             <text x=\"{px:.2}\" y=\"{}\" text-anchor=\"middle\">{label}</text>",
            HEIGHT - MARGIN,
            MARGIN - 6.0
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
        WIDTH - MARGIN / 2.0,
        HEIGHT - MARGIN + 16.0,
        format_tick(hi)
    );
    out.push_str("</svg>\n");
    out
}

/// Writes `bar_<metric>.svg` for every metric and `overflow_hist.svg` into
/// `dir`; returns the written paths.
pub fn write_plots(report: &EvaluationReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summaries = report.summaries();
    let mut written = Vec::new();
    for metric in NUMERIC_METRICS {
        let path = dir.join(format!("bar_{metric}.svg"));
        std::fs::write(&path, bar_chart_svg(metric, &summaries))
            .map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    let path = dir.join("overflow_hist.svg");
    std::fs::write(&path, overflow_histogram_svg(report, 20)).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
