//! Figure-of-merit report: downstream metric against inference throughput,
//! one point per embedding variant, emitted as a CSV table and an SVG
//! scatter with a log-scaled throughput axis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{BenchResult, EvalReport};

struct FomRow {
    variant: String,
    metric_mean: f64,
    metric_std: f64,
    samples_per_sec: f64,
    params: usize,
}

/// Joins evaluation reports with benchmark results by variant tag and writes
/// `out_csv` and `out_svg`. Tags must match one-to-one; orphans on either
/// side are an error.
pub fn fom_report(
    reports: &[EvalReport],
    bench: &[BenchResult],
    out_csv: &Path,
    out_svg: &Path,
) -> Result<()> {
    let mut by_tag: BTreeMap<&str, (&EvalReport, Option<&BenchResult>)> = BTreeMap::new();
    for r in reports {
        if by_tag.insert(r.variant.as_str(), (r, None)).is_some() {
            return Err(Error::Invalid(format!("duplicate eval variant `{}`", r.variant)));
        }
    }
    let mut orphan_bench = Vec::new();
    for b in bench {
        match by_tag.get_mut(b.variant.as_str()) {
            Some(slot) => slot.1 = Some(b),
            None => orphan_bench.push(b.variant.clone()),
        }
    }
    let orphan_reports: Vec<String> = by_tag
        .iter()
        .filter(|(_, (_, b))| b.is_none())
        .map(|(tag, _)| tag.to_string())
        .collect();
    if !orphan_bench.is_empty() || !orphan_reports.is_empty() {
        return Err(Error::Invalid(format!(
            "variant tags do not match: eval-only {orphan_reports:?}, bench-only {orphan_bench:?}"
        )));
    }

    let rows: Vec<FomRow> = by_tag
        .values()
        .map(|(r, b)| {
            let b = b.expect("matched above");
            FomRow {
                variant: r.variant.clone(),
                metric_mean: r.mean,
                metric_std: r.std,
                samples_per_sec: b.samples_per_sec,
                params: b.params_count,
            }
        })
        .collect();

    let mut csv = String::from("variant,metric_mean,metric_std,samples_per_sec,params\n");
    for row in &rows {
        writeln!(
            csv,
            "{},{:.6},{:.6},{:.3},{}",
            row.variant, row.metric_mean, row.metric_std, row.samples_per_sec, row.params
        )
        .expect("string write");
    }
    std::fs::write(out_csv, csv).map_err(|e| Error::io(out_csv, e))?;

    std::fs::write(out_svg, render_svg(&rows)).map_err(|e| Error::io(out_svg, e))?;
    Ok(())
}

fn render_svg(rows: &[FomRow]) -> String {
    const W: f64 = 860.0;
    const H: f64 = 560.0;
    const ML: f64 = 70.0; // margins
    const MR: f64 = 180.0;
    const MT: f64 = 40.0;
    const MB: f64 = 60.0;

    let xs: Vec<f64> = rows.iter().map(|r| r.samples_per_sec.max(1e-3).log10()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.metric_mean).collect();
    let (x_min, x_max) = padded_range(&xs, 0.25);
    let (y_min, y_max) = padded_range(&ys, 0.02);
    let y_min = y_min.max(0.0);
    let y_max = y_max.min(1.0).max(y_min + 1e-6);

    let px = |x: f64| ML + (x - x_min) / (x_max - x_min) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(svg, "  <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">Downstream metric vs inference throughput</text>",
        (ML + W - MR) / 2.0
    );

    // axes
    let _ = writeln!(
        svg,
        "  <line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - MB,
        W - MR,
        H - MB
    );
    let _ = writeln!(
        svg,
        "  <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>",
        H - MB
    );

    // x ticks at integer decades (log scale)
    let first_decade = x_min.ceil() as i64;
    let last_decade = x_max.floor() as i64;
    for decade in first_decade..=last_decade {
        let x = px(decade as f64);
        let _ = writeln!(
            svg,
            "  <line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            H - MB,
            H - MB + 6.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">1e{decade}</text>",
            H - MB + 20.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\">samples/sec/process (log scale)</text>",
        (ML + W - MR) / 2.0,
        H - 16.0
    );

    // y ticks: five evenly spaced values
    for t in 0..=4 {
        let y = y_min + (y_max - y_min) * t as f64 / 4.0;
        let ypix = py(y);
        let _ = writeln!(
            svg,
            "  <line x1=\"{:.1}\" y1=\"{ypix:.1}\" x2=\"{ML}\" y2=\"{ypix:.1}\" stroke=\"black\"/>",
            ML - 6.0
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{y:.3}</text>",
            ML - 10.0,
            ypix + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "  <text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">metric (mean over folds)</text>",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    );

    // one labeled marker per variant
    for (row, &x) in rows.iter().zip(&xs) {
        let cx = px(x);
        let cy = py(row.metric_mean);
        let _ = writeln!(
            svg,
            "  <circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"5\" fill=\"steelblue\" stroke=\"black\"/>"
        );
        let _ = writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{} ({:.3}±{:.3})</text>",
            cx + 9.0,
            cy + 4.0,
            xml_escape(&row.variant),
            row.metric_mean,
            row.metric_std
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn padded_range(values: &[f64], pad: f64) -> (f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return (0.0, 1.0);
    }
    let span_pad = ((max - min) * 0.1).max(pad);
    (min - span_pad, max + span_pad)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
