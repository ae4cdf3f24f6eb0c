//! Report emission: metrics as CSV and JSON, the PR curve as an SVG plot,
//! and per-iteration loss history as CSV. Numbers are written with Rust's
//! shortest round-trip float formatting, so identical values always produce
//! byte-identical files.

use crate::error::Result;
use crate::metrics::{MetricsReport, PrCurve};
use crate::training::LossBreakdown;
use std::fmt::Write as _;
use std::path::Path;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-image rows plus a MEAN summary row.
pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from(
        "name,mean_f,adaptive_threshold,adaptive_precision,adaptive_recall,adaptive_f,mae,weighted_f\n",
    );
    for m in &report.per_image {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.name,
            m.mean_f,
            m.adaptive_threshold,
            m.adaptive_precision,
            m.adaptive_recall,
            m.adaptive_f,
            m.mae,
            opt(m.weighted_f)
        )
        .expect("string write");
    }
    let s = &report.summary;
    writeln!(
        out,
        "MEAN,{},,{},{},{},{},{}",
        s.mean_f,
        s.adaptive_precision,
        s.adaptive_recall,
        s.adaptive_f,
        s.mae,
        opt(s.weighted_f)
    )
    .expect("string write");
    out
}

pub fn write_metrics_csv(report: &MetricsReport, path: &Path) -> Result<()> {
    std::fs::write(path, metrics_csv(report))?;
    Ok(())
}

pub fn write_metrics_json(report: &MetricsReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .expect("report serialization cannot fail")
        + "\n";
    std::fs::write(path, json)?;
    Ok(())
}

/// Recall on the x axis, precision on the y axis, unit square.
pub fn pr_curve_svg(curve: &PrCurve) -> String {
    const SIZE: f64 = 480.0;
    const MARGIN: f64 = 50.0;
    let span = SIZE - 2.0 * MARGIN;
    let to_x = |recall: f64| MARGIN + recall * span;
    let to_y = |precision: f64| SIZE - MARGIN - precision * span;

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .expect("string write");
    writeln!(svg, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).expect("string write");

    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let (x, y) = (to_x(f), to_y(f));
        writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd"/>"##,
            to_y(0.0),
            to_y(1.0)
        )
        .expect("string write");
        writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            to_x(0.0),
            to_x(1.0)
        )
        .expect("string write");
        writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-size="12" text-anchor="middle">{f:.1}</text>"#,
            to_y(0.0) + 18.0
        )
        .expect("string write");
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{f:.1}</text>"#,
            to_x(0.0) - 6.0,
            y + 4.0
        )
        .expect("string write");
    }

    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.4},{:.4}", to_x(p.recall), to_y(p.precision)))
        .collect();
    writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
        points.join(" ")
    )
    .expect("string write");

    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">Recall</text>"#,
        SIZE / 2.0,
        SIZE - 10.0
    )
    .expect("string write");
    writeln!(
        svg,
        r#"<text x="14" y="{:.2}" font-size="14" text-anchor="middle" transform="rotate(-90 14 {:.2})">Precision</text>"#,
        SIZE / 2.0,
        SIZE / 2.0
    )
    .expect("string write");
    svg.push_str("</svg>\n");
    svg
}

pub fn write_pr_curve_svg(curve: &PrCurve, path: &Path) -> Result<()> {
    std::fs::write(path, pr_curve_svg(curve))?;
    Ok(())
}

/// One row per iteration: the five side losses, the fusion loss, the total.
pub fn loss_history_csv(history: &[LossBreakdown]) -> String {
    let mut out =
        String::from("iteration,side1,side2,side3,side4,side5,fuse,total\n");
    for (i, b) in history.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            i, b.side[0], b.side[1], b.side[2], b.side[3], b.side[4], b.fuse, b.total
        )
        .expect("string write");
    }
    out
}

pub fn write_loss_history_csv(history: &[LossBreakdown], path: &Path) -> Result<()> {
    std::fs::write(path, loss_history_csv(history))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{GroundTruthMask, SaliencyMap};
    use crate::metrics::{evaluate_dataset, EvalPair, MetricsConfig};

    fn tiny_report() -> MetricsReport {
        let gt = GroundTruthMask::new(4, 4, (0..16).map(|i| i % 3 == 0).collect()).unwrap();
        let map = SaliencyMap::new(4, 4, (0..16).map(|i| i as f64 / 15.0).collect()).unwrap();
        evaluate_dataset(
            &[EvalPair {
                name: "t".into(),
                map,
                gt,
            }],
            &MetricsConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn csv_has_header_rows_and_summary() {
        let report = tiny_report();
        let csv = metrics_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("name,mean_f"));
        assert!(lines[1].starts_with("t,"));
        assert!(lines[2].starts_with("MEAN,"));
        // summary row values match the report
        let fields: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(fields[1].parse::<f64>().unwrap(), report.summary.mean_f);
    }

    #[test]
    fn json_round_trips_summary_values() {
        let report = tiny_report();
        let json = serde_json::to_string(&report).unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            value["summary"]["mae"].as_f64().unwrap(),
            report.summary.mae
        );
        assert_eq!(value["pr_curve"]["points"].as_array().unwrap().len(), 256);
    }

    #[test]
    fn svg_contains_a_polyline_and_is_deterministic() {
        let report = tiny_report();
        let a = pr_curve_svg(&report.pr_curve);
        let b = pr_curve_svg(&report.pr_curve);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.contains("<polyline"));
        assert!(a.contains("Recall") && a.contains("Precision"));
    }

    #[test]
    fn loss_csv_lists_every_iteration() {
        let history = vec![
            crate::training::LossBreakdown {
                side: [1.0, 2.0, 3.0, 4.0, 5.0],
                fuse: 6.0,
                total: 21.0,
            };
            3
        ];
        let csv = loss_history_csv(&history);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,1,2,3,4,5,6,21");
        assert_eq!(lines[3], "2,1,2,3,4,5,6,21");
    }
}
