//! Comparison tables and plots over finished metric reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Fails when the reports were produced under different evaluation
/// settings, naming every difference.
pub fn check_compatible(reports: &[MetricReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("no reports given".into()));
    };
    let mut problems = Vec::new();
    for (i, r) in reports.iter().enumerate().skip(1) {
        let name = r
            .label
            .clone()
            .unwrap_or_else(|| format!("report {}", i + 1));
        for d in r.config.differences(&first.config) {
            problems.push(format!("{name}: {d}"));
        }
        if r.vocabulary != first.vocabulary {
            problems.push(format!(
                "{name}: vocabulary {} vs {}",
                r.vocabulary, first.vocabulary
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Incompatible(problems.join("; ")))
    }
}

/// Aligned plain-text table: one row per report, mAP in percent, SR ×100.
pub fn render_table(reports: &[MetricReport]) -> Result<String> {
    check_compatible(reports)?;
    let thresholds = reports[0].map_per_threshold.thresholds();
    let mut header: Vec<String> = ["Method", "Full", "Rare", "Non-rare", "SR"]
        .map(String::from)
        .to_vec();
    header.extend(thresholds.iter().map(|t| format!("mAP@{t}")));
    let pct = |v: f64| format!("{:.2}", v * 100.0);
    let mut rows = vec![header];
    for (i, r) in reports.iter().enumerate() {
        let mut row = vec![
            r.label
                .clone()
                .unwrap_or_else(|| format!("report {}", i + 1)),
            pct(r.splits.full.map_avg),
            r.splits
                .rare
                .as_ref()
                .map_or("-".into(), |s| pct(s.map_avg)),
            r.splits
                .nonrare
                .as_ref()
                .map_or("-".into(), |s| pct(s.map_avg)),
            pct(r.sr),
        ];
        row.extend(r.map_per_threshold.values().into_iter().map(pct));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (ri, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if ri == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn render_csv(reports: &[MetricReport]) -> Result<String> {
    check_compatible(reports)?;
    let mut out = reports[0].csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    Ok(out)
}

/// Generations, full, rare and non-rare mAP in percent.
type PlotPoint = (usize, f64, Option<f64>, Option<f64>);
type SeriesValue = fn(&PlotPoint) -> Option<f64>;

/// Static SVG of mAP Avg. against the number of generations. Every report
/// must record its generation count.
pub fn render_generations_plot(reports: &[MetricReport]) -> Result<String> {
    check_compatible(reports)?;
    let mut points: Vec<PlotPoint> = reports
        .iter()
        .map(|r| {
            let n = r.num_generations.ok_or_else(|| {
                Error::Config(format!(
                    "report {} has no generation count to plot",
                    r.label.as_deref().unwrap_or("(unlabeled)")
                ))
            })?;
            Ok((
                n,
                r.map_avg * 100.0,
                r.splits.rare.as_ref().map(|s| s.map_avg * 100.0),
                r.splits.nonrare.as_ref().map(|s| s.map_avg * 100.0),
            ))
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 20.0, 20.0, 50.0);
    let max_n = points.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let min_n = points.iter().map(|p| p.0).min().unwrap_or(1).max(1) as f64;
    let max_y = points
        .iter()
        .flat_map(|p| [Some(p.1), p.2, p.3])
        .flatten()
        .fold(0.0f64, f64::max)
        .max(1.0);
    let y_top = (max_y / 5.0).ceil() * 5.0;
    // log2 x axis, matching doubling generation budgets
    let xs = |n: usize| {
        let span = (max_n.log2() - min_n.log2()).max(1.0);
        left + ((n.max(1) as f64).log2() - min_n.log2()) / span * (w - left - right)
    };
    let ys = |v: f64| top + (1.0 - v / y_top) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for i in 0..=5 {
        let v = y_top * i as f64 / 5.0;
        let y = ys(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{left}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#ddd"/>"##,
            w - right
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            left - 6.0,
            y + 4.0
        );
    }
    let mut ticks: Vec<usize> = points.iter().map(|p| p.0).collect();
    ticks.dedup();
    for n in &ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{n}</text>"#,
            xs(*n),
            h - bottom + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">number of generations</text>"#,
        (left + w - right) / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(14 {}) rotate(-90)" text-anchor="middle">mAP Avg. (%)</text>"#,
        (top + h - bottom) / 2.0
    );

    let series: [(&str, &str, SeriesValue); 3] = [
        ("Full", "#1f77b4", |p| Some(p.1)),
        ("Rare", "#d62728", |p| p.2),
        ("Non-rare", "#2ca02c", |p| p.3),
    ];
    let mut legend_y = top + 12.0;
    for (name, color, get) in &series {
        let pts: Vec<(f64, f64)> = points
            .iter()
            .filter_map(|p| get(p).map(|v| (xs(p.0), ys(v))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, (x, y))| format!("{}{x:.1} {y:.1}", if i == 0 { "M" } else { "L" }))
            .collect();
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            d.join(" ")
        );
        for (x, y) in &pts {
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{legend_y}" fill="{color}">{name}</text>"#,
            w - right - 70.0
        );
        legend_y += 16.0;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
