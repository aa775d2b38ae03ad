//! Static SVG figures: per-horizon RMSE box plots, saliency heatmaps and
//! coefficient/importance bar charts. Each file embeds the plotted numbers
//! as CSV inside an XML comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attribution::{AttributionKind, AttributionMap};
use crate::error::{Error, Result};
use crate::harness::ModelKind;
use crate::stats::{EvaluationReport, ModelKey};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const BAR_LIMIT: usize = 25;
const NO_QUERY_FILL: &str = "#4c78a8";
const QUERY_FILL: &str = "#f58518";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Comment bodies may not contain `--`.
fn comment_safe(s: &str) -> String {
    s.replace("--", "- -")
}

fn header(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        width / 2.0,
        escape(title)
    )
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Box plot of per-location RMSE at one horizon, one group per model with
/// side-by-side boxes for runs without and with queries.
pub fn distribution_svg(report: &EvaluationReport, horizon: usize) -> Result<String> {
    let keys: Vec<&ModelKey> = report
        .rmse
        .keys()
        .filter(|k| k.horizon == horizon)
        .collect();
    if keys.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no RMSE values at horizon {horizon}"
        )));
    }
    let mut models: Vec<ModelKind> = keys.iter().map(|k| k.model).collect();
    models.dedup();
    let y_max = keys
        .iter()
        .flat_map(|k| report.rmse[*k].iter().map(|(_, r)| *r))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.05;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y = |v: f64| HEIGHT - MARGIN - v / y_max * plot_h;
    let group_w = (WIDTH - 2.0 * MARGIN) / models.len() as f64;

    let mut svg = header(
        WIDTH,
        HEIGHT,
        &format!("RMSE across locations, h = {horizon}"),
    );
    svg.push_str("<!-- data\nmodel,use_queries,location,rmse\n");
    for k in &keys {
        for (loc, r) in &report.rmse[*k] {
            let _ = writeln!(
                svg,
                "{},{},{},{r}",
                k.model,
                k.use_queries,
                comment_safe(loc)
            );
        }
    }
    svg.push_str("-->\n");
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>",
        y(0.0),
        y(y_max)
    );
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{v:.3}</text>",
            MARGIN - 4.0,
            y(v) + 4.0
        );
    }
    for (g, model) in models.iter().enumerate() {
        let centre = MARGIN + (g as f64 + 0.5) * group_w;
        let _ = writeln!(
            svg,
            "<text x=\"{centre:.2}\" y=\"{}\" text-anchor=\"middle\">{model}</text>",
            HEIGHT - MARGIN + 18.0
        );
        for (slot, q) in [false, true].into_iter().enumerate() {
            let key = ModelKey {
                model: *model,
                use_queries: q,
                horizon,
            };
            let Some(values) = report.rmse.get(&key) else {
                continue;
            };
            let mut v: Vec<f64> = values.iter().map(|(_, r)| *r).collect();
            v.sort_by(f64::total_cmp);
            let bw = group_w * 0.3;
            let x = centre + if slot == 0 { -bw - 2.0 } else { 2.0 };
            let mid = x + bw / 2.0;
            let fill = if q { QUERY_FILL } else { NO_QUERY_FILL };
            let (lo, q1, med, q3, hi) = (
                v[0],
                quantile(&v, 0.25),
                quantile(&v, 0.5),
                quantile(&v, 0.75),
                v[v.len() - 1],
            );
            let _ = writeln!(
                svg,
                "<g class=\"box\" data-model=\"{model}\" data-queries=\"{q}\">\
                 <line x1=\"{mid:.2}\" y1=\"{:.2}\" x2=\"{mid:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\
                 <rect x=\"{x:.2}\" y=\"{:.2}\" width=\"{bw:.2}\" height=\"{:.2}\" fill=\"{fill}\" stroke=\"black\"/>\
                 <line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/></g>",
                y(lo),
                y(hi),
                y(q3),
                (y(q1) - y(q3)).max(0.5),
                y(med),
                x + bw,
                y(med)
            );
        }
    }
    for (i, (label, fill)) in [
        ("without queries", NO_QUERY_FILL),
        ("with queries", QUERY_FILL),
    ]
    .iter()
    .enumerate()
    {
        let lx = WIDTH - MARGIN - 120.0;
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{lx}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{fill}\"/><text x=\"{}\" y=\"{ly}\">{label}</text>",
            ly - 9.0,
            lx + 14.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn heat_colour(v: f64, max: f64) -> String {
    let t = if max > 0.0 {
        (v / max).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let c = (255.0 * (1.0 - t)).round() as u8;
    format!("rgb(255,{c},{c})")
}

/// Saliency heatmap: one column per input step (oldest at left), one row
/// per channel.
pub fn heatmap_svg(map: &AttributionMap) -> Result<String> {
    let (steps, channels) = map.shape();
    if steps == 0 || channels == 0 {
        return Err(Error::InvalidArgument("empty saliency map".into()));
    }
    let cell_w = ((WIDTH - 2.0 * MARGIN) / steps as f64).max(2.0);
    let cell_h = (300.0 / channels as f64).clamp(4.0, 24.0);
    let width = 2.0 * MARGIN + 60.0 + cell_w * steps as f64;
    let height = 2.0 * MARGIN + cell_h * channels as f64;
    let max = map.values.iter().flatten().fold(0.0, |a: f64, b| a.max(*b));
    let mut svg = header(
        width,
        height,
        &format!(
            "{} saliency, {} h = {}",
            map.model, map.location, map.horizon
        ),
    );
    svg.push_str("<!-- data\nstep,lag,channel,saliency\n");
    for (s, (label, row)) in map.row_labels.iter().zip(&map.values).enumerate() {
        for (c, v) in map.column_labels.iter().zip(row) {
            let _ = writeln!(
                svg,
                "{},{},{},{v}",
                s + 1,
                comment_safe(label),
                comment_safe(c)
            );
        }
    }
    svg.push_str("-->\n");
    let x0 = MARGIN + 60.0;
    let _ = writeln!(
        svg,
        "<g class=\"heatmap\" data-columns=\"{steps}\" data-rows=\"{channels}\">"
    );
    for (s, row) in map.values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let _ = writeln!(
                svg,
                "<rect class=\"cell\" x=\"{:.2}\" y=\"{:.2}\" width=\"{cell_w:.2}\" height=\"{cell_h:.2}\" fill=\"{}\"/>",
                x0 + s as f64 * cell_w,
                MARGIN + c as f64 * cell_h,
                heat_colour(*v, max)
            );
        }
    }
    svg.push_str("</g>\n");
    for (c, label) in map.column_labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            x0 - 4.0,
            MARGIN + (c as f64 + 0.75) * cell_h,
            escape(label)
        );
    }
    for (s, label) in map
        .row_labels
        .iter()
        .enumerate()
        .step_by(steps.div_ceil(8).max(1))
    {
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            x0 + (s as f64 + 0.5) * cell_w,
            height - MARGIN + 16.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Horizontal bars for the largest-magnitude features.
pub fn bar_svg(map: &AttributionMap) -> Result<String> {
    if map.row_labels.is_empty() {
        return Err(Error::InvalidArgument("empty attribution map".into()));
    }
    let ranked = map.ranked();
    let shown = &ranked[..ranked.len().min(BAR_LIMIT)];
    let bar_h = 16.0;
    let label_w = 180.0;
    let height = 2.0 * MARGIN + bar_h * shown.len() as f64;
    let max = shown
        .iter()
        .fold(0.0, |a: f64, (_, v)| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let span = WIDTH - 2.0 * MARGIN - label_w;
    let has_negative = shown.iter().any(|(_, v)| *v < 0.0);
    let zero = MARGIN + label_w + if has_negative { span / 2.0 } else { 0.0 };
    let scale = if has_negative { span / 2.0 } else { span } / max;

    let mut svg = header(
        WIDTH,
        height,
        &format!(
            "{} {}s, {} h = {}",
            map.model,
            map.kind.value_label(),
            map.location,
            map.horizon
        ),
    );
    let _ = writeln!(svg, "<!-- data\nfeature,{}", map.kind.value_label());
    for (label, row) in map.row_labels.iter().zip(&map.values) {
        let _ = writeln!(svg, "{},{}", comment_safe(label), row[0]);
    }
    svg.push_str("-->\n");
    for (i, (label, v)) in shown.iter().enumerate() {
        let yy = MARGIN + i as f64 * bar_h;
        let w = v.abs() * scale;
        let x = if *v < 0.0 { zero - w } else { zero };
        let fill = if *v < 0.0 { QUERY_FILL } else { NO_QUERY_FILL };
        let _ = writeln!(
            svg,
            "<rect class=\"bar\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{fill}\"/>\
             <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>",
            yy + 2.0,
            bar_h - 4.0,
            MARGIN + label_w - 6.0,
            yy + bar_h - 4.0,
            escape(label)
        );
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{zero:.2}\" y1=\"{MARGIN}\" x2=\"{zero:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
        height - MARGIN
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn attribution_svg(map: &AttributionMap) -> Result<String> {
    match map.kind {
        AttributionKind::Saliency => heatmap_svg(map),
        _ => bar_svg(map),
    }
}

/// Writes `rmse_h<h>.svg` for every horizon in the report and one figure
/// per `(file stem, map)` pair. Returns the written paths.
pub fn emit_plots(
    report: &EvaluationReport,
    attributions: &[(String, AttributionMap)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::InvalidArgument("cannot plot an empty report".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for h in report.horizons() {
        let path = out_dir.join(format!("rmse_h{h}.svg"));
        std::fs::write(&path, distribution_svg(report, h)?)?;
        written.push(path);
    }
    for (stem, map) in attributions {
        let path = out_dir.join(format!("{stem}.svg"));
        std::fs::write(&path, attribution_svg(map)?)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(horizons: &[usize], queries: &[bool]) -> EvaluationReport {
        let mut r = EvaluationReport::default();
        for &h in horizons {
            for &q in queries {
                for model in [ModelKind::Persistence, ModelKind::Ar] {
                    let v = (0..5)
                        .map(|i| (format!("loc{i}"), 0.1 * (i + h) as f64 + q as u8 as f64))
                        .collect();
                    r.rmse.insert(
                        ModelKey {
                            model,
                            use_queries: q,
                            horizon: h,
                        },
                        v,
                    );
                }
            }
        }
        r
    }

    #[test]
    fn one_figure_per_horizon_with_both_settings() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(&[1, 2, 4, 8], &[false, true]);
        let files = emit_plots(&r, &[], dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let svg = std::fs::read_to_string(dir.path().join("rmse_h4.svg")).unwrap();
        assert!(svg.contains("data-queries=\"false\"") && svg.contains("data-queries=\"true\""));
        assert_eq!(svg.matches("class=\"box\"").count(), 4);
        assert!(svg.contains("AR,true,loc3,"));
    }

    #[test]
    fn minimal_report_gives_one_plot() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report(&[2], &[false]);
        r.rmse.retain(|k, _| k.model == ModelKind::Ar);
        assert_eq!(emit_plots(&r, &[], dir.path()).unwrap().len(), 1);
        assert!(emit_plots(&EvaluationReport::default(), &[], dir.path()).is_err());
    }

    #[test]
    fn heatmap_keeps_input_shape() {
        let map = AttributionMap {
            kind: AttributionKind::Saliency,
            model: "GRU".into(),
            location: "loc00".into(),
            horizon: 1,
            row_labels: (0..52).map(|s| format!("lag{}", 52 - s)).collect(),
            column_labels: (0..12).map(|c| format!("c{c}")).collect(),
            values: (0..52)
                .map(|s| (0..12).map(|c| (s * c) as f64).collect())
                .collect(),
        };
        let svg = heatmap_svg(&map).unwrap();
        assert!(svg.contains("data-columns=\"52\""));
        assert_eq!(svg.matches("class=\"cell\"").count(), 52 * 12);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn bars_are_capped_and_signed() {
        let names: Vec<String> = (0..40).map(|i| format!("f<{i}>")).collect();
        let values: Vec<f64> = (0..40)
            .map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) })
            .collect();
        let map = AttributionMap::per_feature(AttributionKind::Coefficients, &names, &values);
        let svg = bar_svg(&map).unwrap();
        assert_eq!(svg.matches("class=\"bar\"").count(), BAR_LIMIT);
        assert!(svg.contains("f&lt;39&gt;"));
        assert_eq!(svg.matches("--").count(), 2);
    }
}
