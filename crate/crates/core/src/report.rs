//! CSV tables for forecasts, scores and attributions.
//!
//! Every writer has a matching reader, and values are written in the
//! shortest form that parses back to the same `f64`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionKind, AttributionMap};
use crate::error::{Error, Result};
use crate::harness::{ForecastRecord, ModelKind};
use crate::stats::{EvaluationReport, ModelKey, WilcoxonMethod};

pub const FORECAST_HEADER: [&str; 7] = [
    "week",
    "location",
    "horizon",
    "model",
    "use_queries",
    "predicted",
    "actual",
];
pub const RMSE_HEADER: [&str; 5] = ["model", "use_queries", "horizon", "location", "rmse"];
pub const WILCOXON_HEADER: [&str; 7] = [
    "model",
    "use_queries",
    "horizon",
    "w",
    "p",
    "n_eff",
    "method",
];
pub const SALIENCY_HEADER: [&str; 4] = ["step", "lag", "channel", "saliency"];

fn check_header(reader: &mut csv::Reader<impl Read>, expected: &[&str], name: &str) -> Result<()> {
    let found = reader.headers()?;
    if found.iter().ne(expected.iter().copied()) {
        return Err(Error::MalformedHeader {
            path: name.to_string(),
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out)
}

fn csv_reader(input: impl Read) -> csv::Reader<impl Read> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input)
}

#[derive(Serialize, Deserialize)]
struct ForecastRow {
    week: String,
    location: String,
    horizon: usize,
    model: ModelKind,
    use_queries: bool,
    predicted: f64,
    actual: f64,
}

/// Sorts by week, then model, query use, horizon and location.
pub fn sort_records(records: &mut [ForecastRecord]) {
    records.sort_by(|a, b| {
        (a.week, a.model, a.use_queries, a.horizon, &a.location).cmp(&(
            b.week,
            b.model,
            b.use_queries,
            b.horizon,
            &b.location,
        ))
    });
}

/// Writes records in the given order.
pub fn write_forecasts(out: impl Write, records: &[ForecastRecord]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(FORECAST_HEADER)?;
    for r in records {
        w.serialize(ForecastRow {
            week: r.week.to_string(),
            location: r.location.clone(),
            horizon: r.horizon,
            model: r.model,
            use_queries: r.use_queries,
            predicted: r.predicted,
            actual: r.actual,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_forecasts(input: impl Read) -> Result<Vec<ForecastRecord>> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    check_header(&mut rd, &FORECAST_HEADER, "forecast log")?;
    let mut out = Vec::new();
    for row in rd.deserialize() {
        let row: ForecastRow = row?;
        let week = row.week.parse().map_err(|_| Error::InvalidWeek {
            path: "forecast log".into(),
            line: 0,
            value: row.week.clone(),
        })?;
        out.push(ForecastRecord {
            week,
            location: row.location,
            horizon: row.horizon,
            model: row.model,
            use_queries: row.use_queries,
            predicted: row.predicted,
            actual: row.actual,
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct RmseRow {
    model: ModelKind,
    use_queries: bool,
    horizon: usize,
    location: String,
    rmse: f64,
}

pub fn write_rmse(out: impl Write, report: &EvaluationReport) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(RMSE_HEADER)?;
    for (key, values) in &report.rmse {
        for (location, rmse) in values {
            w.serialize(RmseRow {
                model: key.model,
                use_queries: key.use_queries,
                horizon: key.horizon,
                location: location.clone(),
                rmse: *rmse,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds the RMSE half of a report; signed-rank results are left empty.
pub fn read_rmse(input: impl Read) -> Result<EvaluationReport> {
    let mut rd = csv_reader(input);
    check_header(&mut rd, &RMSE_HEADER, "rmse table")?;
    let mut report = EvaluationReport::default();
    for row in rd.deserialize() {
        let row: RmseRow = row?;
        let key = ModelKey {
            model: row.model,
            use_queries: row.use_queries,
            horizon: row.horizon,
        };
        report
            .rmse
            .entry(key)
            .or_default()
            .push((row.location, row.rmse));
    }
    for v in report.rmse.values_mut() {
        v.sort_by(|a, b| a.0.cmp(&b.0));
    }
    Ok(report)
}

/// One line of the signed-rank table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonRow {
    pub model: ModelKind,
    pub use_queries: bool,
    pub horizon: usize,
    pub w: f64,
    pub p: f64,
    pub n_eff: usize,
    pub method: WilcoxonMethod,
}

pub fn wilcoxon_rows(report: &EvaluationReport) -> Vec<WilcoxonRow> {
    report
        .wilcoxon
        .iter()
        .map(|(k, r)| WilcoxonRow {
            model: k.model,
            use_queries: k.use_queries,
            horizon: k.horizon,
            w: r.w_statistic,
            p: r.p_value,
            n_eff: r.n_effective,
            method: r.method,
        })
        .collect()
}

pub fn write_wilcoxon(out: impl Write, report: &EvaluationReport) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(WILCOXON_HEADER)?;
    for row in wilcoxon_rows(report) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_wilcoxon(input: impl Read) -> Result<Vec<WilcoxonRow>> {
    let mut rd = csv_reader(input);
    check_header(&mut rd, &WILCOXON_HEADER, "wilcoxon table")?;
    rd.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Coefficient and importance maps as `feature,<value label>`; saliency maps
/// as `step,lag,channel,saliency` with steps numbered from 1 (oldest).
pub fn write_attribution(out: impl Write, map: &AttributionMap) -> Result<()> {
    let mut w = csv_writer(out);
    match map.kind {
        AttributionKind::Saliency => {
            w.write_record(SALIENCY_HEADER)?;
            for (s, (label, row)) in map.row_labels.iter().zip(&map.values).enumerate() {
                let lag = label.strip_prefix("lag").unwrap_or(label);
                for (channel, v) in map.column_labels.iter().zip(row) {
                    w.write_record([
                        (s + 1).to_string(),
                        lag.to_string(),
                        channel.clone(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        kind => {
            w.write_record(["feature", kind.value_label()])?;
            for (label, row) in map.row_labels.iter().zip(&map.values) {
                w.write_record([label.clone(), row[0].to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::NonNumeric {
        path: what.to_string(),
        line: 0,
        value: s.to_string(),
    })
}

/// Reads a table written by [`write_attribution`]. The kind is taken from
/// the header; model, location and horizon are left for the caller.
pub fn read_attribution(input: impl Read) -> Result<AttributionMap> {
    let mut rd = csv_reader(input);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    let kind = match header
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["feature", "coefficient"] => AttributionKind::Coefficients,
        ["feature", "importance"] => AttributionKind::Importances,
        h if h == SALIENCY_HEADER => AttributionKind::Saliency,
        _ => {
            return Err(Error::MalformedHeader {
                path: "attribution table".into(),
                expected: "feature,coefficient | feature,importance | step,lag,channel,saliency"
                    .into(),
                found: header.join(","),
            })
        }
    };
    let mut map = AttributionMap {
        kind,
        model: String::new(),
        location: String::new(),
        horizon: 0,
        row_labels: Vec::new(),
        column_labels: vec![kind.value_label().to_string()],
        values: Vec::new(),
    };
    if kind != AttributionKind::Saliency {
        for rec in rd.records() {
            let rec = rec?;
            map.row_labels.push(rec[0].to_string());
            map.values
                .push(vec![parse_f64(&rec[1], "attribution table")?]);
        }
        return Ok(map);
    }
    let mut steps: BTreeMap<usize, (String, Vec<f64>)> = BTreeMap::new();
    let mut channels: Vec<String> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let step: usize = rec[0]
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad step `{}`", &rec[0])))?;
        if !channels.iter().any(|c| c == &rec[2]) {
            channels.push(rec[2].to_string());
        }
        let entry = steps
            .entry(step)
            .or_insert_with(|| (format!("lag{}", &rec[1]), Vec::new()));
        entry.1.push(parse_f64(&rec[3], "saliency table")?);
    }
    for (label, row) in steps.into_values() {
        if row.len() != channels.len() {
            return Err(Error::DimensionMismatch {
                expected: channels.len(),
                found: row.len(),
            });
        }
        map.row_labels.push(label);
        map.values.push(row);
    }
    map.column_labels = channels;
    Ok(map)
}

/// `<model>[+q]_h<h>_<location>_<kind>.csv`
pub fn attribution_file_name(map: &AttributionMap, use_queries: bool) -> String {
    let q = if use_queries { "+q" } else { "" };
    format!(
        "{}{q}_h{}_{}_{}.csv",
        map.model, map.horizon, map.location, map.kind
    )
}

pub fn save<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut File) -> Result<()>,
{
    let mut f = File::create(path)?;
    write(&mut f).map_err(|e| e.context(path.display().to_string()))
}

pub fn open(path: &Path) -> Result<File> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(File::open(path)?)
}
