use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;

use super::{IsoWeek, PanelDataset};
use crate::error::{Error, Result};

const INCIDENCE_HEADER: [&str; 3] = ["week", "location", "value"];
const QUERY_HEADER: [&str; 3] = ["week", "term", "value"];

/// Series in first-appearance order, each keyed by week.
struct LongTable {
    ids: Vec<String>,
    values: Vec<BTreeMap<IsoWeek, f64>>,
}

fn read_long(reader: impl Read, header: [&str; 3], name: &str) -> Result<LongTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(Error::MalformedHeader {
            path: name.to_string(),
            expected: header.join(","),
            found: found.join(","),
        });
    }
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut table = LongTable {
        ids: Vec::new(),
        values: Vec::new(),
    };
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let week: IsoWeek = record[0].parse().map_err(|_| Error::InvalidWeek {
            path: name.to_string(),
            line,
            value: record[0].to_string(),
        })?;
        let raw = &record[2];
        let value: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::NonNumeric {
                path: name.to_string(),
                line,
                value: raw.to_string(),
            })?;
        if value < 0.0 {
            return Err(Error::NegativeValue {
                path: name.to_string(),
                line,
                value,
            });
        }
        let series = &record[1];
        let slot = *index.entry(series.to_string()).or_insert_with(|| {
            table.ids.push(series.to_string());
            table.values.push(BTreeMap::new());
            table.ids.len() - 1
        });
        if table.values[slot].insert(week, value).is_some() {
            return Err(Error::DuplicateEntry {
                week: week.to_string(),
                series: series.to_string(),
            });
        }
    }
    Ok(table)
}

/// Keeps the series covering every calendar week; logs the ones dropped.
fn complete_series(
    table: LongTable,
    calendar: &[IsoWeek],
    what: &str,
) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut ids = Vec::new();
    let mut series = Vec::new();
    for (id, values) in table.ids.into_iter().zip(table.values) {
        let s: Option<Vec<f64>> = calendar.iter().map(|w| values.get(w).copied()).collect();
        match s {
            Some(s) => {
                ids.push(id);
                series.push(s);
            }
            None => {
                let missing = calendar.iter().filter(|w| !values.contains_key(w)).count();
                warn!("dropping {what} `{id}`: {missing} missing week(s)");
            }
        }
    }
    (ids, series)
}

/// Reads a panel from long-format CSV readers (see [`load_panel_csv`]).
pub fn read_panel(incidence: impl Read, queries: Option<impl Read>) -> Result<PanelDataset> {
    read_panel_named(incidence, "incidence", queries.map(|q| (q, "queries")))
}

fn read_panel_named<R: Read, Q: Read>(
    incidence: R,
    incidence_name: &str,
    queries: Option<(Q, &str)>,
) -> Result<PanelDataset> {
    let inc = read_long(incidence, INCIDENCE_HEADER, incidence_name)?;
    let first = inc
        .values
        .iter()
        .filter_map(|v| v.keys().next())
        .min()
        .copied();
    let last = inc
        .values
        .iter()
        .filter_map(|v| v.keys().next_back())
        .max()
        .copied();
    let (Some(first), Some(last)) = (first, last) else {
        return Err(Error::EmptyPanel);
    };
    let mut calendar = vec![first];
    while *calendar.last().unwrap() < last {
        let next = calendar.last().unwrap().next();
        calendar.push(next);
    }
    let (location_ids, incidence) = complete_series(inc, &calendar, "location");
    if location_ids.is_empty() {
        return Err(Error::EmptyPanel);
    }
    let (query_ids, query_series) = match queries {
        Some((reader, name)) => {
            let q = read_long(reader, QUERY_HEADER, name)?;
            let outside: usize = q
                .values
                .iter()
                .map(|v| v.keys().filter(|w| **w < first || **w > last).count())
                .sum();
            if outside > 0 {
                warn!("ignoring {outside} query row(s) outside the incidence calendar");
            }
            complete_series(q, &calendar, "query term")
        }
        None => (Vec::new(), Vec::new()),
    };
    PanelDataset::new(calendar, location_ids, incidence, query_ids, query_series)
}

/// Loads `week,location,value` incidence and optional `week,term,value`
/// query volumes. Series missing any week of the incidence calendar are
/// dropped with a warning.
pub fn load_panel_csv(incidence_path: &Path, queries_path: Option<&Path>) -> Result<PanelDataset> {
    let open = |p: &Path| -> Result<File> {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
        Ok(File::open(p)?)
    };
    let inc = open(incidence_path)?;
    let q = queries_path.map(|p| open(p).map(|f| (f, p))).transpose()?;
    let inc_name = incidence_path.display().to_string();
    let q_name = queries_path.map(|p| p.display().to_string());
    read_panel_named(
        inc,
        &inc_name,
        q.map(|(f, _)| (f, q_name.as_deref().unwrap_or("queries"))),
    )
}

fn write_long<'a>(
    writer: impl Write,
    header: [&str; 3],
    weeks: &[IsoWeek],
    ids: &[String],
    series: &dyn Fn(usize) -> &'a [f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for (t, week) in weeks.iter().enumerate() {
        let week = week.to_string();
        for (i, id) in ids.iter().enumerate() {
            w.write_record([week.as_str(), id.as_str(), &series(i)[t].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel(
    panel: &PanelDataset,
    incidence: impl Write,
    queries: Option<impl Write>,
) -> Result<()> {
    write_long(
        incidence,
        INCIDENCE_HEADER,
        panel.weeks(),
        panel.location_ids(),
        &|i| panel.incidence(i),
    )?;
    if let Some(q) = queries {
        write_long(q, QUERY_HEADER, panel.weeks(), panel.query_ids(), &|i| {
            panel.query(i)
        })?;
    }
    Ok(())
}

/// Writes the panel in the format read by [`load_panel_csv`]. Values use the
/// shortest decimal representation that round-trips exactly.
pub fn save_panel_csv(
    panel: &PanelDataset,
    incidence_path: &Path,
    queries_path: Option<&Path>,
) -> Result<()> {
    let inc = File::create(incidence_path)?;
    let q = queries_path.map(File::create).transpose()?;
    write_panel(panel, inc, q)
}
