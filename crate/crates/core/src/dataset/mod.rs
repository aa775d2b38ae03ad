//! Weekly multi-location panels: ingestion, validation, train/test split,
//! min-max normalization and query ranking.

mod io;
mod synth;
mod week;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use io::{load_panel_csv, read_panel, save_panel_csv, write_panel};
pub use synth::{ring_neighbors, synthesize_panel, SynthesisConfig};
pub use week::{IsoWeek, ParseWeekError};

use crate::error::{Error, Result};
use crate::stats;

/// Half-open interval `[start, end)` of week indices into a panel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeekRange {
    pub start: usize,
    pub end: usize,
}

impl WeekRange {
    pub fn new(start: usize, end: usize) -> Self {
        WeekRange { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, week: usize) -> bool {
        (self.start..self.end).contains(&week)
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// Aligned weekly incidence for `L` locations and volumes for `Q` query terms.
///
/// Series are stored one vector per location / term, all of length `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    weeks: Vec<IsoWeek>,
    location_ids: Vec<String>,
    incidence: Vec<Vec<f64>>,
    query_ids: Vec<String>,
    queries: Vec<Vec<f64>>,
}

impl PanelDataset {
    pub fn new(
        weeks: Vec<IsoWeek>,
        location_ids: Vec<String>,
        incidence: Vec<Vec<f64>>,
        query_ids: Vec<String>,
        queries: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidPanel(msg));
        if weeks.is_empty() || location_ids.is_empty() {
            return Err(Error::EmptyPanel);
        }
        if weeks.windows(2).any(|w| w[0].next() != w[1]) {
            return invalid("weekly calendar has gaps or is unordered".into());
        }
        if location_ids.len() != incidence.len() {
            return invalid("location ids do not match incidence series".into());
        }
        if query_ids.len() != queries.len() {
            return invalid("query ids do not match query series".into());
        }
        for (ids, what) in [(&location_ids, "location"), (&query_ids, "query")] {
            let mut seen = HashSet::new();
            if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
                return invalid(format!("duplicate {what} id `{dup}`"));
            }
        }
        let t = weeks.len();
        for (id, series) in location_ids
            .iter()
            .zip(&incidence)
            .chain(query_ids.iter().zip(&queries))
        {
            if series.len() != t {
                return invalid(format!(
                    "series `{id}` has {} weeks, expected {t}",
                    series.len()
                ));
            }
            if series.iter().any(|v| !v.is_finite()) {
                return invalid(format!("series `{id}` has missing or non-finite values"));
            }
        }
        Ok(PanelDataset {
            weeks,
            location_ids,
            incidence,
            query_ids,
            queries,
        })
    }

    /// Number of weeks `T`.
    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    pub fn weeks(&self) -> &[IsoWeek] {
        &self.weeks
    }

    pub fn location_ids(&self) -> &[String] {
        &self.location_ids
    }

    pub fn query_ids(&self) -> &[String] {
        &self.query_ids
    }

    pub fn n_locations(&self) -> usize {
        self.location_ids.len()
    }

    pub fn n_queries(&self) -> usize {
        self.query_ids.len()
    }

    pub fn incidence(&self, location: usize) -> &[f64] {
        &self.incidence[location]
    }

    pub fn query(&self, query: usize) -> &[f64] {
        &self.queries[query]
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.location_ids.iter().position(|l| l == id)
    }

    pub fn query_index(&self, id: &str) -> Option<usize> {
        self.query_ids.iter().position(|q| q == id)
    }

    pub(crate) fn require_location(&self, id: &str) -> Result<usize> {
        self.location_index(id)
            .ok_or_else(|| Error::UnknownSeries(id.to_string()))
    }

    pub(crate) fn require_query(&self, id: &str) -> Result<usize> {
        self.query_index(id)
            .ok_or_else(|| Error::UnknownSeries(id.to_string()))
    }

    /// Returns a copy with every series value transformed by `f(series, week, value)`.
    pub fn map_values(&self, mut f: impl FnMut(SeriesRef<'_>, usize, f64) -> f64) -> PanelDataset {
        let mut out = self.clone();
        for (id, series) in out.location_ids.iter().zip(out.incidence.iter_mut()) {
            for (w, v) in series.iter_mut().enumerate() {
                *v = f(SeriesRef::Location(id), w, *v);
            }
        }
        for (id, series) in out.query_ids.iter().zip(out.queries.iter_mut()) {
            for (w, v) in series.iter_mut().enumerate() {
                *v = f(SeriesRef::Query(id), w, *v);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesRef<'a> {
    Location(&'a str),
    Query(&'a str),
}

/// Contiguous train/test partition of a panel's weeks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: WeekRange,
    pub test: WeekRange,
}

/// First `floor(T * train_fraction)` weeks train, the rest test.
pub fn split(panel: &PanelDataset, train_fraction: f64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let t = panel.len();
    let n_train = (t as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == t {
        return Err(Error::InsufficientHistory(format!(
            "a {t}-week panel cannot be split at fraction {train_fraction}"
        )));
    }
    Ok(SplitSpec {
        train: WeekRange::new(0, n_train),
        test: WeekRange::new(n_train, t),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesScale {
    pub min: f64,
    pub max: f64,
}

impl SeriesScale {
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    pub fn forward(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn inverse(&self, x: f64) -> f64 {
        self.min + x * (self.max - self.min)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub incidence: BTreeMap<String, SeriesScale>,
    pub queries: BTreeMap<String, SeriesScale>,
    pub fitted_on: WeekRange,
}

impl NormalizationParams {
    pub fn location(&self, id: &str) -> Result<&SeriesScale> {
        self.incidence
            .get(id)
            .ok_or_else(|| Error::UnknownSeries(id.to_string()))
    }

    pub fn query(&self, id: &str) -> Result<&SeriesScale> {
        self.queries
            .get(id)
            .ok_or_else(|| Error::UnknownSeries(id.to_string()))
    }

    fn series(&self, series: SeriesRef<'_>) -> Option<&SeriesScale> {
        match series {
            SeriesRef::Location(id) => self.incidence.get(id),
            SeriesRef::Query(id) => self.queries.get(id),
        }
    }
}

/// Per-series min/max over `range` only.
pub fn fit_normalizer(panel: &PanelDataset, range: WeekRange) -> Result<NormalizationParams> {
    if range.is_empty() || range.end > panel.len() {
        return Err(Error::InvalidArgument(format!(
            "normalization range {}..{} is empty or outside the panel",
            range.start, range.end
        )));
    }
    let scale = |series: &[f64]| {
        let window = &series[range.start..range.end];
        SeriesScale {
            min: window.iter().copied().fold(f64::INFINITY, f64::min),
            max: window.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    };
    Ok(NormalizationParams {
        incidence: panel
            .location_ids
            .iter()
            .zip(&panel.incidence)
            .map(|(id, s)| (id.clone(), scale(s)))
            .collect(),
        queries: panel
            .query_ids
            .iter()
            .zip(&panel.queries)
            .map(|(id, s)| (id.clone(), scale(s)))
            .collect(),
        fitted_on: range,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Applies the min-max map (or its inverse) to every series. Values outside
/// the fitted range are not clipped.
pub fn normalize(
    panel: &PanelDataset,
    params: &NormalizationParams,
    direction: Direction,
) -> Result<PanelDataset> {
    for id in &panel.location_ids {
        params.location(id)?;
    }
    for id in &panel.query_ids {
        params.query(id)?;
    }
    Ok(panel.map_values(|series, _, v| {
        let scale = params.series(series).expect("checked above");
        match direction {
            Direction::Forward => scale.forward(v),
            Direction::Inverse => scale.inverse(v),
        }
    }))
}

/// Ranks query terms by their best Pearson correlation with any location's
/// incidence over `range` and returns the top `g`. Ties go to the
/// lexicographically smaller id; a query whose correlation is undefined
/// against every location scores negative infinity.
pub fn select_top_queries(panel: &PanelDataset, g: usize, range: WeekRange) -> Result<Vec<String>> {
    if g > panel.n_queries() {
        return Err(Error::InvalidArgument(format!(
            "requested {g} queries but the panel has {}",
            panel.n_queries()
        )));
    }
    check_range(panel, range)?;
    let window = |s: &[f64]| s[range.start..range.end].to_vec();
    let locations: Vec<Vec<f64>> = panel.incidence.iter().map(|s| window(s)).collect();
    let mut scored: Vec<(f64, &String)> = panel
        .query_ids
        .iter()
        .zip(&panel.queries)
        .map(|(id, q)| {
            let q = window(q);
            let score = locations
                .iter()
                .filter_map(|loc| stats::pearson(&q, loc).ok())
                .fold(f64::NEG_INFINITY, f64::max);
            (score, id)
        })
        .collect();
    sort_by_score(&mut scored);
    Ok(scored
        .into_iter()
        .take(g)
        .map(|(_, id)| id.clone())
        .collect())
}

/// Descending by score, then ascending by id.
pub(crate) fn sort_by_score(scored: &mut [(f64, &String)]) {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
}

pub(crate) fn check_range(panel: &PanelDataset, range: WeekRange) -> Result<()> {
    if range.is_empty() || range.end > panel.len() {
        Err(Error::InvalidArgument(format!(
            "week range {}..{} is empty or outside the {}-week panel",
            range.start,
            range.end,
            panel.len()
        )))
    } else {
        Ok(())
    }
}
