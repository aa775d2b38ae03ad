//! Supervised examples for every model family.
//!
//! A row or sequence targeting week `t` at horizon `h` only sees incidence up
//! to week `t − h` and query volumes of week `t` itself: surveillance reports
//! lag by `h` weeks while search volumes are available in real time.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{check_range, sort_by_score, PanelDataset, WeekRange};
use crate::error::{Error, Result};
use crate::stats::pearson;

/// A count that may also mean "everything available".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "CountRepr", into = "CountRepr")]
pub enum Count {
    Top(usize),
    All,
}

impl Count {
    pub fn resolve(self, available: usize) -> usize {
        match self {
            Count::Top(n) => n,
            Count::All => available,
        }
    }

    /// Caps a `Top` count at `available`.
    pub fn clip(self, available: usize) -> Count {
        match self {
            Count::Top(n) if n >= available => Count::All,
            other => other,
        }
    }
}

impl fmt::Display for Count {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Count::Top(n) => write!(f, "{n}"),
            Count::All => f.write_str("all"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CountRepr {
    Number(usize),
    Word(String),
}

impl TryFrom<CountRepr> for Count {
    type Error = String;

    fn try_from(r: CountRepr) -> std::result::Result<Self, String> {
        match r {
            CountRepr::Number(n) => Ok(Count::Top(n)),
            CountRepr::Word(w) if w == "all" => Ok(Count::All),
            CountRepr::Word(w) => Err(format!("expected a number or \"all\", got `{w}`")),
        }
    }
}

impl From<Count> for CountRepr {
    fn from(c: Count) -> Self {
        match c {
            Count::Top(n) => CountRepr::Number(n),
            Count::All => CountRepr::Word("all".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ForecastTask {
    pub horizon: usize,
    /// `None` for the all-locations recurrent task.
    pub target: Option<String>,
    pub use_queries: bool,
}

impl ForecastTask {
    pub fn new(horizon: usize, target: Option<String>, use_queries: bool) -> Self {
        ForecastTask {
            horizon,
            target,
            use_queries,
        }
    }

    fn check(&self) -> Result<()> {
        if self.horizon == 0 {
            Err(Error::InvalidArgument(
                "horizon must be at least 1 week".into(),
            ))
        } else {
            Ok(())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GruHyper {
    pub hidden_units: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for GruHyper {
    fn default() -> Self {
        GruHyper {
            hidden_units: 5,
            dropout_rate: 0.3,
            learning_rate: 0.001,
            epochs: 1000,
            batch_size: 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelHyperparams {
    /// Autoregressive lags per location (`N`).
    pub lookback: usize,
    /// Locations contributing lags to networked models (`R`).
    pub region_count: Count,
    /// Query channels used (`G`, or the query-side `R` of networked models).
    pub query_count: Count,
    /// L1 penalty (`λ`).
    pub l1_penalty: f64,
    pub tree_count: usize,
    pub max_depth: usize,
    pub gru: GruHyper,
}

impl Default for ModelHyperparams {
    fn default() -> Self {
        ModelHyperparams {
            lookback: 52,
            region_count: Count::Top(10),
            query_count: Count::Top(10),
            l1_penalty: 1e-3,
            tree_count: 50,
            max_depth: 8,
            gru: GruHyper::default(),
        }
    }
}

impl ModelHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::Config("lookback must be at least 1".into()));
        }
        if !(self.l1_penalty >= 0.0) {
            return Err(Error::Config("l1_penalty must be non-negative".into()));
        }
        if self.tree_count == 0 {
            return Err(Error::Config("tree_count must be positive".into()));
        }
        let g = &self.gru;
        if g.hidden_units == 0 || g.batch_size == 0 {
            return Err(Error::Config(
                "GRU hidden_units and batch_size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&g.dropout_rate) || !(g.learning_rate >= 0.0) {
            return Err(Error::Config(
                "GRU dropout must lie in [0, 1) and learning rate be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TabularKind {
    /// Lags of the target location only.
    Ar,
    /// Lags of the first `R` ranked regions.
    Lr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow {
    pub features: Vec<f64>,
    pub target: f64,
    /// Index of the target week in the panel.
    pub week: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<DesignRow>,
    pub feature_names: Vec<String>,
}

impl DesignMatrix {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Row index of the example targeting `week`, if one exists.
    pub fn row_for_week(&self, week: usize) -> Option<usize> {
        let first = self.rows.first()?.week;
        let i = week.checked_sub(first)?;
        (i < self.rows.len()).then_some(i)
    }
}

pub fn epi_feature_name(location: &str, lag: usize) -> String {
    format!("epi:{location}:lag{lag}")
}

pub fn query_feature_name(term: &str) -> String {
    format!("query:{term}")
}

fn scored_ranking(mut scored: Vec<(f64, &String)>) -> Vec<String> {
    sort_by_score(&mut scored);
    scored.into_iter().map(|(_, id)| id.clone()).collect()
}

/// Locations ordered by training-period correlation with `target`, target
/// first. Undefined correlations rank last; ties are broken by id.
pub fn rank_regions(panel: &PanelDataset, target: &str, range: WeekRange) -> Result<Vec<String>> {
    let t = panel.require_location(target)?;
    check_range(panel, range)?;
    let base = &panel.incidence(t)[range.start..range.end];
    let scored = panel
        .location_ids()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != t)
        .map(|(i, id)| {
            let s = pearson(base, &panel.incidence(i)[range.start..range.end])
                .unwrap_or(f64::NEG_INFINITY);
            (s, id)
        })
        .collect();
    let mut out = vec![target.to_string()];
    out.extend(scored_ranking(scored));
    Ok(out)
}

/// Query terms ordered by training-period correlation with `target`.
pub fn rank_queries(panel: &PanelDataset, target: &str, range: WeekRange) -> Result<Vec<String>> {
    let t = panel.require_location(target)?;
    check_range(panel, range)?;
    let base = &panel.incidence(t)[range.start..range.end];
    let scored = panel
        .query_ids()
        .iter()
        .enumerate()
        .map(|(q, id)| {
            let s =
                pearson(base, &panel.query(q)[range.start..range.end]).unwrap_or(f64::NEG_INFINITY);
            (s, id)
        })
        .collect();
    Ok(scored_ranking(scored))
}

fn first_target_week(panel: &PanelDataset, lookback: usize, horizon: usize) -> Result<usize> {
    let first = lookback + horizon - 1;
    if first >= panel.len() {
        return Err(Error::InsufficientHistory(format!(
            "{} weeks cannot supply {lookback} lags at horizon {horizon}",
            panel.len()
        )));
    }
    Ok(first)
}

/// Tabular examples for the lasso and forest models.
///
/// Features are laid out region by region, each region contributing
/// `[y(t−h), y(t−h−1), …, y(t−h−N+1)]`, followed by the week-`t` volume of
/// every entry in `queries` when the task uses queries.
pub fn build_tabular(
    panel: &PanelDataset,
    task: &ForecastTask,
    hyper: &ModelHyperparams,
    kind: TabularKind,
    regions: &[String],
    queries: &[String],
) -> Result<DesignMatrix> {
    task.check()?;
    let target = task
        .target
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("tabular models need a target location".into()))?;
    let target_idx = panel.require_location(target)?;
    let region_ids: Vec<&str> = match kind {
        TabularKind::Ar => vec![target],
        TabularKind::Lr => {
            let r = hyper.region_count.resolve(regions.len());
            if r > regions.len() || r == 0 {
                return Err(Error::InvalidArgument(format!(
                    "region list has {} entries, R = {r}",
                    regions.len()
                )));
            }
            regions[..r].iter().map(String::as_str).collect()
        }
    };
    let region_idx = region_ids
        .iter()
        .map(|id| panel.require_location(id))
        .collect::<Result<Vec<_>>>()?;
    let query_idx = if task.use_queries {
        queries
            .iter()
            .map(|q| panel.require_query(q))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };

    let (n, h) = (hyper.lookback, task.horizon);
    let mut feature_names = Vec::with_capacity(region_ids.len() * n + query_idx.len());
    for id in &region_ids {
        feature_names.extend((0..n).map(|k| epi_feature_name(id, h + k)));
    }
    feature_names.extend(
        query_idx
            .iter()
            .map(|&q| query_feature_name(&panel.query_ids()[q])),
    );

    let first = first_target_week(panel, n, h)?;
    let rows = (first..panel.len())
        .map(|t| {
            let mut features = Vec::with_capacity(feature_names.len());
            for &r in &region_idx {
                let series = panel.incidence(r);
                features.extend((0..n).map(|k| series[t - h - k]));
            }
            features.extend(query_idx.iter().map(|&q| panel.query(q)[t]));
            DesignRow {
                features,
                target: panel.incidence(target_idx)[t],
                week: t,
            }
        })
        .collect();
    Ok(DesignMatrix {
        rows,
        feature_names,
    })
}

/// One input sequence: `steps × channels`.
pub type Sequence = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub inputs: Vec<Sequence>,
    /// Incidence of every location at the target week.
    pub targets: Vec<Vec<f64>>,
    pub weeks: Vec<usize>,
    /// Location ids, then `query:<term>` labels.
    pub channel_names: Vec<String>,
}

impl SequenceBatch {
    pub fn index_of_week(&self, week: usize) -> Option<usize> {
        let first = *self.weeks.first()?;
        let i = week.checked_sub(first)?;
        (i < self.weeks.len()).then_some(i)
    }
}

/// Sequences for the all-locations recurrent model. Step `s` of the example
/// targeting week `t` holds week `t − h − N + 1 + s` of every location,
/// followed by the week-`t` query volumes (repeated at every step).
pub fn build_sequences(
    panel: &PanelDataset,
    task: &ForecastTask,
    hyper: &ModelHyperparams,
    queries: &[String],
) -> Result<SequenceBatch> {
    task.check()?;
    let query_idx = if task.use_queries {
        queries
            .iter()
            .map(|q| panel.require_query(q))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let (n, h) = (hyper.lookback, task.horizon);
    let first = first_target_week(panel, n, h)?;
    let n_loc = panel.n_locations();
    let mut channel_names: Vec<String> = panel.location_ids().to_vec();
    channel_names.extend(
        query_idx
            .iter()
            .map(|&q| query_feature_name(&panel.query_ids()[q])),
    );

    let mut batch = SequenceBatch {
        inputs: Vec::with_capacity(panel.len() - first),
        targets: Vec::with_capacity(panel.len() - first),
        weeks: Vec::with_capacity(panel.len() - first),
        channel_names,
    };
    for t in first..panel.len() {
        let volumes: Vec<f64> = query_idx.iter().map(|&q| panel.query(q)[t]).collect();
        let seq = (t + 1 - h - n..=t - h)
            .map(|w| {
                let mut step: Vec<f64> = (0..n_loc).map(|l| panel.incidence(l)[w]).collect();
                step.extend_from_slice(&volumes);
                step
            })
            .collect();
        batch.inputs.push(seq);
        batch
            .targets
            .push((0..n_loc).map(|l| panel.incidence(l)[t]).collect());
        batch.weeks.push(t);
    }
    Ok(batch)
}
