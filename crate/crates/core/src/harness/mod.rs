//! Walk-forward evaluation, cross-validated hyperparameter selection and
//! the persistence baseline.

mod select;
mod walk;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use select::select_hyperparams;
pub use walk::{
    plan_jobs, run_jobs, walk_forward, GruRetrain, Job, JobOutput, Prepared, WalkForwardResult,
    WalkOptions,
};

use crate::dataset::{IsoWeek, PanelDataset, WeekRange};
use crate::error::{Error, Result};
use crate::features::{Count, ForecastTask, ModelHyperparams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "P")]
    Persistence,
    #[serde(rename = "AR")]
    Ar,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "GRU")]
    Gru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Persistence,
        ModelKind::Ar,
        ModelKind::Lr,
        ModelKind::Rf,
        ModelKind::Gru,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Persistence => "P",
            ModelKind::Ar => "AR",
            ModelKind::Lr => "LR",
            ModelKind::Rf => "RF",
            ModelKind::Gru => "GRU",
        }
    }

    /// Fitted per location on a design matrix.
    pub fn is_tabular(self) -> bool {
        matches!(self, ModelKind::Ar | ModelKind::Lr | ModelKind::Rf)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Candidate values per tunable hyperparameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperGrid {
    pub l1_penalty: Vec<f64>,
    pub region_count: Vec<Count>,
    pub query_count: Vec<Count>,
    pub max_depth: Vec<usize>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        HyperGrid {
            l1_penalty: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            region_count: vec![Count::Top(10), Count::Top(20), Count::Top(40)],
            query_count: vec![Count::Top(10), Count::Top(20), Count::Top(40)],
            max_depth: vec![2, 4, 8, 16],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub use_queries: bool,
    pub grid: HyperGrid,
}

fn counts(values: &[Count], available: usize) -> Vec<Count> {
    let mut v: Vec<usize> = values
        .iter()
        .map(|c| c.clip(available).resolve(available))
        .collect();
    v.sort_unstable();
    v.dedup();
    v.into_iter().map(Count::Top).collect()
}

impl ModelSpec {
    pub fn new(kind: ModelKind, use_queries: bool) -> Self {
        ModelSpec {
            kind,
            use_queries,
            grid: HyperGrid::default(),
        }
    }

    pub fn with_grid(mut self, grid: HyperGrid) -> Self {
        self.grid = grid;
        self
    }

    /// `AR`, `AR+q`, ...
    pub fn label(&self) -> String {
        if self.use_queries {
            format!("{}+q", self.kind)
        } else {
            self.kind.to_string()
        }
    }

    /// Candidate hyperparameter sets, smallest model first: larger `λ`,
    /// then fewer regions, fewer queries, shallower trees. Counts are capped
    /// at what the panel offers and deduplicated. Kinds without a grid yield
    /// `base` alone.
    ///
    /// Lasso autoregression with queries always uses every query channel;
    /// the networked models tune their query count.
    pub fn candidates(
        &self,
        base: &ModelHyperparams,
        n_locations: usize,
        n_queries: usize,
    ) -> Result<Vec<ModelHyperparams>> {
        if self.use_queries && n_queries == 0 {
            return Err(Error::Config(format!(
                "{} uses queries but the panel has none",
                self.label()
            )));
        }
        let kind = self.kind;
        let need = |empty: bool, what: &str| {
            if empty {
                Err(Error::Config(format!(
                    "{} grid has no {what} values",
                    self.label()
                )))
            } else {
                Ok(())
            }
        };
        let mut lambdas = vec![base.l1_penalty];
        if matches!(kind, ModelKind::Ar | ModelKind::Lr) {
            need(self.grid.l1_penalty.is_empty(), "l1_penalty")?;
            lambdas = self.grid.l1_penalty.clone();
            if lambdas.iter().any(|l| !(*l >= 0.0)) {
                return Err(Error::Config(
                    "l1_penalty candidates must be non-negative".into(),
                ));
            }
            lambdas.sort_by(|a, b| b.total_cmp(a));
            lambdas.dedup();
        }
        let mut regions = vec![base.region_count];
        if matches!(kind, ModelKind::Lr | ModelKind::Rf) {
            need(self.grid.region_count.is_empty(), "region_count")?;
            regions = counts(&self.grid.region_count, n_locations);
            if regions.contains(&Count::Top(0)) {
                return Err(Error::Config(
                    "region_count candidates must be positive".into(),
                ));
            }
        }
        let mut queries = vec![base.query_count];
        if self.use_queries {
            match kind {
                ModelKind::Ar => queries = vec![Count::All],
                ModelKind::Lr | ModelKind::Rf => {
                    need(self.grid.query_count.is_empty(), "query_count")?;
                    queries = counts(&self.grid.query_count, n_queries);
                }
                _ => {}
            }
        }
        let mut depths = vec![base.max_depth];
        if kind == ModelKind::Rf {
            need(self.grid.max_depth.is_empty(), "max_depth")?;
            depths = self.grid.max_depth.clone();
            depths.sort_unstable();
            depths.dedup();
        }

        let mut out = Vec::new();
        for &l1_penalty in &lambdas {
            for &region_count in &regions {
                for &query_count in &queries {
                    for &max_depth in &depths {
                        out.push(ModelHyperparams {
                            l1_penalty,
                            region_count,
                            query_count,
                            max_depth,
                            ..*base
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One prediction in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRecord {
    pub week: IsoWeek,
    pub location: String,
    pub horizon: usize,
    pub model: ModelKind,
    pub use_queries: bool,
    pub predicted: f64,
    pub actual: f64,
}

/// Carries the incidence of week `t − h` forward to week `t` for every week
/// in `weeks`, for the task's location or all locations when none is set.
pub fn persistence_forecast(
    panel: &PanelDataset,
    task: &ForecastTask,
    weeks: WeekRange,
) -> Result<Vec<ForecastRecord>> {
    let h = task.horizon;
    if h == 0 {
        return Err(Error::InvalidArgument(
            "horizon must be at least 1 week".into(),
        ));
    }
    if weeks.start < h || weeks.end > panel.len() {
        return Err(Error::InsufficientHistory(format!(
            "weeks {}..{} at horizon {h} fall outside a {}-week panel",
            weeks.start,
            weeks.end,
            panel.len()
        )));
    }
    let locations: Vec<usize> = match &task.target {
        Some(id) => vec![panel.require_location(id)?],
        None => (0..panel.n_locations()).collect(),
    };
    let mut out = Vec::with_capacity(weeks.len() * locations.len());
    for t in weeks.iter() {
        for &l in &locations {
            let series = panel.incidence(l);
            out.push(ForecastRecord {
                week: panel.weeks()[t],
                location: panel.location_ids()[l].clone(),
                horizon: h,
                model: ModelKind::Persistence,
                use_queries: task.use_queries,
                predicted: series[t - h],
                actual: series[t],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
