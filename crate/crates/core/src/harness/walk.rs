use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{persistence_forecast, select_hyperparams, ForecastRecord, ModelKind, ModelSpec};
use crate::attribution::AttributionMap;
use crate::dataset::{
    fit_normalizer, normalize, select_top_queries, Direction, NormalizationParams, PanelDataset,
    SplitSpec, WeekRange,
};
use crate::error::{Error, Result};
use crate::features::{
    build_sequences, build_tabular, rank_queries, rank_regions, DesignMatrix, ForecastTask,
    ModelHyperparams, TabularKind,
};
use crate::forest::{fit_forest_with, forest_importances, predict_forest, ForestParams};
use crate::gru::{init_gru, predict_gru, saliency, train_gru, GruDims, GruParameters, TrainConfig};
use crate::lasso::{
    coefficient_map, fit_lasso_from, predict_linear, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::par::{self, Execution};
use crate::seed::substream;

/// A panel with its split and the normalization fitted on the training
/// range.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub raw: PanelDataset,
    pub normalized: PanelDataset,
    pub normalizer: NormalizationParams,
    pub split: SplitSpec,
}

impl Prepared {
    pub fn new(panel: PanelDataset, split: SplitSpec) -> Result<Self> {
        let normalizer = fit_normalizer(&panel, split.train)?;
        let normalized = normalize(&panel, &normalizer, Direction::Forward)?;
        Ok(Prepared {
            raw: panel,
            normalized,
            normalizer,
            split,
        })
    }

    pub fn from_fraction(panel: PanelDataset, train_fraction: f64) -> Result<Self> {
        let split = crate::dataset::split(&panel, train_fraction)?;
        Prepared::new(panel, split)
    }
}

/// How the recurrent model is refitted at each walk-forward week.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GruRetrain {
    /// Fresh initialization and the full epoch budget every week.
    #[default]
    Full,
    /// Continue from the previous week's parameters for `warm_epochs`.
    Warm,
}

impl fmt::Display for GruRetrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GruRetrain::Full => "full",
            GruRetrain::Warm => "warm",
        })
    }
}

impl FromStr for GruRetrain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GruRetrain::Full),
            "warm" => Ok(GruRetrain::Warm),
            other => Err(Error::Config(format!("unknown GRU retrain mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkOptions {
    pub seed: u64,
    pub gru_retrain: GruRetrain,
    pub warm_epochs: usize,
    /// Re-run selection every this many test weeks.
    pub reselect_every: Option<usize>,
    /// Stop after this panel week index.
    pub last_week: Option<usize>,
    pub execution: Execution,
    /// Locations whose attributions are collected.
    pub attribution_locations: Vec<String>,
}

impl Default for WalkOptions {
    fn default() -> Self {
        WalkOptions {
            seed: 0,
            gru_retrain: GruRetrain::Full,
            warm_epochs: 50,
            reselect_every: None,
            last_week: None,
            execution: Execution::Parallel,
            attribution_locations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WalkForwardResult {
    pub records: Vec<ForecastRecord>,
    /// Hyperparameters chosen on the training range.
    pub selected: ModelHyperparams,
    /// Attributions averaged over the walk-forward weeks.
    pub attributions: Vec<AttributionMap>,
}

/// Region and query orderings for one target, fixed on the training range.
pub(super) struct TabularInputs {
    regions: Vec<String>,
    ranked_queries: Vec<String>,
    all_queries: Vec<String>,
}

impl TabularInputs {
    pub(super) fn new(prep: &Prepared, target: &str) -> Result<Self> {
        let panel = &prep.normalized;
        let train = prep.split.train;
        Ok(TabularInputs {
            regions: rank_regions(panel, target, train)?,
            ranked_queries: if panel.n_queries() > 0 {
                rank_queries(panel, target, train)?
            } else {
                Vec::new()
            },
            all_queries: panel.query_ids().to_vec(),
        })
    }

    pub(super) fn design(
        &self,
        prep: &Prepared,
        kind: ModelKind,
        task: &ForecastTask,
        hyper: &ModelHyperparams,
    ) -> Result<DesignMatrix> {
        let (tab, queries) = match kind {
            ModelKind::Ar => (TabularKind::Ar, self.all_queries.as_slice()),
            ModelKind::Lr | ModelKind::Rf => {
                let q = hyper
                    .query_count
                    .resolve(self.ranked_queries.len())
                    .min(self.ranked_queries.len());
                (TabularKind::Lr, &self.ranked_queries[..q])
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "{other} is not a tabular model"
                )))
            }
        };
        let mut hyper = *hyper;
        hyper.region_count = hyper.region_count.clip(self.regions.len());
        build_tabular(&prep.normalized, task, &hyper, tab, &self.regions, queries)
    }
}

pub(super) enum Fitted {
    Linear(crate::lasso::LinearModel),
    Forest(crate::forest::Forest),
}

impl Fitted {
    pub(super) fn predict(&self, x: &[f64]) -> Result<f64> {
        match self {
            Fitted::Linear(m) => predict_linear(m, x),
            Fitted::Forest(f) => predict_forest(f, x),
        }
    }
}

pub(super) fn forest_params(hyper: &ModelHyperparams) -> ForestParams {
    ForestParams {
        tree_count: hyper.tree_count,
        max_depth: hyper.max_depth,
        ..ForestParams::default()
    }
}

pub(super) fn fit_tabular(
    kind: ModelKind,
    hyper: &ModelHyperparams,
    x: &[Vec<f64>],
    y: &[f64],
    names: &[String],
    seed: u64,
    warm: Option<&[f64]>,
    exec: Execution,
) -> Result<Fitted> {
    match kind {
        ModelKind::Ar | ModelKind::Lr => {
            let m = fit_lasso_from(x, y, hyper.l1_penalty, DEFAULT_TOL, DEFAULT_MAX_ITER, warm)?;
            if !m.converged {
                log::debug!(
                    "lasso stopped after {} sweeps without converging",
                    m.iterations
                );
            }
            Ok(Fitted::Linear(m))
        }
        ModelKind::Rf => Ok(Fitted::Forest(fit_forest_with(
            x,
            y,
            &forest_params(hyper),
            seed,
            names,
            exec,
        )?)),
        other => Err(Error::InvalidArgument(format!(
            "{other} is not a tabular model"
        ))),
    }
}

fn test_weeks(prep: &Prepared, opts: &WalkOptions) -> WeekRange {
    let test = prep.split.test;
    let end = opts
        .last_week
        .map_or(test.end, |w| (w + 1).clamp(test.start, test.end));
    WeekRange::new(test.start, end)
}

fn week_context(
    kind: ModelKind,
    location: &str,
    task: &ForecastTask,
    prep: &Prepared,
    t: usize,
) -> String {
    format!(
        "model {kind}, location {location}, horizon {}, week {}",
        task.horizon,
        prep.raw.weeks()[t]
    )
}

/// Walk-forward evaluation of one model on one task.
///
/// Hyperparameters are selected on the training range first (and again every
/// `reselect_every` test weeks when set). Then, for each test week `t` in
/// order, the model is refitted on every example whose target week is at most
/// `t − h` and predicts week `t`; predictions are mapped back to original
/// units. Tabular models need a target location; the recurrent model
/// predicts every location at once.
pub fn walk_forward(
    prep: &Prepared,
    spec: &ModelSpec,
    task: &ForecastTask,
    base: &ModelHyperparams,
    opts: &WalkOptions,
) -> Result<WalkForwardResult> {
    base.validate()?;
    if task.use_queries != spec.use_queries {
        return Err(Error::InvalidArgument(
            "task and model disagree on query use".into(),
        ));
    }
    let weeks = test_weeks(prep, opts);
    match spec.kind {
        ModelKind::Persistence => {
            let records = persistence_forecast(&prep.raw, task, weeks)?;
            Ok(WalkForwardResult {
                records,
                selected: *base,
                attributions: Vec::new(),
            })
        }
        ModelKind::Gru => walk_gru(prep, task, base, opts, weeks),
        _ => walk_tabular(prep, spec, task, base, opts, weeks),
    }
}

fn walk_tabular(
    prep: &Prepared,
    spec: &ModelSpec,
    task: &ForecastTask,
    base: &ModelHyperparams,
    opts: &WalkOptions,
    weeks: WeekRange,
) -> Result<WalkForwardResult> {
    let kind = spec.kind;
    let target = task
        .target
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("{kind} needs a target location")))?;
    let target_idx = prep.raw.require_location(target)?;
    let scale = *prep.normalizer.location(target)?;
    let inputs = TabularInputs::new(prep, target)?;
    let selected = select_hyperparams(
        prep,
        spec,
        task,
        base,
        prep.split.train,
        opts.seed,
        opts.execution,
    )?;
    let mut hyper = selected;
    let mut design = inputs.design(prep, kind, task, &hyper)?;
    let label = format!(
        "{}:{}:h{}:{target}",
        kind, task.use_queries as u8, task.horizon
    );
    let collect = opts.attribution_locations.iter().any(|l| l == target);

    let mut records = Vec::new();
    let mut maps = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for (i, t) in weeks.iter().enumerate() {
        let reselect = opts
            .reselect_every
            .is_some_and(|k| k > 0 && i > 0 && i % k == 0);
        if reselect && t + 1 > task.horizon {
            let range = WeekRange::new(0, t + 1 - task.horizon);
            let next = select_hyperparams(prep, spec, task, base, range, opts.seed, opts.execution)
                .map_err(|e| e.context(week_context(kind, target, task, prep, t)))?;
            if next != hyper {
                hyper = next;
                design = inputs.design(prep, kind, task, &hyper)?;
                warm = None;
            }
        }
        let Some(row) = design.row_for_week(t) else {
            continue;
        };
        let first = design.rows[0].week;
        let n_train = (t + 1)
            .saturating_sub(task.horizon)
            .saturating_sub(first)
            .min(design.rows.len());
        if n_train == 0 {
            continue;
        }
        let x: Vec<Vec<f64>> = design.rows[..n_train]
            .iter()
            .map(|r| r.features.clone())
            .collect();
        let y: Vec<f64> = design.rows[..n_train].iter().map(|r| r.target).collect();
        let seed = substream(opts.seed, &format!("{label}:w{t}"));
        let fitted = fit_tabular(
            kind,
            &hyper,
            &x,
            &y,
            &design.feature_names,
            seed,
            warm.as_deref(),
            opts.execution,
        )
        .and_then(|f| f.predict(&design.rows[row].features).map(|p| (f, p)))
        .map_err(|e| e.context(week_context(kind, target, task, prep, t)))?;
        let (model, predicted) = fitted;
        match &model {
            Fitted::Linear(m) => {
                if collect {
                    maps.push(coefficient_map(m, &design.feature_names));
                }
                warm = Some(m.coefficients.clone());
            }
            Fitted::Forest(f) => {
                if collect {
                    maps.push(forest_importances(f));
                }
            }
        }
        records.push(ForecastRecord {
            week: prep.raw.weeks()[t],
            location: target.to_string(),
            horizon: task.horizon,
            model: kind,
            use_queries: task.use_queries,
            predicted: scale.inverse(predicted),
            actual: prep.raw.incidence(target_idx)[t],
        });
    }
    let attributions = average_maps(&maps, kind, target, task.horizon);
    Ok(WalkForwardResult {
        records,
        selected,
        attributions,
    })
}

fn average_maps(
    maps: &[AttributionMap],
    kind: ModelKind,
    location: &str,
    horizon: usize,
) -> Vec<AttributionMap> {
    let same_labels = maps.windows(2).all(|w| w[0].row_labels == w[1].row_labels);
    if !same_labels {
        log::warn!("{kind} {location} h={horizon}: feature set changed during the run, keeping the final week's attribution");
        return maps
            .last()
            .map(|m| m.clone().with_context(kind.label(), location, horizon))
            .into_iter()
            .collect();
    }
    AttributionMap::average(maps)
        .map(|m| m.with_context(kind.label(), location, horizon))
        .into_iter()
        .collect()
}

fn walk_gru(
    prep: &Prepared,
    task: &ForecastTask,
    base: &ModelHyperparams,
    opts: &WalkOptions,
    weeks: WeekRange,
) -> Result<WalkForwardResult> {
    let panel = &prep.normalized;
    let queries = if task.use_queries {
        let g = base
            .query_count
            .clip(panel.n_queries())
            .resolve(panel.n_queries());
        select_top_queries(panel, g, prep.split.train)?
    } else {
        Vec::new()
    };
    let all = ForecastTask::new(task.horizon, None, task.use_queries);
    let batch = build_sequences(panel, &all, base, &queries)?;
    let dims = GruDims {
        input: batch.channel_names.len(),
        hidden: base.gru.hidden_units,
        output: panel.n_locations(),
    };
    let label = format!("GRU:{}:h{}", task.use_queries as u8, task.horizon);
    let targets: Vec<usize> = match &task.target {
        Some(id) => vec![prep.raw.require_location(id)?],
        None => (0..panel.n_locations()).collect(),
    };
    let explain: Vec<usize> = opts
        .attribution_locations
        .iter()
        .filter_map(|id| panel.location_index(id))
        .filter(|l| targets.contains(l))
        .collect();
    let scales = panel
        .location_ids()
        .iter()
        .map(|id| prep.normalizer.location(id).copied())
        .collect::<Result<Vec<_>>>()?;
    let n = base.lookback;
    let step_labels: Vec<String> = (0..n)
        .map(|s| format!("lag{}", task.horizon + n - 1 - s))
        .collect();

    let mut records = Vec::new();
    let mut maps: Vec<Vec<AttributionMap>> = vec![Vec::new(); explain.len()];
    let mut previous: Option<GruParameters> = None;
    for t in weeks.iter() {
        let Some(row) = batch.index_of_week(t) else {
            continue;
        };
        let n_train = (t + 1)
            .saturating_sub(task.horizon)
            .saturating_sub(batch.weeks[0])
            .min(batch.weeks.len());
        if n_train == 0 {
            continue;
        }
        let fit = || -> Result<GruParameters> {
            let week_seed = substream(opts.seed, &format!("{label}:w{t}"));
            let mut cfg = TrainConfig::from_hyper(&base.gru, week_seed);
            let start = match (&previous, opts.gru_retrain) {
                (Some(p), GruRetrain::Warm) => {
                    cfg.epochs = opts.warm_epochs;
                    p.clone()
                }
                _ => init_gru(dims, substream(opts.seed, &format!("{label}:init:w{t}")))?,
            };
            Ok(train_gru(
                &start,
                &batch.inputs[..n_train],
                &batch.targets[..n_train],
                &cfg,
            )?
            .params)
        };
        let params =
            fit().map_err(|e| e.context(week_context(ModelKind::Gru, "all", task, prep, t)))?;
        let out = predict_gru(&params, &batch.inputs[row])?;
        for &l in &targets {
            records.push(ForecastRecord {
                week: prep.raw.weeks()[t],
                location: panel.location_ids()[l].clone(),
                horizon: task.horizon,
                model: ModelKind::Gru,
                use_queries: task.use_queries,
                predicted: scales[l].inverse(out[l]),
                actual: prep.raw.incidence(l)[t],
            });
        }
        for (slot, &l) in explain.iter().enumerate() {
            let mut m = saliency(&params, &batch.inputs[row], l)?;
            m.row_labels = step_labels.clone();
            m.column_labels = batch.channel_names.clone();
            maps[slot].push(m);
        }
        previous = Some(params);
    }
    records.sort_by_key(|r| r.week);
    let attributions = explain
        .iter()
        .zip(&maps)
        .flat_map(|(&l, m)| average_maps(m, ModelKind::Gru, &panel.location_ids()[l], task.horizon))
        .collect();
    Ok(WalkForwardResult {
        records,
        selected: *base,
        attributions,
    })
}

/// One independent walk-forward run.
#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub spec: ModelSpec,
    pub task: ForecastTask,
}

impl Job {
    pub fn describe(&self) -> String {
        format!(
            "{} h={} {}",
            self.spec.label(),
            self.task.horizon,
            self.task.target.as_deref().unwrap_or("all locations")
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobOutput {
    pub job: Job,
    pub result: WalkForwardResult,
}

/// Every (model, horizon, location) run: tabular models get one job per
/// location, persistence and the recurrent model one job covering all
/// locations.
pub fn plan_jobs(specs: &[ModelSpec], horizons: &[usize], panel: &PanelDataset) -> Vec<Job> {
    let mut jobs = Vec::new();
    for spec in specs {
        for &h in horizons {
            if spec.kind.is_tabular() {
                for id in panel.location_ids() {
                    jobs.push(Job {
                        spec: spec.clone(),
                        task: ForecastTask::new(h, Some(id.clone()), spec.use_queries),
                    });
                }
            } else {
                jobs.push(Job {
                    spec: spec.clone(),
                    task: ForecastTask::new(h, None, spec.use_queries),
                });
            }
        }
    }
    jobs
}

/// Runs jobs concurrently under `opts.execution`; outputs keep job order.
pub fn run_jobs(
    prep: &Prepared,
    jobs: &[Job],
    base: &ModelHyperparams,
    opts: &WalkOptions,
) -> Result<Vec<JobOutput>> {
    par::try_map(opts.execution, jobs, |job| {
        log::info!("running {}", job.describe());
        walk_forward(prep, &job.spec, &job.task, base, opts)
            .map(|result| JobOutput {
                job: job.clone(),
                result,
            })
            .map_err(|e| e.context(job.describe()))
    })
}
