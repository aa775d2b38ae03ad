use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::attribution::AttributionMap;
use crate::dataset::save_panel_csv;
use crate::error::{Error, Result};
use crate::features::ModelHyperparams;
use crate::harness::{plan_jobs, run_jobs, GruRetrain, ModelKind, Prepared, WalkOptions};
use crate::par::{self, Execution};
use crate::plot::emit_plots;
use crate::report::{
    attribution_file_name, open, read_attribution, read_forecasts, read_rmse, save, sort_records,
    write_attribution, write_forecasts, write_rmse, write_wilcoxon,
};
use crate::seed::RNG_ALGORITHM;
use crate::stats::{evaluate, EvaluationReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedModel {
    pub model: ModelKind,
    pub use_queries: bool,
    pub median_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRanking {
    pub horizon: usize,
    /// Ascending median per-location RMSE.
    pub ranking: Vec<RankedModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub model: ModelKind,
    pub use_queries: bool,
    pub horizon: usize,
    pub location: Option<String>,
    pub hyper: ModelHyperparams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelSummary {
    pub weeks: usize,
    pub locations: usize,
    pub queries: usize,
    pub first_week: String,
    pub last_week: String,
    pub train_weeks: usize,
    pub test_weeks: usize,
}

/// Everything needed to reproduce a run. Contains no timestamps, so
/// identical configurations give identical manifests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub complete: bool,
    pub error: Option<String>,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub rng: String,
    pub versions: BTreeMap<String, String>,
    pub gru_retrain: GruRetrain,
    pub panel: PanelSummary,
    pub selected: Vec<Selection>,
    pub median_rmse_order: Vec<HorizonRanking>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub report: EvaluationReport,
}

struct Outputs<'a> {
    root: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        self.files.push(rel.to_string());
        Ok(p)
    }
}

fn ranking(report: &EvaluationReport) -> Vec<HorizonRanking> {
    report
        .horizons()
        .into_iter()
        .map(|h| {
            let mut ranking: Vec<RankedModel> = report
                .rmse
                .keys()
                .filter(|k| k.horizon == h)
                .filter_map(|k| {
                    report.median_rmse(k).map(|m| RankedModel {
                        model: k.model,
                        use_queries: k.use_queries,
                        median_rmse: m,
                    })
                })
                .collect();
            ranking.sort_by(|a, b| a.median_rmse.total_cmp(&b.median_rmse));
            HorizonRanking {
                horizon: h,
                ranking,
            }
        })
        .collect()
}

/// Runs the configured experiment, resolving relative data paths against
/// `base_dir`. On failure after the output directory exists, a manifest
/// with `complete = false` and the error message is still written.
pub fn run_experiment(config: &ExperimentConfig, base_dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    let out_dir = config
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    fs::create_dir_all(&out_dir)?;
    let mut manifest = Manifest {
        complete: false,
        error: None,
        config_sha256: config.hash()?,
        config: config.clone(),
        seed: config.seed,
        rng: RNG_ALGORITHM.to_string(),
        versions: BTreeMap::from([(
            env!("CARGO_PKG_NAME").to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        )]),
        gru_retrain: config.gru_retrain,
        panel: PanelSummary::default(),
        selected: Vec::new(),
        median_rmse_order: Vec::new(),
        files: Vec::new(),
    };
    let mut outputs = Outputs {
        root: &out_dir,
        files: Vec::new(),
    };
    let result = if config.jobs > 0 {
        par::with_threads(config.jobs, || {
            execute(config, base_dir, &mut outputs, &mut manifest)
        })
    } else {
        execute(config, base_dir, &mut outputs, &mut manifest)
    };
    manifest.files = outputs.files;
    match result {
        Ok(report) => {
            manifest.complete = true;
            fs::write(
                out_dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest)?,
            )?;
            Ok(RunSummary {
                out_dir,
                manifest,
                report,
            })
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            if let Ok(text) = serde_json::to_string_pretty(&manifest) {
                let _ = fs::write(out_dir.join("manifest.json"), text);
            }
            Err(e)
        }
    }
}

fn execute(
    config: &ExperimentConfig,
    base_dir: &Path,
    out: &mut Outputs<'_>,
    manifest: &mut Manifest,
) -> Result<EvaluationReport> {
    let panel = config.data.load(base_dir)?;
    if config.data.is_synthetic() {
        let inc = out.path("data/incidence.csv")?;
        let q = if panel.n_queries() > 0 {
            Some(out.path("data/queries.csv")?)
        } else {
            None
        };
        save_panel_csv(&panel, &inc, q.as_deref())?;
    }
    let prep = Prepared::from_fraction(panel, config.train_fraction)?;
    manifest.panel = PanelSummary {
        weeks: prep.raw.len(),
        locations: prep.raw.n_locations(),
        queries: prep.raw.n_queries(),
        first_week: prep.raw.weeks()[0].to_string(),
        last_week: prep.raw.weeks()[prep.raw.len() - 1].to_string(),
        train_weeks: prep.split.train.len(),
        test_weeks: prep.split.test.len(),
    };
    let attribution_locations = match &config.attribution_locations {
        Some(ids) => {
            for id in ids {
                if prep.raw.location_index(id).is_none() {
                    return Err(Error::Config(format!(
                        "attribution location `{id}` is not in the panel"
                    )));
                }
            }
            ids.clone()
        }
        None => vec![prep.raw.location_ids()[0].clone()],
    };
    let specs = config.specs();
    for s in &specs {
        s.candidates(&config.hyper, prep.raw.n_locations(), prep.raw.n_queries())?;
    }
    let opts = WalkOptions {
        seed: config.seed,
        gru_retrain: config.gru_retrain,
        warm_epochs: config.warm_epochs,
        reselect_every: config.reselect_every,
        last_week: None,
        execution: Execution::Parallel,
        attribution_locations,
    };
    let jobs = plan_jobs(&specs, &config.horizons, &prep.raw);
    log::info!(
        "{} walk-forward jobs over {} test weeks",
        jobs.len(),
        prep.split.test.len()
    );
    let outputs = run_jobs(&prep, &jobs, &config.hyper, &opts)?;

    let mut records = Vec::new();
    let mut maps: Vec<(bool, AttributionMap)> = Vec::new();
    for o in outputs {
        if o.job.spec.kind != ModelKind::Persistence {
            manifest.selected.push(Selection {
                model: o.job.spec.kind,
                use_queries: o.job.spec.use_queries,
                horizon: o.job.task.horizon,
                location: o.job.task.target.clone(),
                hyper: o.result.selected,
            });
        }
        records.extend(o.result.records);
        maps.extend(
            o.result
                .attributions
                .into_iter()
                .map(|m| (o.job.spec.use_queries, m)),
        );
    }
    sort_records(&mut records);
    save(&out.path("forecasts.csv")?, |f| {
        write_forecasts(f, &records)
    })?;

    let report = evaluate(&records)?;
    save(&out.path("rmse.csv")?, |f| write_rmse(f, &report))?;
    if !report.wilcoxon.is_empty() {
        save(&out.path("wilcoxon.csv")?, |f| write_wilcoxon(f, &report))?;
    }
    manifest.median_rmse_order = ranking(&report);

    let mut figures = Vec::new();
    for (q, map) in &maps {
        let name = attribution_file_name(map, *q);
        save(&out.path(&format!("attributions/{name}"))?, |f| {
            write_attribution(f, map)
        })?;
        figures.push((name.trim_end_matches(".csv").to_string(), map.clone()));
    }
    let written = emit_plots(&report, &figures, &out.root.join("plots"))?;
    for p in written {
        if let Ok(rel) = p.strip_prefix(out.root) {
            out.files.push(rel.to_string_lossy().into_owned());
        }
    }
    Ok(report)
}

/// Scores a forecast log and writes `rmse.csv` and, when comparisons
/// exist, `wilcoxon.csv` into `out_dir`.
pub fn evaluate_forecasts(forecasts: &Path, out_dir: &Path) -> Result<EvaluationReport> {
    let records = read_forecasts(open(forecasts)?)?;
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} holds no forecasts",
            forecasts.display()
        )));
    }
    let report = evaluate(&records)?;
    fs::create_dir_all(out_dir)?;
    save(&out_dir.join("rmse.csv"), |f| write_rmse(f, &report))?;
    if !report.wilcoxon.is_empty() {
        save(&out_dir.join("wilcoxon.csv"), |f| {
            write_wilcoxon(f, &report)
        })?;
    }
    Ok(report)
}

/// Inverse of [`attribution_file_name`]: `(model, horizon, location)`.
fn parse_attribution_stem(stem: &str) -> Option<(String, usize, String)> {
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() < 4 {
        return None;
    }
    let model = parts[0].trim_end_matches("+q").to_string();
    let horizon = parts[1].strip_prefix('h')?.parse().ok()?;
    let location = parts[2..parts.len() - 1].join("_");
    Some((model, horizon, location))
}

/// Redraws every figure from a run directory's `rmse.csv` and
/// `attributions/` into `out_dir`.
pub fn plot_directory(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let report = read_rmse(open(&run_dir.join("rmse.csv"))?)?;
    let mut figures = Vec::new();
    let attr_dir = run_dir.join("attributions");
    if attr_dir.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(&attr_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        entries.sort();
        for path in entries {
            let stem = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let mut map = read_attribution(open(&path)?)?;
            if let Some((model, horizon, location)) = parse_attribution_stem(&stem) {
                map = map.with_context(model, location, horizon);
            }
            figures.push((stem, map));
        }
    }
    emit_plots(&report, &figures, out_dir)
}
