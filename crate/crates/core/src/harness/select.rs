use super::walk::{fit_tabular, Prepared, TabularInputs};
use super::{ModelKind, ModelSpec};
use crate::dataset::WeekRange;
use crate::error::{Error, Result};
use crate::features::{ForecastTask, ModelHyperparams};
use crate::par::{self, Execution};
use crate::seed::substream;
use crate::stats::{mean, rmse};

const FOLDS: usize = 4;
/// Relative score difference below which two candidates count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

/// Four-fold cross-validated choice among [`ModelSpec::candidates`].
///
/// Examples whose target week lies in `range` are cut into four contiguous
/// chronological folds. Each candidate is scored by its mean validation
/// RMSE, training on the other three folds each time. The lowest score wins;
/// scores within a relative `1e-9` of each other tie, and ties go to the
/// earlier (smaller) candidate. Kinds without a grid,
/// and single-candidate grids, return immediately.
pub fn select_hyperparams(
    prep: &Prepared,
    spec: &ModelSpec,
    task: &ForecastTask,
    base: &ModelHyperparams,
    range: WeekRange,
    seed: u64,
    exec: Execution,
) -> Result<ModelHyperparams> {
    let panel = &prep.normalized;
    let candidates = spec.candidates(base, panel.n_locations(), panel.n_queries())?;
    if candidates.len() == 1 || !spec.kind.is_tabular() {
        return Ok(candidates[0]);
    }
    let target = task
        .target
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("{} needs a target location", spec.kind)))?;
    let inputs = TabularInputs::new(prep, target)?;
    let label = format!(
        "cv:{}:{}:h{}:{target}",
        spec.kind, task.use_queries as u8, task.horizon
    );

    let scores = par::try_map(exec, &candidates, |hyper| {
        score(
            prep,
            &inputs,
            spec.kind,
            task,
            hyper,
            range,
            substream(seed, &label),
            exec,
        )
    })?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] * (1.0 - TIE_TOLERANCE) {
            best = i;
        }
    }
    log::debug!(
        "{label}: selected candidate {best} of {} (cv rmse {})",
        candidates.len(),
        scores[best]
    );
    Ok(candidates[best])
}

#[allow(clippy::too_many_arguments)]
fn score(
    prep: &Prepared,
    inputs: &TabularInputs,
    kind: ModelKind,
    task: &ForecastTask,
    hyper: &ModelHyperparams,
    range: WeekRange,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let design = inputs.design(prep, kind, task, hyper)?;
    let rows: Vec<_> = design
        .rows
        .iter()
        .filter(|r| range.contains(r.week))
        .collect();
    let n = rows.len();
    if n < FOLDS {
        return Err(Error::InsufficientHistory(format!(
            "{n} examples in weeks {}..{} cannot form {FOLDS} folds",
            range.start, range.end
        )));
    }
    let bounds: Vec<usize> = (0..=FOLDS).map(|k| k * n / FOLDS).collect();
    let mut fold_rmse = Vec::with_capacity(FOLDS);
    for k in 0..FOLDS {
        let (lo, hi) = (bounds[k], bounds[k + 1]);
        let train: Vec<_> = rows[..lo].iter().chain(&rows[hi..]).collect();
        let x: Vec<Vec<f64>> = train.iter().map(|r| r.features.clone()).collect();
        let y: Vec<f64> = train.iter().map(|r| r.target).collect();
        let fold_seed = substream(seed, &format!("fold{k}"));
        let model = fit_tabular(
            kind,
            hyper,
            &x,
            &y,
            &design.feature_names,
            fold_seed,
            None,
            exec,
        )?;
        let pred = rows[lo..hi]
            .iter()
            .map(|r| model.predict(&r.features))
            .collect::<Result<Vec<_>>>()?;
        let actual: Vec<f64> = rows[lo..hi].iter().map(|r| r.target).collect();
        fold_rmse.push(rmse(&pred, &actual)?);
    }
    Ok(mean(&fold_rmse))
}
