//! Error metrics, correlation and the Wilcoxon signed-rank test.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_len, Error, Result};
use crate::harness::{ForecastRecord, ModelKind};

/// Largest `n_eff` for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 25;

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_len(predicted.len(), actual.len())?;
    if predicted.is_empty() {
        return Err(Error::InvalidArgument("rmse of empty lists".into()));
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / predicted.len() as f64).sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    })
}

/// Product-moment correlation. Fails with [`Error::ZeroVariance`] when either
/// input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two points".into(),
        ));
    }
    let constant = |x: &[f64]| x.iter().all(|v| *v == x[0]);
    if constant(a) || constant(b) {
        return Err(Error::ZeroVariance);
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WilcoxonMethod {
    #[serde(rename = "exact")]
    Exact,
    #[serde(rename = "normal-approximation")]
    NormalApproximation,
}

impl fmt::Display for WilcoxonMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WilcoxonMethod::Exact => "exact",
            WilcoxonMethod::NormalApproximation => "normal-approximation",
        })
    }
}

impl std::str::FromStr for WilcoxonMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(WilcoxonMethod::Exact),
            "normal-approximation" => Ok(WilcoxonMethod::NormalApproximation),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub w_statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided.
    pub p_value: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
}

/// Upper bound of `min(W+, W-)` for `n` nonzero differences: `n(n+1)/4`.
pub fn max_statistic(n_effective: usize) -> f64 {
    let n = n_effective as f64;
    n * (n + 1.0) / 4.0
}

/// Average ranks (1-based) of `values`, plus whether any ties occurred.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        if j - i > 1 {
            tie_sizes.push(j - i);
        }
        i = j;
    }
    (ranks, tie_sizes)
}

/// Paired two-sided signed-rank test on `a − b`, choosing the exact null
/// distribution for small untied samples and the normal approximation
/// otherwise.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(a, b, None)
}

/// As [`wilcoxon_signed_rank`], optionally forcing the p-value method.
pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    method: Option<WilcoxonMethod>,
) -> Result<WilcoxonResult> {
    check_len(a.len(), b.len())?;
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite paired difference".into(),
        ));
    }
    let n = diffs.len();
    if n == 0 {
        return Err(Error::NoEffectiveDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_minus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d < 0.0)
        .map(|(_, r)| r)
        .sum();
    let w = w_plus.min(w_minus);
    let method = method.unwrap_or(if n <= EXACT_MAX_N && ties.is_empty() {
        WilcoxonMethod::Exact
    } else {
        WilcoxonMethod::NormalApproximation
    });
    let p_value = match method {
        WilcoxonMethod::Exact => exact_p(&ranks, w),
        WilcoxonMethod::NormalApproximation => normal_p(n, &ties, w),
    };
    Ok(WilcoxonResult {
        w_statistic: w,
        w_plus,
        w_minus,
        p_value,
        n_effective: n,
        method,
    })
}

/// `min(1, 2·P(W ≤ w))` under the null that each rank's sign is a fair coin.
/// Ranks are doubled so tied (half-integer) ranks stay integral.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut dist = vec![0.0f64; total + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let p = dist[s] * 0.5;
            dist[s] = p;
            dist[s + r] += p;
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let cdf: f64 = dist[..=limit.min(total)].iter().sum();
    (2.0 * cdf).min(1.0)
}

fn normal_p(n: usize, ties: &[usize], w: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean + 0.5).min(0.0)) / var.sqrt();
    let phi = Normal::standard().cdf(z);
    (2.0 * phi).min(1.0)
}

/// Identifies one evaluated configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelKey {
    pub model: ModelKind,
    pub use_queries: bool,
    pub horizon: usize,
}

/// Per-location RMSE distributions and signed-rank comparisons against
/// persistence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvaluationReport {
    /// Location-sorted RMSE per configuration.
    pub rmse: BTreeMap<ModelKey, Vec<(String, f64)>>,
    pub wilcoxon: BTreeMap<ModelKey, WilcoxonResult>,
}

impl EvaluationReport {
    pub fn is_empty(&self) -> bool {
        self.rmse.is_empty()
    }

    pub fn horizons(&self) -> Vec<usize> {
        let mut h: Vec<usize> = self.rmse.keys().map(|k| k.horizon).collect();
        h.sort_unstable();
        h.dedup();
        h
    }

    pub fn median_rmse(&self, key: &ModelKey) -> Option<f64> {
        let v: Vec<f64> = self.rmse.get(key)?.iter().map(|(_, r)| *r).collect();
        median(&v)
    }

    fn persistence_for(&self, horizon: usize) -> Option<&Vec<(String, f64)>> {
        [false, true].iter().find_map(|&q| {
            self.rmse.get(&ModelKey {
                model: ModelKind::Persistence,
                use_queries: q,
                horizon,
            })
        })
    }

    /// Rebuilds the signed-rank table from the RMSE table. Configurations
    /// where every location ties persistence exactly are skipped.
    pub fn compare_to_persistence(&mut self) -> Result<()> {
        let mut table = BTreeMap::new();
        for (key, values) in &self.rmse {
            if key.model == ModelKind::Persistence {
                continue;
            }
            let Some(base) = self.persistence_for(key.horizon) else {
                continue;
            };
            let base: BTreeMap<&str, f64> = base.iter().map(|(l, r)| (l.as_str(), *r)).collect();
            let (a, b): (Vec<f64>, Vec<f64>) = values
                .iter()
                .filter_map(|(l, r)| base.get(l.as_str()).map(|p| (*r, *p)))
                .unzip();
            if a.is_empty() {
                continue;
            }
            match wilcoxon_signed_rank(&a, &b) {
                Ok(res) => {
                    table.insert(*key, res);
                }
                Err(Error::NoEffectiveDifferences) => {
                    log::warn!("{key:?}: identical to persistence at every location, no test");
                }
                Err(e) => return Err(e),
            }
        }
        self.wilcoxon = table;
        Ok(())
    }
}

/// Scores forecast records: one RMSE per (configuration, location), then
/// signed-rank tests of each non-persistence configuration against
/// persistence at the same horizon.
pub fn evaluate(records: &[ForecastRecord]) -> Result<EvaluationReport> {
    let mut groups: BTreeMap<ModelKey, BTreeMap<&str, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for r in records {
        let key = ModelKey {
            model: r.model,
            use_queries: r.use_queries,
            horizon: r.horizon,
        };
        let entry = groups
            .entry(key)
            .or_default()
            .entry(&r.location)
            .or_default();
        entry.0.push(r.predicted);
        entry.1.push(r.actual);
    }
    let mut report = EvaluationReport::default();
    for (key, locs) in groups {
        let mut v = Vec::with_capacity(locs.len());
        for (loc, (p, a)) in locs {
            v.push((loc.to_string(), rmse(&p, &a)?));
        }
        report.rmse.insert(key, v);
    }
    report.compare_to_persistence()?;
    Ok(report)
}
