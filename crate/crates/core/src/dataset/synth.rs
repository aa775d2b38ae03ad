//! Seeded synthetic panels with planted seasonal, spatial and query structure.
//!
//! Generation order (all draws from one ChaCha8 stream seeded with `seed`):
//!
//! 1. per location `l`: level `b ~ U(0.5, 1.5)`, phase `φ ~ U(-2, 2)`, then for
//!    each of `peaks` epidemic peaks: centre `c ~ U(0, T)`, height
//!    `a ~ U(0.5, 2.0)`, width `w ~ U(2, 5)`;
//! 2. raw signal `b + A·(1 + cos(2π(t − 10 − φ)/52))/2 + Σ a·exp(−(t−c)²/(2w²))`;
//! 3. spatial mixing on a ring: `(1 − m)·raw_l + m·(raw_{l−1} + raw_{l+1})/2`;
//! 4. incidence noise, week-major then location-major: `+ noise·|z|`, `z ~ N(0, 1)`;
//! 5. per query `q` (source location `q mod L`): lag `~ U{0..=query_lag}`
//!    (no draw when `query_lag = 0`), then for each week
//!    `incidence[src][max(t − lag, 0)] + query_noise·|z|`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{IsoWeek, PanelDataset};
use crate::error::{Error, Result};
use crate::seed::{self, RNG_ALGORITHM};

fn default_rng() -> String {
    RNG_ALGORITHM.to_string()
}

fn default_start() -> String {
    "2009-W40".to_string()
}

/// Key-value synthesis settings, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Number of weeks `T`.
    pub weeks: usize,
    /// Number of locations `L`.
    pub locations: usize,
    /// Number of query terms `Q`.
    pub queries: usize,
    pub seasonal_amplitude: f64,
    /// Epidemic peaks per location.
    pub peaks: usize,
    /// Ring-neighbour mixing weight in `[0, 1]`.
    pub mixing: f64,
    /// Scale of the half-normal incidence noise.
    pub noise: f64,
    pub seed: u64,
    /// Generator identifier; only `chacha8` is supported.
    #[serde(default = "default_rng")]
    pub rng: String,
    /// Maximum lag (weeks) of a query behind its source location.
    #[serde(default)]
    pub query_lag: usize,
    /// Query noise scale; defaults to `noise`.
    #[serde(default)]
    pub query_noise: Option<f64>,
    #[serde(default = "default_start")]
    pub start_week: String,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            weeks: 416,
            locations: 37,
            queries: 20,
            seasonal_amplitude: 2.0,
            peaks: 8,
            mixing: 0.5,
            noise: 0.1,
            seed: 7,
            rng: default_rng(),
            query_lag: 0,
            query_noise: None,
            start_week: default_start(),
        }
    }
}

impl SynthesisConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    fn validate(&self) -> Result<IsoWeek> {
        if self.weeks == 0 || self.locations == 0 {
            return Err(Error::Config("weeks and locations must be positive".into()));
        }
        if self.rng != RNG_ALGORITHM {
            return Err(Error::Config(format!(
                "unsupported rng `{}`, expected `{RNG_ALGORITHM}`",
                self.rng
            )));
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return Err(Error::Config("mixing must lie in [0, 1]".into()));
        }
        let noise = self.query_noise.unwrap_or(self.noise);
        if !(self.noise >= 0.0 && noise >= 0.0 && self.seasonal_amplitude >= 0.0) {
            return Err(Error::Config(
                "noise and amplitude must be non-negative".into(),
            ));
        }
        self.start_week
            .parse()
            .map_err(|_| Error::Config(format!("invalid start_week `{}`", self.start_week)))
    }
}

/// Ring neighbours of `location` among `n` locations (deduplicated).
pub fn ring_neighbors(location: usize, n: usize) -> Vec<usize> {
    if n < 2 {
        return Vec::new();
    }
    let mut out = vec![(location + n - 1) % n, (location + 1) % n];
    out.dedup();
    out
}

struct Peak {
    centre: f64,
    height: f64,
    width: f64,
}

pub fn synthesize_panel(config: &SynthesisConfig, seed: u64) -> Result<PanelDataset> {
    let start = config.validate()?;
    let (t_len, n_loc) = (config.weeks, config.locations);
    let mut rng = seed::rng(seed);

    let mut raw = Vec::with_capacity(n_loc);
    for _ in 0..n_loc {
        let level: f64 = rng.random_range(0.5..1.5);
        let phase: f64 = rng.random_range(-2.0..2.0);
        let peaks: Vec<Peak> = (0..config.peaks)
            .map(|_| Peak {
                centre: rng.random_range(0.0..t_len as f64),
                height: rng.random_range(0.5..2.0),
                width: rng.random_range(2.0..5.0),
            })
            .collect();
        let series: Vec<f64> = (0..t_len)
            .map(|t| {
                let t = t as f64;
                let season = 0.5 * (1.0 + (2.0 * PI * (t - 10.0 - phase) / 52.0).cos());
                let epidemic: f64 = peaks
                    .iter()
                    .map(|p| p.height * (-(t - p.centre).powi(2) / (2.0 * p.width * p.width)).exp())
                    .sum();
                level + config.seasonal_amplitude * season + epidemic
            })
            .collect();
        raw.push(series);
    }

    let mut incidence: Vec<Vec<f64>> = (0..n_loc)
        .map(|l| {
            let neighbours = ring_neighbors(l, n_loc);
            (0..t_len)
                .map(|t| {
                    if neighbours.is_empty() {
                        return raw[l][t];
                    }
                    let nb = neighbours.iter().map(|&j| raw[j][t]).sum::<f64>()
                        / neighbours.len() as f64;
                    (1.0 - config.mixing) * raw[l][t] + config.mixing * nb
                })
                .collect()
        })
        .collect();
    for t in 0..t_len {
        for series in incidence.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            series[t] += config.noise * z.abs();
        }
    }

    let query_noise = config.query_noise.unwrap_or(config.noise);
    let queries: Vec<Vec<f64>> = (0..config.queries)
        .map(|q| {
            let src = &incidence[q % n_loc];
            let lag = if config.query_lag > 0 {
                rng.random_range(0..=config.query_lag)
            } else {
                0
            };
            (0..t_len)
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    src[t.saturating_sub(lag)] + query_noise * z.abs()
                })
                .collect()
        })
        .collect();

    let weeks = (0..t_len as i64).map(|i| start.plus_weeks(i)).collect();
    PanelDataset::new(
        weeks,
        (0..n_loc).map(|l| format!("loc{l:02}")).collect(),
        incidence,
        (0..config.queries).map(|q| format!("term{q:02}")).collect(),
        queries,
    )
}
