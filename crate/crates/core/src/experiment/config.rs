use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_panel_csv, synthesize_panel, PanelDataset, SynthesisConfig};
use crate::error::{Error, Result};
use crate::features::ModelHyperparams;
use crate::harness::{GruRetrain, HyperGrid, ModelKind, ModelSpec};

/// Either CSV files or a synthesis recipe.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub incidence: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub synthesis: Option<SynthesisConfig>,
}

impl DataSource {
    /// Relative paths are resolved against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<PanelDataset> {
        match (&self.incidence, &self.synthesis) {
            (Some(inc), None) => {
                let q = self.queries.as_ref().map(|p| base_dir.join(p));
                load_panel_csv(&base_dir.join(inc), q.as_deref())
            }
            (None, Some(s)) => synthesize_panel(s, s.seed),
            _ => Err(Error::Config(
                "data needs exactly one of `incidence` or `synthesis`".into(),
            )),
        }
    }

    pub fn is_synthetic(&self) -> bool {
        self.synthesis.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub kind: ModelKind,
    #[serde(default)]
    pub use_queries: bool,
    pub grid: Option<HyperGrid>,
}

impl ModelEntry {
    pub fn spec(&self) -> ModelSpec {
        ModelSpec::new(self.kind, self.use_queries).with_grid(self.grid.clone().unwrap_or_default())
    }
}

fn default_horizons() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

fn default_fraction() -> f64 {
    0.5
}

fn default_warm_epochs() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub models: Vec<ModelEntry>,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub gru_retrain: GruRetrain,
    #[serde(default = "default_warm_epochs")]
    pub warm_epochs: usize,
    pub reselect_every: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    /// Locations whose attributions are exported. Defaults to the first
    /// location of the panel.
    pub attribution_locations: Option<Vec<String>>,
    #[serde(default)]
    pub hyper: ModelHyperparams,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub gru_retrain: Option<GruRetrain>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Config(format!(
                "config file {} not found",
                path.display()
            )));
        }
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.output {
            self.output = Some(p.clone());
        }
        if let Some(j) = o.jobs {
            self.jobs = j;
        }
        if let Some(m) = o.gru_retrain {
            self.gru_retrain = m;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return Err(Error::Config(
                "horizons must be a non-empty list of positive weeks".into(),
            ));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if self.reselect_every == Some(0) {
            return Err(Error::Config("reselect_every must be positive".into()));
        }
        if self.data.incidence.is_some() == self.data.synthesis.is_some() {
            return Err(Error::Config(
                "data needs exactly one of `incidence` or `synthesis`".into(),
            ));
        }
        if self.data.queries.is_some() && self.data.incidence.is_none() {
            return Err(Error::Config("`queries` requires `incidence`".into()));
        }
        self.hyper.validate()
    }

    pub fn specs(&self) -> Vec<ModelSpec> {
        self.models.iter().map(ModelEntry::spec).collect()
    }

    /// SHA-256 of the canonical JSON form of the effective configuration,
    /// leaving out the output directory and thread count, which do not
    /// change any result.
    pub fn hash(&self) -> Result<String> {
        let mut identity = self.clone();
        identity.output = None;
        identity.jobs = 0;
        let json = serde_json::to_vec(&identity)?;
        Ok(hex::encode(Sha256::digest(&json)))
    }
}
