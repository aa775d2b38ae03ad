//! Multi-location influenza nowcasting.
//!
//! Five model families are provided, each usable with or without exogenous
//! search-query channels:
//!
//! - persistence (last observed value carried `h` weeks forward),
//! - lasso autoregression on the target location's lags (AR),
//! - networked lasso autoregression over correlated locations (LR),
//! - random forest on the LR predictors (RF),
//! - a single-layer gated recurrent unit predicting all locations at once (GRU).
//!
//! Models are evaluated by walk-forward retraining over the test half of a
//! panel, scored by per-location RMSE, and compared against persistence with
//! the Wilcoxon signed-rank test. Coefficients, impurity importances and
//! gradient saliency maps are exported for interpretation.
//!
//! Data-parallel work (trees, cross-validation candidates, per-location
//! walk-forward runs) goes through [`par`]; with the `parallel` feature
//! disabled every [`Execution`] runs sequentially and results are identical.

pub mod attribution;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod features;
pub mod forest;
pub mod gru;
pub mod harness;
pub mod lasso;
pub mod par;
pub mod plot;
pub mod report;
pub mod seed;
pub mod stats;

pub use attribution::{AttributionKind, AttributionMap};
pub use dataset::{IsoWeek, NormalizationParams, PanelDataset, SplitSpec, WeekRange};
pub use error::{Error, ErrorKind, Result};
pub use features::{Count, ForecastTask, ModelHyperparams};
pub use harness::{ForecastRecord, ModelKind, ModelSpec};
pub use par::Execution;
