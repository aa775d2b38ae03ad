//! Configuration-driven experiment runs.
//!
//! A run reads or synthesizes a panel, evaluates every configured model at
//! every horizon by walk-forward retraining, and writes
//!
//! ```text
//! <out>/forecasts.csv        week,location,horizon,model,use_queries,predicted,actual
//! <out>/rmse.csv             model,use_queries,horizon,location,rmse
//! <out>/wilcoxon.csv         model,use_queries,horizon,w,p,n_eff,method (when comparisons exist)
//! <out>/attributions/*.csv   coefficients, importances and saliency maps
//! <out>/plots/*.svg          RMSE distributions and attribution figures
//! <out>/data/*.csv           the synthesized panel, when synthesized
//! <out>/manifest.json        written last
//! ```

mod config;
mod run;

pub use config::{DataSource, ExperimentConfig, ModelEntry, Overrides};
pub use run::{
    evaluate_forecasts, plot_directory, run_experiment, Manifest, RankedModel, RunSummary,
};
