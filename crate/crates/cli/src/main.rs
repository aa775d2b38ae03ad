//! `nowcast`: synthesize panels, run walk-forward experiments, rescore
//! forecast logs and redraw figures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nowcast::dataset::{save_panel_csv, synthesize_panel, SynthesisConfig};
use nowcast::experiment::{
    evaluate_forecasts, plot_directory, run_experiment, ExperimentConfig, Overrides,
};
use nowcast::harness::GruRetrain;
use nowcast::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "nowcast",
    version,
    about = "Multi-location influenza nowcasting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic incidence and query panel.
    Synth(SynthArgs),
    /// Run a full experiment from a TOML config.
    Run(RunArgs),
    /// Recompute RMSE and Wilcoxon tables from a forecast log.
    Evaluate(EvaluateArgs),
    /// Redraw figures from a run directory.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Synthesis settings; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_parser = ["full", "warm"])]
    gru_retrain: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Forecast log written by `run`.
    forecasts: PathBuf,
    /// Defaults to the directory holding the forecast log.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Directory holding `rmse.csv` and `attributions/`.
    run_dir: PathBuf,
    /// Defaults to `<run_dir>/plots`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn synth(args: SynthArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) if !p.exists() => {
            return Err(Error::Config(format!(
                "config file {} not found",
                p.display()
            )))
        }
        Some(p) => SynthesisConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => SynthesisConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let panel = synthesize_panel(&cfg, cfg.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let queries = args.out.join("queries.csv");
    save_panel_csv(
        &panel,
        &args.out.join("incidence.csv"),
        (panel.n_queries() > 0).then_some(queries.as_path()),
    )?;
    log::info!(
        "wrote {} weeks x {} locations, {} queries to {}",
        panel.len(),
        panel.n_locations(),
        panel.n_queries(),
        args.out.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    let gru_retrain = args
        .gru_retrain
        .as_deref()
        .map(str::parse::<GruRetrain>)
        .transpose()?;
    cfg.apply(&Overrides {
        seed: args.seed,
        output: args.out,
        jobs: args.jobs,
        gru_retrain,
    });
    if cfg.output.is_none() {
        cfg.output = Some(PathBuf::from("nowcast-out"));
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let summary = run_experiment(&cfg, base)?;
    for h in &summary.manifest.median_rmse_order {
        let order: Vec<String> = h
            .ranking
            .iter()
            .map(|r| {
                format!(
                    "{}{} {:.4}",
                    r.model,
                    if r.use_queries { "+q" } else { "" },
                    r.median_rmse
                )
            })
            .collect();
        println!("h={}: {}", h.horizon, order.join(", "));
    }
    println!("outputs in {}", summary.out_dir.display());
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| {
        args.forecasts
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    });
    let report = evaluate_forecasts(&args.forecasts, &out)?;
    println!(
        "{} score groups, {} comparisons written to {}",
        report.rmse.len(),
        report.wilcoxon.len(),
        out.display()
    );
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| args.run_dir.join("plots"));
    let files = plot_directory(&args.run_dir, &out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Run(a) => run(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
