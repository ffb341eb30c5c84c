mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prefgeo_core::{Error, Estimator};

use commands::{Context, Study};
use config::{Method, RunConfig};

#[derive(Parser)]
#[command(
    name = "prefgeo",
    version,
    about = "Preferential-sampling geostatistics: simulate, fit, predict, evaluate"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Analysis grid size.
    #[arg(long, global = true, num_args = 2, value_names = ["NX", "NY"])]
    grid: Option<Vec<usize>>,
    /// Replicate count for reproduce.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Worker threads for reproduce.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a preferentially sampled dataset and its true surfaces.
    Simulate,
    /// Fit the model to a dataset.
    Fit {
        #[arg(long)]
        estimator: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict the latent surface on the analysis grid.
    Predict {
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Parameter JSON or fit report.
        #[arg(long)]
        theta: Option<PathBuf>,
        #[arg(long)]
        heatmap: bool,
    },
    /// Score a predicted surface against the truth.
    Evaluate {
        #[arg(long)]
        predicted: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run one of the simulation studies.
    Reproduce {
        #[arg(value_enum)]
        study: Study,
    },
}

fn load(cli: &Cli) -> prefgeo_core::Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::from_json(&std::fs::read(p)?)?,
        None => RunConfig::default(),
    };
    let c = &cli.common;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
        cfg.prediction_study.base_seed = seed;
        cfg.comparison_study.base_seed = seed;
        cfg.timing_study.seed = seed;
    }
    if let Some(g) = &c.grid {
        let (nx, ny) = (g[0], g[1]);
        cfg.grid = (nx, ny);
        cfg.simulation.pred_nx = nx;
        cfg.simulation.pred_ny = ny;
        cfg.prediction_study.simulation.pred_nx = nx;
        cfg.prediction_study.simulation.pred_ny = ny;
        cfg.comparison_study.simulation.pred_nx = nx;
        cfg.comparison_study.simulation.pred_ny = ny;
        cfg.timing_study.grids = vec![(nx, ny)];
    }
    if let Some(r) = c.replicates {
        cfg.prediction_study.replicates = r;
        cfg.comparison_study.replicates = r;
    }
    if c.workers.is_some() {
        cfg.workers = c.workers;
    }
    match &cli.command {
        Command::Fit { estimator, data } => {
            if let Some(e) = estimator {
                cfg.estimator = e.parse::<Estimator>()?;
            }
            if data.is_some() {
                cfg.data = data.clone();
            }
        }
        Command::Predict {
            method,
            data,
            theta,
            heatmap,
        } => {
            if let Some(m) = method {
                cfg.predict.method = m.parse::<Method>()?;
            }
            if data.is_some() {
                cfg.data = data.clone();
            }
            if theta.is_some() {
                cfg.theta = theta.clone();
            }
            cfg.predict.heatmap |= *heatmap;
        }
        Command::Evaluate { predicted, truth } => {
            if predicted.is_some() {
                cfg.predicted = predicted.clone();
            }
            if truth.is_some() {
                cfg.truth = truth.clone();
            }
        }
        Command::Simulate | Command::Reproduce { .. } => {}
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> prefgeo_core::Result<()> {
    let cfg = load(cli)?;
    std::fs::create_dir_all(&cli.common.out_dir)?;
    let ctx = Context {
        cfg,
        out_dir: cli.common.out_dir.clone(),
    };
    match &cli.command {
        Command::Simulate => commands::simulate(&ctx),
        Command::Fit { .. } => commands::fit_cmd(&ctx),
        Command::Predict { .. } => commands::predict(&ctx),
        Command::Evaluate { .. } => commands::evaluate_cmd(&ctx),
        Command::Reproduce { study } => commands::reproduce(&ctx, *study),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        4
    } else if matches!(e, Error::Config(_) | Error::ParamDomain(_)) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
