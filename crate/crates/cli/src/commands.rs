use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use prefgeo_core::estimators::{default_init, fit};
use prefgeo_core::io::{
    fmt_f64, read_dataset_file, read_field, read_params, write_chain, write_dataset, write_field, write_heatmap,
    write_json, write_trace, OutputHeader,
};
use prefgeo_core::predictor::{krige_field, predict_s, predict_s_mode, predict_y, sample_predictive};
use prefgeo_core::studies::{run_comparison_study, run_prediction_study, run_timing_study, ParamQuantiles};
use prefgeo_core::{evaluate, Error, LatentField, Result, Simulator, SpatialGrid};

use crate::config::{Method, RunConfig};

/// Sidecar written next to every run's outputs.
#[derive(Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    seed: u64,
    config_hash: String,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

pub struct Context {
    pub cfg: RunConfig,
    pub out_dir: PathBuf,
}

impl Context {
    fn header(&self) -> OutputHeader {
        OutputHeader::new(self.cfg.hash(), self.cfg.seed)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    fn record(&self, command: &str, warnings: Vec<String>) -> Result<()> {
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        write_json(
            &self.path("run.json"),
            &RunRecord {
                command,
                seed: self.cfg.seed,
                config_hash: self.cfg.hash(),
                config: &self.cfg,
                warnings,
            },
        )
    }

    fn write_surface(&self, name: &str, grid: &SpatialGrid, values: &[f64]) -> Result<()> {
        let mut w = self.create(&format!("{name}.csv"))?;
        write_field(&mut w, grid, values, &self.header())?;
        w.flush()?;
        if self.cfg.predict.heatmap {
            write_heatmap(&self.path(name), grid, values)?;
        }
        Ok(())
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing {what} path (flag or config)")))
}

pub fn simulate(ctx: &Context) -> Result<()> {
    let simulator = Simulator::new(&ctx.cfg.simulation)?;
    let sim = simulator.simulate(ctx.cfg.seed)?;
    let header = ctx.header();
    let mut w = ctx.create("dataset.csv")?;
    write_dataset(&mut w, &sim.dataset, &header)?;
    w.flush()?;
    ctx.write_surface("field_sim", simulator.simulation_grid(), sim.field_sim.values())?;
    ctx.write_surface("field_pred", simulator.prediction_grid(), sim.field_pred.values())?;
    write_json(&ctx.path("grid_sim.json"), &simulator.simulation_grid().spec())?;
    write_json(&ctx.path("grid_pred.json"), &simulator.prediction_grid().spec())?;
    ctx.record("simulate", Vec::new())
}

pub fn fit_cmd(ctx: &Context) -> Result<()> {
    let grid = ctx.cfg.analysis_grid()?;
    let data = read_dataset_file(required(&ctx.cfg.data, "dataset")?, &grid)?;
    let init = default_init(&data, &grid, &ctx.cfg.fit.options)?;
    let report = fit(ctx.cfg.estimator, &data, &grid, &init, &ctx.cfg.fit, ctx.cfg.seed)?;
    write_json(&ctx.path("fit.json"), &report.without_timing())?;
    let mut w = ctx.create("trace.csv")?;
    write_trace(&mut w, &report, &ctx.header())?;
    w.flush()?;
    println!(
        "{}: mu={} tau2={} sigma2={} phi={} beta={} converged={}",
        report.estimator,
        report.theta_hat.mu,
        report.theta_hat.tau2,
        report.theta_hat.sigma2,
        report.theta_hat.phi,
        report.theta_hat.beta,
        report.converged
    );
    ctx.record("fit", report.warnings.clone())
}

pub fn predict(ctx: &Context) -> Result<()> {
    let grid = ctx.cfg.analysis_grid()?;
    let data = read_dataset_file(required(&ctx.cfg.data, "dataset")?, &grid)?;
    let (theta, beta_estimated) = read_params(&fs::read(required(&ctx.cfg.theta, "parameter")?)?)?;
    let mut warnings = Vec::new();
    let s: LatentField = match ctx.cfg.predict.method {
        Method::Kriging => {
            if beta_estimated && theta.beta != 0.0 {
                warnings.push(format!(
                    "kriging ignores the preferential parameter beta = {}",
                    theta.beta
                ));
            }
            krige_field(&data, &theta.geo(), &grid)?
        }
        Method::Mh => {
            if !beta_estimated {
                warnings.push("parameters carry no beta; sampling with beta = 0".into());
            }
            let mh = prefgeo_core::MhConfig {
                seed: ctx.cfg.seed,
                ..ctx.cfg.predict.mh.clone()
            };
            let chain = sample_predictive(&data, &grid, &theta, &mh)?;
            let mut w = ctx.create("chain.csv")?;
            write_chain(&mut w, &chain, &ctx.header())?;
            w.flush()?;
            if chain.stalled {
                warnings.push("chain stalled: no block moved for a long stretch".into());
            }
            predict_s(&chain, mh.burn_in)?
        }
        Method::Mode => predict_s_mode(&theta, &data, &grid)?,
    };
    ctx.write_surface("s_pred", &grid, s.values())?;
    ctx.write_surface("y_pred", &grid, &predict_y(&s, theta.mu))?;
    ctx.record("predict", warnings)
}

pub fn evaluate_cmd(ctx: &Context) -> Result<()> {
    let pred = read_field(File::open(required(&ctx.cfg.predicted, "predicted surface")?)?)?;
    let truth = read_field(File::open(required(&ctx.cfg.truth, "true surface")?)?)?;
    let result = evaluate(&pred, &truth)?;
    write_json(&ctx.path("evaluation.json"), &result)?;
    println!("mae={} rmse={} cells={}", result.mae, result.rmse, result.n_cells);
    ctx.record("evaluate", Vec::new())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Study {
    Table1,
    Table2,
    EstimatorComparison,
}

pub fn reproduce(ctx: &Context, study: Study) -> Result<()> {
    let cfg = &ctx.cfg;
    let header = ctx.header();
    match study {
        Study::Table1 => {
            let rows = run_timing_study(&cfg.timing_study)?;
            let mut w = ctx.create("table1.csv")?;
            writeln!(w, "# config_hash={} seed={}", header.config_hash, cfg.timing_study.seed)?;
            writeln!(w, "cells,block_size,iterations,seconds,acceptance")?;
            for r in &rows {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    r.cells,
                    r.block_size,
                    r.iterations,
                    fmt_f64(r.seconds),
                    fmt_f64(r.acceptance)
                )?;
                println!(
                    "cells {:4} block {:2}: {:.3}s acceptance {:.3}",
                    r.cells, r.block_size, r.seconds, r.acceptance
                );
            }
            w.flush()?;
        }
        Study::Table2 => {
            let s = &cfg.prediction_study;
            let study = run_prediction_study(s, cfg.workers)?;
            let mut w = ctx.create("table2_replicates.csv")?;
            writeln!(w, "# config_hash={} base_seed={}", header.config_hash, s.base_seed)?;
            writeln!(
                w,
                "beta,replicate,seed,mh_mae,mh_rmse,kriging_mae,kriging_rmse,acceptance"
            )?;
            for r in &study.rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(r.beta),
                    r.replicate,
                    r.seed,
                    fmt_f64(r.mh.mae),
                    fmt_f64(r.mh.rmse),
                    fmt_f64(r.kriging.mae),
                    fmt_f64(r.kriging.rmse),
                    fmt_f64(r.acceptance)
                )?;
            }
            w.flush()?;
            let mut w = ctx.create("table2.csv")?;
            writeln!(w, "# config_hash={} base_seed={}", header.config_hash, s.base_seed)?;
            writeln!(
                w,
                "beta,replicates,mh_mae,mh_mae_se,mh_rmse,kriging_mae,kriging_mae_se,kriging_rmse"
            )?;
            for r in &study.summary {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(r.beta),
                    r.replicates,
                    fmt_f64(r.mh_mae),
                    fmt_f64(r.mh_mae_se),
                    fmt_f64(r.mh_rmse),
                    fmt_f64(r.kriging_mae),
                    fmt_f64(r.kriging_mae_se),
                    fmt_f64(r.kriging_rmse)
                )?;
                println!(
                    "beta {}: MAE mh {:.3} kriging {:.3}; RMSE mh {:.3} kriging {:.3} ({} replicates)",
                    r.beta, r.mh_mae, r.kriging_mae, r.mh_rmse, r.kriging_rmse, r.replicates
                );
            }
            w.flush()?;
        }
        Study::EstimatorComparison => {
            let s = &cfg.comparison_study;
            let study = run_comparison_study(s, cfg.workers)?;
            let mut w = ctx.create("comparison_replicates.csv")?;
            writeln!(w, "# config_hash={} base_seed={}", header.config_hash, s.base_seed)?;
            writeln!(w, "estimator,replicate,seed,mu,tau2,sigma2,phi,beta,converged")?;
            for r in &study.rows {
                let p = &r.theta_hat;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    r.estimator,
                    r.replicate,
                    r.seed,
                    fmt_f64(p.mu),
                    fmt_f64(p.tau2),
                    fmt_f64(p.sigma2),
                    fmt_f64(p.phi),
                    fmt_f64(p.beta),
                    r.converged
                )?;
            }
            w.flush()?;
            let mut w = ctx.create("comparison.csv")?;
            writeln!(w, "# config_hash={} base_seed={}", header.config_hash, s.base_seed)?;
            writeln!(w, "estimator,parameter,replicates,q25,median,q75")?;
            for e in &study.summary {
                let params: [(&str, &ParamQuantiles); 5] = [
                    ("mu", &e.mu),
                    ("tau2", &e.tau2),
                    ("sigma2", &e.sigma2),
                    ("phi", &e.phi),
                    ("beta", &e.beta),
                ];
                for (name, q) in params {
                    writeln!(
                        w,
                        "{},{},{},{},{},{}",
                        e.estimator,
                        name,
                        e.replicates,
                        fmt_f64(q.q25),
                        fmt_f64(q.median),
                        fmt_f64(q.q75)
                    )?;
                }
                println!(
                    "{}: median mu {:.3} tau2 {:.3} sigma2 {:.3} phi {:.3} beta {:.3}",
                    e.estimator, e.mu.median, e.tau2.median, e.sigma2.median, e.phi.median, e.beta.median
                );
            }
            w.flush()?;
        }
    }
    ctx.record("reproduce", Vec::new())
}
