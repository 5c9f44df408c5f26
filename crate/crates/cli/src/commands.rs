//! The `run`, `sweep`, `model` and `codecs` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use isf_core::model::{
    estimate, fit_curve, optimize_split, write_scan_csv, ModelError, ScalingCurve,
};
use isf_core::orchestrator::{run_with, RunError, RunOptions, RunPlan, WorkerLaunch};
use isf_core::producer::{checkpoint_coeffs, coeff_bytes};
use isf_core::tasks::{compression_table, write_table_csv, CodecRegistry};
use isf_core::{ResourcePlan, TimingReport, WorkflowMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::manifest::Manifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("unknown codec {0:?}")]
    UnknownCodec(String),
    #[error("{failed} of {total} sweep runs failed")]
    SweepFailures { failed: usize, total: usize },
    #[error("i/o error on {path}: {reason}")]
    Io { path: PathBuf, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Run(e) => e.exit_code(),
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Everything a subcommand needs from the command line.
pub struct Invocation {
    pub config: ExperimentConfig,
    pub config_path: PathBuf,
    pub config_bytes: Vec<u8>,
    pub output: PathBuf,
    pub worker: WorkerLaunch,
}

impl Invocation {
    fn manifest(&self, command: &str) -> Manifest {
        let mut m = Manifest::new(command, &self.config_path, &self.config_bytes);
        m.producer_seed = self.config.producer.as_ref().map(|p| p.seed);
        m.checkpoint_seed = self.config.checkpoint.as_ref().map(|c| c.seed);
        m
    }

    fn prepare_output(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.output).map_err(io_err(&self.output))
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.output.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))
    }

    fn finish(&self, mut manifest: Manifest, exit_code: i32) -> Result<(), CliError> {
        manifest.exit_code = exit_code;
        manifest.write(&self.output).map_err(io_err(&self.output))
    }
}

/// Curves from `fit` (a prior sweep CSV) if given, else from the config.
fn curves_from(inv: &Invocation, fit: Option<&Path>) -> Result<Option<(ScalingCurve, ScalingCurve)>, CliError> {
    let Some(path) = fit else { return Ok(None) };
    let fitted = fit_sweep(path, inv.config.model.as_ref().and_then(|m| m.sim))?;
    let mut csv = String::from("curve,serial_fraction,unit_cost_s,residual,samples\n");
    for (name, f) in [("sim", &fitted.sim), ("task", &fitted.task)] {
        csv += &format!(
            "{name},{},{},{},{}\n",
            f.curve.serial_fraction, f.curve.unit_cost_s, f.residual, f.samples
        );
    }
    inv.prepare_output()?;
    inv.write("fit.csv", csv.as_bytes())?;
    log::info!("fitted sim {:?}, task {:?}", fitted.sim.curve, fitted.task.curve);
    Ok(Some((fitted.sim.curve, fitted.task.curve)))
}

fn auto_split(
    inv: &Invocation,
    curves: Option<(ScalingCurve, ScalingCurve)>,
    mode: WorkflowMode,
    total: u32,
) -> Result<ResourcePlan, ConfigError> {
    let params = inv.config.model_params(curves)?;
    let scan = optimize_split(mode, total, &params).map_err(|e| ConfigError::invalid("run.plan", e))?;
    log::info!(
        "auto split for p_t={total}: p_o={} p_i={} (predicted {:.4} s)",
        scan.best.producer(),
        scan.best.insitu(),
        scan.estimate.predicted_total_s
    );
    Ok(scan.best)
}

pub fn cmd_run(inv: &Invocation, fit: Option<&Path>) -> Result<(), CliError> {
    let curves = curves_from(inv, fit)?;
    let plan = inv.config.run_plan(|mode, total| auto_split(inv, curves, mode, total))?;
    inv.prepare_output()?;
    let artifacts_dir = inv.output.join("artifacts");
    if artifacts_dir.exists() {
        fs::remove_dir_all(&artifacts_dir).map_err(io_err(&artifacts_dir))?;
    }
    let manifest = inv.manifest("run");
    let opts = RunOptions {
        worker: Some(inv.worker.clone()),
    };
    match run_with(&plan, &opts) {
        Ok(outcome) => {
            write_timing(inv, &outcome.report)?;
            fs::create_dir_all(&artifacts_dir).map_err(io_err(&artifacts_dir))?;
            for (name, bytes) in &outcome.artifacts {
                let path = artifacts_dir.join(name);
                fs::write(&path, bytes).map_err(io_err(&path))?;
            }
            let r = &outcome.report;
            println!(
                "{} p_t={} p_o={} p_i={}: total {:.4} s, producer {:.4} s, in-situ {:.4} s, {} artifacts, {} bytes staged",
                plan.mode,
                plan.plan.total(),
                plan.plan.producer(),
                plan.plan.insitu(),
                r.total_wall_s,
                r.producer_total_s,
                r.insitu_total_s,
                outcome.artifacts.len(),
                outcome.staged_bytes
            );
            inv.finish(manifest, 0)
        }
        Err(abort) => {
            if let Some(partial) = &abort.partial {
                write_timing(inv, partial)?;
            }
            inv.finish(manifest, abort.error.exit_code())?;
            Err(abort.error.into())
        }
    }
}

fn write_timing(inv: &Invocation, report: &TimingReport) -> Result<(), CliError> {
    let mut buf = Vec::new();
    report.write_csv("run", &mut buf).expect("writing to memory");
    inv.write("timing.csv", &buf)
}

/// One sweep run, as written to `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub mode: String,
    pub p_t: u32,
    pub p_o: u32,
    pub p_i: u32,
    pub steps: u64,
    pub insitu_every: u64,
    pub status: String,
    pub total_wall_s: Option<f64>,
    pub producer_total_s: Option<f64>,
    pub insitu_total_s: Option<f64>,
    pub insitu_steps: Option<u64>,
    pub overhead_first_noverlap_s: Option<f64>,
    pub overhead_last_noverlap_s: Option<f64>,
    pub overhead_comm_total_s: Option<f64>,
    pub error: String,
}

/// Best measured split per `(p_t, insitu_every)`, as written to `best.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRow {
    pub p_t: u32,
    pub insitu_every: u64,
    pub p_o: u32,
    pub p_i: u32,
    pub total_wall_s: f64,
    pub producer_total_s: f64,
    pub insitu_total_s: f64,
}

pub fn cmd_sweep(inv: &Invocation) -> Result<(), CliError> {
    let cfg = &inv.config;
    let sweep = cfg.sweep.as_ref().ok_or(ConfigError::Missing("sweep"))?;
    if sweep.p_i.is_empty() {
        return Err(ConfigError::invalid("sweep.p_i", "list is empty").into());
    }
    let run = cfg.run_section()?;
    let producer = cfg.producer()?;
    let totals = sweep.p_t.clone().unwrap_or_else(|| vec![run.p_t]);
    let cadences = sweep.insitu_every.clone().unwrap_or_else(|| vec![producer.insitu_every]);
    if totals.is_empty() || cadences.is_empty() {
        return Err(ConfigError::invalid("sweep", "`p_t` and `insitu_every` lists must not be empty").into());
    }
    inv.prepare_output()?;
    let opts = RunOptions {
        worker: Some(inv.worker.clone()),
    };

    let mut rows = Vec::new();
    for &total in &totals {
        for &every in &cadences {
            for &pi in &sweep.p_i {
                let run_id = format!("r{:03}", rows.len());
                let po = total.saturating_sub(pi);
                let mut row = SweepRow {
                    run_id,
                    mode: run.mode.to_string(),
                    p_t: total,
                    p_o: po,
                    p_i: pi,
                    steps: producer.steps,
                    insitu_every: every,
                    status: "failed".into(),
                    total_wall_s: None,
                    producer_total_s: None,
                    insitu_total_s: None,
                    insitu_steps: None,
                    overhead_first_noverlap_s: None,
                    overhead_last_noverlap_s: None,
                    overhead_comm_total_s: None,
                    error: String::new(),
                };
                match sweep_plan(cfg, total, pi, every).and_then(|p| run_with(&p, &opts).map_err(|a| a.error)) {
                    Ok(out) => {
                        let r = out.report;
                        row.status = "ok".into();
                        row.total_wall_s = Some(r.total_wall_s);
                        row.producer_total_s = Some(r.producer_total_s);
                        row.insitu_total_s = Some(r.insitu_total_s);
                        row.insitu_steps = Some(r.insitu_steps() as u64);
                        row.overhead_first_noverlap_s = Some(r.overhead_first_noverlap_s);
                        row.overhead_last_noverlap_s = Some(r.overhead_last_noverlap_s);
                        row.overhead_comm_total_s = Some(r.overhead_comm_total_s);
                    }
                    Err(e) => {
                        log::warn!("sweep run {} (p_t={total} p_i={pi} every={every}) failed: {e}", row.run_id);
                        row.error = e.to_string();
                    }
                }
                println!(
                    "{} p_t={} p_i={} every={}: {}",
                    row.run_id,
                    row.p_t,
                    row.p_i,
                    row.insitu_every,
                    row.total_wall_s.map_or_else(|| format!("failed ({})", row.error), |t| format!("{t:.4} s"))
                );
                rows.push(row);
            }
        }
    }

    write_csv(inv, "sweep.csv", &rows)?;
    let best = best_rows(&rows);
    write_csv(inv, "best.csv", &best)?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let code = if failed == 0 { 0 } else { 1 };
    inv.finish(inv.manifest("sweep"), code)?;
    if failed > 0 {
        return Err(CliError::SweepFailures {
            failed,
            total: rows.len(),
        });
    }
    Ok(())
}

fn sweep_plan(cfg: &ExperimentConfig, total: u32, pi: u32, every: u64) -> Result<RunPlan, RunError> {
    let run = cfg.run_section().map_err(|e| RunError::Config(e.to_string()))?;
    let mut producer = cfg.producer().map_err(|e| RunError::Config(e.to_string()))?.clone();
    producer.insitu_every = every;
    let plan = ResourcePlan::new(total, total.saturating_sub(pi), pi)?;
    let p = RunPlan {
        mode: run.mode,
        plan,
        producer,
        chain: cfg.tasks.chain.clone(),
        hybrid_split: (run.mode == WorkflowMode::Hybrid).then(|| run.hybrid_split.unwrap_or(1)),
        deployment: run.deployment,
        staging: cfg.staging.clone(),
        device_sync_s: run.device_sync_s,
    };
    p.validate()?;
    Ok(p)
}

/// Argmin of measured total per `(p_t, insitu_every)`; ties go to the
/// smaller `p_i`.
pub fn best_rows(rows: &[SweepRow]) -> Vec<BestRow> {
    let mut best: BTreeMap<(u32, u64), &SweepRow> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.status == "ok") {
        let key = (r.p_t, r.insitu_every);
        let better = match best.get(&key) {
            None => true,
            Some(b) => {
                let (t, bt) = (r.total_wall_s.unwrap_or(f64::INFINITY), b.total_wall_s.unwrap_or(f64::INFINITY));
                t < bt || (t == bt && r.p_i < b.p_i)
            }
        };
        if better {
            best.insert(key, r);
        }
    }
    best.values()
        .map(|r| BestRow {
            p_t: r.p_t,
            insitu_every: r.insitu_every,
            p_o: r.p_o,
            p_i: r.p_i,
            total_wall_s: r.total_wall_s.unwrap_or_default(),
            producer_total_s: r.producer_total_s.unwrap_or_default(),
            insitu_total_s: r.insitu_total_s.unwrap_or_default(),
        })
        .collect()
}

fn write_csv<T: Serialize>(inv: &Invocation, name: &str, rows: &[T]) -> Result<(), CliError> {
    let path = inv.output.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(io_err(&path))
}

pub struct FittedCurve {
    pub curve: ScalingCurve,
    pub residual: f64,
    pub samples: usize,
}

pub struct SweepFit {
    pub sim: FittedCurve,
    pub task: FittedCurve,
}

/// Fits the task curve to per-step in-situ time against `p_i`, and the
/// simulation curve to per-step producer compute against `p_o`. When all
/// runs share one `p_o`, `fallback_sim` is used for the simulation.
pub fn fit_sweep(path: &Path, fallback_sim: Option<ScalingCurve>) -> Result<SweepFit, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut task = Vec::new();
    let mut sim = Vec::new();
    for row in reader.deserialize::<SweepRow>() {
        let row = row.map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if row.status != "ok" || row.p_i == 0 {
            continue;
        }
        if let (Some(t), Some(n)) = (row.insitu_total_s, row.insitu_steps) {
            if n > 0 && t > 0.0 {
                task.push((row.p_i, t / n as f64));
            }
        }
        if let Some(p) = row.producer_total_s {
            if p > 0.0 && row.steps > 0 {
                sim.push((row.p_o, p / row.steps as f64));
            }
        }
    }
    let t = fit_curve(&task)?;
    let task = FittedCurve {
        curve: t.curve,
        residual: t.residual,
        samples: task.len(),
    };
    let sim = match (fit_curve(&sim), fallback_sim) {
        (Ok(f), _) => FittedCurve {
            curve: f.curve,
            residual: f.residual,
            samples: sim.len(),
        },
        (Err(ModelError::DegenerateSamples), Some(curve)) => FittedCurve {
            curve,
            residual: 0.0,
            samples: 0,
        },
        (Err(e), _) => return Err(e.into()),
    };
    Ok(SweepFit { sim, task })
}

pub fn cmd_model(inv: &Invocation, fit: Option<&Path>) -> Result<(), CliError> {
    let curves = curves_from(inv, fit)?;
    let params = inv.config.model_params(curves)?;
    let mode = match inv.config.run.as_ref().map(|r| r.mode) {
        Some(WorkflowMode::Hybrid) => WorkflowMode::Hybrid,
        _ => WorkflowMode::Asynchronous,
    };
    let totals = match inv.config.model.as_ref().and_then(|m| m.p_t.as_ref()) {
        Some(t) => t.to_vec(),
        None => vec![inv.config.run_section().map_err(|_| ConfigError::Missing("model.p_t"))?.p_t],
    };
    inv.prepare_output()?;
    let mut best = String::from(
        "mode,p_t,p_o,p_i,predicted_total_s,predicted_producer_s,predicted_insitu_s,predicted_overhead_s,sync_total_s\n",
    );
    for total in totals {
        let scan = optimize_split(mode, total, &params)?;
        let sync = estimate(WorkflowMode::Synchronous, ResourcePlan::all_producer(total).map_err(RunError::from)?, &params)?;
        let mut buf = Vec::new();
        write_scan_csv(&scan.table, &mut buf).expect("writing to memory");
        inv.write(&format!("scan_pt{total}.csv"), &buf)?;
        let e = &scan.estimate;
        writeln!(
            best,
            "{mode},{total},{},{},{},{},{},{},{}",
            scan.best.producer(),
            scan.best.insitu(),
            e.predicted_total_s,
            e.predicted_producer_s,
            e.predicted_insitu_s,
            e.predicted_overhead_s,
            sync.predicted_total_s
        )
        .expect("writing to memory");
        println!(
            "p_t={total}: best p_o={} p_i={} predicted {:.4} s (sync {:.4} s)",
            scan.best.producer(),
            scan.best.insitu(),
            e.predicted_total_s,
            sync.predicted_total_s
        );
    }
    inv.write("best.csv", best.as_bytes())?;
    inv.finish(inv.manifest("model"), 0)
}

pub fn cmd_codecs(inv: &Invocation) -> Result<(), CliError> {
    let section = inv.config.checkpoint.as_ref().ok_or(ConfigError::Missing("checkpoint"))?;
    let registry = CodecRegistry::builtin();
    let codecs = section.codecs.clone().unwrap_or_else(|| registry.names());
    if let Some(bad) = codecs.iter().find(|c| registry.by_name(c).is_none()) {
        return Err(CliError::UnknownCodec(bad.clone()));
    }
    let mut inputs = Vec::new();
    for cfg in section.configs() {
        cfg.validate().map_err(|e| ConfigError::invalid("checkpoint", e))?;
        for step in 0..section.steps {
            let coeffs = checkpoint_coeffs(&cfg, step).map_err(|e| ConfigError::invalid("checkpoint", e))?;
            inputs.push((format!("decay{}_step{}", cfg.spectrum_decay, step), coeff_bytes(&coeffs)));
        }
    }
    let rows = compression_table(&inputs, &codecs, registry);
    for r in &rows {
        match &r.outcome {
            Ok(m) => println!("{:<18} {:<6} cr {:>8.4}%", r.input, r.codec, m.cr * 100.0),
            Err(e) => println!("{:<18} {:<6} error: {e}", r.input, r.codec),
        }
    }
    inv.prepare_output()?;
    let mut buf = Vec::new();
    write_table_csv(&rows, &mut buf).expect("writing to memory");
    inv.write("codecs.csv", &buf)?;
    inv.finish(inv.manifest("codecs"), 0)
}
