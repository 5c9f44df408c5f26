//! Runs a coupled producer/in-situ workflow in one of the three modes and
//! collects its timing report and task artifacts.
//!
//! Synchronous runs the whole chain inline on the producer's `p_t`
//! workers. Asynchronous stages every in-situ step's raw field to a
//! consumer pool of `p_i` workers while the producer keeps `p_o`.
//! Hybrid runs `chain[..hybrid_split]` inline and stages its output to
//! `chain[hybrid_split..]`.

mod chain;
mod worker;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::{ThreadPool, ThreadPoolBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chain::TaskSpec;
pub use worker::{worker_main, WorkerJob, WorkerLaunch};

use crate::frame::{StepData, StepPayload};
use crate::plan::{PlanError, ResourcePlan, WorkflowMode};
use crate::producer::{tgv_field, ComputeKernel, ProducerConfig, ProducerError};
use crate::report::{StepTiming, TimingReport};
use crate::staging::{self, Backend, StageReader, StageWriter, StagingConfig, StagingError};
use chain::{finish_chain, run_tasks, validate_chain, Artifacts, StepCtx};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Producer(#[from] ProducerError),
    #[error("task {task} ({label}) failed at step {step}: {reason}")]
    TaskFailed {
        step: u64,
        task: usize,
        label: String,
        reason: String,
    },
    #[error("staging: {0}")]
    Staging(#[from] StagingError),
    #[error("in-situ consumer crashed: {0}")]
    ConsumerCrashed(String),
}

impl RunError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::TaskFailed { .. } => 2,
            RunError::Staging(_) | RunError::ConsumerCrashed(_) => 3,
            RunError::Config(_) | RunError::Plan(_) | RunError::Producer(_) => 1,
        }
    }
}

/// A failed run, with the timing of the steps that did complete.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{error}")]
pub struct RunAbort {
    pub error: RunError,
    pub partial: Option<TimingReport>,
}

impl From<RunError> for RunAbort {
    fn from(error: RunError) -> Self {
        Self {
            error,
            partial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Deployment {
    #[default]
    Threads,
    /// Consumer in a separate OS process, coupled by a local socket.
    Processes,
}

fn default_capacity() -> usize {
    staging::DEFAULT_CAPACITY
}

fn default_watchdog_s() -> f64 {
    staging::DEFAULT_WATCHDOG.as_secs_f64()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagingSettings {
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_watchdog_s")]
    pub watchdog_s: f64,
    /// Socket path for process deployment; a temporary path if unset.
    #[serde(default)]
    pub endpoint: Option<PathBuf>,
}

impl Default for StagingSettings {
    fn default() -> Self {
        Self {
            capacity: default_capacity(),
            watchdog_s: default_watchdog_s(),
            endpoint: None,
        }
    }
}

impl StagingSettings {
    fn config(&self) -> StagingConfig {
        StagingConfig {
            capacity: self.capacity,
            watchdog: Duration::from_secs_f64(self.watchdog_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub mode: WorkflowMode,
    pub plan: ResourcePlan,
    pub producer: ProducerConfig,
    pub chain: Vec<TaskSpec>,
    /// Hybrid only: `chain[..hybrid_split]` runs inline.
    #[serde(default)]
    pub hybrid_split: Option<usize>,
    #[serde(default)]
    pub deployment: Deployment,
    #[serde(default)]
    pub staging: StagingSettings,
    /// Fixed delay charged to the producer before each handoff, standing
    /// in for a device-to-host synchronization.
    #[serde(default)]
    pub device_sync_s: f64,
}

impl RunPlan {
    pub fn validate(&self) -> Result<(), RunError> {
        self.producer.validate()?;
        self.plan.validate_for(self.mode)?;
        validate_chain(&self.chain)?;
        if self.mode == WorkflowMode::Hybrid {
            match self.hybrid_split {
                Some(s) if s >= 1 && s < self.chain.len() => {}
                other => {
                    return Err(RunError::Config(format!(
                        "hybrid_split must satisfy 1 <= split < {} (chain length), got {:?}",
                        self.chain.len(),
                        other
                    )))
                }
            }
        }
        if self.staging.capacity == 0 {
            return Err(StagingError::InvalidCapacity(0).into());
        }
        if !(self.staging.watchdog_s > 0.0) {
            return Err(RunError::Config("staging.watchdog_s must be > 0".into()));
        }
        if !(self.device_sync_s >= 0.0) {
            return Err(RunError::Config("device_sync_s must be >= 0".into()));
        }
        Ok(())
    }

    /// `(inline tasks, staged tasks, index of first staged task)`.
    fn split_chain(&self) -> (&[TaskSpec], &[TaskSpec], usize) {
        match self.mode {
            WorkflowMode::Synchronous => (&self.chain, &[], self.chain.len()),
            WorkflowMode::Asynchronous => (&[], &self.chain, 0),
            WorkflowMode::Hybrid => {
                let s = self.hybrid_split.unwrap_or(0);
                (&self.chain[..s], &self.chain[s..], s)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// How to start the consumer process for process deployment.
    pub worker: Option<WorkerLaunch>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub report: TimingReport,
    /// Artifact name to bytes. Names do not depend on the mode.
    pub artifacts: BTreeMap<String, Vec<u8>>,
    /// Frame bytes passed through staging.
    pub staged_bytes: u64,
}

pub fn run(plan: &RunPlan) -> Result<RunOutcome, RunAbort> {
    run_with(plan, &RunOptions::default())
}

pub fn run_with(plan: &RunPlan, opts: &RunOptions) -> Result<RunOutcome, RunAbort> {
    plan.validate()?;
    log::info!(
        "run: mode={} p_t={} p_o={} p_i={} steps={} every={}",
        plan.mode,
        plan.plan.total(),
        plan.plan.producer(),
        plan.plan.insitu(),
        plan.producer.steps,
        plan.producer.insitu_every
    );
    match plan.mode {
        WorkflowMode::Synchronous => run_sync(plan),
        _ => run_staged(plan, opts),
    }
}

/// The chain halts the producer at every in-situ step.
pub fn run_sync(plan: &RunPlan) -> Result<RunOutcome, RunAbort> {
    if plan.mode != WorkflowMode::Synchronous {
        return Err(RunError::Config(format!("run_sync called with mode {}", plan.mode)).into());
    }
    plan.validate()?;
    let kernel = ComputeKernel::prepare(&plan.producer).map_err(RunError::from)?;
    let pool = pool(plan.plan.total())?;
    let start = Instant::now();
    let prod = produce(plan, &kernel, &pool, plan.plan.total(), None);
    let total = prod.done.duration_since(start).as_secs_f64();
    let report = |records| TimingReport::from_records(plan.mode, plan.plan, records, total, 0.0, 0.0);
    match prod.error {
        Some(error) => Err(RunAbort {
            partial: Some(report(truncate(prod.records, &error))),
            error,
        }),
        None => Ok(RunOutcome {
            report: report(prod.records),
            artifacts: prod.artifacts.into_iter().collect(),
            staged_bytes: 0,
        }),
    }
}

pub fn run_async(plan: &RunPlan, opts: &RunOptions) -> Result<RunOutcome, RunAbort> {
    if plan.mode != WorkflowMode::Asynchronous {
        return Err(RunError::Config(format!("run_async called with mode {}", plan.mode)).into());
    }
    run_staged(plan, opts)
}

pub fn run_hybrid(plan: &RunPlan, opts: &RunOptions) -> Result<RunOutcome, RunAbort> {
    if plan.mode != WorkflowMode::Hybrid {
        return Err(RunError::Config(format!("run_hybrid called with mode {}", plan.mode)).into());
    }
    run_staged(plan, opts)
}

fn pool(workers: u32) -> Result<ThreadPool, RunError> {
    ThreadPoolBuilder::new()
        .num_threads(workers.max(1) as usize)
        .build()
        .map_err(|e| RunError::Config(format!("worker pool of {workers}: {e}")))
}

fn run_staged(plan: &RunPlan, opts: &RunOptions) -> Result<RunOutcome, RunAbort> {
    plan.validate()?;
    let kernel = ComputeKernel::prepare(&plan.producer).map_err(RunError::from)?;
    let producer_pool = pool(plan.plan.producer())?;
    let (_, staged, offset) = plan.split_chain();

    let (start, prod, cons) = match plan.deployment {
        Deployment::Threads => {
            let consumer_pool = pool(plan.plan.insitu())?;
            let (writer, reader) =
                staging::open_pair(&Backend::InProcess, plan.staging.config()).map_err(RunError::from)?;
            std::thread::scope(|s| {
                let start = Instant::now();
                let consumer_pool = &consumer_pool;
                let handle = s.spawn(move || consume(reader, staged, offset, consumer_pool, plan.plan.insitu()));
                let prod = produce(plan, &kernel, &producer_pool, plan.plan.producer(), Some(writer));
                let cons = handle.join().unwrap_or_else(|panic| ConsumerRun {
                    error: Some(RunError::ConsumerCrashed(panic_message(&panic))),
                    ..ConsumerRun::empty()
                });
                (start, prod, cons)
            })
        }
        Deployment::Processes => {
            let launch = opts.worker.as_ref().ok_or_else(|| {
                RunError::Config("process deployment needs a worker program".into())
            })?;
            let (process, writer) = worker::launch(plan, launch)?;
            let start = Instant::now();
            let prod = produce(plan, &kernel, &producer_pool, plan.plan.producer(), Some(writer));
            (start, prod, process.finish())
        }
    };
    assemble(plan, start, prod, cons)
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".into())
}

struct ProducerRun {
    records: Vec<StepTiming>,
    artifacts: Artifacts,
    first_handoff: Option<Instant>,
    done: Instant,
    staged_bytes: u64,
    error: Option<RunError>,
}

/// The producer loop. With a writer, each in-situ step's data (after the
/// inline tasks) is staged; without one, the block artifact is emitted
/// inline.
fn produce(
    plan: &RunPlan,
    kernel: &ComputeKernel,
    pool: &ThreadPool,
    workers: u32,
    mut writer: Option<StageWriter>,
) -> ProducerRun {
    let cfg = &plan.producer;
    let (inline, _, _) = plan.split_chain();
    let mut run = ProducerRun {
        records: Vec::with_capacity(cfg.steps as usize),
        artifacts: Vec::new(),
        first_handoff: None,
        done: Instant::now(),
        staged_bytes: 0,
        error: None,
    };
    // Fields are observed only at in-situ steps, so they are built only there.
    let needs_field = !inline.is_empty() || writer.is_some();

    for step in 0..cfg.steps {
        let t0 = Instant::now();
        kernel.run(workers);
        let insitu = cfg.is_insitu_step(step) && needs_field;
        let field = if insitu {
            match pool.install(|| tgv_field(cfg, step)) {
                Ok(f) => Some(f),
                Err(e) => {
                    run.error = Some(e.into());
                    break;
                }
            }
        } else {
            None
        };
        let mut rec = StepTiming {
            step,
            producer_compute_s: t0.elapsed().as_secs_f64(),
            ..StepTiming::default()
        };
        if let Some(field) = field {
            let ctx = StepCtx {
                step,
                sim_time: cfg.sim_time(step),
                workers,
            };
            let t1 = Instant::now();
            let data = match pool.install(|| run_tasks(inline, 0, StepData::Field(field), ctx, &mut run.artifacts)) {
                Ok(d) => d,
                Err(e) => {
                    run.error = Some(e);
                    break;
                }
            };
            if !inline.is_empty() {
                rec.insitu_inline_s = t1.elapsed().as_secs_f64();
                rec.insitu_s = rec.insitu_inline_s;
            }
            match writer.as_mut() {
                None => finish_chain(data, ctx, &mut run.artifacts),
                Some(w) => {
                    let t2 = Instant::now();
                    if plan.device_sync_s > 0.0 {
                        std::thread::sleep(Duration::from_secs_f64(plan.device_sync_s));
                    }
                    let payload = StepPayload::new(step, ctx.sim_time, data);
                    if let Err(e) = w.write_step(&payload) {
                        run.error = Some(e.into());
                        break;
                    }
                    let now = Instant::now();
                    rec.handoff_s = now.duration_since(t2).as_secs_f64();
                    run.first_handoff.get_or_insert(now);
                }
            }
        }
        run.records.push(rec);
    }
    if let Some(w) = writer {
        run.staged_bytes = w.stats().bytes_written;
        match w.close() {
            Ok(_) => {}
            Err(e) if run.error.is_none() => run.error = Some(e.into()),
            Err(_) => {}
        }
    }
    run.done = Instant::now();
    run
}

struct ConsumerRun {
    /// `(step, seconds)` per consumed step.
    records: Vec<(u64, f64)>,
    artifacts: Artifacts,
    done: Instant,
    error: Option<RunError>,
}

impl ConsumerRun {
    fn empty() -> Self {
        Self {
            records: Vec::new(),
            artifacts: Vec::new(),
            done: Instant::now(),
            error: None,
        }
    }
}

/// The in-situ consumer loop: runs `tasks` on every staged step until the
/// writer closes.
fn consume(
    mut reader: StageReader,
    tasks: &[TaskSpec],
    offset: usize,
    pool: &ThreadPool,
    workers: u32,
) -> ConsumerRun {
    let mut run = ConsumerRun::empty();
    loop {
        let payload = match reader.read_step() {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(e) => {
                run.error = Some(e.into());
                break;
            }
        };
        let ctx = StepCtx {
            step: payload.step_index(),
            sim_time: payload.sim_time(),
            workers,
        };
        let t0 = Instant::now();
        let result = pool.install(|| {
            run_tasks(tasks, offset, payload.into_data(), ctx, &mut run.artifacts)
                .map(|d| finish_chain(d, ctx, &mut run.artifacts))
        });
        if let Err(e) = result {
            run.error = Some(e);
            break;
        }
        let took = if tasks.is_empty() { 0.0 } else { t0.elapsed().as_secs_f64() };
        run.records.push((ctx.step, took));
    }
    run.done = Instant::now();
    run
}

/// Keeps records of steps that finished before the failure.
fn truncate(mut records: Vec<StepTiming>, error: &RunError) -> Vec<StepTiming> {
    if let RunError::TaskFailed { step, .. } = error {
        records.retain(|r| r.step < *step);
    }
    records
}

fn assemble(
    plan: &RunPlan,
    start: Instant,
    prod: ProducerRun,
    cons: ConsumerRun,
) -> Result<RunOutcome, RunAbort> {
    let error = match (prod.error, cons.error) {
        (Some(e @ RunError::TaskFailed { .. }), _) => Some(e),
        (_, Some(e)) => Some(e),
        (e, None) => e,
    };
    let mut records = prod.records;
    let consumed: BTreeMap<u64, f64> = cons.records.into_iter().collect();
    for r in &mut records {
        if let Some(t) = consumed.get(&r.step) {
            r.insitu_s += t;
        }
    }
    let end = prod.done.max(cons.done);
    let total = end.duration_since(start).as_secs_f64();
    let first = prod
        .first_handoff
        .map_or(0.0, |t| t.duration_since(start).as_secs_f64());
    let last = cons.done.saturating_duration_since(prod.done).as_secs_f64();

    if let Some(error) = error {
        let mut records = truncate(records, &error);
        // Drop staged steps the consumer never finished, and all after.
        if let Some(cut) = records
            .iter()
            .position(|r| r.handoff_s > 0.0 && !consumed.contains_key(&r.step))
        {
            records.truncate(cut);
        }
        let partial = TimingReport::from_records(plan.mode, plan.plan, records, total, first, last);
        return Err(RunAbort {
            error,
            partial: Some(partial),
        });
    }
    let report = TimingReport::from_records(plan.mode, plan.plan, records, total, first, last);
    let mut artifacts: BTreeMap<String, Vec<u8>> = prod.artifacts.into_iter().collect();
    artifacts.extend(cons.artifacts);
    Ok(RunOutcome {
        report,
        artifacts,
        staged_bytes: prod.staged_bytes,
    })
}
