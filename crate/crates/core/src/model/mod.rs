//! Analytic performance model of the three workflow modes, the split
//! optimizer, and Amdahl-curve fitting.

pub mod des;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plan::{PlanError, ResourcePlan, WorkflowMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid scaling curve: {0}")]
    InvalidCurve(String),
    #[error("cadence {cadence} does not divide {steps} steps")]
    InvalidCadence { steps: u64, cadence: u64 },
    #[error("handoff_s must be finite and >= 0, got {0}")]
    InvalidHandoff(f64),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("hybrid estimate needs prefix cost and retention terms")]
    MissingHybridTerms,
    #[error("retention must lie in [0, 1], got {0}")]
    InvalidRetention(f64),
    #[error("split optimization needs at least 2 workers, got {0}")]
    TooFewWorkers(u32),
    #[error("split optimization does not apply to synchronous mode")]
    SynchronousSplit,
    #[error("fit needs samples at 2 or more distinct worker counts")]
    DegenerateSamples,
    #[error("invalid sample (p = {p}, t = {t}): need p >= 1 and t > 0")]
    InvalidSample { p: u32, t: f64 },
}

/// Amdahl-form wall time: `t(p) = unit_cost_s·(serial_fraction + (1 − serial_fraction)/p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub serial_fraction: f64,
    pub unit_cost_s: f64,
}

impl ScalingCurve {
    pub fn new(serial_fraction: f64, unit_cost_s: f64) -> Result<Self, ModelError> {
        let c = Self {
            serial_fraction,
            unit_cost_s,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(0.0..=1.0).contains(&self.serial_fraction) {
            return Err(ModelError::InvalidCurve(format!(
                "serial_fraction {} outside [0, 1]",
                self.serial_fraction
            )));
        }
        if !(self.unit_cost_s >= 0.0 && self.unit_cost_s.is_finite()) {
            return Err(ModelError::InvalidCurve(format!(
                "unit_cost_s {} must be finite and >= 0",
                self.unit_cost_s
            )));
        }
        Ok(())
    }

    pub fn time(&self, workers: u32) -> f64 {
        let p = f64::from(workers.max(1));
        self.unit_cost_s * (self.serial_fraction + (1.0 - self.serial_fraction) / p)
    }
}

/// Hybrid-only terms: the inline prefix and how much of the raw payload
/// it leaves to stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridTerms {
    /// Prefix cost per in-situ step, run on the producer's workers.
    pub prefix: ScalingCurve,
    /// Staged bytes over raw field bytes.
    pub retention: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Cost of one simulation step.
    pub sim: ScalingCurve,
    /// Cost of the in-situ chain (hybrid: the staged suffix) per in-situ step.
    pub task: ScalingCurve,
    pub steps: u64,
    pub cadence: u64,
    /// Handoff time for one raw step.
    pub handoff_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hybrid: Option<HybridTerms>,
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.sim.validate()?;
        self.task.validate()?;
        if self.cadence == 0 || self.steps == 0 || self.steps % self.cadence != 0 {
            return Err(ModelError::InvalidCadence {
                steps: self.steps,
                cadence: self.cadence,
            });
        }
        if !(self.handoff_s >= 0.0 && self.handoff_s.is_finite()) {
            return Err(ModelError::InvalidHandoff(self.handoff_s));
        }
        if let Some(h) = &self.hybrid {
            h.prefix.validate()?;
            if !(0.0..=1.0).contains(&h.retention) {
                return Err(ModelError::InvalidRetention(h.retention));
            }
        }
        Ok(())
    }

    /// In-situ steps per run.
    pub fn intervals(&self) -> u64 {
        self.steps / self.cadence
    }

    /// Producer time per interval when staging: `(a, b)` of the recurrence.
    fn interval_times(&self, mode: WorkflowMode, plan: ResourcePlan) -> Result<(f64, f64), ModelError> {
        let po = plan.producer();
        let sim = self.cadence as f64 * self.sim.time(po);
        let b = self.task.time(plan.insitu());
        let a = match mode {
            WorkflowMode::Hybrid => {
                let h = self.hybrid.ok_or(ModelError::MissingHybridTerms)?;
                sim + h.prefix.time(po) + self.handoff_s * h.retention
            }
            _ => sim + self.handoff_s,
        };
        Ok((a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkflowEstimate {
    pub mode: WorkflowMode,
    pub plan: ResourcePlan,
    pub predicted_total_s: f64,
    pub predicted_producer_s: f64,
    pub predicted_insitu_s: f64,
    /// Total minus the busier side.
    pub predicted_overhead_s: f64,
}

/// Predicted wall time of a run.
///
/// Synchronous: `steps·t_sim(p_t) + n·t_task(p_t)`. Staged modes with
/// per-interval producer time `a` and consumer time `b`:
/// `a + (n − 1)·max(a, b) + b`.
pub fn estimate(
    mode: WorkflowMode,
    plan: ResourcePlan,
    params: &ModelParams,
) -> Result<WorkflowEstimate, ModelError> {
    params.validate()?;
    plan.validate_for(mode)?;
    let n = params.intervals() as f64;
    let (total, producer, insitu) = match mode {
        WorkflowMode::Synchronous => {
            let producer = params.steps as f64 * params.sim.time(plan.total());
            let insitu = n * params.task.time(plan.total());
            (producer + insitu, producer, insitu)
        }
        WorkflowMode::Asynchronous | WorkflowMode::Hybrid => {
            let (a, b) = params.interval_times(mode, plan)?;
            (a + (n - 1.0) * a.max(b) + b, n * a, n * b)
        }
    };
    let busier = match mode {
        WorkflowMode::Synchronous => producer + insitu,
        _ => producer.max(insitu),
    };
    Ok(WorkflowEstimate {
        mode,
        plan,
        predicted_total_s: total,
        predicted_producer_s: producer,
        predicted_insitu_s: insitu,
        predicted_overhead_s: total - busier,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub p_o: u32,
    pub p_i: u32,
    pub predicted_total_s: f64,
    pub predicted_producer_s: f64,
    pub predicted_insitu_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitScan {
    pub best: ResourcePlan,
    pub estimate: WorkflowEstimate,
    /// One row per `p_i` in `1..p_t`, ascending.
    pub table: Vec<ScanRow>,
}

/// Exhaustive scan over `p_i ∈ [1, p_t − 1]`; ties go to the smaller `p_i`.
pub fn optimize_split(
    mode: WorkflowMode,
    total: u32,
    params: &ModelParams,
) -> Result<SplitScan, ModelError> {
    if mode == WorkflowMode::Synchronous {
        return Err(ModelError::SynchronousSplit);
    }
    if total < 2 {
        return Err(ModelError::TooFewWorkers(total));
    }
    let mut table = Vec::with_capacity(total as usize - 1);
    let mut best: Option<WorkflowEstimate> = None;
    for pi in 1..total {
        let plan = ResourcePlan::new(total, total - pi, pi)?;
        let e = estimate(mode, plan, params)?;
        table.push(ScanRow {
            p_o: plan.producer(),
            p_i: plan.insitu(),
            predicted_total_s: e.predicted_total_s,
            predicted_producer_s: e.predicted_producer_s,
            predicted_insitu_s: e.predicted_insitu_s,
        });
        if best.map_or(true, |b| e.predicted_total_s < b.predicted_total_s) {
            best = Some(e);
        }
    }
    let estimate = best.expect("p_t >= 2 gives at least one split");
    Ok(SplitScan {
        best: estimate.plan,
        estimate,
        table,
    })
}

pub const SCAN_HEADER: &str = "p_o,p_i,predicted_total_s,predicted_producer_s,predicted_insitu_s";

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], out: &mut W) -> io::Result<()> {
    writeln!(out, "{SCAN_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.p_o, r.p_i, r.predicted_total_s, r.predicted_producer_s, r.predicted_insitu_s
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveFit {
    pub curve: ScalingCurve,
    /// Root-mean-square relative residual.
    pub residual: f64,
}

/// Fits `t(p) = α + β/p` by least squares on relative residuals, then
/// reads off `unit_cost_s = α + β` and `serial_fraction = α/(α + β)`.
/// The serial fraction is clamped to `[0, 1]` when noise pushes it out.
pub fn fit_curve(samples: &[(u32, f64)]) -> Result<CurveFit, ModelError> {
    for &(p, t) in samples {
        if p == 0 || !(t > 0.0 && t.is_finite()) {
            return Err(ModelError::InvalidSample { p, t });
        }
    }
    let first = samples.first().ok_or(ModelError::DegenerateSamples)?.0;
    if samples.iter().all(|&(p, _)| p == first) {
        return Err(ModelError::DegenerateSamples);
    }
    // Weighted normal equations with weight 1/t² on rows [1, 1/p].
    let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(p, t) in samples {
        let w = 1.0 / (t * t);
        let x = 1.0 / f64::from(p);
        s00 += w;
        s01 += w * x;
        s11 += w * x * x;
        r0 += w * t;
        r1 += w * x * t;
    }
    let det = s00 * s11 - s01 * s01;
    let alpha = (r0 * s11 - r1 * s01) / det;
    let beta = (s00 * r1 - s01 * r0) / det;
    let unit = alpha + beta;
    let curve = ScalingCurve::new((alpha / unit).clamp(0.0, 1.0), unit.max(0.0))?;
    let residual = (samples
        .iter()
        .map(|&(p, t)| ((curve.time(p) - t) / t).powi(2))
        .sum::<f64>()
        / samples.len() as f64)
        .sqrt();
    Ok(CurveFit { curve, residual })
}
