//! Per-run timing breakdown and its CSV form.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::plan::{ResourcePlan, WorkflowMode};

/// Slack allowed on wall-clock inequalities (OS timer jitter).
pub const TIMER_SLACK_S: f64 = 1e-3;

/// Where producer time ends and in-situ time begins: the instant the
/// handoff call returns to the producer.
pub const PHASE_BOUNDARY: &str =
    "producer time ends at the handoff-return instant; in-situ time starts when the task chain receives the step";

/// Timing of one simulation step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub step: u64,
    pub producer_compute_s: f64,
    /// Blocking plus copy time of the staging write (0 in synchronous mode).
    pub handoff_s: f64,
    /// All in-situ time spent on this step, inline and staged.
    pub insitu_s: f64,
    /// Portion of `insitu_s` executed inline on the producer's workers.
    pub insitu_inline_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub mode: WorkflowMode,
    pub plan: ResourcePlan,
    pub records: Vec<StepTiming>,
    pub total_wall_s: f64,
    pub producer_total_s: f64,
    pub insitu_total_s: f64,
    /// Run start until the first handoff completes (consumer idle).
    pub overhead_first_noverlap_s: f64,
    /// Producer finished until the last in-situ task finished.
    pub overhead_last_noverlap_s: f64,
    pub overhead_comm_total_s: f64,
}

impl TimingReport {
    /// Aggregates `records` (sorted by step) into a report.
    pub fn from_records(
        mode: WorkflowMode,
        plan: ResourcePlan,
        mut records: Vec<StepTiming>,
        total_wall_s: f64,
        overhead_first_noverlap_s: f64,
        overhead_last_noverlap_s: f64,
    ) -> Self {
        records.sort_by_key(|r| r.step);
        let producer_total_s = records.iter().map(|r| r.producer_compute_s).sum();
        let insitu_total_s = records.iter().map(|r| r.insitu_s).sum();
        let overhead_comm_total_s = records.iter().map(|r| r.handoff_s).sum();
        Self {
            mode,
            plan,
            records,
            total_wall_s,
            producer_total_s,
            insitu_total_s,
            overhead_first_noverlap_s: overhead_first_noverlap_s.max(0.0),
            overhead_last_noverlap_s: overhead_last_noverlap_s.max(0.0),
            overhead_comm_total_s,
        }
    }

    /// Number of steps that ran the in-situ chain.
    pub fn insitu_steps(&self) -> usize {
        self.records.iter().filter(|r| r.insitu_s > 0.0).count()
    }

    pub fn insitu_inline_total_s(&self) -> f64 {
        self.records.iter().map(|r| r.insitu_inline_s).sum()
    }

    pub fn csv_header() -> &'static str {
        "run_id,mode,p_t,p_o,p_i,step,producer_compute_s,handoff_s,insitu_s,insitu_inline_s,\
         total_wall_s,producer_total_s,insitu_total_s,overhead_first_noverlap_s,\
         overhead_last_noverlap_s,overhead_comm_total_s"
    }

    /// Writes one row per step, then one `aggregate` row.
    pub fn write_csv_rows<W: Write>(&self, run_id: &str, out: &mut W) -> io::Result<()> {
        let prefix = format!(
            "{},{},{},{},{}",
            run_id,
            self.mode,
            self.plan.total(),
            self.plan.producer(),
            self.plan.insitu()
        );
        for r in &self.records {
            writeln!(
                out,
                "{prefix},{},{},{},{},{},,,,,,",
                r.step, r.producer_compute_s, r.handoff_s, r.insitu_s, r.insitu_inline_s
            )?;
        }
        writeln!(
            out,
            "{prefix},aggregate,,,,,{},{},{},{},{},{}",
            self.total_wall_s,
            self.producer_total_s,
            self.insitu_total_s,
            self.overhead_first_noverlap_s,
            self.overhead_last_noverlap_s,
            self.overhead_comm_total_s
        )
    }

    pub fn write_csv<W: Write>(&self, run_id: &str, out: &mut W) -> io::Result<()> {
        writeln!(out, "{}", Self::csv_header())?;
        self.write_csv_rows(run_id, out)
    }
}
