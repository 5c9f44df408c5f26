//! Discrete-event simulation of a coupled run, step by step, with a
//! bounded staging queue. Serves as the oracle for [`super::estimate`].

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use super::{ModelError, ModelParams};
use crate::plan::{ResourcePlan, WorkflowMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesOutcome {
    pub total_s: f64,
    /// Instant the producer finished its last step (and last handoff).
    pub producer_done_s: f64,
    pub producer_busy_s: f64,
    pub consumer_busy_s: f64,
    /// Time the producer spent blocked on a full queue.
    pub producer_blocked_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    StepDone(u64),
    InlineDone(u64),
    CopyDone(u64),
    ConsumerDone,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    t: f64,
    seq: u64,
    kind: Kind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // Min-heap on (t, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.t.total_cmp(&self.t).then(other.seq.cmp(&self.seq))
    }
}

struct Sim {
    heap: BinaryHeap<Event>,
    seq: u64,
}

impl Sim {
    fn at(&mut self, t: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Event { t, seq: self.seq, kind });
    }
}

/// Simulates `params` under `mode` and `plan` with a staging queue of
/// `capacity` steps.
pub fn simulate(
    mode: WorkflowMode,
    plan: ResourcePlan,
    params: &ModelParams,
    capacity: usize,
) -> Result<DesOutcome, ModelError> {
    params.validate()?;
    plan.validate_for(mode)?;
    let capacity = capacity.max(1);
    let staged = mode != WorkflowMode::Synchronous;
    let producer_workers = if staged { plan.producer() } else { plan.total() };
    let t_step = params.sim.time(producer_workers);
    // Work the producer does inline per in-situ step, and the copy cost.
    let (t_inline, t_copy) = match mode {
        WorkflowMode::Synchronous => (params.task.time(plan.total()), 0.0),
        WorkflowMode::Asynchronous => (0.0, params.handoff_s),
        WorkflowMode::Hybrid => {
            let h = params.hybrid.ok_or(ModelError::MissingHybridTerms)?;
            (h.prefix.time(plan.producer()), params.handoff_s * h.retention)
        }
    };
    let t_task = params.task.time(plan.insitu());

    let mut sim = Sim {
        heap: BinaryHeap::new(),
        seq: 0,
    };
    let mut out = DesOutcome {
        total_s: 0.0,
        producer_done_s: 0.0,
        producer_busy_s: 0.0,
        consumer_busy_s: 0.0,
        producer_blocked_s: 0.0,
    };
    let mut queue: VecDeque<u64> = VecDeque::new();
    let mut consumer_busy = false;
    // (step, instant the producer started waiting)
    let mut waiting: Option<(u64, f64)> = None;

    sim.at(t_step, Kind::StepDone(0));
    out.producer_busy_s += t_step;

    // Producer moves on from `step` at time `t`.
    let next_step = |sim: &mut Sim, out: &mut DesOutcome, step: u64, t: f64| {
        if step + 1 < params.steps {
            sim.at(t + t_step, Kind::StepDone(step + 1));
            out.producer_busy_s += t_step;
        } else {
            out.producer_done_s = t;
        }
    };

    while let Some(Event { t, kind, .. }) = sim.heap.pop() {
        out.total_s = out.total_s.max(t);
        match kind {
            Kind::StepDone(s) => {
                if (s + 1) % params.cadence != 0 {
                    next_step(&mut sim, &mut out, s, t);
                } else if t_inline > 0.0 || !staged {
                    sim.at(t + t_inline, Kind::InlineDone(s));
                    out.producer_busy_s += t_inline;
                } else {
                    sim.at(t + t_copy, Kind::CopyDone(s));
                }
            }
            Kind::InlineDone(s) => {
                if staged {
                    sim.at(t + t_copy, Kind::CopyDone(s));
                } else {
                    next_step(&mut sim, &mut out, s, t);
                }
            }
            Kind::CopyDone(s) => {
                if queue.len() < capacity {
                    queue.push_back(s);
                    next_step(&mut sim, &mut out, s, t);
                } else {
                    waiting = Some((s, t));
                }
            }
            Kind::ConsumerDone => consumer_busy = false,
        }
        if !consumer_busy {
            if queue.pop_front().is_some() {
                consumer_busy = true;
                sim.at(t + t_task, Kind::ConsumerDone);
                out.consumer_busy_s += t_task;
                if let Some((s, since)) = waiting.take() {
                    out.producer_blocked_s += t - since;
                    queue.push_back(s);
                    next_step(&mut sim, &mut out, s, t);
                }
            }
        }
    }
    Ok(out)
}
