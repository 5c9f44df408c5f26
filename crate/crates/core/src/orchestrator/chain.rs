//! Runs a slice of the task chain on one step's data.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::field::Field;
use crate::frame::{serialize_payload, StepData, StepPayload};
use crate::producer::spin_for;
use crate::tasks::{
    lossless_encode, lossy_compress, lossy_decompress, render_slice, CodecRegistry, LossyConfig,
    RenderConfig, TaskError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum TaskSpec {
    Lossy(LossyConfig),
    /// On a compressed block, codes its arrays; on a raw field, emits the
    /// coded field bytes as an artifact.
    Lossless { codec: String },
    Render(RenderConfig),
    /// Busy work taking `unit_cost_s·(s + (1 − s)/p)` on `p` workers.
    Synthetic {
        unit_cost_s: f64,
        #[serde(default)]
        serial_fraction: f64,
    },
    /// Fails at one step. For exercising abort paths.
    Fault { at_step: u64 },
}

impl TaskSpec {
    pub fn label(&self) -> &'static str {
        match self {
            TaskSpec::Lossy(_) => "lossy",
            TaskSpec::Lossless { .. } => "lossless",
            TaskSpec::Render(_) => "render",
            TaskSpec::Synthetic { .. } => "synthetic",
            TaskSpec::Fault { .. } => "fault",
        }
    }
}

/// Static checks over a whole chain: configs are valid, codecs exist,
/// and the lossy stage sees a raw field.
pub(crate) fn validate_chain(chain: &[TaskSpec]) -> Result<(), RunError> {
    let mut have_block = false;
    for (i, t) in chain.iter().enumerate() {
        let bad = |msg: String| RunError::Config(format!("tasks[{i}] ({}): {msg}", t.label()));
        match t {
            TaskSpec::Lossy(cfg) => {
                cfg.validate().map_err(|e| bad(e.to_string()))?;
                if have_block {
                    return Err(bad("input is already compressed".into()));
                }
                have_block = true;
            }
            TaskSpec::Lossless { codec } => {
                if CodecRegistry::builtin().by_name(codec).is_none() {
                    return Err(bad(TaskError::UnknownCodec(codec.clone()).to_string()));
                }
            }
            TaskSpec::Render(cfg) => cfg.validate().map_err(|e| bad(e.to_string()))?,
            TaskSpec::Synthetic {
                unit_cost_s,
                serial_fraction,
            } => {
                if !(*unit_cost_s >= 0.0 && unit_cost_s.is_finite()) {
                    return Err(bad(format!("unit_cost_s {unit_cost_s} must be >= 0")));
                }
                if !(0.0..=1.0).contains(serial_fraction) {
                    return Err(bad(format!("serial_fraction {serial_fraction} outside [0, 1]")));
                }
            }
            TaskSpec::Fault { .. } => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct StepCtx {
    pub step: u64,
    pub sim_time: f64,
    /// Workers of the pool running the tasks.
    pub workers: u32,
}

pub(crate) type Artifacts = Vec<(String, Vec<u8>)>;

/// Runs `tasks`, whose first element is `chain[offset]`, on `data`.
pub(crate) fn run_tasks(
    tasks: &[TaskSpec],
    offset: usize,
    mut data: StepData,
    ctx: StepCtx,
    artifacts: &mut Artifacts,
) -> Result<StepData, RunError> {
    for (k, task) in tasks.iter().enumerate() {
        let index = offset + k;
        let fail = |reason: String| RunError::TaskFailed {
            step: ctx.step,
            task: index,
            label: task.label().to_string(),
            reason,
        };
        data = match (task, data) {
            (TaskSpec::Lossy(cfg), StepData::Field(f)) => {
                StepData::Block(lossy_compress(&f, cfg).map_err(|e| fail(e.to_string()))?)
            }
            (TaskSpec::Lossy(_), StepData::Block(_)) => {
                return Err(fail("input is already compressed".into()))
            }
            (TaskSpec::Lossless { codec }, StepData::Block(b)) => StepData::Block(
                b.with_lossless(codec, CodecRegistry::builtin())
                    .map_err(|e| fail(e.to_string()))?,
            ),
            (TaskSpec::Lossless { codec }, StepData::Field(f)) => {
                let c = CodecRegistry::builtin()
                    .by_name(codec)
                    .ok_or_else(|| fail(TaskError::UnknownCodec(codec.clone()).to_string()))?;
                let raw: Vec<u8> = f.values().iter().flat_map(|v| v.to_le_bytes()).collect();
                let (coded, _) = lossless_encode(c, &raw);
                artifacts.push((artifact_name(ctx.step, index, &format!("field.{}", c.name())), coded));
                StepData::Field(f)
            }
            (TaskSpec::Render(cfg), d) => {
                let image = match &d {
                    StepData::Field(f) => render_slice(f, cfg),
                    StepData::Block(b) => lossy_decompress(b, b.shape).and_then(|f: Field| render_slice(&f, cfg)),
                }
                .map_err(|e| fail(e.to_string()))?;
                artifacts.push((artifact_name(ctx.step, index, "render.ppm"), image.to_ppm()));
                d
            }
            (
                TaskSpec::Synthetic {
                    unit_cost_s,
                    serial_fraction,
                },
                d,
            ) => {
                let p = f64::from(ctx.workers.max(1));
                let t = unit_cost_s * (serial_fraction + (1.0 - serial_fraction) / p);
                spin_for(Duration::from_secs_f64(t), 256);
                d
            }
            (TaskSpec::Fault { at_step }, d) => {
                if *at_step == ctx.step {
                    return Err(fail("injected fault".into()));
                }
                d
            }
        };
    }
    Ok(data)
}

/// Emits the step's compressed block, if the chain produced one.
pub(crate) fn finish_chain(data: StepData, ctx: StepCtx, artifacts: &mut Artifacts) {
    if let StepData::Block(_) = data {
        let frame = serialize_payload(&StepPayload::new(ctx.step, ctx.sim_time, data));
        artifacts.push((format!("step{:06}_block.isf", ctx.step), frame));
    }
}

fn artifact_name(step: u64, task: usize, what: &str) -> String {
    format!("step{step:06}_t{task}_{what}")
}
