//! Coupling a synthetic simulation to in-situ tasks: staging, workflow
//! orchestration, compression and rendering tasks, and a performance model.

pub mod field;
pub mod frame;
pub mod model;
pub mod orchestrator;
pub mod plan;
pub mod producer;
pub mod report;
pub mod staging;
pub mod tasks;

pub use field::{Field, FieldError, FieldShape};
pub use frame::{deserialize_payload, serialize_payload, FrameError, StepData, StepPayload};
pub use plan::{PlanError, ResourcePlan, WorkflowMode};
pub use report::{StepTiming, TimingReport, TIMER_SLACK_S};
