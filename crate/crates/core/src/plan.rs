use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("p_o + p_i must equal p_t (got {producer} + {insitu} != {total})")]
    SplitMismatch {
        total: u32,
        producer: u32,
        insitu: u32,
    },
    #[error("total_workers must be >= 1")]
    NoWorkers,
    #[error("producer_workers must be >= 1")]
    NoProducerWorkers,
    #[error("{0} mode requires at least one in-situ worker")]
    NoInsituWorkers(WorkflowMode),
    #[error("unknown workflow mode {0:?} (expected sync, async or hybrid)")]
    UnknownMode(String),
}

/// How in-situ tasks are coupled to the producer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkflowMode {
    /// Producer halts while the whole task chain runs on its workers.
    #[serde(alias = "sync")]
    Synchronous,
    /// Producer hands each step off to a dedicated in-situ pool.
    #[serde(alias = "async")]
    Asynchronous,
    /// A synchronous prefix runs inline; its output is staged to an
    /// asynchronous suffix.
    Hybrid,
}

impl WorkflowMode {
    pub const ALL: [WorkflowMode; 3] = [Self::Synchronous, Self::Asynchronous, Self::Hybrid];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Synchronous => "sync",
            Self::Asynchronous => "async",
            Self::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for WorkflowMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkflowMode {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sync" | "synchronous" => Ok(Self::Synchronous),
            "async" | "asynchronous" => Ok(Self::Asynchronous),
            "hybrid" => Ok(Self::Hybrid),
            _ => Err(PlanError::UnknownMode(s.to_string())),
        }
    }
}

/// Worker split `p_o + p_i = p_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPlan", into = "RawPlan")]
pub struct ResourcePlan {
    total: u32,
    producer: u32,
    insitu: u32,
}

#[derive(Serialize, Deserialize)]
struct RawPlan {
    p_t: u32,
    p_o: u32,
    p_i: u32,
}

impl TryFrom<RawPlan> for ResourcePlan {
    type Error = PlanError;
    fn try_from(r: RawPlan) -> Result<Self, PlanError> {
        ResourcePlan::new(r.p_t, r.p_o, r.p_i)
    }
}

impl From<ResourcePlan> for RawPlan {
    fn from(p: ResourcePlan) -> Self {
        RawPlan {
            p_t: p.total,
            p_o: p.producer,
            p_i: p.insitu,
        }
    }
}

impl ResourcePlan {
    pub fn new(total: u32, producer: u32, insitu: u32) -> Result<Self, PlanError> {
        if total == 0 {
            return Err(PlanError::NoWorkers);
        }
        if producer == 0 {
            return Err(PlanError::NoProducerWorkers);
        }
        if producer.checked_add(insitu) != Some(total) {
            return Err(PlanError::SplitMismatch {
                total,
                producer,
                insitu,
            });
        }
        Ok(Self {
            total,
            producer,
            insitu,
        })
    }

    /// All workers given to the producer (synchronous placement).
    pub fn all_producer(total: u32) -> Result<Self, PlanError> {
        Self::new(total, total, 0)
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn producer(&self) -> u32 {
        self.producer
    }

    pub fn insitu(&self) -> u32 {
        self.insitu
    }

    /// Checks mode-specific constraints (`p_i >= 1` outside synchronous mode).
    pub fn validate_for(&self, mode: WorkflowMode) -> Result<(), PlanError> {
        if mode != WorkflowMode::Synchronous && self.insitu == 0 {
            return Err(PlanError::NoInsituWorkers(mode));
        }
        Ok(())
    }
}
