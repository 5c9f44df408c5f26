//! Experiment configuration: one TOML file with `producer`, `checkpoint`,
//! `staging`, `tasks`, `run`, `sweep` and `model` sections.

use std::path::{Path, PathBuf};

use isf_core::model::{HybridTerms, ModelParams, ScalingCurve};
use isf_core::orchestrator::{Deployment, RunPlan, StagingSettings, TaskSpec};
use isf_core::producer::{CheckpointConfig, ProducerConfig};
use isf_core::{ResourcePlan, WorkflowMode};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("missing section `{0}`")]
    Missing(&'static str),
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub fn invalid(key: &str, reason: impl ToString) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub producer: Option<ProducerConfig>,
    pub checkpoint: Option<CheckpointSection>,
    #[serde(default)]
    pub staging: StagingSettings,
    #[serde(default)]
    pub tasks: TasksSection,
    pub run: Option<RunSection>,
    pub sweep: Option<SweepSection>,
    pub model: Option<ModelSection>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("isf-out")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasksSection {
    #[serde(default)]
    pub chain: Vec<TaskSpec>,
}

/// A worker count, or `"auto"` to take it from the split optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum Workers {
    Count(u32),
    Keyword(Auto),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub mode: WorkflowMode,
    pub p_t: u32,
    pub p_o: Option<Workers>,
    pub p_i: Option<Workers>,
    pub hybrid_split: Option<usize>,
    #[serde(default)]
    pub deployment: Deployment,
    #[serde(default)]
    pub device_sync_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// In-situ worker counts to try.
    pub p_i: Vec<u32>,
    /// Total worker counts ("node equivalents"); defaults to `run.p_t`.
    pub p_t: Option<Vec<u32>>,
    /// In-situ cadences; defaults to `producer.insitu_every`.
    pub insitu_every: Option<Vec<u64>>,
}

/// Scalar or list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSection {
    pub coeff_count: usize,
    pub spectrum_decay: OneOrMany<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint steps per decay value.
    #[serde(default = "one")]
    pub steps: u64,
    /// Codec names; all built-in codecs when absent.
    pub codecs: Option<Vec<String>>,
}

fn one() -> u64 {
    1
}

impl CheckpointSection {
    pub fn configs(&self) -> Vec<CheckpointConfig> {
        self.spectrum_decay
            .to_vec()
            .into_iter()
            .map(|d| CheckpointConfig {
                coeff_count: self.coeff_count,
                spectrum_decay: d,
                seed: self.seed,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Cost of one simulation step.
    pub sim: Option<ScalingCurve>,
    /// Cost of the staged task chain per in-situ step.
    pub task: Option<ScalingCurve>,
    #[serde(default)]
    pub handoff_s: f64,
    /// Hybrid prefix cost per in-situ step.
    pub prefix: Option<ScalingCurve>,
    /// Hybrid staged bytes over raw bytes.
    pub retention: Option<f64>,
    /// Total worker counts to scan; defaults to `run.p_t`.
    pub p_t: Option<OneOrMany<u32>>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Applies `--seed`.
    pub fn override_seed(&mut self, seed: u64) {
        if let Some(p) = &mut self.producer {
            p.seed = seed;
        }
        if let Some(c) = &mut self.checkpoint {
            c.seed = seed;
        }
    }

    pub fn producer(&self) -> Result<&ProducerConfig, ConfigError> {
        let p = self.producer.as_ref().ok_or(ConfigError::Missing("producer"))?;
        p.validate().map_err(|e| ConfigError::invalid("producer", e))?;
        Ok(p)
    }

    pub fn run_section(&self) -> Result<&RunSection, ConfigError> {
        self.run.as_ref().ok_or(ConfigError::Missing("run"))
    }

    /// Model parameters from the `model` section and producer cadence,
    /// with curves supplied or overridden by `fitted`.
    pub fn model_params(&self, fitted: Option<(ScalingCurve, ScalingCurve)>) -> Result<ModelParams, ConfigError> {
        let producer = self.producer()?;
        let section = self.model.as_ref();
        let (sim, task) = match fitted {
            Some(c) => c,
            None => {
                let m = section.ok_or_else(|| {
                    ConfigError::invalid("model", "no scaling curves supplied and no fit data given")
                })?;
                match (m.sim, m.task) {
                    (Some(s), Some(t)) => (s, t),
                    _ => {
                        return Err(ConfigError::invalid(
                            "model",
                            "both `model.sim` and `model.task` curves are required",
                        ))
                    }
                }
            }
        };
        let hybrid = section.and_then(|m| match (m.prefix, m.retention) {
            (Some(prefix), Some(retention)) => Some(HybridTerms { prefix, retention }),
            _ => None,
        });
        let params = ModelParams {
            sim,
            task,
            steps: producer.steps,
            cadence: producer.insitu_every,
            handoff_s: section.map_or(0.0, |m| m.handoff_s),
            hybrid,
        };
        params.validate().map_err(|e| ConfigError::invalid("model", e))?;
        Ok(params)
    }

    /// Resolves the `run` section into a plan. `auto` worker counts are
    /// filled in by `choose_split`.
    pub fn run_plan(
        &self,
        choose_split: impl FnOnce(WorkflowMode, u32) -> Result<ResourcePlan, ConfigError>,
    ) -> Result<RunPlan, ConfigError> {
        let producer = self.producer()?.clone();
        let run = self.run_section()?;
        let auto = matches!(run.p_o, Some(Workers::Keyword(_))) || matches!(run.p_i, Some(Workers::Keyword(_)));
        let plan = if auto {
            if run.mode == WorkflowMode::Synchronous {
                return Err(ConfigError::invalid("run.plan", "`auto` applies only to staged modes"));
            }
            choose_split(run.mode, run.p_t)?
        } else {
            let count = |w: Option<Workers>| match w {
                Some(Workers::Count(n)) => Some(n),
                _ => None,
            };
            let (po, pi) = match (count(run.p_o), count(run.p_i), run.mode) {
                (Some(o), Some(i), _) => (o, i),
                (None, None, WorkflowMode::Synchronous) => (run.p_t, 0),
                (Some(o), None, _) => (o, run.p_t.saturating_sub(o)),
                (None, Some(i), _) => (run.p_t.saturating_sub(i), i),
                (None, None, _) => {
                    return Err(ConfigError::invalid("run.plan", "staged modes need `p_o` or `p_i`"))
                }
            };
            let plan = ResourcePlan::new(run.p_t, po, pi).map_err(|e| ConfigError::invalid("run.plan", e))?;
            plan.validate_for(run.mode).map_err(|e| ConfigError::invalid("run.plan", e))?;
            plan
        };
        let hybrid_split = match run.mode {
            WorkflowMode::Hybrid => Some(run.hybrid_split.unwrap_or(1)),
            _ => None,
        };
        let rp = RunPlan {
            mode: run.mode,
            plan,
            producer,
            chain: self.tasks.chain.clone(),
            hybrid_split,
            deployment: run.deployment,
            staging: self.staging.clone(),
            device_sync_s: run.device_sync_s,
        };
        rp.validate().map_err(|e| ConfigError::invalid(key_for(&e.to_string()), e))?;
        Ok(rp)
    }
}

/// Best guess at the config key a plan validation message is about.
fn key_for(message: &str) -> &'static str {
    if message.contains("tasks[") {
        "tasks.chain"
    } else if message.contains("hybrid_split") {
        "run.hybrid_split"
    } else if message.contains("capacity") || message.contains("watchdog") {
        "staging"
    } else if message.contains("device_sync") {
        "run.device_sync_s"
    } else if message.contains("p_o") || message.contains("p_i") || message.contains("p_t") {
        "run.plan"
    } else {
        "run"
    }
}
