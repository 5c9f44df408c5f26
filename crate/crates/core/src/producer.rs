//! Deterministic synthetic producer standing in for the simulation.
//!
//! Fields are the analytic decaying Taylor-Green vortex; compute cost is
//! emulated by busy work that ends on a wall-clock deadline, so desk runs
//! reproduce sim-bound and task-bound regimes regardless of core count.

use std::f64::consts::PI;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Field, FieldError, FieldShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProducerError {
    #[error("invalid producer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Shape(#[from] FieldError),
    #[error("step {step} out of range (run has {steps} steps)")]
    StepOutOfRange { step: u64, steps: u64 },
    #[error("calibration failed: target {target_s:e} s, best achieved {best_s:e} s after {rounds} rounds")]
    CalibrationFailed {
        target_s: f64,
        best_s: f64,
        rounds: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CostModel {
    /// Spin for `ns_per_point` nanoseconds per grid point.
    BusySpin { ns_per_point: f64 },
    /// Spin for `target_step_s` seconds, after a calibration pass.
    Calibrated { target_step_s: f64 },
}

fn default_domain_length() -> f64 {
    2.0 * PI
}

fn default_serial_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerConfig {
    pub elements: u32,
    pub points: u32,
    pub components: u32,
    pub steps: u64,
    pub insitu_every: u64,
    pub dt: f64,
    pub nu: f64,
    pub cost: CostModel,
    pub seed: u64,
    /// Physical edge length of the periodic box.
    #[serde(default = "default_domain_length")]
    pub domain_length: f64,
    /// Fraction of the per-step cost that does not shrink with producer
    /// workers. 1.0 models a device-resident solver whose step time does
    /// not depend on host cores.
    #[serde(default = "default_serial_fraction")]
    pub serial_fraction: f64,
}

impl ProducerConfig {
    pub fn shape(&self) -> Result<FieldShape, FieldError> {
        FieldShape::new(self.elements, self.points, self.components)
    }

    pub fn validate(&self) -> Result<(), ProducerError> {
        self.shape()?;
        if self.steps < 1 {
            return Err(ProducerError::InvalidConfig("steps must be >= 1".into()));
        }
        if self.insitu_every < 1 {
            return Err(ProducerError::InvalidConfig("insitu_every must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(ProducerError::InvalidConfig(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.domain_length > 0.0) {
            return Err(ProducerError::InvalidConfig("domain_length must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.serial_fraction) {
            return Err(ProducerError::InvalidConfig("serial_fraction must lie in [0, 1]".into()));
        }
        match self.cost {
            CostModel::BusySpin { ns_per_point } if !(ns_per_point >= 0.0) => Err(
                ProducerError::InvalidConfig("ns_per_point must be >= 0".into()),
            ),
            CostModel::Calibrated { target_step_s } if !(target_step_s > 0.0) => Err(
                ProducerError::InvalidConfig("target_step_s must be > 0".into()),
            ),
            _ => Ok(()),
        }
    }

    /// True when the in-situ chain runs after `step`.
    pub fn is_insitu_step(&self, step: u64) -> bool {
        (step + 1) % self.insitu_every == 0
    }

    pub fn insitu_step_count(&self) -> u64 {
        self.steps / self.insitu_every
    }

    pub fn sim_time(&self, step: u64) -> f64 {
        step as f64 * self.dt
    }
}

/// Analytic Taylor-Green velocity at `t = step·dt`:
/// `u = cos x sin y sin z·e^(−2νt)`, `v = −sin x cos y sin z·e^(−2νt)`,
/// `w = 0`. A scalar field carries `u` only. Element-parallel on the
/// current rayon pool; output is independent of pool size.
pub fn tgv_field(cfg: &ProducerConfig, step: u64) -> Result<Field, ProducerError> {
    cfg.validate()?;
    if step >= cfg.steps {
        return Err(ProducerError::StepOutOfRange {
            step,
            steps: cfg.steps,
        });
    }
    let shape = cfg.shape()?;
    let n = shape.grid_points_per_axis();
    let h = cfg.domain_length / n as f64;
    let (sin, cos): (Vec<f64>, Vec<f64>) = (0..n).map(|g| (g as f64 * h).sin_cos()).unzip();
    let amp = (-2.0 * cfg.nu * cfg.sim_time(step)).exp();
    let comps = shape.components as usize;

    let mut values = vec![0.0; shape.value_count()];
    values
        .par_chunks_mut(shape.values_per_element())
        .enumerate()
        .for_each(|(e, out)| {
            for p in 0..shape.points_per_element() {
                let [gx, gy, gz] = shape.global_coords(e, p);
                out[p * comps] = amp * cos[gx] * sin[gy] * sin[gz];
                if comps == 3 {
                    out[p * comps + 1] = -amp * sin[gx] * cos[gy] * sin[gz];
                    out[p * comps + 2] = 0.0;
                }
            }
        });
    Ok(Field::new(shape, values)?)
}

/// Busy work sized so that one run lands on a wall-clock target.
#[derive(Debug, Clone)]
pub struct ComputeKernel {
    base_s: f64,
    serial_fraction: f64,
    chunk: u64,
}

const CALIBRATION_ROUNDS: u32 = 5;
/// Clock checks per target interval.
const CHUNKS_PER_TARGET: f64 = 64.0;

impl ComputeKernel {
    pub fn prepare(cfg: &ProducerConfig) -> Result<Self, ProducerError> {
        cfg.validate()?;
        match cfg.cost {
            CostModel::BusySpin { ns_per_point } => {
                let points = cfg.shape()?.element_count() * cfg.shape()?.points_per_element();
                Ok(Self {
                    base_s: ns_per_point * points as f64 * 1e-9,
                    serial_fraction: cfg.serial_fraction,
                    chunk: 256,
                })
            }
            CostModel::Calibrated { target_step_s } => {
                let chunk = calibrate(target_step_s)?;
                Ok(Self {
                    base_s: target_step_s,
                    serial_fraction: cfg.serial_fraction,
                    chunk,
                })
            }
        }
    }

    /// Wall time one step takes on `workers` producer workers.
    pub fn step_cost_s(&self, workers: u32) -> f64 {
        let p = f64::from(workers.max(1));
        self.base_s * (self.serial_fraction + (1.0 - self.serial_fraction) / p)
    }

    /// Burns CPU for one step's cost; returns measured seconds.
    pub fn run(&self, workers: u32) -> f64 {
        let start = Instant::now();
        spin_for(Duration::from_secs_f64(self.step_cost_s(workers)), self.chunk);
        start.elapsed().as_secs_f64()
    }
}

/// Prepares the kernel and runs one step on a single worker.
pub fn run_compute_phase(cfg: &ProducerConfig) -> Result<f64, ProducerError> {
    Ok(ComputeKernel::prepare(cfg)?.run(1))
}

/// Spins in chunks of `chunk` iterations until `duration` has elapsed,
/// yielding between chunks so co-scheduled workers make progress.
pub fn spin_for(duration: Duration, chunk: u64) {
    let start = Instant::now();
    if duration.is_zero() {
        return;
    }
    let mut acc = 1.0_f64;
    loop {
        for _ in 0..chunk {
            acc = black_box(acc * 1.000_000_1 + 1e-9);
        }
        if start.elapsed() >= duration {
            break;
        }
        std::thread::yield_now();
    }
    black_box(acc);
}

fn calibrate(target_s: f64) -> Result<u64, ProducerError> {
    // Iteration speed from a short probe.
    let probe = 10_000u64;
    let t0 = Instant::now();
    spin_chunk(probe);
    let per_iter = (t0.elapsed().as_secs_f64() / probe as f64).max(1e-12);
    let mut chunk = ((target_s / CHUNKS_PER_TARGET) / per_iter).max(1.0) as u64;

    let mut best = f64::INFINITY;
    for _ in 0..CALIBRATION_ROUNDS {
        let start = Instant::now();
        spin_for(Duration::from_secs_f64(target_s), chunk);
        let took = start.elapsed().as_secs_f64();
        best = best.min(took);
        if took <= 2.0 * target_s {
            return Ok(chunk);
        }
        chunk = (chunk / 4).max(1);
    }
    Err(ProducerError::CalibrationFailed {
        target_s,
        best_s: best,
        rounds: CALIBRATION_ROUNDS,
    })
}

fn spin_chunk(n: u64) {
    let mut acc = 1.0_f64;
    for _ in 0..n {
        acc = black_box(acc * 1.000_000_1 + 1e-9);
    }
    black_box(acc);
}

/// Synthetic wave-function coefficients for checkpoint compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub coeff_count: usize,
    pub spectrum_decay: f64,
    pub seed: u64,
}

/// Relative spread of the multiplicative log-normal magnitude noise.
pub const CHECKPOINT_NOISE: f64 = 0.1;
/// Coefficients smaller than this are below the solver's convergence
/// tolerance and are stored as exact zeros.
pub const CHECKPOINT_FLOOR: f64 = 1e-9;
/// Absolute precision of stored coefficients (2⁻⁶⁰), so small
/// coefficients carry fewer significant bits than large ones.
pub const CHECKPOINT_QUANTUM: f64 = 8.673_617_379_884_035e-19;

impl CheckpointConfig {
    pub fn validate(&self) -> Result<(), ProducerError> {
        if self.coeff_count < 1 {
            return Err(ProducerError::InvalidConfig("coeff_count must be >= 1".into()));
        }
        if !(self.spectrum_decay >= 0.0) {
            return Err(ProducerError::InvalidConfig("spectrum_decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Noise-free magnitude of coefficient `k` (1-based): `k^(−decay)`.
    pub fn base_magnitude(&self, k: usize) -> f64 {
        (k as f64).powf(-self.spectrum_decay)
    }
}

/// Interleaved `re, im` pairs, `2·coeff_count` long. Deterministic in
/// `(seed, step)`.
pub fn checkpoint_coeffs(cfg: &CheckpointConfig, step: u64) -> Result<Vec<f64>, ProducerError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(step);
    let mut out = Vec::with_capacity(2 * cfg.coeff_count);
    for k in 1..=cfg.coeff_count {
        let noise: f64 = rng.sample(StandardNormal);
        let mag = cfg.base_magnitude(k) * (CHECKPOINT_NOISE * noise).exp();
        let phase = rng.gen_range(0.0..2.0 * PI);
        let (s, c) = phase.sin_cos();
        let (re, im) = if mag < CHECKPOINT_FLOOR {
            (0.0, 0.0)
        } else {
            (quantize(mag * c), quantize(mag * s))
        };
        out.push(re);
        out.push(im);
    }
    Ok(out)
}

fn quantize(v: f64) -> f64 {
    (v / CHECKPOINT_QUANTUM).round() * CHECKPOINT_QUANTUM
}

/// Little-endian bytes of a coefficient array.
pub fn coeff_bytes(coeffs: &[f64]) -> Vec<u8> {
    coeffs.iter().flat_map(|v| v.to_le_bytes()).collect()
}
