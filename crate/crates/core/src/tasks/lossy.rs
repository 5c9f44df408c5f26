//! Energy-threshold spectral truncation.
//!
//! Each element and component is taken to cosine space, coefficients are
//! sorted by magnitude, and the shortest leading run that meets the error
//! bound is kept. Parseval's relation turns the L2 bound into a bound on
//! discarded coefficient energy; the L∞ bound uses the largest value any
//! basis function can take.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::block::CompressedBlock;
use super::dct::Dct3;
use super::TaskError;
use crate::field::{Field, FieldShape};

/// Relative safety margin on the truncation threshold so rounding in the
/// inverse transform cannot push the measured error over the bound.
const THRESHOLD_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    RelativeLInf,
    #[default]
    RelativeL2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossyConfig {
    pub max_error: f64,
    #[serde(default)]
    pub norm: ErrorNorm,
}

impl LossyConfig {
    pub fn new(max_error: f64, norm: ErrorNorm) -> Result<Self, TaskError> {
        let cfg = Self { max_error, norm };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if !(self.max_error > 0.0 && self.max_error < 1.0) {
            return Err(TaskError::InvalidConfig(format!(
                "max_error must lie in (0, 1), got {}",
                self.max_error
            )));
        }
        Ok(())
    }
}

struct ElementOutput {
    indices: Vec<u32>,
    values: Vec<f64>,
}

/// Compresses `field`, keeping per element and component the fewest
/// largest-magnitude cosine coefficients that satisfy `cfg`.
pub fn lossy_compress(field: &Field, cfg: &LossyConfig) -> Result<CompressedBlock, TaskError> {
    cfg.validate()?;
    let shape = field.shape();
    let dct = Dct3::new(shape.points as usize);
    let per_element: Vec<ElementOutput> = (0..shape.element_count())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(buf, scratch), e| compress_element(field.element(e), shape, &dct, cfg, buf, scratch),
        )
        .collect();

    let mut kept_counts = Vec::with_capacity(per_element.len());
    let total: usize = per_element.iter().map(|o| o.indices.len()).sum();
    let mut indices = Vec::with_capacity(total);
    let mut values = Vec::with_capacity(total);
    for out in per_element {
        kept_counts.push(out.indices.len() as u32);
        indices.extend(out.indices);
        values.extend(out.values);
    }
    Ok(CompressedBlock::new(shape, kept_counts, indices, values, None))
}

fn compress_element(
    data: &[f64],
    shape: FieldShape,
    dct: &Dct3,
    cfg: &LossyConfig,
    buf: &mut Vec<f64>,
    scratch: &mut Vec<f64>,
) -> ElementOutput {
    let comps = shape.components as usize;
    let n3 = shape.points_per_element();
    let mut out = ElementOutput {
        indices: Vec::new(),
        values: Vec::new(),
    };
    let mut order: Vec<usize> = Vec::with_capacity(n3);
    let mut tail = vec![0.0; n3 + 1];
    for c in 0..comps {
        buf.clear();
        buf.extend((0..n3).map(|p| data[p * comps + c]));
        let peak = buf.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        dct.forward(buf, scratch);

        order.clear();
        order.extend(0..n3);
        // Magnitude descending; index breaks ties so output is deterministic.
        order.sort_unstable_by(|&a, &b| buf[b].abs().total_cmp(&buf[a].abs()).then(a.cmp(&b)));

        // tail[k] = error measure of dropping order[k..], summed smallest first.
        tail[n3] = 0.0;
        let threshold = match cfg.norm {
            ErrorNorm::RelativeL2 => {
                for k in (0..n3).rev() {
                    let v = buf[order[k]];
                    tail[k] = tail[k + 1] + v * v;
                }
                cfg.max_error * cfg.max_error * tail[0] * (1.0 - THRESHOLD_MARGIN)
            }
            ErrorNorm::RelativeLInf => {
                let sup = dct.basis_sup();
                for k in (0..n3).rev() {
                    tail[k] = tail[k + 1] + buf[order[k]].abs() * sup;
                }
                cfg.max_error * peak * (1.0 - THRESHOLD_MARGIN)
            }
        };
        let keep = (0..=n3).find(|&k| tail[k] <= threshold).unwrap_or(n3);
        for &m in &order[..keep] {
            out.indices.push((m * comps + c) as u32);
            out.values.push(buf[m]);
        }
    }
    out
}

/// Rebuilds a field from the kept coefficients of `block`.
pub fn lossy_decompress(block: &CompressedBlock, shape: FieldShape) -> Result<Field, TaskError> {
    if block.shape != shape {
        return Err(TaskError::ShapeMismatch(format!(
            "block shape {:?} does not match requested {:?}",
            block.shape, shape
        )));
    }
    block.validate()?;
    let comps = shape.components as usize;
    let n3 = shape.points_per_element();
    let dct = Dct3::new(shape.points as usize);

    let mut offsets = Vec::with_capacity(block.kept_counts.len() + 1);
    offsets.push(0usize);
    for &k in &block.kept_counts {
        offsets.push(offsets.last().unwrap() + k as usize);
    }

    let mut values = vec![0.0; shape.value_count()];
    values
        .par_chunks_mut(shape.values_per_element())
        .enumerate()
        .for_each_init(
            || (vec![0.0; n3 * comps], Vec::new()),
            |(coeffs, scratch), (e, out)| {
                coeffs.iter_mut().for_each(|v| *v = 0.0);
                for j in offsets[e]..offsets[e + 1] {
                    let idx = block.indices[j] as usize;
                    let (mode, comp) = (idx / comps, idx % comps);
                    coeffs[comp * n3 + mode] = block.values[j];
                }
                for c in 0..comps {
                    let part = &mut coeffs[c * n3..(c + 1) * n3];
                    dct.inverse(part, scratch);
                    for (p, v) in part.iter().enumerate() {
                        out[p * comps + c] = *v;
                    }
                }
            },
        );
    Field::new(shape, values).map_err(|e| TaskError::ShapeMismatch(e.to_string()))
}

/// Relative error of `approx` against `reference` in the given norm.
/// Returns the absolute error when the reference norm is zero.
pub fn relative_error(reference: &Field, approx: &Field, norm: ErrorNorm) -> f64 {
    let pairs = reference.values().iter().zip(approx.values());
    let (num, den) = match norm {
        ErrorNorm::RelativeL2 => {
            let (n, d) = pairs.fold((0.0, 0.0), |(n, d), (a, b)| (n + (a - b) * (a - b), d + a * a));
            (n.sqrt(), d.sqrt())
        }
        ErrorNorm::RelativeLInf => pairs.fold((0.0_f64, 0.0_f64), |(n, d), (a, b)| {
            (n.max((a - b).abs()), d.max(a.abs()))
        }),
    };
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
