//! Axis-aligned slice rendering to 8-bit RGB through a fixed colormap.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TaskError;
use crate::field::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ValueRange {
    Auto,
    Fixed { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub slice_axis: Axis,
    /// Fraction of the domain along `slice_axis`, in `[0, 1)`.
    pub slice_position: f64,
    pub width: u32,
    pub height: u32,
    pub value_range: ValueRange,
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.width == 0 || self.height == 0 {
            return Err(TaskError::InvalidConfig(format!(
                "image size {}x{} is empty",
                self.width, self.height
            )));
        }
        if !(0.0..1.0).contains(&self.slice_position) {
            return Err(TaskError::InvalidConfig(format!(
                "slice_position {} outside [0, 1)",
                self.slice_position
            )));
        }
        if let ValueRange::Fixed { lo, hi } = self.value_range {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(TaskError::DegenerateRange { lo, hi });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples; row 0 is the lowest coordinate.
    pub rgb: Vec<u8>,
}

impl Image {
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

/// The shipped 256-entry viridis table.
pub fn colormap() -> &'static [[u8; 3]; 256] {
    static TABLE: OnceLock<[[u8; 3]; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [[0u8; 3]; 256];
        let rows = include_str!("viridis.txt")
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let mut n = 0;
        for (entry, line) in table.iter_mut().zip(rows) {
            let mut it = line.split_whitespace().map(|t| t.parse::<u8>().expect("colormap entry"));
            *entry = [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
            n += 1;
        }
        assert_eq!(n, 256, "colormap must have 256 entries");
        table
    })
}

/// Colormap index for `value` under `[lo, hi]`, clamped.
pub fn colormap_index(value: f64, lo: f64, hi: f64) -> u8 {
    let t = ((value - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

/// Renders a slice of `field`. Vector fields render their magnitude.
///
/// Pixel `(i, j)` samples grid coordinate `(i·N/W, j·N/H)` in the slice
/// plane, so with `W = H = N` every pixel lands on a grid point.
pub fn render_slice(field: &Field, cfg: &RenderConfig) -> Result<Image, TaskError> {
    cfg.validate()?;
    let shape = field.shape();
    let n = shape.grid_points_per_axis();
    let comps = shape.components as usize;

    let scalar = |g: [usize; 3]| -> f64 {
        if comps == 1 {
            field.at(g[0], g[1], g[2], 0)
        } else {
            (0..comps).map(|c| field.at(g[0], g[1], g[2], c).powi(2)).sum::<f64>().sqrt()
        }
    };
    // Grid coordinate with the slice axis at `s` and plane axes at (u, v).
    let place = |s: usize, u: usize, v: usize| -> [usize; 3] {
        match cfg.slice_axis {
            Axis::X => [s, u, v],
            Axis::Y => [u, s, v],
            Axis::Z => [u, v, s],
        }
    };

    let s_pos = cfg.slice_position * n as f64;
    let s0 = (s_pos.floor() as usize).min(n - 1);
    let s_frac = s_pos - s0 as f64;
    let s1 = (s0 + 1) % n;
    let plane: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (u, v) = (k % n, k / n);
            let a = scalar(place(s0, u, v));
            if s_frac == 0.0 {
                a
            } else {
                a * (1.0 - s_frac) + scalar(place(s1, u, v)) * s_frac
            }
        })
        .collect();

    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let samples: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k % w, k / w);
            let gu = i as f64 * n as f64 / w as f64;
            let gv = j as f64 * n as f64 / h as f64;
            bilinear(&plane, n, gu, gv)
        })
        .collect();

    let (lo, hi) = match cfg.value_range {
        ValueRange::Fixed { lo, hi } => (lo, hi),
        ValueRange::Auto => {
            let lo = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo - 1.0, hi + 1.0)
            } else {
                (lo, hi)
            }
        }
    };
    let table = colormap();
    let rgb = samples
        .iter()
        .flat_map(|&v| table[colormap_index(v, lo, hi) as usize])
        .collect();
    Ok(Image {
        width: cfg.width,
        height: cfg.height,
        rgb,
    })
}

fn bilinear(plane: &[f64], n: usize, gu: f64, gv: f64) -> f64 {
    let (u0, v0) = (gu.floor() as usize % n, gv.floor() as usize % n);
    let (fu, fv) = (gu - gu.floor(), gv - gv.floor());
    let (u1, v1) = ((u0 + 1) % n, (v0 + 1) % n);
    let at = |u: usize, v: usize| plane[v * n + u];
    if fu == 0.0 && fv == 0.0 {
        return at(u0, v0);
    }
    let top = at(u0, v0) * (1.0 - fu) + at(u1, v0) * fu;
    let bottom = at(u0, v1) * (1.0 - fu) + at(u1, v1) * fu;
    top * (1.0 - fv) + bottom * fv
}
