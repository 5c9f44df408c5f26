//! Orthonormal 3-D type-II cosine transform over one `P³` element.

use std::f64::consts::PI;

/// Precomputed `P×P` orthonormal DCT-II basis applied separably along
/// each axis. Row `k` of the matrix is basis function `k`.
#[derive(Debug, Clone)]
pub struct Dct3 {
    n: usize,
    matrix: Vec<f64>,
}

impl Dct3 {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut matrix = vec![0.0; n * n];
        for k in 0..n {
            let scale = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                matrix[k * n + i] = scale * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
            }
        }
        Self { n, matrix }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Largest absolute value any 3-D basis function takes.
    pub fn basis_sup(&self) -> f64 {
        let sup_1d = self.matrix.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        sup_1d.powi(3)
    }

    /// Samples to coefficients; `data` is `n³` long, x fastest.
    pub fn forward(&self, data: &mut [f64], scratch: &mut Vec<f64>) {
        self.apply(data, scratch, false);
    }

    /// Coefficients to samples.
    pub fn inverse(&self, data: &mut [f64], scratch: &mut Vec<f64>) {
        self.apply(data, scratch, true);
    }

    fn apply(&self, data: &mut [f64], scratch: &mut Vec<f64>, transpose: bool) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n);
        scratch.clear();
        scratch.resize(n, 0.0);
        for stride in [1, n, n * n] {
            for base in 0..n * n {
                // `base` enumerates the n² lines along this axis.
                let start = match stride {
                    1 => base * n,
                    s if s == n => (base / n) * n * n + base % n,
                    _ => base,
                };
                for (k, out) in scratch.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for i in 0..n {
                        let m = if transpose {
                            self.matrix[i * n + k]
                        } else {
                            self.matrix[k * n + i]
                        };
                        acc += m * data[start + i * stride];
                    }
                    *out = acc;
                }
                for (k, v) in scratch.iter().enumerate() {
                    data[start + k * stride] = *v;
                }
            }
        }
    }
}
