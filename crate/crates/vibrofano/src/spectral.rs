//! FFT helpers along the angle axis of theta-major fields.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::AngularGrid;

/// Forward and inverse transforms for one grid, plus its momenta.
#[derive(Clone)]
pub struct Spectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    pub momenta: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("n", &self.n).finish()
    }
}

impl Spectral {
    pub fn new(grid: &AngularGrid) -> Self {
        let mut planner = FftPlanner::new();
        let n = grid.n_points;
        Spectral {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            momenta: grid.momenta(),
        }
    }

    /// Multiply every theta column of a theta-major `[j * dim + c]` field
    /// by `factor[m]` in momentum space.
    pub fn apply_diagonal(&self, field: &mut [Complex64], dim: usize, factor: &[Complex64]) {
        let n = self.n;
        debug_assert_eq!(field.len(), n * dim);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let inv_n = 1.0 / n as f64;
        for c in 0..dim {
            for j in 0..n {
                buf[j] = field[j * dim + c];
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (b, f) in buf.iter_mut().zip(factor) {
                *b *= f * inv_n;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            for j in 0..n {
                field[j * dim + c] = buf[j];
            }
        }
    }

    /// Spectral derivative of a theta-major field, column by column.
    pub fn derivative(&self, field: &[Complex64], dim: usize) -> Vec<Complex64> {
        let factor: Vec<Complex64> = self.momenta.iter().map(|&p| Complex64::new(0.0, p)).collect();
        let mut out = field.to_vec();
        self.apply_diagonal(&mut out, dim, &factor);
        out
    }

    /// `sum_m |f(p_m)|^2 g(p_m)` per column summed, normalised so that for
    /// `g = 1` it equals `sum_j |f(theta_j)|^2`.
    pub fn momentum_expectation(&self, field: &[Complex64], dim: usize, g: &[f64]) -> f64 {
        let n = self.n;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.forward.get_inplace_scratch_len()];
        let mut total = 0.0;
        for c in 0..dim {
            for j in 0..n {
                buf[j] = field[j * dim + c];
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            total += buf.iter().zip(g).map(|(b, w)| b.norm_sqr() * w).sum::<f64>();
        }
        total / n as f64
    }
}
