//! Periodic grid for the mobile angle.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Uniform periodic grid on `[-half_width, half_width)`.
///
/// `half_width = pi` is the whole ring. Transport runs use a narrower window
/// around the trap minimum: the ring contains angles where alpha lands on
/// beta or eta, and the whole ring at 256 points would not resolve the
/// vibrational ground state anyway.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngularGrid {
    pub n_points: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

fn default_half_width() -> f64 {
    PI
}

impl AngularGrid {
    pub fn new(n_points: usize, half_width: f64) -> Result<Self> {
        let g = AngularGrid { n_points, half_width };
        g.validate()?;
        Ok(g)
    }

    /// The full ring `[-pi, pi)`.
    pub fn full_ring(n_points: usize) -> Result<Self> {
        Self::new(n_points, PI)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || !self.n_points.is_power_of_two() {
            return Err(invalid("grid.n_points", "must be a power of two"));
        }
        if !(self.half_width > 0.0 && self.half_width <= PI) {
            return Err(invalid("grid.half_width", "must lie in (0, pi]"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        self.n_points == 0
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.n_points as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.point(j)).collect()
    }

    /// Angular momenta conjugate to the grid, in FFT order.
    pub fn momenta(&self) -> Vec<f64> {
        let n = self.n_points as i64;
        let scale = 2.0 * PI / (n as f64 * self.spacing());
        (0..n)
            .map(|m| {
                let m = if m < (n + 1) / 2 { m } else { m - n };
                m as f64 * scale
            })
            .collect()
    }

    /// Index of the grid point nearest `theta`.
    pub fn nearest(&self, theta: f64) -> usize {
        let j = ((theta + self.half_width) / self.spacing()).round();
        (j.max(0.0) as usize).min(self.n_points - 1)
    }

    /// Smallest power-of-two point count that puts at least `per_sigma`
    /// points inside one `sigma` at this half width.
    pub fn points_to_resolve(half_width: f64, sigma: f64, per_sigma: f64) -> usize {
        let needed = (2.0 * half_width * per_sigma / sigma).ceil() as usize;
        needed.max(1).next_power_of_two()
    }
}
