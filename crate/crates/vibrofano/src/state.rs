//! Wavefunctions on (basis state x angle grid).

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::AngularGrid;

macro_rules! grid_field {
    ($(#[$m:meta])* $name:ident, $what:literal) => {
        $(#[$m])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            pub grid: AngularGrid,
            /// Number of components per grid point.
            pub dim: usize,
            /// Amplitudes, theta-major: component `c` at grid point `j` is `amp[j * dim + c]`.
            pub amp: Vec<Complex64>,
            /// Time (1/J).
            pub time: f64,
        }

        impl $name {
            pub fn zeros(grid: AngularGrid, dim: usize) -> Self {
                $name {
                    grid,
                    dim,
                    amp: vec![Complex64::new(0.0, 0.0); grid.n_points * dim],
                    time: 0.0,
                }
            }

            #[inline]
            pub fn at(&self, c: usize, j: usize) -> Complex64 {
                self.amp[j * self.dim + c]
            }

            #[inline]
            pub fn at_mut(&mut self, c: usize, j: usize) -> &mut Complex64 {
                &mut self.amp[j * self.dim + c]
            }

            /// All components at grid point `j`.
            pub fn column(&self, j: usize) -> &[Complex64] {
                &self.amp[j * self.dim..(j + 1) * self.dim]
            }

            /// `sum_c sum_j |amp|^2 dtheta`.
            pub fn norm_sqr(&self) -> f64 {
                self.amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.spacing()
            }

            pub fn normalize(&mut self) {
                let s = self.norm_sqr().sqrt();
                if s > 0.0 {
                    for a in &mut self.amp {
                        *a /= s;
                    }
                }
            }

            /// Theta-integrated probability per component.
            pub fn populations(&self) -> Vec<f64> {
                let mut p = vec![0.0; self.dim];
                for col in self.amp.chunks_exact(self.dim) {
                    for (pc, a) in p.iter_mut().zip(col) {
                        *pc += a.norm_sqr();
                    }
                }
                let d = self.grid.spacing();
                p.iter_mut().for_each(|x| *x *= d);
                p
            }

            /// Density `|amp(c, theta_j)|^2` as `[c][j]`.
            pub fn density(&self) -> Vec<Vec<f64>> {
                (0..self.dim)
                    .map(|c| (0..self.grid.n_points).map(|j| self.at(c, j).norm_sqr()).collect())
                    .collect()
            }

            pub fn check_matches(&self, grid: &AngularGrid, dim: usize) -> Result<()> {
                if self.grid != *grid || self.dim != dim {
                    return Err(Error::GridMismatch(format!(
                        "{} on {} points x {} components, expected {} x {}",
                        $what, self.grid.n_points, self.dim, grid.n_points, dim
                    )));
                }
                Ok(())
            }
        }
    };
}

grid_field!(
    /// Site-basis amplitudes phi_n(theta, t).
    Wavefunction,
    "wavefunction"
);

grid_field!(
    /// Amplitudes on Born-Oppenheimer surfaces, phi~_k(theta, t).
    SurfaceWavefunction,
    "surface wavefunction"
);
