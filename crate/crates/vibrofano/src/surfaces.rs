//! Born-Oppenheimer surfaces U_k(theta), eigenvector tracking, localisation
//! and non-adiabatic couplings.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::Result;
use crate::grid::AngularGrid;
use crate::model::{build_hamiltonian, hamiltonian_derivatives, Sites};
use crate::spectral::Spectral;
use crate::state::SurfaceWavefunction;

/// Gaps below this (in units of J) count as exact degeneracies.
pub const DEGENERACY_TOLERANCE: f64 = 1e-9;

/// Two overlaps closer than this make a tracking step ambiguous.
pub const TIE_TOLERANCE: f64 = 0.05;

/// Eigen-decomposition with eigenvalues ascending and real eigenvectors as columns.
pub fn sorted_eigen(h: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Where tracking could not decide cleanly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingFlag {
    /// Grid index of the later point of the step.
    pub theta_index: usize,
    pub surface: usize,
    /// Overlap magnitude accepted for this surface.
    pub overlap: f64,
}

/// Tracked surfaces over a grid.
#[derive(Clone, Debug)]
pub struct AdiabaticSpectrum {
    pub grid: AngularGrid,
    pub sites: Sites,
    /// `energies[j * dim + k]`.
    pub energies: Vec<f64>,
    /// Per grid point, eigenvectors as columns in tracked surface order.
    pub vectors: Vec<DMatrix<f64>>,
    /// Internal index of the surface labelled k = 0 (theta-averaged energy nearest 0).
    pub band_center: usize,
    pub flags: Vec<TrackingFlag>,
}

impl AdiabaticSpectrum {
    pub fn dim(&self) -> usize {
        self.sites.dim()
    }

    pub fn energy(&self, k: usize, j: usize) -> f64 {
        self.energies[j * self.dim() + k]
    }

    /// Band-centre label of internal surface `k`.
    pub fn label(&self, k: usize) -> i64 {
        k as i64 - self.band_center as i64
    }

    /// Internal index of band-centre label `k`.
    pub fn index_of(&self, label: i64) -> Option<usize> {
        let i = self.band_center as i64 + label;
        (0..self.dim() as i64).contains(&i).then_some(i as usize)
    }

    /// Energies of surface `k` over the grid.
    pub fn surface(&self, k: usize) -> Vec<f64> {
        (0..self.grid.n_points).map(|j| self.energy(k, j)).collect()
    }
}

/// Diagonalise at every grid point, then track surfaces by maximum overlap.
///
/// The first point's signs make each vector's largest component positive;
/// every later vector is flipped to overlap positively with its predecessor.
pub fn compute_spectrum(cfg: &ModelConfig, grid: &AngularGrid) -> Result<AdiabaticSpectrum> {
    cfg.validate()?;
    grid.validate()?;
    let sites = Sites::of(cfg);
    let dim = sites.dim();
    let raw: Vec<(Vec<f64>, DMatrix<f64>)> = grid
        .points()
        .into_par_iter()
        .map(|t| build_hamiltonian(cfg, t).map(|h| sorted_eigen(h.matrix)))
        .collect::<Result<_>>()?;

    let mut energies = Vec::with_capacity(dim * grid.n_points);
    let mut vectors: Vec<DMatrix<f64>> = Vec::with_capacity(grid.n_points);
    let mut flags = Vec::new();
    for (j, (vals, mut vecs)) in raw.into_iter().enumerate() {
        if j == 0 {
            for k in 0..dim {
                let col = vecs.column(k);
                let big = col.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
                if big < 0.0 {
                    vecs.column_mut(k).neg_mut();
                }
            }
            energies.extend_from_slice(&vals);
            vectors.push(vecs);
            continue;
        }
        let prev = &vectors[j - 1];
        let overlap = prev.transpose() * &vecs;
        let assign = assign_max_overlap(&overlap);
        let mut tracked = DMatrix::zeros(dim, dim);
        for k in 0..dim {
            let c = assign[k];
            let o = overlap[(k, c)];
            let sign = if o < 0.0 { -1.0 } else { 1.0 };
            tracked.set_column(k, &(vecs.column(c) * sign));
            energies.push(vals[c]);
            let second = (0..dim)
                .filter(|&x| x != c)
                .map(|x| overlap[(k, x)].abs())
                .fold(0.0, f64::max);
            if o.abs() < 0.5 || o.abs() - second < TIE_TOLERANCE {
                flags.push(TrackingFlag {
                    theta_index: j,
                    surface: k,
                    overlap: o.abs(),
                });
            }
        }
        vectors.push(tracked);
    }
    let n = grid.n_points as f64;
    let band_center = (0..dim)
        .min_by(|&a, &b| {
            let ma = (0..grid.n_points).map(|j| energies[j * dim + a]).sum::<f64>() / n;
            let mb = (0..grid.n_points).map(|j| energies[j * dim + b]).sum::<f64>() / n;
            ma.abs().total_cmp(&mb.abs())
        })
        .unwrap();
    Ok(AdiabaticSpectrum {
        grid: *grid,
        sites,
        energies,
        vectors,
        band_center,
        flags,
    })
}

/// Greedy assignment: repeatedly take the largest remaining |overlap|.
/// Returns `assign[previous surface] = new column`.
fn assign_max_overlap(overlap: &DMatrix<f64>) -> Vec<usize> {
    let n = overlap.nrows();
    // Fast path: every row's maximum is in a distinct column.
    let best: Vec<usize> = (0..n)
        .map(|k| (0..n).max_by(|&a, &b| overlap[(k, a)].abs().total_cmp(&overlap[(k, b)].abs())).unwrap())
        .collect();
    let mut seen = vec![false; n];
    if best.iter().all(|&c| !std::mem::replace(&mut seen[c], true)) {
        return best;
    }
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|k| (0..n).map(move |c| (k, c))).collect();
    pairs.sort_by(|a, b| overlap[*b].abs().total_cmp(&overlap[*a].abs()));
    let mut assign = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (k, c) in pairs {
        if assign[k] == usize::MAX && !used[c] {
            assign[k] = c;
            used[c] = true;
        }
    }
    assign
}

/// Left, right and control-unit weights of every surface at every grid point.
#[derive(Clone, Debug)]
pub struct LocalizationProfile {
    pub dim: usize,
    pub n_points: usize,
    /// Indexed `[j * dim + k]`.
    pub w_left: Vec<f64>,
    pub w_right: Vec<f64>,
    /// Sites 0, alpha, beta, eta.
    pub w_cu: Vec<f64>,
}

impl LocalizationProfile {
    pub fn left(&self, k: usize, j: usize) -> f64 {
        self.w_left[j * self.dim + k]
    }

    pub fn right(&self, k: usize, j: usize) -> f64 {
        self.w_right[j * self.dim + k]
    }

    pub fn cu(&self, k: usize, j: usize) -> f64 {
        self.w_cu[j * self.dim + k]
    }

    /// True where surface `k` lives mostly right of the attachment site.
    pub fn is_right(&self, k: usize, j: usize) -> bool {
        self.right(k, j) > self.left(k, j)
    }
}

pub fn localization(spectrum: &AdiabaticSpectrum) -> LocalizationProfile {
    let s = spectrum.sites;
    let dim = s.dim();
    let n = spectrum.grid.n_points;
    let mut w_left = vec![0.0; n * dim];
    let mut w_right = vec![0.0; n * dim];
    let mut w_cu = vec![0.0; n * dim];
    for (j, v) in spectrum.vectors.iter().enumerate() {
        for k in 0..dim {
            let col = v.column(k);
            let l: f64 = s.left().map(|i| col[i] * col[i]).sum();
            let r: f64 = s.right().map(|i| col[i] * col[i]).sum();
            w_left[j * dim + k] = l;
            w_right[j * dim + k] = r;
            // Remainder is site 0 and the CU; computed directly to keep the sum exact.
            w_cu[j * dim + k] = [s.attach(), s.alpha(), s.beta(), s.eta()]
                .iter()
                .map(|&i| col[i] * col[i])
                .sum();
        }
    }
    LocalizationProfile {
        dim,
        n_points: n,
        w_left,
        w_right,
        w_cu,
    }
}

/// First- and second-order couplings between surfaces.
#[derive(Clone, Debug)]
pub struct NacField {
    pub grid: AngularGrid,
    pub dim: usize,
    /// `first_order[j][(k, l)] = <psi_k | d/dtheta psi_l>`.
    pub first_order: Vec<DMatrix<f64>>,
    /// `second_order[j][(k, l)] = <psi_k | d^2/dtheta^2 psi_l>`.
    pub second_order: Vec<DMatrix<f64>>,
    /// `1 / (2 M R^2)`.
    pub mass_prefactor: f64,
    /// `(theta index, k, l)` where the gap was below [`DEGENERACY_TOLERANCE`]; entries there are 0.
    pub singular: Vec<(usize, usize, usize)>,
}

impl NacField {
    pub fn zeros(grid: AngularGrid, dim: usize, mass_prefactor: f64) -> Self {
        NacField {
            grid,
            dim,
            first_order: vec![DMatrix::zeros(dim, dim); grid.n_points],
            second_order: vec![DMatrix::zeros(dim, dim); grid.n_points],
            mass_prefactor,
            singular: Vec::new(),
        }
    }
}

/// Theta derivatives of H_el in the eigenframe at grid point `j`:
/// `(V^T H' V, V^T H'' V)`.
pub fn derivative_matrices(
    cfg: &ModelConfig,
    spectrum: &AdiabaticSpectrum,
    j: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let v = &spectrum.vectors[j];
    let dim = spectrum.dim();
    let mut d1 = DMatrix::zeros(dim, dim);
    let mut d2 = DMatrix::zeros(dim, dim);
    for e in hamiltonian_derivatives(cfg, spectrum.grid.point(j))? {
        let ra = v.row(e.row);
        let rb = v.row(e.col);
        let sym = ra.transpose() * rb + rb.transpose() * ra;
        d1 += &sym * e.d1;
        d2 += &sym * e.d2;
    }
    Ok((d1, d2))
}

/// Couplings from the Hellmann-Feynman theorem with analytic dH/dtheta.
///
/// First order: `<psi_k|psi_l'> = <psi_k|H'|psi_l> / (U_l - U_k)`.
/// Second order from differentiating the eigen-equation twice, using the
/// completeness of the frame for `psi_l' = sum_m psi_m <psi_m|psi_l'>`:
/// `(U_k - U_l) <psi_k|psi_l''> = -H''_kl - 2 [(H' G)_kl - U_l' G_kl]`,
/// and on the diagonal `<psi_l|psi_l''> = -|psi_l'|^2`.
pub fn nac_hellmann_feynman(cfg: &ModelConfig, spectrum: &AdiabaticSpectrum) -> Result<NacField> {
    let dim = spectrum.dim();
    let per_point: Vec<(DMatrix<f64>, DMatrix<f64>, Vec<(usize, usize, usize)>)> = (0..spectrum.grid.n_points)
        .into_par_iter()
        .map(|j| {
            let (h1, h2) = derivative_matrices(cfg, spectrum, j)?;
            let u = &spectrum.energies[j * dim..(j + 1) * dim];
            let mut singular = Vec::new();
            let mut g1 = DMatrix::zeros(dim, dim);
            for k in 0..dim {
                for l in 0..dim {
                    if k == l {
                        continue;
                    }
                    let gap = u[l] - u[k];
                    if gap.abs() < DEGENERACY_TOLERANCE {
                        singular.push((j, k, l));
                    } else {
                        g1[(k, l)] = h1[(k, l)] / gap;
                    }
                }
            }
            let hg = &h1 * &g1;
            let mut g2 = DMatrix::zeros(dim, dim);
            for l in 0..dim {
                let du = h1[(l, l)];
                for k in 0..dim {
                    if k == l {
                        g2[(l, l)] = -g1.column(l).norm_squared();
                        continue;
                    }
                    let gap = u[k] - u[l];
                    if gap.abs() >= DEGENERACY_TOLERANCE {
                        g2[(k, l)] = -(h2[(k, l)] + 2.0 * (hg[(k, l)] - du * g1[(k, l)])) / gap;
                    }
                }
            }
            Ok((g1, g2, singular))
        })
        .collect::<Result<_>>()?;
    let mut field = NacField::zeros(spectrum.grid, dim, 1.0 / (2.0 * cfg.inertia()));
    for (j, (g1, g2, s)) in per_point.into_iter().enumerate() {
        field.first_order[j] = g1;
        field.second_order[j] = g2;
        field.singular.extend(s);
    }
    Ok(field)
}

/// Finite-difference first-order couplings `<psi_k(theta_j)| (psi_l(theta_{j+1}) - psi_l(theta_{j-1})) / 2h>`
/// at interior grid points; the end points are left at zero.
pub fn nac_finite_difference(spectrum: &AdiabaticSpectrum) -> Vec<DMatrix<f64>> {
    let n = spectrum.grid.n_points;
    let dim = spectrum.dim();
    let h = spectrum.grid.spacing();
    let mut out = vec![DMatrix::zeros(dim, dim); n];
    for j in 1..n.saturating_sub(1) {
        let dv = (&spectrum.vectors[j + 1] - &spectrum.vectors[j - 1]) / (2.0 * h);
        out[j] = spectrum.vectors[j].transpose() * dv;
    }
    out
}

/// Apply the coupling operator `sum_l D_kl phi~_l` with
/// `D_kl = -(1/2MR^2) (<psi_k|psi_l''> + 2 <psi_k|psi_l'> d/dtheta)`.
pub fn nac_apply(nac: &NacField, phi: &SurfaceWavefunction) -> Result<SurfaceWavefunction> {
    phi.check_matches(&nac.grid, nac.dim)?;
    let spectral = Spectral::new(&nac.grid);
    Ok(nac_apply_with(nac, phi, &spectral))
}

pub(crate) fn nac_apply_with(nac: &NacField, phi: &SurfaceWavefunction, spectral: &Spectral) -> SurfaceWavefunction {
    let dim = nac.dim;
    let dphi = spectral.derivative(&phi.amp, dim);
    let mut out = SurfaceWavefunction::zeros(nac.grid, dim);
    out.time = phi.time;
    let pref = -nac.mass_prefactor;
    for j in 0..nac.grid.n_points {
        let g1 = &nac.first_order[j];
        let g2 = &nac.second_order[j];
        let p = &phi.amp[j * dim..(j + 1) * dim];
        let dp = &dphi[j * dim..(j + 1) * dim];
        let o = &mut out.amp[j * dim..(j + 1) * dim];
        for l in 0..dim {
            let (a, b) = (p[l], dp[l] * 2.0);
            if a == Complex64::new(0.0, 0.0) && b == Complex64::new(0.0, 0.0) {
                continue;
            }
            for k in 0..dim {
                o[k] += (a * g2[(k, l)] + b * g1[(k, l)]) * pref;
            }
        }
    }
    out
}
