//! Geometry, couplings and the electronic Hamiltonian H_el(theta).
//!
//! Basis order: chain sites first, left to right, then alpha, beta, eta.
//! Chain labels run from `-(N/2 - 1)` to `N/2`, so site 0 has `N/2 - 1`
//! sites to its left and `N/2` to its right.

use nalgebra::{DMatrix, Matrix3, Vector2};

use crate::config::{CouplingMode, ModelConfig};
use crate::error::{Error, Result};

/// Index bookkeeping for the `N + 3` basis states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sites {
    pub n_sites: usize,
}

impl Sites {
    pub fn new(n_sites: usize) -> Self {
        Sites { n_sites }
    }

    pub fn of(cfg: &ModelConfig) -> Self {
        Sites::new(cfg.n_sites())
    }

    pub fn dim(&self) -> usize {
        self.n_sites + 3
    }

    /// Basis index of chain site 0.
    pub fn attach(&self) -> usize {
        self.n_sites / 2 - 1
    }

    pub fn alpha(&self) -> usize {
        self.n_sites
    }

    pub fn beta(&self) -> usize {
        self.n_sites + 1
    }

    pub fn eta(&self) -> usize {
        self.n_sites + 2
    }

    /// Lowest and highest chain label.
    pub fn label_range(&self) -> (i64, i64) {
        let half = (self.n_sites / 2) as i64;
        (-(half - 1), half)
    }

    /// Chain label of a basis index, `None` for control-unit states.
    pub fn label(&self, index: usize) -> Option<i64> {
        (index < self.n_sites).then(|| index as i64 - self.attach() as i64)
    }

    /// Basis index of a chain label.
    pub fn index(&self, label: i64) -> Option<usize> {
        let (lo, hi) = self.label_range();
        (lo..=hi).contains(&label).then(|| (label - lo) as usize)
    }

    /// Basis indices of chain sites with label > 0.
    pub fn right(&self) -> std::ops::Range<usize> {
        self.attach() + 1..self.n_sites
    }

    /// Basis indices of chain sites with label < 0.
    pub fn left(&self) -> std::ops::Range<usize> {
        0..self.attach()
    }
}

/// Real symmetric `(N+3) x (N+3)` Hamiltonian at one angle.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectronicMatrix {
    pub theta: f64,
    pub matrix: DMatrix<f64>,
}

/// Position of a ring site at angle `theta`. Chain site n sits at (n, 0).
pub fn ring_position(cfg: &ModelConfig, theta: f64) -> Vector2<f64> {
    let u = &cfg.control_unit;
    Vector2::new(
        u.ring_radius * theta.sin(),
        -u.ring_center_offset + u.ring_radius * theta.cos(),
    )
}

/// Dipole coupling -C3/r^3.
pub fn dipole(c3: f64, r: f64) -> f64 {
    -c3 / (r * r * r)
}

/// Chord length between two ring angles.
pub fn chord(radius: f64, a: f64, b: f64) -> f64 {
    2.0 * radius * ((a - b) / 2.0).sin().abs()
}

/// Coupling between the mobile site at `theta` and a fixed point `q`,
/// with its first and second theta derivatives.
fn mobile_coupling(cfg: &ModelConfig, theta: f64, q: Vector2<f64>) -> (f64, f64, f64, f64) {
    let rr = cfg.control_unit.ring_radius;
    let c3 = cfg.control_unit.c3;
    let p = ring_position(cfg, theta);
    let dp = Vector2::new(rr * theta.cos(), -rr * theta.sin());
    let ddp = Vector2::new(-rr * theta.sin(), -rr * theta.cos());
    let v = p - q;
    let r = v.norm();
    let dr = v.dot(&dp) / r;
    let ddr = (dp.dot(&dp) + v.dot(&ddp) - dr * dr) / r;
    let f = dipole(c3, r);
    let df = 3.0 * c3 * dr / r.powi(4);
    let ddf = 3.0 * c3 * (-4.0 * dr * dr / r.powi(5) + ddr / r.powi(4));
    (r, f, df, ddf)
}

fn check_distance(cfg: &ModelConfig, a: &'static str, b: &'static str, r: f64, theta: f64) -> Result<()> {
    let min = cfg.control_unit.min_distance;
    if r < min {
        return Err(Error::Geometry {
            a,
            b,
            distance: r,
            min,
            theta,
        });
    }
    Ok(())
}

/// Isolated control-unit block, basis (alpha, beta, eta).
pub fn isolated_cu_hamiltonian(cfg: &ModelConfig, theta: f64) -> Result<Matrix3<f64>> {
    let u = &cfg.control_unit;
    let r_ab = chord(u.ring_radius, theta, u.theta_beta);
    let r_ae = chord(u.ring_radius, theta, u.theta_eta);
    let r_be = chord(u.ring_radius, u.theta_beta, u.theta_eta);
    check_distance(cfg, "alpha", "beta", r_ab, theta)?;
    check_distance(cfg, "alpha", "eta", r_ae, theta)?;
    check_distance(cfg, "beta", "eta", r_be, theta)?;
    let (w_ab, w_ae, w_be) = (dipole(u.c3, r_ab), dipole(u.c3, r_ae), dipole(u.c3, r_be));
    Ok(Matrix3::new(
        u.onsite_alpha, w_ab, w_ae, //
        w_ab, u.onsite_beta, w_be, //
        w_ae, w_be, u.onsite_eta,
    ))
}

/// Coupling W_0alpha(theta) between chain site 0 and the mobile site.
pub fn w0_alpha(cfg: &ModelConfig, theta: f64) -> Result<f64> {
    let (r, f, _, _) = mobile_coupling(cfg, theta, Vector2::zeros());
    check_distance(cfg, "site 0", "alpha", r, theta)?;
    Ok(f)
}

/// Coupling vector from the chain into the CU basis (alpha, beta, eta), one row per chain site.
/// In nearest-neighbour mode only site 0 to alpha is non-zero.
fn chain_cu_couplings(cfg: &ModelConfig, theta: f64) -> Result<Vec<(usize, usize, f64)>> {
    let s = Sites::of(cfg);
    let u = &cfg.control_unit;
    match cfg.coupling_mode {
        CouplingMode::NearestNeighborChain => Ok(vec![(s.attach(), s.alpha(), w0_alpha(cfg, theta)?)]),
        CouplingMode::FullDipole => {
            let mut out = Vec::new();
            let cu = [
                (s.alpha(), ring_position(cfg, theta)),
                (s.beta(), ring_position(cfg, u.theta_beta)),
                (s.eta(), ring_position(cfg, u.theta_eta)),
            ];
            for i in 0..s.n_sites {
                let site = Vector2::new(s.label(i).unwrap() as f64, 0.0);
                for &(c, pos) in &cu {
                    let r = (pos - site).norm();
                    check_distance(cfg, "chain", "control unit", r, theta)?;
                    out.push((i, c, dipole(u.c3, r)));
                }
            }
            Ok(out)
        }
    }
}

/// Electronic Hamiltonian at mobile angle `theta`.
pub fn build_hamiltonian(cfg: &ModelConfig, theta: f64) -> Result<ElectronicMatrix> {
    cfg.validate()?;
    let s = Sites::of(cfg);
    let d = s.dim();
    let mut h = DMatrix::zeros(d, d);
    let j = cfg.chain.hop_j;
    for i in 0..s.n_sites {
        h[(i, i)] = cfg.chain.onsite;
        if i + 1 < s.n_sites {
            h[(i, i + 1)] = j;
            h[(i + 1, i)] = j;
        }
    }
    let cu = isolated_cu_hamiltonian(cfg, theta)?;
    for a in 0..3 {
        for b in 0..3 {
            h[(s.alpha() + a, s.alpha() + b)] = cu[(a, b)];
        }
    }
    for (a, b, w) in chain_cu_couplings(cfg, theta)? {
        h[(a, b)] = w;
        h[(b, a)] = w;
    }
    Ok(ElectronicMatrix { theta, matrix: h })
}

/// One theta-dependent matrix element: position (row < col) with value and derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobileEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// Analytic first and second theta derivatives of H_el. Only couplings that
/// involve alpha depend on theta; they are returned as upper-triangle entries.
pub fn hamiltonian_derivatives(cfg: &ModelConfig, theta: f64) -> Result<Vec<MobileEntry>> {
    let s = Sites::of(cfg);
    let u = &cfg.control_unit;
    let mut fixed: Vec<(usize, Vector2<f64>)> = vec![
        (s.beta(), ring_position(cfg, u.theta_beta)),
        (s.eta(), ring_position(cfg, u.theta_eta)),
    ];
    match cfg.coupling_mode {
        CouplingMode::NearestNeighborChain => fixed.push((s.attach(), Vector2::zeros())),
        CouplingMode::FullDipole => {
            for i in 0..s.n_sites {
                fixed.push((i, Vector2::new(s.label(i).unwrap() as f64, 0.0)));
            }
        }
    }
    let mut out = Vec::with_capacity(fixed.len());
    for (other, q) in fixed {
        let (r, value, d1, d2) = mobile_coupling(cfg, theta, q);
        check_distance(cfg, "alpha", "neighbour", r, theta)?;
        let (row, col) = if other < s.alpha() { (other, s.alpha()) } else { (s.alpha(), other) };
        out.push(MobileEntry { row, col, value, d1, d2 });
    }
    Ok(out)
}

/// Bare-chain dispersion E = 2J cos k.
pub fn chain_dispersion(cfg: &ModelConfig, k: f64) -> f64 {
    2.0 * cfg.chain.hop_j * k.cos() + cfg.chain.onsite
}

/// Wavenumber in (0, pi) for an in-band energy, `None` outside the band.
pub fn wavenumber(cfg: &ModelConfig, energy: f64) -> Option<f64> {
    let x = (energy - cfg.chain.onsite) / (2.0 * cfg.chain.hop_j);
    (x.abs() < 1.0).then(|| x.acos())
}
