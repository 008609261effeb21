//! Transmission past a frozen control unit, and preset calibration.
//!
//! The CU hangs off chain site 0, so eliminating it leaves a single
//! impurity with energy-dependent on-site shift
//! `Sigma(E) = w^T (E - H_CU)^-1 w`. For a clean chain with hopping J the
//! transmission through such an impurity is `v^2 / (v^2 + Sigma^2)` with
//! `v = 2J sin k = sqrt(4J^2 - E^2)`.

use nalgebra::{SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{CouplingMode, ModelConfig};
use crate::error::{invalid, Error, Result};
use crate::model::{isolated_cu_hamiltonian, w0_alpha};

/// Relative distance to a CU level below which `E` counts as sitting on the pole.
pub const POLE_TOLERANCE: f64 = 1e-12;

/// Result of eliminating the control unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelfEnergy {
    Finite(f64),
    /// `E` coincides with a CU level that couples to the chain.
    Pole { level: f64 },
}

/// Eigen-decomposition of the isolated CU, levels ascending.
pub fn cu_levels(cfg: &ModelConfig, theta: f64) -> Result<(Vector3<f64>, nalgebra::Matrix3<f64>)> {
    let h = isolated_cu_hamiltonian(cfg, theta)?;
    let eig = SymmetricEigen::new(h);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let vecs = nalgebra::Matrix3::from_fn(|r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

fn require_side_coupled(cfg: &ModelConfig) -> Result<()> {
    if cfg.coupling_mode != CouplingMode::NearestNeighborChain {
        return Err(invalid(
            "coupling_mode",
            "static transmission needs the CU attached to site 0 only",
        ));
    }
    Ok(())
}

/// `Sigma(E, theta) = w^T (E - H_CU(theta))^-1 w`, real for real `E`.
pub fn cu_self_energy(cfg: &ModelConfig, energy: f64, theta: f64) -> Result<SelfEnergy> {
    require_side_coupled(cfg)?;
    let w = w0_alpha(cfg, theta)?;
    let (vals, vecs) = cu_levels(cfg, theta)?;
    let scale = 1.0 + vals.amax();
    let mut sigma = 0.0;
    for m in 0..3 {
        let g2 = (w * vecs[(0, m)]).powi(2);
        let gap = energy - vals[m];
        if gap.abs() <= POLE_TOLERANCE * scale {
            if g2 > 1e-24 * scale * scale {
                return Ok(SelfEnergy::Pole { level: vals[m] });
            }
            // Dark level: no weight on alpha, no pole.
            continue;
        }
        sigma += g2 / gap;
    }
    Ok(SelfEnergy::Finite(sigma))
}

/// Transmission and reflection probabilities `(T, R)` at in-band energy `E`.
pub fn transmission(cfg: &ModelConfig, energy: f64, theta: f64) -> Result<(f64, f64)> {
    let j = cfg.chain.hop_j;
    let e = energy - cfg.chain.onsite;
    if e.abs() >= 2.0 * j {
        return Err(Error::OutsideBand {
            energy,
            band: 2.0 * j,
        });
    }
    let v2 = 4.0 * j * j - e * e;
    let t = match cu_self_energy(cfg, energy, theta)? {
        SelfEnergy::Pole { .. } => 0.0,
        SelfEnergy::Finite(s) => v2 / (v2 + s * s),
    };
    Ok((t, 1.0 - t))
}

/// `T(E)` at fixed angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatteringCurve {
    pub energies: Vec<f64>,
    pub transmission: Vec<f64>,
    pub reflection: Vec<f64>,
    pub frozen_theta: f64,
}

impl ScatteringCurve {
    pub fn max_transmission(&self) -> f64 {
        self.transmission.iter().cloned().fold(0.0, f64::max)
    }
}

/// Evenly spaced energies on `[lo, hi]`.
pub fn energy_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

pub fn scan(cfg: &ModelConfig, energies: &[f64], theta: f64) -> Result<ScatteringCurve> {
    let mut t = Vec::with_capacity(energies.len());
    let mut r = Vec::with_capacity(energies.len());
    for &e in energies {
        let (a, b) = transmission(cfg, e, theta)?;
        t.push(a);
        r.push(b);
    }
    Ok(ScatteringCurve {
        energies: energies.to_vec(),
        transmission: t,
        reflection: r,
        frozen_theta: theta,
    })
}

/// Which isolated-CU level the calibration puts on resonance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResonantLevel {
    /// The level with the largest weight on the mobile site.
    MaxAlphaWeight,
    /// Level number in ascending order.
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTargets {
    pub level: ResonantLevel,
    /// Energy the chosen level is moved to.
    pub resonance_energy: f64,
    /// Upper bound on in-band transmission at `theta_alpha0`.
    pub max_transmission: f64,
    /// Scan half-range in units of J and number of scan points.
    pub scan_limit: f64,
    pub scan_points: usize,
}

impl Default for CalibrationTargets {
    fn default() -> Self {
        CalibrationTargets {
            level: ResonantLevel::MaxAlphaWeight,
            resonance_energy: 0.0,
            max_transmission: 0.07,
            scan_limit: 1.9,
            scan_points: 400,
        }
    }
}

fn max_t(cfg: &ModelConfig, targets: &CalibrationTargets) -> Result<f64> {
    let j = cfg.chain.hop_j;
    let es = energy_grid(-targets.scan_limit * j, targets.scan_limit * j, targets.scan_points);
    Ok(scan(cfg, &es, cfg.control_unit.theta_alpha0)?.max_transmission())
}

/// Calibrate a template.
///
/// 1. Shift all CU on-site energies equally so the chosen level sits at
///    `resonance_energy` at `theta_alpha0` (exact up to rounding).
/// 2. If the in-band transmission still exceeds the bound, move the ring
///    towards the chain: bisect `ring_center_offset` between the template
///    value and contact distance for the largest offset meeting the bound.
///    The CU levels do not depend on the offset, so step 1 stays valid.
pub fn calibrate(template: &ModelConfig, targets: &CalibrationTargets) -> Result<ModelConfig> {
    template.validate()?;
    require_side_coupled(template)?;
    let mut cfg = template.clone();
    let theta0 = cfg.control_unit.theta_alpha0;
    let (vals, vecs) = cu_levels(&cfg, theta0)?;
    let level = match targets.level {
        ResonantLevel::Index(i) if i < 3 => i,
        ResonantLevel::Index(i) => {
            return Err(Error::Calibration(format!("level index {i} out of range 0..3")))
        }
        ResonantLevel::MaxAlphaWeight => (0..3)
            .max_by(|&a, &b| vecs[(0, a)].abs().total_cmp(&vecs[(0, b)].abs()))
            .unwrap(),
    };
    cfg.shift_cu_onsite(targets.resonance_energy - vals[level]);
    // Pin the level exactly: repeat once against rounding in the eigen-solver.
    let (vals, _) = cu_levels(&cfg, theta0)?;
    cfg.shift_cu_onsite(targets.resonance_energy - vals[level]);

    if max_t(&cfg, targets)? <= targets.max_transmission {
        return Ok(cfg);
    }
    // The ring centre must stay far enough that site 0 and alpha do not touch.
    let u = &cfg.control_unit;
    let contact = u.ring_radius + 2.0 * u.min_distance;
    let mut lo = contact;
    let mut hi = u.ring_center_offset;
    let mut probe = cfg.clone();
    probe.control_unit.ring_center_offset = lo;
    let at_contact = max_t(&probe, targets)?;
    if at_contact > targets.max_transmission {
        return Err(Error::Calibration(format!(
            "max in-band T is {at_contact:.4} even with the ring at contact distance {lo:.4}; target {}",
            targets.max_transmission
        )));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        probe.control_unit.ring_center_offset = mid;
        if max_t(&probe, targets)? <= targets.max_transmission {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    cfg.control_unit.ring_center_offset = lo;
    Ok(cfg)
}
