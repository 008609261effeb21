//! Model parameters and named presets.
//!
//! Units throughout: hbar = 1, energies in units of the chain hopping J,
//! times in 1/J, lengths in lattice spacings, angles in radians.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// How the chain talks to the control unit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Nearest-neighbour hopping on the chain, and only site 0 couples (to the mobile site alpha).
    #[default]
    NearestNeighborChain,
    /// Same chain, but every chain site couples to every control-unit site through -C3/r^3.
    FullDipole,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    /// Number of chain sites N, including the attachment site 0. Even.
    pub n_sites: usize,
    /// Nearest-neighbour hopping (energy).
    pub hop_j: f64,
    /// On-site energy of every chain site (energy).
    #[serde(default)]
    pub onsite: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlUnit {
    /// Dipole-dipole coefficient C3 (energy * length^3).
    pub c3: f64,
    /// Ring radius R (length).
    pub ring_radius: f64,
    /// Distance from chain site 0 to the ring centre (length).
    pub ring_center_offset: f64,
    /// Equilibrium angle of the mobile site alpha (rad).
    #[serde(default)]
    pub theta_alpha0: f64,
    /// Fixed angle of site beta (rad).
    pub theta_beta: f64,
    /// Fixed angle of site eta (rad).
    pub theta_eta: f64,
    /// On-site energies (energy).
    pub onsite_alpha: f64,
    pub onsite_beta: f64,
    pub onsite_eta: f64,
    /// Any two sites closer than this (length) are a geometry error.
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
}

fn default_min_distance() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vibration {
    /// Mass M of the mobile site (1/(J * length^2)); the moment of inertia is M R^2.
    pub mass: f64,
    /// Trap frequency omega (J).
    pub freq: f64,
}

/// Full physical parameterisation of chain, control unit and vibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub chain: ChainParams,
    pub control_unit: ControlUnit,
    pub vibration: Vibration,
    #[serde(default)]
    pub coupling_mode: CouplingMode,
}

impl ModelConfig {
    /// Check every invariant; the first violation is returned.
    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// All invariant violations, each naming its config key.
    pub fn violations(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let c = &self.chain;
        if c.n_sites < 4 || c.n_sites % 2 != 0 {
            out.push(invalid(
                "chain.n_sites",
                format!("must be even and >= 4 (got {}); the left part needs N/2-1 sites", c.n_sites),
            ));
        }
        if !(c.hop_j > 0.0) {
            out.push(invalid("chain.hop_j", "must be > 0"));
        }
        let u = &self.control_unit;
        if !(u.ring_radius > 0.0) {
            out.push(invalid("control_unit.ring_radius", "must be > 0"));
        }
        if !(u.min_distance > 0.0) {
            out.push(invalid("control_unit.min_distance", "must be > 0"));
        }
        let dtheta = (u.theta_beta - u.theta_eta).rem_euclid(2.0 * PI);
        if dtheta < 1e-12 || 2.0 * PI - dtheta < 1e-12 {
            out.push(invalid("control_unit.theta_eta", "beta and eta must sit at distinct angles"));
        }
        for (key, v) in [
            ("control_unit.c3", u.c3),
            ("control_unit.ring_center_offset", u.ring_center_offset),
            ("control_unit.theta_alpha0", u.theta_alpha0),
            ("control_unit.onsite_alpha", u.onsite_alpha),
            ("control_unit.onsite_beta", u.onsite_beta),
            ("control_unit.onsite_eta", u.onsite_eta),
            ("chain.onsite", c.onsite),
        ] {
            if !v.is_finite() {
                out.push(invalid(key, "must be finite"));
            }
        }
        let v = &self.vibration;
        if !(v.mass > 0.0) {
            out.push(invalid("vibration.mass", "must be > 0"));
        }
        if !(v.freq >= 0.0) {
            out.push(invalid("vibration.freq", "must be >= 0"));
        }
        out
    }

    pub fn n_sites(&self) -> usize {
        self.chain.n_sites
    }

    /// Hilbert-space dimension N + 3.
    pub fn dim(&self) -> usize {
        self.chain.n_sites + 3
    }

    /// Moment of inertia M R^2.
    pub fn inertia(&self) -> f64 {
        self.vibration.mass * self.control_unit.ring_radius.powi(2)
    }

    /// Ground-state density width sigma_theta = (2 M omega R^2)^(-1/2).
    pub fn sigma_theta(&self) -> f64 {
        (2.0 * self.inertia() * self.vibration.freq).sqrt().recip()
    }

    /// Set the mass so that the ground state has width `sigma` at the current omega.
    pub fn set_sigma_theta(&mut self, sigma: f64) {
        let r2 = self.control_unit.ring_radius.powi(2);
        self.vibration.mass = 1.0 / (2.0 * self.vibration.freq * r2 * sigma * sigma);
    }

    /// Shift all three control-unit on-site energies by `delta`.
    pub fn shift_cu_onsite(&mut self, delta: f64) {
        let u = &mut self.control_unit;
        u.onsite_alpha += delta;
        u.onsite_beta += delta;
        u.onsite_eta += delta;
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Named parameter sets. Each one is calibrated, see [`crate::statics::calibrate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Mobile site sits between beta and eta so CU levels slant strongly with theta.
    Slanted,
    /// Beta and eta placed symmetrically opposite alpha; levels barely depend on theta.
    Flat,
    /// Equilateral triangle, with a conical intersection at theta = 0.
    Ci,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Slanted, Preset::Flat, Preset::Ci];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Slanted => "slanted",
            Preset::Flat => "flat",
            Preset::Ci => "ci",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Uncalibrated template: geometry, coupling scale and vibration, CU energies zero.
    pub fn template(self) -> ModelConfig {
        let (r, offset, beta, eta, freq) = match self {
            Preset::Slanted => (1.0, 2.0, PI / 2.0, 5.0 * PI / 3.0, 4.0),
            Preset::Flat => (1.0, 2.0, 3.0 * PI / 4.0, 5.0 * PI / 4.0, 4.0),
            Preset::Ci => (0.5, 1.35, 2.0 * PI / 3.0, 4.0 * PI / 3.0, 1.0),
        };
        let mut cfg = ModelConfig {
            chain: ChainParams {
                n_sites: 100,
                hop_j: 1.0,
                onsite: 0.0,
            },
            control_unit: ControlUnit {
                c3: 5.0,
                ring_radius: r,
                ring_center_offset: offset,
                theta_alpha0: 0.0,
                theta_beta: beta,
                theta_eta: eta,
                onsite_alpha: 0.0,
                onsite_beta: 0.0,
                onsite_eta: 0.0,
                min_distance: default_min_distance(),
            },
            vibration: Vibration { mass: 1.0, freq },
            coupling_mode: CouplingMode::NearestNeighborChain,
        };
        cfg.set_sigma_theta(PRESET_SIGMA_THETA);
        cfg
    }

    /// Which isolated-CU level is put on resonance with the band centre.
    pub fn resonant_level(self) -> crate::statics::ResonantLevel {
        use crate::statics::ResonantLevel;
        match self {
            Preset::Slanted | Preset::Flat => ResonantLevel::MaxAlphaWeight,
            // The twofold level; the lower index of the pair.
            Preset::Ci => ResonantLevel::Index(1),
        }
    }

    /// Calibrated configuration.
    pub fn config(self) -> ModelConfig {
        let targets = crate::statics::CalibrationTargets {
            level: self.resonant_level(),
            ..Default::default()
        };
        crate::statics::calibrate(&self.template(), &targets)
            .expect("preset templates satisfy the default calibration targets")
    }
}

/// Vibrational ground-state width used by every preset (rad).
pub const PRESET_SIGMA_THETA: f64 = 0.2 / PI;
