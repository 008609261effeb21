//! Wavepacket propagation in the site basis and on Born-Oppenheimer surfaces.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{invalid, Error, Result};
use crate::grid::AngularGrid;
use crate::model::{build_hamiltonian, Sites};
use crate::spectral::Spectral;
use crate::state::{SurfaceWavefunction, Wavefunction};
use crate::surfaces::{sorted_eigen, AdiabaticSpectrum, NacField};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Incoming Gaussian packet on the left chain, times a trap eigenstate in theta.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    /// Carrier wavenumber in (0, pi); energy 2J cos k.
    pub k: f64,
    /// Centre site label (negative).
    pub n0: i64,
    /// Width in sites.
    pub sigma: f64,
    /// Vibrational quantum number.
    pub nu: usize,
}

impl PacketSpec {
    /// Packet whose energy distribution has standard deviation `sigma_e` (units of J).
    pub fn with_energy_width(k: f64, n0: i64, sigma_e: f64, nu: usize) -> Self {
        PacketSpec {
            k,
            n0,
            sigma: sigma_for_energy_width(k, sigma_e),
            nu,
        }
    }
}

/// Site width giving energy spread `sigma_e` at carrier `k` (J = 1):
/// `dE/dk = 2 sin k` and the momentum density has width `1/(sqrt 2 sigma)`.
pub fn sigma_for_energy_width(k: f64, sigma_e: f64) -> f64 {
    std::f64::consts::SQRT_2 * k.sin().abs() / sigma_e
}

/// Normalised Hermite functions `h_0 ..= h_nu` at `x`.
pub fn hermite_functions(nu: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(nu + 1);
    let h0 = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(h0);
    if nu >= 1 {
        out.push(std::f64::consts::SQRT_2 * x * h0);
    }
    for n in 1..nu {
        let n_f = n as f64;
        let next = (2.0 / (n_f + 1.0)).sqrt() * x * out[n] - (n_f / (n_f + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// Trap eigenstate `phi_nu(theta - theta_alpha0)` on the grid, normalised on the grid.
pub fn vibrational_state(cfg: &ModelConfig, grid: &AngularGrid, nu: usize) -> Vec<f64> {
    let scale = (cfg.inertia() * cfg.vibration.freq).sqrt();
    let theta0 = cfg.control_unit.theta_alpha0;
    let mut v: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| hermite_functions(nu, (t - theta0) * scale)[nu])
        .collect();
    let s = (v.iter().map(|x| x * x).sum::<f64>() * grid.spacing()).sqrt();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

/// Build `phi_n(theta, 0) ~ exp(-i k n - (n - n0)^2 / 2 sigma^2) phi_nu(theta)`.
///
/// With hopping `+J` the group velocity is `-2J sin k`, so the phase
/// `exp(-i k n)` is the one that moves right for `k` in `(0, pi)`.
pub fn initial_state(cfg: &ModelConfig, grid: &AngularGrid, packet: &PacketSpec) -> Result<Wavefunction> {
    cfg.validate()?;
    grid.validate()?;
    let sites = Sites::of(cfg);
    let (lo, _) = sites.label_range();
    if packet.n0 >= 0 || packet.n0 < lo {
        return Err(invalid("packet.n0", format!("must be a left-chain site in [{lo}, -1]")));
    }
    if !(packet.sigma >= 2.0) {
        return Err(invalid("packet.sigma", "must be at least 2 sites"));
    }
    if !(packet.k > 0.0 && packet.k < std::f64::consts::PI) {
        return Err(invalid("packet.k", "must lie in (0, pi)"));
    }
    let vib = vibrational_state(cfg, grid, packet.nu);
    let chain: Vec<Complex64> = (0..sites.n_sites)
        .map(|i| {
            let n = sites.label(i).unwrap() as f64;
            let x = n - packet.n0 as f64;
            Complex64::from_polar((-x * x / (2.0 * packet.sigma * packet.sigma)).exp(), -packet.k * n)
        })
        .collect();
    let cnorm = chain.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let mut psi = Wavefunction::zeros(*grid, sites.dim());
    for (j, v) in vib.iter().enumerate() {
        for (i, c) in chain.iter().enumerate() {
            *psi.at_mut(i, j) = c * (*v / cnorm);
        }
    }
    psi.normalize();
    let tail: f64 = crate::analysis::site_populations(&psi)[sites.attach()..sites.n_sites].iter().sum();
    if tail > 1e-6 {
        log::warn!("initial packet already has weight {tail:.2e} at or right of site 0");
    }
    Ok(psi)
}

/// Whether the coupling term is kept in adiabatic propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NacMode {
    #[default]
    Full,
    /// Strict Born-Oppenheimer evolution on uncoupled surfaces.
    Disabled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Nothing may reach the chain ends; enforced by the edge guard.
    #[default]
    SizeLimited,
    /// Damping on the outermost [`ABSORBER_SITES`] sites at each end.
    Absorbing,
}

/// Composition scheme for the kinetic/potential split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SplittingOrder {
    /// Second order: half kinetic, full potential, half kinetic.
    #[default]
    Strang,
    /// Fourth order: three Strang steps with Yoshida weights.
    Yoshida4,
}

impl SplittingOrder {
    /// Sequence of (kinetic fraction, potential fraction) pairs followed by a final kinetic fraction.
    fn sequence(self) -> (Vec<(f64, f64)>, f64) {
        match self {
            SplittingOrder::Strang => (vec![(0.5, 1.0)], 0.5),
            SplittingOrder::Yoshida4 => {
                let c = 2f64.powf(1.0 / 3.0);
                let w1 = 1.0 / (2.0 - c);
                let w0 = -c / (2.0 - c);
                (
                    vec![(0.5 * w1, w1), (0.5 * (w1 + w0), w0), (0.5 * (w0 + w1), w1)],
                    0.5 * w1,
                )
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationSettings {
    /// Time step (1/J).
    pub dt: f64,
    pub t_final: f64,
    /// Observers fire every this many steps, plus at t = 0 and at the end.
    pub snapshot_stride: usize,
    #[serde(default)]
    pub nac_mode: NacMode,
    /// Drop the angular kinetic term; theta becomes a spectator label.
    #[serde(default)]
    pub frozen: bool,
    #[serde(default)]
    pub boundary_policy: BoundaryPolicy,
    #[serde(default)]
    pub splitting: SplittingOrder,
    /// Norm drift that aborts a run.
    #[serde(default = "default_norm_abort")]
    pub norm_abort: f64,
}

fn default_norm_abort() -> f64 {
    1e-6
}

impl Default for PropagationSettings {
    fn default() -> Self {
        PropagationSettings {
            dt: 0.02,
            t_final: 20.0,
            snapshot_stride: 10,
            nac_mode: NacMode::Full,
            frozen: false,
            boundary_policy: BoundaryPolicy::SizeLimited,
            splitting: SplittingOrder::Strang,
            norm_abort: default_norm_abort(),
        }
    }
}

impl PropagationSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(invalid("propagation.dt", "must be > 0"));
        }
        if !(self.t_final >= 0.0) {
            return Err(invalid("propagation.t_final", "must be >= 0"));
        }
        if self.snapshot_stride < 1 {
            return Err(invalid("propagation.snapshot_stride", "must be >= 1"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Called at every snapshot.
pub trait Observer<S> {
    fn observe(&mut self, state: &S);
}

impl<S, F: FnMut(&S)> Observer<S> for F {
    fn observe(&mut self, state: &S) {
        self(state)
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl<S> Observer<S> for NoObserver {
    fn observe(&mut self, _: &S) {}
}

/// Sites at each chain end watched by the edge guard.
pub const GUARD_SITES: usize = 5;
/// Density allowed in the guard band.
pub const GUARD_LIMIT: f64 = 1e-6;
/// Sites at each end carrying the absorber.
pub const ABSORBER_SITES: usize = 10;
/// Peak absorption rate (J) at the outermost site.
pub const ABSORBER_STRENGTH: f64 = 1.0;

/// Diagnostics gathered over a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub steps: usize,
    pub initial_energy: f64,
    pub max_norm_drift: f64,
    pub max_energy_drift: f64,
    /// Largest theta-integrated density within [`GUARD_SITES`] of either chain end.
    pub max_edge_density: f64,
    /// Largest `|phi|^2` on the outermost two theta points.
    pub max_theta_edge_density: f64,
}

impl RunDiagnostics {
    fn new(initial_energy: f64) -> Self {
        RunDiagnostics {
            steps: 0,
            initial_energy,
            max_norm_drift: 0.0,
            max_energy_drift: 0.0,
            max_edge_density: 0.0,
            max_theta_edge_density: 0.0,
        }
    }

    /// False when the size-limited run let density reach the chain ends.
    pub fn edge_guard_ok(&self) -> bool {
        self.max_edge_density < GUARD_LIMIT
    }
}

fn theta_edge_density(amp: &[Complex64], dim: usize, n: usize) -> f64 {
    let edge: Vec<usize> = if n >= 4 { vec![0, 1, n - 2, n - 1] } else { vec![] };
    edge.iter()
        .flat_map(|&j| amp[j * dim..(j + 1) * dim].iter())
        .map(|a| a.norm_sqr())
        .fold(0.0, f64::max)
}

fn trap(cfg: &ModelConfig, theta: f64) -> f64 {
    let x = theta - cfg.control_unit.theta_alpha0;
    0.5 * cfg.inertia() * cfg.vibration.freq.powi(2) * x * x
}

/// `sum_k a_k b_k` with four partial sums so the loop vectorises.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            s[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Split-operator propagator in the site basis. The kinetic factor is
/// diagonal in momentum space; `H_el(theta) + trap` is applied exactly
/// through its eigen-decomposition, precomputed at every grid point.
pub struct DiabaticPropagator {
    pub grid: AngularGrid,
    pub sites: Sites,
    inertia: f64,
    /// `eigvals[j * dim + k]`, trap included.
    eigvals: Vec<f64>,
    /// Row-major eigenvectors per grid point: `vecs[j][n * dim + k] = V_nk`.
    vecs: Vec<Vec<f64>>,
    spectral: Spectral,
    left_edge: std::ops::Range<usize>,
    right_edge: std::ops::Range<usize>,
}

impl DiabaticPropagator {
    pub fn new(cfg: &ModelConfig, grid: &AngularGrid) -> Result<Self> {
        cfg.validate()?;
        grid.validate()?;
        let sites = Sites::of(cfg);
        let dim = sites.dim();
        let per: Vec<(Vec<f64>, Vec<f64>)> = grid
            .points()
            .into_par_iter()
            .map(|t| {
                let h = build_hamiltonian(cfg, t)?.matrix;
                let (mut vals, v) = sorted_eigen(h);
                let shift = trap(cfg, t);
                vals.iter_mut().for_each(|e| *e += shift);
                let mut rows = vec![0.0; dim * dim];
                for n in 0..dim {
                    for k in 0..dim {
                        rows[n * dim + k] = v[(n, k)];
                    }
                }
                Ok((vals, rows))
            })
            .collect::<Result<_>>()?;
        let mut eigvals = Vec::with_capacity(dim * grid.n_points);
        let mut vecs = Vec::with_capacity(grid.n_points);
        for (e, v) in per {
            eigvals.extend(e);
            vecs.push(v);
        }
        let g = GUARD_SITES.min(sites.n_sites / 2);
        Ok(DiabaticPropagator {
            grid: *grid,
            sites,
            inertia: cfg.inertia(),
            eigvals,
            vecs,
            spectral: Spectral::new(grid),
            left_edge: 0..g,
            right_edge: sites.n_sites - g..sites.n_sites,
        })
    }

    pub fn dim(&self) -> usize {
        self.sites.dim()
    }

    fn kinetic_factor(&self, tau: f64) -> Vec<Complex64> {
        self.spectral
            .momenta
            .iter()
            .map(|p| Complex64::from_polar(1.0, -p * p / (2.0 * self.inertia) * tau))
            .collect()
    }

    fn potential_phases(&self, tau: f64) -> Vec<Complex64> {
        self.eigvals.iter().map(|e| Complex64::from_polar(1.0, -e * tau)).collect()
    }

    /// Apply `exp(-i tau (H_el + trap))` given precomputed phases.
    fn potential(&self, amp: &mut [Complex64], phases: &[Complex64]) {
        let dim = self.dim();
        amp.par_chunks_mut(dim).enumerate().for_each(|(j, col)| {
            let v = &self.vecs[j];
            let ph = &phases[j * dim..(j + 1) * dim];
            let mut cre = vec![0.0; dim];
            let mut cim = vec![0.0; dim];
            for n in 0..dim {
                let (pr, pi) = (col[n].re, col[n].im);
                if pr == 0.0 && pi == 0.0 {
                    continue;
                }
                let row = &v[n * dim..(n + 1) * dim];
                for k in 0..dim {
                    cre[k] += row[k] * pr;
                    cim[k] += row[k] * pi;
                }
            }
            for k in 0..dim {
                let c = Complex64::new(cre[k], cim[k]) * ph[k];
                cre[k] = c.re;
                cim[k] = c.im;
            }
            for n in 0..dim {
                let row = &v[n * dim..(n + 1) * dim];
                col[n] = Complex64::new(dot(row, &cre), dot(row, &cim));
            }
        });
    }

    /// `<H>` including the angular kinetic term unless `frozen`.
    pub fn energy(&self, psi: &Wavefunction, frozen: bool) -> f64 {
        let dim = self.dim();
        let pot: f64 = psi
            .amp
            .par_chunks(dim)
            .enumerate()
            .map(|(j, col)| {
                let v = &self.vecs[j];
                let mut cre = vec![0.0; dim];
                let mut cim = vec![0.0; dim];
                for n in 0..dim {
                    let row = &v[n * dim..(n + 1) * dim];
                    for k in 0..dim {
                        cre[k] += row[k] * col[n].re;
                        cim[k] += row[k] * col[n].im;
                    }
                }
                (0..dim)
                    .map(|k| self.eigvals[j * dim + k] * (cre[k] * cre[k] + cim[k] * cim[k]))
                    .sum::<f64>()
            })
            .sum();
        let mut e = pot * self.grid.spacing();
        if !frozen {
            let g: Vec<f64> = self.spectral.momenta.iter().map(|p| p * p / (2.0 * self.inertia)).collect();
            e += self.spectral.momentum_expectation(&psi.amp, dim, &g) * self.grid.spacing();
        }
        e
    }

    fn edge_density(&self, psi: &Wavefunction) -> f64 {
        let p = crate::analysis::site_populations(psi);
        let l: f64 = p[self.left_edge.clone()].iter().sum();
        let r: f64 = p[self.right_edge.clone()].iter().sum();
        l.max(r)
    }

    fn absorb(&self, amp: &mut [Complex64], tau: f64) {
        let dim = self.dim();
        let n = self.sites.n_sites;
        let w = ABSORBER_SITES.min(n / 2);
        let damp: Vec<f64> = (0..w)
            .map(|m| {
                let x = (w - m) as f64 / w as f64;
                (-ABSORBER_STRENGTH * x * x * tau).exp()
            })
            .collect();
        for col in amp.chunks_mut(dim) {
            for m in 0..w {
                col[m] *= damp[m];
                col[n - 1 - m] *= damp[m];
            }
        }
    }

    /// Advance `psi` to `settings.t_final`.
    pub fn propagate<O: Observer<Wavefunction>>(
        &self,
        psi: &mut Wavefunction,
        settings: &PropagationSettings,
        observer: &mut O,
    ) -> Result<RunDiagnostics> {
        settings.validate()?;
        psi.check_matches(&self.grid, self.dim())?;
        let (seq, last) = settings.splitting.sequence();
        let kin: Vec<Vec<Complex64>> = seq.iter().map(|&(a, _)| self.kinetic_factor(a * settings.dt)).collect();
        let kin_last = self.kinetic_factor(last * settings.dt);
        let pot: Vec<Vec<Complex64>> = seq.iter().map(|&(_, b)| self.potential_phases(b * settings.dt)).collect();
        let absorbing = settings.boundary_policy == BoundaryPolicy::Absorbing;
        let dim = self.dim();
        let n0 = psi.norm_sqr();
        let e0 = self.energy(psi, settings.frozen);
        let mut diag = RunDiagnostics::new(e0);
        let steps = settings.n_steps();
        let snapshot = |psi: &Wavefunction, diag: &mut RunDiagnostics, observer: &mut O| -> Result<()> {
            let norm = psi.norm_sqr();
            let dn = (norm - n0).abs();
            if !absorbing {
                diag.max_norm_drift = diag.max_norm_drift.max(dn);
                diag.max_energy_drift = diag.max_energy_drift.max((self.energy(psi, settings.frozen) - e0).abs());
            }
            diag.max_edge_density = diag.max_edge_density.max(self.edge_density(psi));
            diag.max_theta_edge_density = diag
                .max_theta_edge_density
                .max(theta_edge_density(&psi.amp, dim, self.grid.n_points));
            observer.observe(psi);
            if !absorbing && dn > settings.norm_abort {
                return Err(Error::Instability {
                    time: psi.time,
                    what: "norm",
                    drift: dn,
                });
            }
            Ok(())
        };
        let t_start = psi.time;
        snapshot(psi, &mut diag, observer)?;
        for step in 1..=steps {
            for (i, p) in pot.iter().enumerate() {
                if !settings.frozen {
                    self.spectral.apply_diagonal(&mut psi.amp, dim, &kin[i]);
                }
                self.potential(&mut psi.amp, p);
            }
            if !settings.frozen {
                self.spectral.apply_diagonal(&mut psi.amp, dim, &kin_last);
            }
            if absorbing {
                self.absorb(&mut psi.amp, settings.dt);
            }
            psi.time = t_start + step as f64 * settings.dt;
            diag.steps = step;
            if step % settings.snapshot_stride == 0 || step == steps {
                snapshot(psi, &mut diag, observer)?;
            }
        }
        Ok(diag)
    }
}

/// Build a propagator and run it.
pub fn propagate_diabatic<O: Observer<Wavefunction>>(
    psi: &mut Wavefunction,
    cfg: &ModelConfig,
    settings: &PropagationSettings,
    observer: &mut O,
) -> Result<RunDiagnostics> {
    DiabaticPropagator::new(cfg, &psi.grid)?.propagate(psi, settings, observer)
}

/// Propagator in the surface basis.
///
/// Without couplings each surface evolves under `p^2/2I + U_k + trap`.
/// With couplings the kinetic part becomes `-(1/2I) (d + G)^2`, `G` the
/// first-order coupling matrix; expanding it gives back `p^2/2I` plus the
/// coupling operator with `<psi_k|psi_l''> = (dG + G^2)_kl`. That block is
/// exponentiated by Lanczos; the surface energies exactly.
pub struct AdiabaticPropagator<'a> {
    pub grid: AngularGrid,
    dim: usize,
    inertia: f64,
    /// `U_k(theta_j) + trap(theta_j)` at `[j * dim + k]`.
    potential: Vec<f64>,
    nac: Option<&'a NacField>,
    spectral: Spectral,
}

impl<'a> AdiabaticPropagator<'a> {
    pub fn new(cfg: &ModelConfig, spectrum: &AdiabaticSpectrum, nac: Option<&'a NacField>) -> Result<Self> {
        let dim = spectrum.dim();
        if let Some(n) = nac {
            if n.grid != spectrum.grid || n.dim != dim {
                return Err(Error::GridMismatch("couplings and spectrum differ in grid or size".into()));
            }
        }
        let mut potential = spectrum.energies.clone();
        for (j, t) in spectrum.grid.points().into_iter().enumerate() {
            let s = trap(cfg, t);
            potential[j * dim..(j + 1) * dim].iter_mut().for_each(|u| *u += s);
        }
        Ok(AdiabaticPropagator {
            grid: spectrum.grid,
            dim,
            inertia: cfg.inertia(),
            potential,
            nac,
            spectral: Spectral::new(&spectrum.grid),
        })
    }

    /// `(d + G) phi` with `d` spectral.
    fn covariant_derivative(&self, phi: &[Complex64], nac: &NacField) -> Vec<Complex64> {
        let dim = self.dim;
        let mut out = self.spectral.derivative(phi, dim);
        for j in 0..self.grid.n_points {
            let g = &nac.first_order[j];
            let p = &phi[j * dim..(j + 1) * dim];
            let o = &mut out[j * dim..(j + 1) * dim];
            for l in 0..dim {
                if p[l] == ZERO {
                    continue;
                }
                for k in 0..dim {
                    o[k] += p[l] * g[(k, l)];
                }
            }
        }
        out
    }

    /// Kinetic-plus-coupling operator `-(1/2I) (d + G)^2`.
    fn kinetic_nac(&self, phi: &[Complex64], nac: &NacField) -> Vec<Complex64> {
        let a = self.covariant_derivative(phi, nac);
        let mut aa = self.covariant_derivative(&a, nac);
        let s = -1.0 / (2.0 * self.inertia);
        aa.iter_mut().for_each(|x| *x *= s);
        aa
    }

    /// `exp(-i tau K) v` by Lanczos, splitting `tau` when the Krylov space is too small.
    fn expm_kinetic_nac(&self, v: &mut Vec<Complex64>, tau: f64, nac: &NacField) {
        const MAX_KRYLOV: usize = 40;
        const TOL: f64 = 1e-13;
        let beta0 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if beta0 == 0.0 {
            return;
        }
        let mut basis: Vec<Vec<Complex64>> = vec![v.iter().map(|x| x / beta0).collect()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        loop {
            let m = basis.len();
            let mut w = self.kinetic_nac(&basis[m - 1], nac);
            let a: f64 = basis[m - 1].iter().zip(&w).map(|(b, x)| (b.conj() * x).re).sum();
            alpha.push(a);
            // Full reorthogonalisation keeps the basis honest for long chains.
            for b in &basis {
                let c: Complex64 = b.iter().zip(&w).map(|(bb, x)| bb.conj() * x).sum();
                w.iter_mut().zip(b).for_each(|(x, bb)| *x -= c * bb);
            }
            let bn = w.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            let (coef, tail) = tridiagonal_expm(&alpha, &beta, tau);
            let err = beta0 * bn * tail;
            if err < TOL * beta0 || bn < 1e-14 || m >= MAX_KRYLOV {
                if m >= MAX_KRYLOV && err >= TOL * beta0 {
                    // Too stiff for one Krylov space: halve the step.
                    self.expm_kinetic_nac(v, 0.5 * tau, nac);
                    self.expm_kinetic_nac(v, 0.5 * tau, nac);
                    return;
                }
                v.iter_mut().for_each(|x| *x = ZERO);
                for (b, c) in basis.iter().zip(&coef) {
                    let c = c * beta0;
                    v.iter_mut().zip(b).for_each(|(x, bb)| *x += c * bb);
                }
                return;
            }
            beta.push(bn);
            basis.push(w.iter().map(|x| x / bn).collect());
        }
    }

    fn kinetic_factor(&self, tau: f64) -> Vec<Complex64> {
        self.spectral
            .momenta
            .iter()
            .map(|p| Complex64::from_polar(1.0, -p * p / (2.0 * self.inertia) * tau))
            .collect()
    }

    fn kinetic(&self, phi: &mut SurfaceWavefunction, tau: f64, mode: NacMode) {
        match (mode, self.nac) {
            (NacMode::Full, Some(nac)) => self.expm_kinetic_nac(&mut phi.amp, tau, nac),
            _ => self.spectral.apply_diagonal(&mut phi.amp, self.dim, &self.kinetic_factor(tau)),
        }
    }

    /// `<H>` in the surface basis.
    pub fn energy(&self, phi: &SurfaceWavefunction, mode: NacMode, frozen: bool) -> f64 {
        let d = self.grid.spacing();
        let pot: f64 = phi.amp.iter().zip(&self.potential).map(|(a, u)| a.norm_sqr() * u).sum();
        let mut e = pot * d;
        if !frozen {
            match (mode, self.nac) {
                (NacMode::Full, Some(nac)) => {
                    let a = self.covariant_derivative(&phi.amp, nac);
                    e += a.iter().map(|x| x.norm_sqr()).sum::<f64>() / (2.0 * self.inertia) * d;
                }
                _ => {
                    let g: Vec<f64> = self.spectral.momenta.iter().map(|p| p * p / (2.0 * self.inertia)).collect();
                    e += self.spectral.momentum_expectation(&phi.amp, self.dim, &g) * d;
                }
            }
        }
        e
    }

    pub fn propagate<O: Observer<SurfaceWavefunction>>(
        &self,
        phi: &mut SurfaceWavefunction,
        settings: &PropagationSettings,
        observer: &mut O,
    ) -> Result<RunDiagnostics> {
        settings.validate()?;
        phi.check_matches(&self.grid, self.dim)?;
        if settings.nac_mode == NacMode::Full && self.nac.is_none() && !settings.frozen {
            return Err(invalid("propagation.nac_mode", "full couplings requested but none supplied"));
        }
        let (seq, last) = settings.splitting.sequence();
        let pot: Vec<Vec<Complex64>> = seq
            .iter()
            .map(|&(_, b)| {
                self.potential
                    .iter()
                    .map(|u| Complex64::from_polar(1.0, -u * b * settings.dt))
                    .collect()
            })
            .collect();
        let n0 = phi.norm_sqr();
        let e0 = self.energy(phi, settings.nac_mode, settings.frozen);
        let mut diag = RunDiagnostics::new(e0);
        let dim = self.dim;
        let snapshot = |phi: &SurfaceWavefunction, diag: &mut RunDiagnostics, observer: &mut O| -> Result<()> {
            let dn = (phi.norm_sqr() - n0).abs();
            diag.max_norm_drift = diag.max_norm_drift.max(dn);
            let e = self.energy(phi, settings.nac_mode, settings.frozen);
            diag.max_energy_drift = diag.max_energy_drift.max((e - e0).abs());
            diag.max_theta_edge_density = diag
                .max_theta_edge_density
                .max(theta_edge_density(&phi.amp, dim, self.grid.n_points));
            observer.observe(phi);
            if dn > settings.norm_abort {
                return Err(Error::Instability {
                    time: phi.time,
                    what: "norm",
                    drift: dn,
                });
            }
            Ok(())
        };
        let t_start = phi.time;
        snapshot(phi, &mut diag, observer)?;
        let steps = settings.n_steps();
        for step in 1..=steps {
            for (i, &(a, _)) in seq.iter().enumerate() {
                if !settings.frozen {
                    self.kinetic(phi, a * settings.dt, settings.nac_mode);
                }
                phi.amp.iter_mut().zip(&pot[i]).for_each(|(x, p)| *x *= p);
            }
            if !settings.frozen {
                self.kinetic(phi, last * settings.dt, settings.nac_mode);
            }
            phi.time = t_start + step as f64 * settings.dt;
            diag.steps = step;
            if step % settings.snapshot_stride == 0 || step == steps {
                snapshot(phi, &mut diag, observer)?;
            }
        }
        Ok(diag)
    }
}

/// Build an adiabatic propagator and run it.
pub fn propagate_adiabatic<O: Observer<SurfaceWavefunction>>(
    phi: &mut SurfaceWavefunction,
    cfg: &ModelConfig,
    spectrum: &AdiabaticSpectrum,
    nac: Option<&NacField>,
    settings: &PropagationSettings,
    observer: &mut O,
) -> Result<RunDiagnostics> {
    AdiabaticPropagator::new(cfg, spectrum, nac)?.propagate(phi, settings, observer)
}

/// `exp(-i tau T) e_1` for the symmetric tridiagonal `T` (diagonal `alpha`,
/// off-diagonal `beta`), plus the magnitude of its last component.
fn tridiagonal_expm(alpha: &[f64], beta: &[f64], tau: f64) -> (Vec<Complex64>, f64) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |r, c| {
        if r == c {
            alpha[r]
        } else if r + 1 == c {
            beta[r]
        } else if c + 1 == r {
            beta[c]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let coef: Vec<Complex64> = (0..m)
        .map(|r| {
            (0..m)
                .map(|q| {
                    let v = eig.eigenvectors[(r, q)] * eig.eigenvectors[(0, q)];
                    Complex64::from_polar(v, -eig.eigenvalues[q] * tau)
                })
                .sum()
        })
        .collect();
    let tail = coef[m - 1].norm();
    (coef, tail)
}

/// Trap frequency used for the frozen limit: ten times the bandwidth 4J.
pub fn frozen_frequency(cfg: &ModelConfig) -> f64 {
    40.0 * cfg.chain.hop_j
}

/// Freeze the vibration the physical way: raise omega past ten bandwidths
/// and lower M so the ground-state width stays `sigma_theta`.
pub fn freeze_check(cfg: &ModelConfig, sigma_theta: f64) -> Result<ModelConfig> {
    if !(sigma_theta > 0.0) {
        return Err(invalid("vibration.sigma_theta", "must be > 0"));
    }
    let mut out = cfg.clone();
    out.vibration.freq = cfg.vibration.freq.max(frozen_frequency(cfg));
    out.set_sigma_theta(sigma_theta);
    Ok(out)
}

/// Numerics under which a preset's runs stay inside the guards: nothing
/// reaches the chain ends, the theta window edges stay empty and the
/// energy drift stays below 1e-6 J.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDefaults {
    pub grid: AngularGrid,
    /// Carrier wavenumber of the incoming packet.
    pub k: f64,
    /// Starting site label.
    pub n0: i64,
    /// Energy width (J).
    pub sigma_e: f64,
    pub t_final: f64,
    /// Step for mobile runs.
    pub dt: f64,
    /// Step for the stiff-trap frozen reference, see [`freeze_check`].
    pub frozen_dt: f64,
    pub splitting: SplittingOrder,
}

impl RunDefaults {
    pub fn for_preset(_preset: crate::config::Preset) -> Self {
        RunDefaults {
            grid: AngularGrid {
                n_points: 256,
                half_width: std::f64::consts::FRAC_PI_4,
            },
            k: std::f64::consts::FRAC_PI_2,
            n0: -18,
            sigma_e: 0.4,
            t_final: 22.0,
            dt: 0.005,
            frozen_dt: 0.0025,
            splitting: SplittingOrder::Yoshida4,
        }
    }

    pub fn packet(&self, nu: usize) -> PacketSpec {
        PacketSpec::with_energy_width(self.k, self.n0, self.sigma_e, nu)
    }

    /// Settings for a mobile run, or for the frozen reference when `frozen_reference`.
    /// Snapshots land every 0.1 time units.
    pub fn settings(&self, frozen_reference: bool) -> PropagationSettings {
        let dt = if frozen_reference { self.frozen_dt } else { self.dt };
        PropagationSettings {
            dt,
            t_final: self.t_final,
            snapshot_stride: ((0.1 / dt).round() as usize).max(1),
            splitting: self.splitting,
            ..Default::default()
        }
    }
}
