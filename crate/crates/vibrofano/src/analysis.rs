//! Observables: site and surface populations, N_R, transition
//! probabilities between surfaces, thermal averages.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::Observer;
use crate::error::{Error, Result};
use crate::model::Sites;
use crate::spectral::Spectral;
use crate::state::{SurfaceWavefunction, Wavefunction};
use crate::surfaces::{AdiabaticSpectrum, LocalizationProfile, NacField};

/// `p_n = integral dtheta |phi_n(theta)|^2` for every basis state (chain, then alpha, beta, eta).
pub fn site_populations(psi: &Wavefunction) -> Vec<f64> {
    psi.populations()
}

/// `N_R = sum_{n > 0} p_n` over chain sites right of the attachment site.
pub fn right_weight(p: &[f64], sites: Sites) -> f64 {
    p[sites.right()].iter().sum()
}

/// `phi~_k(theta) = sum_n psi_kn(theta) phi_n(theta)`.
pub fn project_adiabatic(psi: &Wavefunction, spectrum: &AdiabaticSpectrum) -> Result<SurfaceWavefunction> {
    psi.check_matches(&spectrum.grid, spectrum.dim())?;
    let dim = spectrum.dim();
    let mut out = SurfaceWavefunction::zeros(spectrum.grid, dim);
    out.time = psi.time;
    for (j, v) in spectrum.vectors.iter().enumerate() {
        let col = psi.column(j);
        for k in 0..dim {
            let vk = v.column(k);
            out.amp[j * dim + k] = col.iter().zip(vk.iter()).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Inverse of [`project_adiabatic`].
pub fn reconstruct(phi: &SurfaceWavefunction, spectrum: &AdiabaticSpectrum) -> Result<Wavefunction> {
    phi.check_matches(&spectrum.grid, spectrum.dim())?;
    let dim = spectrum.dim();
    let mut out = Wavefunction::zeros(spectrum.grid, dim);
    out.time = phi.time;
    for (j, v) in spectrum.vectors.iter().enumerate() {
        let col = phi.column(j);
        for n in 0..dim {
            let row = v.row(n);
            out.amp[j * dim + n] = col.iter().zip(row.iter()).map(|(a, b)| a * b).sum();
        }
    }
    Ok(out)
}

/// Zero every amplitude where `keep(surface, theta index)` is false and renormalise.
pub fn restrict_surfaces(phi: &mut SurfaceWavefunction, keep: impl Fn(usize, usize) -> bool) {
    let dim = phi.dim;
    for j in 0..phi.grid.n_points {
        for k in 0..dim {
            if !keep(k, j) {
                phi.amp[j * dim + k] = Complex64::new(0.0, 0.0);
            }
        }
    }
    phi.normalize();
}

/// Population on surfaces that are right-localised at the point where the density sits.
pub fn right_surface_population(phi: &SurfaceWavefunction, loc: &LocalizationProfile) -> f64 {
    let dim = phi.dim;
    let mut s = 0.0;
    for j in 0..phi.grid.n_points {
        for k in 0..dim {
            if loc.is_right(k, j) {
                s += phi.amp[j * dim + k].norm_sqr();
            }
        }
    }
    s * phi.grid.spacing()
}

/// Instantaneous net rates `r_kl = 2 integral dtheta Im[phi~_k^* D_kl phi~_l]`:
/// flow from surface l into surface k when positive.
pub fn rate_matrix(phi: &SurfaceWavefunction, nac: &NacField) -> Result<DMatrix<f64>> {
    phi.check_matches(&nac.grid, nac.dim)?;
    Ok(rate_matrix_with(phi, nac, &Spectral::new(&nac.grid)))
}

fn rate_matrix_with(phi: &SurfaceWavefunction, nac: &NacField, spectral: &Spectral) -> DMatrix<f64> {
    let dim = nac.dim;
    let dphi = spectral.derivative(&phi.amp, dim);
    let pref = -nac.mass_prefactor;
    let mut r = DMatrix::zeros(dim, dim);
    for j in 0..nac.grid.n_points {
        let g1 = &nac.first_order[j];
        let g2 = &nac.second_order[j];
        let p = &phi.amp[j * dim..(j + 1) * dim];
        let dp = &dphi[j * dim..(j + 1) * dim];
        for l in 0..dim {
            if p[l].norm_sqr() == 0.0 && dp[l].norm_sqr() == 0.0 {
                continue;
            }
            for k in 0..dim {
                let d = (p[l] * g2[(k, l)] + dp[l] * (2.0 * g1[(k, l)])) * pref;
                r[(k, l)] += (p[k].conj() * d).im;
            }
        }
    }
    r * (2.0 * nac.grid.spacing())
}

/// Time series recorded at snapshots.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TransportRecord {
    pub times: Vec<f64>,
    /// `p_n(t)` over all basis states, `[snapshot][state]`.
    pub site_populations: Vec<Vec<f64>>,
    pub n_right: Vec<f64>,
    /// `p~_k(t)`, empty when no spectrum was attached.
    pub surface_populations: Vec<Vec<f64>>,
    /// Population on right-localised surfaces, empty without localisation data.
    pub right_surface_population: Vec<f64>,
    /// Rate matrices `r_kl(t)`, empty without couplings.
    #[serde(skip)]
    pub rates: Vec<DMatrix<f64>>,
}

impl TransportRecord {
    pub fn final_n_right(&self) -> f64 {
        self.n_right.last().copied().unwrap_or(0.0)
    }

    /// First time `N_R` reaches `fraction` of its final value.
    pub fn time_to_fraction(&self, fraction: f64) -> f64 {
        let target = fraction * self.final_n_right();
        self.times
            .iter()
            .zip(&self.n_right)
            .find(|(_, &n)| n >= target)
            .map(|(&t, _)| t)
            .unwrap_or_else(|| self.times.last().copied().unwrap_or(0.0))
    }
}

/// Observer filling a [`TransportRecord`].
///
/// Works on either representation: site-basis states are projected onto
/// the spectrum (when given), surface states are reconstructed in sites.
pub struct TransportRecorder<'a> {
    pub sites: Sites,
    spectrum: Option<&'a AdiabaticSpectrum>,
    localization: Option<&'a LocalizationProfile>,
    nac: Option<&'a NacField>,
    spectral: Option<Spectral>,
    pub record: TransportRecord,
    /// Keep full `|phi_n(theta)|^2` every this many snapshots (0 = never).
    pub density_every: usize,
    pub densities: Vec<(f64, Vec<Vec<f64>>)>,
    /// Keep `|phi~_k(theta)|^2` alongside.
    pub surface_densities: Vec<(f64, Vec<Vec<f64>>)>,
    count: usize,
}

impl<'a> TransportRecorder<'a> {
    pub fn new(sites: Sites) -> Self {
        TransportRecorder {
            sites,
            spectrum: None,
            localization: None,
            nac: None,
            spectral: None,
            record: TransportRecord::default(),
            density_every: 0,
            densities: Vec::new(),
            surface_densities: Vec::new(),
            count: 0,
        }
    }

    pub fn with_spectrum(mut self, spectrum: &'a AdiabaticSpectrum) -> Self {
        self.spectrum = Some(spectrum);
        self
    }

    pub fn with_localization(mut self, loc: &'a LocalizationProfile) -> Self {
        self.localization = Some(loc);
        self
    }

    /// Also record rate matrices; requires a spectrum.
    pub fn with_rates(mut self, nac: &'a NacField) -> Self {
        self.spectral = Some(Spectral::new(&nac.grid));
        self.nac = Some(nac);
        self
    }

    pub fn with_densities(mut self, every: usize) -> Self {
        self.density_every = every;
        self
    }

    fn push(&mut self, psi: &Wavefunction, phi: Option<&SurfaceWavefunction>) {
        let p = site_populations(psi);
        self.record.times.push(psi.time);
        self.record.n_right.push(right_weight(&p, self.sites));
        self.record.site_populations.push(p);
        let keep_density = self.density_every > 0 && self.count % self.density_every == 0;
        if keep_density {
            self.densities.push((psi.time, psi.density()));
        }
        if let Some(phi) = phi {
            self.record.surface_populations.push(phi.populations());
            if keep_density {
                self.surface_densities.push((phi.time, phi.density()));
            }
            if let Some(loc) = self.localization {
                self.record.right_surface_population.push(right_surface_population(phi, loc));
            }
            if let (Some(nac), Some(sp)) = (self.nac, &self.spectral) {
                self.record.rates.push(rate_matrix_with(phi, nac, sp));
            }
        }
        self.count += 1;
    }
}

impl Observer<Wavefunction> for TransportRecorder<'_> {
    fn observe(&mut self, psi: &Wavefunction) {
        match self.spectrum {
            Some(s) => {
                let phi = project_adiabatic(psi, s).expect("recorder spectrum matches run grid");
                self.push(psi, Some(&phi));
            }
            None => self.push(psi, None),
        }
    }
}

impl Observer<SurfaceWavefunction> for TransportRecorder<'_> {
    fn observe(&mut self, phi: &SurfaceWavefunction) {
        let s = self.spectrum.expect("surface runs need the spectrum to report site populations");
        let psi = reconstruct(phi, s).expect("recorder spectrum matches run grid");
        self.push(&psi, Some(phi));
    }
}

/// Time-integrated net transition probabilities.
#[derive(Clone, Debug)]
pub struct TransitionReport {
    /// `P_kl = integral_0^t* r_kl dt`.
    pub probabilities: DMatrix<f64>,
    pub t_star: f64,
    /// Largest change of any entry when every other snapshot is dropped,
    /// relative to the largest entry.
    pub stride_sensitivity: f64,
}

impl TransitionReport {
    /// Quadrature is trusted when halving the snapshot density moves results by less than 1%.
    pub fn converged(&self) -> bool {
        self.stride_sensitivity < 0.01
    }

    /// `(sum over |k - l| = 1, sum over |k - l| >= 2)` of `|P_kl|`.
    pub fn adjacent_split(&self) -> (f64, f64) {
        let n = self.probabilities.nrows();
        let (mut adj, mut far) = (0.0, 0.0);
        for k in 0..n {
            for l in 0..n {
                match k.abs_diff(l) {
                    0 => {}
                    1 => adj += self.probabilities[(k, l)].abs(),
                    _ => far += self.probabilities[(k, l)].abs(),
                }
            }
        }
        (adj, far)
    }
}

fn trapezoid(times: &[f64], rates: &[&DMatrix<f64>], t_star: f64) -> DMatrix<f64> {
    let n = rates[0].nrows();
    let mut acc = DMatrix::zeros(n, n);
    for i in 1..times.len() {
        if times[i - 1] >= t_star {
            break;
        }
        let h = times[i].min(t_star) - times[i - 1];
        acc += (rates[i - 1] + rates[i]) * (0.5 * h);
    }
    acc
}

/// Trapezoid integral of recorded rates up to `t_star` (default: 95% of final N_R).
pub fn transition_probabilities(record: &TransportRecord, t_star: Option<f64>) -> Result<TransitionReport> {
    if record.rates.len() != record.times.len() || record.rates.len() < 3 {
        return Err(Error::GridMismatch(
            "record holds no rate matrices; attach couplings to the recorder".into(),
        ));
    }
    let t_star = t_star.unwrap_or_else(|| record.time_to_fraction(0.95));
    let all: Vec<&DMatrix<f64>> = record.rates.iter().collect();
    let p = trapezoid(&record.times, &all, t_star);
    let half_t: Vec<f64> = record.times.iter().step_by(2).copied().collect();
    let half_r: Vec<&DMatrix<f64>> = record.rates.iter().step_by(2).collect();
    let coarse = trapezoid(&half_t, &half_r, t_star);
    let scale = p.amax().max(1e-300);
    let stride_sensitivity = (&p - &coarse).amax() / scale;
    if stride_sensitivity >= 0.01 {
        log::warn!("transition probabilities change by {stride_sensitivity:.2e} when the snapshot stride doubles");
    }
    Ok(TransitionReport {
        probabilities: p,
        t_star,
        stride_sensitivity,
    })
}

/// Residual Boltzmann weight allowed beyond the last supplied state.
pub const THERMAL_RESIDUAL: f64 = 1e-4;

/// Weight of all states beyond `nu_max` in the untruncated distribution.
pub fn thermal_residual(temperature: f64, nu_max: usize) -> f64 {
    if temperature <= 0.0 {
        return 0.0;
    }
    (-((nu_max + 1) as f64) / temperature).exp()
}

/// Smallest `nu_max` whose residual is below [`THERMAL_RESIDUAL`].
pub fn required_nu_max(temperature: f64) -> usize {
    let mut n = 0;
    while thermal_residual(temperature, n) >= THERMAL_RESIDUAL {
        n += 1;
    }
    n
}

/// `N_R(T) = sum_nu p_nu N_R(nu)` with `p_nu ~ exp(-nu / T)`, temperature in units of omega / k_B.
pub fn thermal_transmission(n_right: &[f64], temperature: f64) -> Result<f64> {
    if n_right.is_empty() {
        return Err(Error::Truncation {
            residual: 1.0,
            supplied: 0,
            needed: required_nu_max(temperature) + 1,
        });
    }
    if temperature <= 0.0 {
        return Ok(n_right[0]);
    }
    let nu_max = n_right.len() - 1;
    let residual = thermal_residual(temperature, nu_max);
    if residual >= THERMAL_RESIDUAL {
        return Err(Error::Truncation {
            residual,
            supplied: n_right.len(),
            needed: required_nu_max(temperature) + 1,
        });
    }
    let w: Vec<f64> = (0..n_right.len()).map(|nu| (-(nu as f64) / temperature).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.iter().zip(n_right).map(|(a, b)| a * b).sum::<f64>() / z)
}
