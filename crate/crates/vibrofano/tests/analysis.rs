use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use vibrofano::analysis::{
    project_adiabatic, rate_matrix, reconstruct, required_nu_max, right_weight, thermal_transmission,
    transition_probabilities, TransportRecorder,
};
use vibrofano::dynamics::{initial_state, DiabaticPropagator, PacketSpec, PropagationSettings, SplittingOrder};
use vibrofano::model::Sites;
use vibrofano::surfaces::{compute_spectrum, localization, nac_hellmann_feynman, NacField};
use vibrofano::{AngularGrid, Error, ModelConfig, Preset, Wavefunction};

fn small() -> (ModelConfig, AngularGrid) {
    let mut cfg = Preset::Slanted.config();
    cfg.chain.n_sites = 10;
    (cfg, AngularGrid::new(128, PI / 4.0).unwrap())
}

fn packet() -> PacketSpec {
    PacketSpec {
        k: PI / 2.0,
        n0: -2,
        sigma: 2.0,
        nu: 1,
    }
}

#[test]
fn right_weight_counts_positive_labels() {
    let sites = Sites::new(40);
    let mut p = vec![0.0; sites.dim()];
    p[sites.index(-10).unwrap()] = 1.0;
    assert_eq!(right_weight(&p, sites), 0.0);
    p[sites.index(0).unwrap()] = 0.5;
    p[sites.index(1).unwrap()] = 0.25;
    p[sites.index(20).unwrap()] = 0.125;
    p[sites.alpha()] = 0.0625;
    assert_eq!(right_weight(&p, sites), 0.375);
}

#[test]
fn projection_round_trip() {
    let (cfg, grid) = small();
    let spectrum = compute_spectrum(&cfg, &grid).unwrap();
    let psi = initial_state(&cfg, &grid, &packet()).unwrap();
    let phi = project_adiabatic(&psi, &spectrum).unwrap();
    assert!((phi.norm_sqr() - psi.norm_sqr()).abs() < 1e-10);
    let back = reconstruct(&phi, &spectrum).unwrap();
    let worst = psi.amp.iter().zip(&back.amp).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-12);
    let other = AngularGrid::new(32, 0.4).unwrap();
    assert!(matches!(
        project_adiabatic(&Wavefunction::zeros(other, cfg.dim()), &spectrum),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn eigenstate_lands_on_one_surface() {
    let (cfg, _) = small();
    let grid = AngularGrid::new(4, 1e-4).unwrap();
    let spectrum = compute_spectrum(&cfg, &grid).unwrap();
    let k = 5;
    let mut psi = Wavefunction::zeros(grid, cfg.dim());
    for j in 0..grid.n_points {
        for n in 0..cfg.dim() {
            *psi.at_mut(n, j) = Complex64::new(spectrum.vectors[j][(n, k)], 0.0);
        }
    }
    psi.normalize();
    let p = project_adiabatic(&psi, &spectrum).unwrap().populations();
    assert!((p[k] - 1.0).abs() < 1e-12);
    assert!(p.iter().enumerate().filter(|&(i, _)| i != k).all(|(_, x)| *x < 1e-24));
}

#[test]
fn left_packet_starts_on_left_surfaces() {
    let cfg = Preset::Slanted.config();
    let grid = AngularGrid::new(256, PI / 4.0).unwrap();
    let spectrum = compute_spectrum(&cfg, &grid).unwrap();
    let loc = localization(&spectrum);
    let packet = PacketSpec::with_energy_width(PI / 2.0, -18, 0.4, 1);
    let psi = initial_state(&cfg, &grid, &packet).unwrap();
    let phi = project_adiabatic(&psi, &spectrum).unwrap();
    assert!(vibrofano::analysis::right_surface_population(&phi, &loc) < 0.05);
}

/// Diabatic run on the small instance with projected populations and rates at every step.
fn recorded_run<'a>(
    cfg: &ModelConfig,
    grid: &AngularGrid,
    spectrum: &'a vibrofano::surfaces::AdiabaticSpectrum,
    nac: &'a NacField,
) -> vibrofano::analysis::TransportRecord {
    let mut psi = initial_state(cfg, grid, &packet()).unwrap();
    let mut rec = TransportRecorder::new(Sites::of(cfg)).with_spectrum(spectrum).with_rates(nac);
    let settings = PropagationSettings {
        dt: 0.002,
        t_final: 1.0,
        snapshot_stride: 1,
        splitting: SplittingOrder::Yoshida4,
        ..Default::default()
    };
    DiabaticPropagator::new(cfg, grid).unwrap().propagate(&mut psi, &settings, &mut rec).unwrap();
    rec.record
}

#[test]
fn rates_explain_population_changes() {
    let (cfg, grid) = small();
    let spectrum = compute_spectrum(&cfg, &grid).unwrap();
    let nac = nac_hellmann_feynman(&cfg, &spectrum).unwrap();
    let rec = recorded_run(&cfg, &grid, &spectrum, &nac);
    let dim = spectrum.dim();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 1..rec.times.len() - 1 {
        let h = rec.times[i + 1] - rec.times[i - 1];
        for k in 0..dim {
            let dp = (rec.surface_populations[i + 1][k] - rec.surface_populations[i - 1][k]) / h;
            let flow: f64 = (0..dim).filter(|&l| l != k).map(|l| rec.rates[i][(k, l)]).sum();
            worst = worst.max((dp - flow).abs());
            scale = scale.max(dp.abs());
        }
        // What one surface gains another loses. Pointwise the rate is
        // antisymmetric only after integrating by parts in theta, so the grid
        // leaves a small residue (it shrinks as the grid is refined).
        let r = &rec.rates[i];
        assert!((r + r.transpose()).amax() < 1e-5 * r.amax());
    }
    assert!(worst < 1e-3 * scale, "worst {worst:e}, scale {scale:e}");
    for (p, q) in rec.site_populations.iter().zip(&rec.surface_populations) {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    let report = transition_probabilities(&rec, Some(0.8)).unwrap();
    assert_eq!(report.t_star, 0.8);
    assert!(report.converged());
    // Integrated net flow reproduces the population change of every surface.
    let end = rec.times.iter().position(|&t| t >= 0.8 - 1e-12).unwrap();
    for k in 0..dim {
        let gained: f64 = (0..dim).filter(|&l| l != k).map(|l| report.probabilities[(k, l)]).sum();
        let actual = rec.surface_populations[end][k] - rec.surface_populations[0][k];
        assert!((gained - actual).abs() < 1e-4, "surface {k}: {gained} vs {actual}");
    }
}

#[test]
fn no_couplings_no_transitions() {
    let (cfg, grid) = small();
    let spectrum = compute_spectrum(&cfg, &grid).unwrap();
    let zero = NacField::zeros(grid, spectrum.dim(), 1.0 / (2.0 * cfg.inertia()));
    let rec = recorded_run(&cfg, &grid, &spectrum, &zero);
    let report = transition_probabilities(&rec, None).unwrap();
    assert_eq!(report.probabilities.amax(), 0.0);
    let psi = initial_state(&cfg, &grid, &packet()).unwrap();
    let phi = project_adiabatic(&psi, &spectrum).unwrap();
    assert_eq!(rate_matrix(&phi, &zero).unwrap().amax(), 0.0);

    let bare = vibrofano::analysis::TransportRecord::default();
    assert!(transition_probabilities(&bare, None).is_err());
}

#[test]
fn thermal_limits() {
    let n = [0.011, 0.036, 0.072, 0.1, 0.12, 0.13, 0.14, 0.15, 0.16, 0.17, 0.18];
    assert_eq!(thermal_transmission(&n, 0.0).unwrap(), 0.011);
    assert!((thermal_transmission(&n, 0.01).unwrap() - 0.011).abs() < 1e-12);
    let flat = [0.3; 40];
    for t in [0.05, 0.5, 1.0, 2.0] {
        assert!((thermal_transmission(&flat, t).unwrap() - 0.3).abs() < 1e-15);
    }
    // Too few states for a hot distribution.
    match thermal_transmission(&n[..3], 1.0) {
        Err(Error::Truncation { needed, .. }) => assert_eq!(needed, required_nu_max(1.0) + 1),
        other => panic!("{other:?}"),
    }
    assert!(thermal_transmission(&[], 0.1).is_err());
}

proptest! {
    #[test]
    fn thermal_average_of_increasing_sequence_increases(
        steps in proptest::collection::vec(0.0f64..0.1, 12),
        t1 in 0.01f64..0.9,
        dt in 0.0f64..0.3,
    ) {
        let mut n = Vec::new();
        let mut acc = 0.0;
        for s in steps {
            acc += s;
            n.push(acc);
        }
        let a = thermal_transmission(&n, t1).unwrap();
        let b = thermal_transmission(&n, t1 + dt).unwrap();
        prop_assert!(b >= a - 1e-15);
        prop_assert!(a >= n[0] - 1e-15 && a <= n[n.len() - 1] + 1e-15);
    }
}
