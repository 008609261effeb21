use std::f64::consts::PI;

use num_complex::Complex64;
use vibrofano::analysis::{site_populations, TransportRecorder};
use vibrofano::dynamics::{
    freeze_check, hermite_functions, initial_state, sigma_for_energy_width, vibrational_state, AdiabaticPropagator,
    BoundaryPolicy, DiabaticPropagator, NacMode, NoObserver, PacketSpec, PropagationSettings, SplittingOrder,
};
use vibrofano::model::{build_hamiltonian, Sites};
use vibrofano::surfaces::{compute_spectrum, sorted_eigen};
use vibrofano::{AngularGrid, Error, ModelConfig, Preset, Wavefunction};

fn clean_chain(n: usize) -> ModelConfig {
    let mut cfg = Preset::Slanted.config();
    cfg.chain.n_sites = n;
    cfg.control_unit.c3 = 0.0;
    cfg
}

/// A grid so narrow that theta is effectively a single point.
fn point_grid() -> AngularGrid {
    AngularGrid::new(4, 1e-4).unwrap()
}

fn frozen(dt: f64, t_final: f64) -> PropagationSettings {
    PropagationSettings {
        dt,
        t_final,
        snapshot_stride: 1,
        frozen: true,
        ..Default::default()
    }
}

#[test]
fn hermite_functions_are_orthonormal() {
    let h = 0.01;
    let xs: Vec<f64> = (0..2001).map(|i| -10.0 + h * i as f64).collect();
    let table: Vec<Vec<f64>> = xs.iter().map(|&x| hermite_functions(5, x)).collect();
    for a in 0..=5 {
        for b in 0..=5 {
            let s: f64 = table.iter().map(|r| r[a] * r[b]).sum::<f64>() * h;
            let expect = if a == b { 1.0 } else { 0.0 };
            assert!((s - expect).abs() < 1e-10, "<{a}|{b}> = {s}");
        }
    }
}

#[test]
fn ground_state_width_is_sigma_theta() {
    let cfg = Preset::Slanted.config();
    let grid = AngularGrid::new(256, PI / 4.0).unwrap();
    let v = vibrational_state(&cfg, &grid, 0);
    let d = grid.spacing();
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>() * d;
    let var: f64 = grid.points().iter().zip(&v).map(|(t, x)| t * t * x * x).sum::<f64>() * d;
    assert!((norm - 1.0).abs() < 1e-12);
    assert!((var.sqrt() - cfg.sigma_theta()).abs() < 1e-9 * cfg.sigma_theta());
    assert!((cfg.sigma_theta() - 0.2 / PI).abs() < 1e-12);
}

#[test]
fn initial_packet_shape() {
    let cfg = clean_chain(100);
    let grid = AngularGrid::new(64, 0.5).unwrap();
    let packet = PacketSpec {
        k: PI / 2.0,
        n0: -20,
        sigma: 4.0,
        nu: 1,
    };
    let psi = initial_state(&cfg, &grid, &packet).unwrap();
    assert!((psi.norm_sqr() - 1.0).abs() < 1e-12);
    let sites = Sites::of(&cfg);
    let p = site_populations(&psi);
    let peak = (0..sites.n_sites).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
    assert_eq!(sites.label(peak), Some(-20));
    let (lo, hi) = sites.label_range();
    let z: f64 = (lo..=hi).map(|n| (-((n + 20) as f64).powi(2) / 16.0).exp()).sum();
    for n in -30..-10 {
        let expect = (-((n + 20) as f64).powi(2) / 16.0).exp() / z;
        assert!((p[sites.index(n).unwrap()] - expect).abs() < 1e-12);
    }
    assert!(p[sites.n_sites..].iter().all(|&x| x == 0.0));
}

#[test]
fn initial_state_rejects_bad_packets() {
    let cfg = clean_chain(20);
    let grid = point_grid();
    let base = PacketSpec {
        k: 1.0,
        n0: -5,
        sigma: 2.0,
        nu: 0,
    };
    let key = |p: PacketSpec| match initial_state(&cfg, &grid, &p) {
        Err(Error::InvalidConfig { key, .. }) => key,
        other => panic!("{other:?}"),
    };
    assert_eq!(key(PacketSpec { n0: 0, ..base }), "packet.n0");
    assert_eq!(key(PacketSpec { n0: -10, ..base }), "packet.n0");
    assert_eq!(key(PacketSpec { sigma: 1.5, ..base }), "packet.sigma");
    assert_eq!(key(PacketSpec { k: PI, ..base }), "packet.k");
}

#[test]
fn energy_width_of_the_packet() {
    let n = 200;
    let cfg = clean_chain(n);
    let packet = PacketSpec::with_energy_width(PI / 2.0, -40, 0.4, 0);
    assert!((packet.sigma - sigma_for_energy_width(PI / 2.0, 0.4)).abs() < 1e-15);
    let psi = initial_state(&cfg, &point_grid(), &packet).unwrap();
    let h = build_hamiltonian(&cfg, 0.0).unwrap().matrix;
    let (e, v) = sorted_eigen(h.view((0, 0), (n, n)).into_owned());
    let amp: Vec<Complex64> = (0..n).map(|i| psi.at(i, 0)).collect();
    let w: Vec<f64> = (0..n)
        .map(|m| amp.iter().enumerate().map(|(i, a)| a * v[(i, m)]).sum::<Complex64>().norm_sqr())
        .collect();
    let z: f64 = w.iter().sum();
    let mean: f64 = w.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / z;
    let var: f64 = w.iter().zip(&e).map(|(a, b)| a * (b - mean).powi(2)).sum::<f64>() / z;
    assert!(mean.abs() < 1e-6);
    assert!((var.sqrt() - 0.4).abs() < 0.02, "std {}", var.sqrt());
}

#[test]
fn clean_chain_packet_moves_right_at_group_speed() {
    let cfg = clean_chain(200);
    let sites = Sites::of(&cfg);
    let packet = PacketSpec {
        k: PI / 2.0,
        n0: -50,
        sigma: 6.0,
        nu: 0,
    };
    let mut psi = initial_state(&cfg, &point_grid(), &packet).unwrap();
    let mut track = Vec::new();
    let mut obs = |psi: &Wavefunction| {
        let p = site_populations(psi);
        let mean: f64 = (0..sites.n_sites).map(|i| sites.label(i).unwrap() as f64 * p[i]).sum();
        track.push((psi.time, mean));
    };
    DiabaticPropagator::new(&cfg, &point_grid())
        .unwrap()
        .propagate(&mut psi, &frozen(0.05, 40.0), &mut obs)
        .unwrap();
    let n = track.len() as f64;
    let (st, sx) = track.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let (mt, mx) = (st / n, sx / n);
    let slope = track.iter().map(|(t, x)| (t - mt) * (x - mx)).sum::<f64>()
        / track.iter().map(|(t, _)| (t - mt).powi(2)).sum::<f64>();
    // Mean of 2 sin k over a Gaussian in k of variance 1 / (2 sigma^2).
    let expected = 2.0 * (-1.0 / (4.0 * packet.sigma * packet.sigma)).exp();
    assert!((slope - expected).abs() < 1e-4, "speed {slope} vs {expected}");
    let p = site_populations(&psi);
    assert!(vibrofano::analysis::right_weight(&p, sites) > 0.99);
}

#[test]
fn decoupled_trap_ground_state_is_stationary() {
    let cfg = clean_chain(4);
    let grid = AngularGrid::new(256, PI / 4.0).unwrap();
    let sites = Sites::of(&cfg);
    let vib = vibrational_state(&cfg, &grid, 0);
    let mut psi = Wavefunction::zeros(grid, sites.dim());
    for (j, v) in vib.iter().enumerate() {
        *psi.at_mut(sites.beta(), j) = Complex64::new(*v, 0.0);
    }
    let before = psi.density();
    let settings = PropagationSettings {
        dt: 0.005,
        t_final: 100.0,
        snapshot_stride: 2000,
        splitting: SplittingOrder::Yoshida4,
        ..Default::default()
    };
    let diag = DiabaticPropagator::new(&cfg, &grid).unwrap().propagate(&mut psi, &settings, &mut NoObserver).unwrap();
    let after = psi.density();
    let worst = before
        .iter()
        .flatten()
        .zip(after.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let peak = before.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
    assert!(worst < 1e-8 * peak, "density change {worst:e}");
    assert!(diag.max_norm_drift < 1e-10);
}

#[test]
fn single_surface_trap_state_is_stationary_adiabatically() {
    let cfg = clean_chain(4);
    let grid = AngularGrid::new(256, PI / 4.0).unwrap();
    let spectrum = compute_spectrum(&cfg, &grid).unwrap();
    let vib = vibrational_state(&cfg, &grid, 0);
    let mut phi = vibrofano::SurfaceWavefunction::zeros(grid, spectrum.dim());
    let k = spectrum.dim() / 2;
    for (j, v) in vib.iter().enumerate() {
        *phi.at_mut(k, j) = Complex64::new(*v, 0.0);
    }
    let before = phi.density();
    let settings = PropagationSettings {
        dt: 0.005,
        t_final: 100.0,
        snapshot_stride: 2000,
        splitting: SplittingOrder::Yoshida4,
        nac_mode: NacMode::Disabled,
        ..Default::default()
    };
    AdiabaticPropagator::new(&cfg, &spectrum, None)
        .unwrap()
        .propagate(&mut phi, &settings, &mut NoObserver)
        .unwrap();
    let worst = before
        .iter()
        .flatten()
        .zip(phi.density().iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let peak = before.iter().flatten().fold(0.0, |a: f64, &b| a.max(b));
    assert!(worst < 1e-8 * peak, "density change {worst:e}");
}

fn small_mobile() -> (ModelConfig, AngularGrid, Wavefunction) {
    let mut cfg = Preset::Slanted.config();
    cfg.chain.n_sites = 10;
    let grid = AngularGrid::new(128, PI / 4.0).unwrap();
    let packet = PacketSpec {
        k: PI / 2.0,
        n0: -2,
        sigma: 2.0,
        nu: 1,
    };
    let psi = initial_state(&cfg, &grid, &packet).unwrap();
    (cfg, grid, psi)
}

fn distance(a: &Wavefunction, b: &Wavefunction) -> f64 {
    a.amp.iter().zip(&b.amp).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn strang_is_second_order_and_yoshida_fourth() {
    let (cfg, grid, psi0) = small_mobile();
    let prop = DiabaticPropagator::new(&cfg, &grid).unwrap();
    let run = |dt: f64, splitting| {
        let mut psi = psi0.clone();
        let s = PropagationSettings {
            dt,
            t_final: 1.0,
            snapshot_stride: 1000,
            splitting,
            ..Default::default()
        };
        prop.propagate(&mut psi, &s, &mut NoObserver).unwrap();
        psi
    };
    let reference = run(0.0025, SplittingOrder::Yoshida4);
    let e1 = distance(&run(0.02, SplittingOrder::Strang), &reference);
    let e2 = distance(&run(0.01, SplittingOrder::Strang), &reference);
    let ratio = e1 / e2;
    assert!((3.5..4.5).contains(&ratio), "Strang error ratio {ratio}");
    let y1 = distance(&run(0.02, SplittingOrder::Yoshida4), &reference);
    let y2 = distance(&run(0.01, SplittingOrder::Yoshida4), &reference);
    assert!(y1 / y2 > 12.0, "Yoshida error ratio {}", y1 / y2);
}

#[test]
fn norm_and_energy_are_conserved() {
    let (cfg, grid, mut psi) = small_mobile();
    let s = PropagationSettings {
        dt: 0.01,
        t_final: 5.0,
        snapshot_stride: 10,
        splitting: SplittingOrder::Yoshida4,
        ..Default::default()
    };
    let mut rec = TransportRecorder::new(Sites::of(&cfg));
    let diag = DiabaticPropagator::new(&cfg, &grid).unwrap().propagate(&mut psi, &s, &mut rec).unwrap();
    assert!(diag.max_norm_drift < 1e-8);
    assert!(diag.max_energy_drift < 1e-6, "energy drift {:e}", diag.max_energy_drift);
    assert_eq!(diag.steps, 500);
    assert!((psi.time - 5.0).abs() < 1e-12);
    for p in &rec.record.site_populations {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }
    assert_eq!(rec.record.times.len(), 51);
}

#[test]
fn theta_resolution_is_converged() {
    let mut cfg = Preset::Slanted.config();
    cfg.chain.n_sites = 10;
    let packet = PacketSpec {
        k: PI / 2.0,
        n0: -2,
        sigma: 2.0,
        nu: 1,
    };
    let s = PropagationSettings {
        dt: 0.01,
        t_final: 2.0,
        snapshot_stride: 100,
        splitting: SplittingOrder::Yoshida4,
        ..Default::default()
    };
    let pops = |n: usize| {
        let grid = AngularGrid::new(n, PI / 4.0).unwrap();
        let mut psi = initial_state(&cfg, &grid, &packet).unwrap();
        DiabaticPropagator::new(&cfg, &grid).unwrap().propagate(&mut psi, &s, &mut NoObserver).unwrap();
        site_populations(&psi)
    };
    let (a, b) = (pops(128), pops(256));
    let worst = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst:e}");
}

#[test]
fn stiff_trap_matches_static_theta_for_flat_unit() {
    let mut cfg = Preset::Flat.config();
    cfg.chain.n_sites = 60;
    let stiff = freeze_check(&cfg, cfg.sigma_theta()).unwrap();
    let grid = AngularGrid::new(128, 0.25).unwrap();
    let packet = PacketSpec::with_energy_width(PI / 2.0, -12, 0.6, 0);
    let run = |c: &ModelConfig, settings: PropagationSettings| {
        let mut psi = initial_state(c, &grid, &packet).unwrap();
        let mut rec = TransportRecorder::new(Sites::of(c));
        let diag = DiabaticPropagator::new(c, &grid).unwrap().propagate(&mut psi, &settings, &mut rec).unwrap();
        assert!(diag.edge_guard_ok());
        rec.record.final_n_right()
    };
    let base = PropagationSettings {
        dt: 0.0025,
        t_final: 10.0,
        snapshot_stride: 400,
        splitting: SplittingOrder::Yoshida4,
        ..Default::default()
    };
    let a = run(&stiff, base);
    let b = run(&cfg, PropagationSettings { frozen: true, dt: 0.01, ..base });
    assert!(a < 0.01 && b < 0.01, "{a} {b}");
    assert!((a - b).abs() < 1e-3, "stiff {a} vs static {b}");
}

#[test]
fn freeze_check_keeps_width() {
    let cfg = Preset::Slanted.config();
    let target = 0.2 / PI;
    let out = freeze_check(&cfg, target).unwrap();
    assert!((out.sigma_theta() - target).abs() < 1e-12 * target);
    assert!(out.vibration.freq >= 40.0);
    let mut doubled = cfg.clone();
    doubled.vibration.freq *= 2.0;
    doubled.vibration.mass /= 2.0;
    assert!((doubled.sigma_theta() - cfg.sigma_theta()).abs() < 1e-15);
    assert!(freeze_check(&cfg, 0.0).is_err());
}

#[test]
fn edge_guard_and_absorber() {
    let cfg = clean_chain(20);
    let packet = PacketSpec {
        k: PI / 2.0,
        n0: -4,
        sigma: 2.0,
        nu: 0,
    };
    let grid = point_grid();
    let prop = DiabaticPropagator::new(&cfg, &grid).unwrap();
    let mut psi = initial_state(&cfg, &grid, &packet).unwrap();
    let diag = prop.propagate(&mut psi, &frozen(0.05, 10.0), &mut NoObserver).unwrap();
    assert!(!diag.edge_guard_ok());
    assert!(diag.max_norm_drift < 1e-10);

    let mut psi = initial_state(&cfg, &grid, &packet).unwrap();
    let absorbing = PropagationSettings {
        boundary_policy: BoundaryPolicy::Absorbing,
        ..frozen(0.05, 30.0)
    };
    prop.propagate(&mut psi, &absorbing, &mut NoObserver).unwrap();
    assert!(psi.norm_sqr() < 0.5);
}

#[test]
fn settings_are_checked() {
    let (cfg, grid, mut psi) = small_mobile();
    let prop = DiabaticPropagator::new(&cfg, &grid).unwrap();
    for bad in [
        PropagationSettings { dt: 0.0, ..Default::default() },
        PropagationSettings { snapshot_stride: 0, ..Default::default() },
        PropagationSettings { t_final: -1.0, ..Default::default() },
    ] {
        assert!(matches!(prop.propagate(&mut psi, &bad, &mut NoObserver), Err(Error::InvalidConfig { .. })));
    }
    let spectrum = compute_spectrum(&cfg, &grid).unwrap();
    let ad = AdiabaticPropagator::new(&cfg, &spectrum, None).unwrap();
    let mut phi = vibrofano::analysis::project_adiabatic(&psi, &spectrum).unwrap();
    assert!(ad.propagate(&mut phi, &PropagationSettings::default(), &mut NoObserver).is_err());
}
