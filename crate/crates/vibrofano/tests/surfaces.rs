use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use vibrofano::model::{build_hamiltonian, Sites};
use vibrofano::spectral::Spectral;
use vibrofano::statics::cu_levels;
use vibrofano::surfaces::{
    compute_spectrum, localization, nac_apply, nac_finite_difference, nac_hellmann_feynman, NacField,
};
use vibrofano::{AngularGrid, ModelConfig, Preset, SurfaceWavefunction, Wavefunction};

fn slanted(n: usize) -> ModelConfig {
    let mut cfg = Preset::Slanted.config();
    cfg.chain.n_sites = n;
    cfg
}

#[test]
fn decoupled_surfaces_are_flat_chain_levels() {
    let mut cfg = slanted(20);
    cfg.control_unit.c3 = 0.0;
    let grid = AngularGrid::new(32, 0.5).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    for k in 0..s.dim() {
        let u = s.surface(k);
        let spread = u.iter().cloned().fold(f64::MIN, f64::max) - u.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-12, "surface {k} moves by {spread}");
    }
    let chain: Vec<f64> = (1..=20).map(|m| 2.0 * (m as f64 * PI / 21.0).cos()).collect();
    let at0 = &s.energies[..s.dim()];
    for e in chain {
        assert!(at0.iter().any(|u| (u - e).abs() < 1e-12), "missing chain level {e}");
    }
    let loc = localization(&s);
    let sites = s.sites;
    for k in 0..s.dim() {
        let v = s.vectors[0].column(k);
        let cu_sites: f64 = [sites.alpha(), sites.beta(), sites.eta()].iter().map(|&i| v[i] * v[i]).sum();
        let chain_weight: f64 = (0..20).map(|i| v[i] * v[i]).sum();
        if chain_weight > 0.5 {
            assert!(cu_sites < 1e-24);
            // The control-unit weight then only holds site 0.
            assert!((loc.cu(k, 0) - v[sites.attach()].powi(2)).abs() < 1e-14);
        }
    }
}

#[test]
fn frames_are_orthonormal_eigenvectors() {
    let cfg = slanted(100);
    let grid = AngularGrid::new(64, PI / 4.0).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    for (j, v) in s.vectors.iter().enumerate() {
        let gram = v.transpose() * v;
        assert!((gram - DMatrix::<f64>::identity(s.dim(), s.dim())).amax() < 1e-10);
        let h = build_hamiltonian(&cfg, grid.point(j)).unwrap().matrix;
        let norm = h.norm();
        for k in 0..s.dim() {
            let r = &h * v.column(k) - v.column(k) * s.energy(k, j);
            assert!(r.norm() < 1e-10 * norm);
        }
    }
}

#[test]
fn tracking_is_continuous_and_unflagged() {
    let cfg = slanted(100);
    let grid = AngularGrid::new(256, PI / 4.0).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    let window = 3.0 * cfg.sigma_theta();
    let inside: Vec<_> = s.flags.iter().filter(|f| grid.point(f.theta_index).abs() <= window).collect();
    assert!(inside.is_empty(), "{inside:?}");
    for j in 1..grid.n_points {
        let o = s.vectors[j - 1].transpose() * &s.vectors[j];
        for k in 0..s.dim() {
            let flagged = s.flags.iter().any(|f| f.theta_index == j && f.surface == k);
            assert!(o[(k, k)] > 0.0, "sign flip on surface {k} at {j}");
            assert!(flagged || o[(k, k)] > 0.5);
        }
    }
    assert_eq!(s.label(s.band_center), 0);
    assert_eq!(s.index_of(0), Some(s.band_center));
}

#[test]
fn slanted_surfaces_move_and_flat_ones_do_not() {
    let grid = AngularGrid::new(64, 0.2).unwrap();
    let spread = |p: Preset| {
        let mut cfg = p.config();
        cfg.chain.n_sites = 20;
        let s = compute_spectrum(&cfg, &grid).unwrap();
        let u = s.surface(s.band_center);
        u.iter().cloned().fold(f64::MIN, f64::max) - u.iter().cloned().fold(f64::MAX, f64::min)
    };
    let (a, b) = (spread(Preset::Slanted), spread(Preset::Flat));
    assert!(a > 5.0 * b, "slanted {a} vs flat {b}");
}

#[test]
fn ci_levels_touch_once() {
    let cfg = Preset::Ci.config();
    let gap = |t: f64| {
        let (l, _) = cu_levels(&cfg, t).unwrap();
        l[2] - l[1]
    };
    assert!(gap(0.0) < 1e-9);
    for t in [-0.2, -0.05, -0.01, 0.01, 0.05, 0.2] {
        assert!(gap(t) > 1e-4, "gap {} at {t}", gap(t));
    }
}

#[test]
fn localization_weights_sum_to_one() {
    let cfg = slanted(40);
    let grid = AngularGrid::new(16, 0.3).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    let loc = localization(&s);
    for j in 0..grid.n_points {
        for k in 0..s.dim() {
            let total = loc.left(k, j) + loc.right(k, j) + loc.cu(k, j);
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn first_order_couplings_are_antisymmetric() {
    let cfg = slanted(20);
    let grid = AngularGrid::new(128, 0.5).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    let nac = nac_hellmann_feynman(&cfg, &s).unwrap();
    assert!(nac.singular.is_empty());
    assert!((nac.mass_prefactor - 1.0 / (2.0 * cfg.inertia())).abs() < 1e-15);
    for g in &nac.first_order {
        assert!((g + g.transpose()).amax() < 1e-8);
        assert!(g.diagonal().amax() < 1e-8);
    }
}

#[test]
fn couplings_match_finite_differences() {
    let cfg = slanted(20);
    let grid = AngularGrid::new(2048, 0.3).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    let nac = nac_hellmann_feynman(&cfg, &s).unwrap();
    let fd = nac_finite_difference(&s);
    let scale = nac.first_order.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let worst = (1..grid.n_points - 1)
        .map(|j| (&nac.first_order[j] - &fd[j]).amax())
        .fold(0.0, f64::max);
    assert!(worst < 1e-4 * scale, "worst {worst:e} vs scale {scale:e}");

    // Second order: G2 = dG1/dtheta - G1^T G1, and G2 + G2^T + 2 G1^T G1 = 0.
    let h = grid.spacing();
    let mut worst2: f64 = 0.0;
    let mut scale2: f64 = 0.0;
    for j in 1..grid.n_points - 1 {
        let g1 = &nac.first_order[j];
        let g2 = &nac.second_order[j];
        let dg = (&nac.first_order[j + 1] - &nac.first_order[j - 1]) / (2.0 * h);
        let expect = dg - g1.transpose() * g1;
        worst2 = worst2.max((g2 - expect).amax());
        scale2 = scale2.max(g2.amax());
        let sym = g2 + g2.transpose() + g1.transpose() * g1 * 2.0;
        assert!(sym.amax() < 1e-8 * (1.0 + g2.amax()));
    }
    assert!(worst2 < 1e-4 * scale2, "second order {worst2:e} vs {scale2:e}");
}

#[test]
fn nac_apply_basic_cases() {
    let cfg = slanted(6);
    let grid = AngularGrid::new(64, 0.4).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    let dim = s.dim();

    let zero = NacField::zeros(grid, dim, 0.7);
    let mut phi = SurfaceWavefunction::zeros(grid, dim);
    for (i, a) in phi.amp.iter_mut().enumerate() {
        *a = Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos());
    }
    assert!(nac_apply(&zero, &phi).unwrap().amp.iter().all(|a| a.norm() == 0.0));

    // A constant on one surface only sees the second-order term.
    let nac = nac_hellmann_feynman(&cfg, &s).unwrap();
    let l = 3;
    let c = Complex64::new(0.4, -0.2);
    let mut flat = SurfaceWavefunction::zeros(grid, dim);
    for j in 0..grid.n_points {
        *flat.at_mut(l, j) = c;
    }
    let out = nac_apply(&nac, &flat).unwrap();
    for j in 0..grid.n_points {
        for k in 0..dim {
            let expect = c * (-nac.mass_prefactor * nac.second_order[j][(k, l)]);
            assert!((out.at(k, j) - expect).norm() < 1e-12 * (1.0 + expect.norm()));
        }
    }

    let other = AngularGrid::new(32, 0.4).unwrap();
    assert!(nac_apply(&nac, &SurfaceWavefunction::zeros(other, dim)).is_err());
}

/// `-(1/2I) d^2` on every component, spectrally.
fn kinetic(spectral: &Spectral, amp: &[Complex64], dim: usize, inertia: f64) -> Vec<Complex64> {
    let d2 = spectral.derivative(&spectral.derivative(amp, dim), dim);
    d2.into_iter().map(|x| x * (-0.5 / inertia)).collect()
}

#[test]
fn surface_operator_reproduces_site_hamiltonian() {
    let cfg = slanted(6);
    let grid = AngularGrid::new(256, PI / 4.0).unwrap();
    let s = compute_spectrum(&cfg, &grid).unwrap();
    let nac = nac_hellmann_feynman(&cfg, &s).unwrap();
    let dim = s.dim();
    let sp = Spectral::new(&grid);
    let inertia = cfg.inertia();

    let mut psi = Wavefunction::zeros(grid, dim);
    for j in 0..grid.n_points {
        let t = grid.point(j);
        let env = (-(t - 0.05) * (t - 0.05) / (2.0 * 0.08 * 0.08)).exp();
        for n in 0..dim {
            *psi.at_mut(n, j) = Complex64::new((n as f64 + 1.0).sqrt(), 0.3 * n as f64 - t) * env;
        }
    }
    psi.normalize();

    // Site basis: -(1/2I) d^2 psi + H_el psi.
    let mut site = Wavefunction::zeros(grid, dim);
    site.amp = kinetic(&sp, &psi.amp, dim, inertia);
    for j in 0..grid.n_points {
        let h = build_hamiltonian(&cfg, grid.point(j)).unwrap().matrix;
        for n in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for m in 0..dim {
                acc += psi.at(m, j) * h[(n, m)];
            }
            *site.at_mut(n, j) += acc;
        }
    }

    // Surface basis: -(1/2I) d^2 phi + U phi + D phi, mapped back.
    let phi = vibrofano::analysis::project_adiabatic(&psi, &s).unwrap();
    let mut surf = SurfaceWavefunction::zeros(grid, dim);
    surf.amp = kinetic(&sp, &phi.amp, dim, inertia);
    let coupled = nac_apply(&nac, &phi).unwrap();
    for j in 0..grid.n_points {
        for k in 0..dim {
            *surf.at_mut(k, j) += phi.at(k, j) * s.energy(k, j) + coupled.at(k, j);
        }
    }
    let back = vibrofano::analysis::reconstruct(&surf, &s).unwrap();
    let scale = site.amp.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let worst = site.amp.iter().zip(&back.amp).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-6 * scale, "worst {worst:e}, scale {scale:e}");
    assert_eq!(Sites::of(&cfg).dim(), dim);
}
