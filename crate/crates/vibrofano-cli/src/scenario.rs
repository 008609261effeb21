//! One pipeline per scenario. Each writes CSVs and fills the manifest summary.

use std::path::Path;

use clap::ValueEnum;
use vibrofano::analysis::{
    thermal_transmission, transition_probabilities, TransportRecord, TransportRecorder,
};
use vibrofano::dynamics::{freeze_check, initial_state, DiabaticPropagator, PacketSpec, RunDiagnostics};
use vibrofano::model::Sites;
use vibrofano::statics;
use vibrofano::surfaces::{localization, nac_hellmann_feynman, AdiabaticSpectrum};
use vibrofano::{ModelConfig, Preset};

use crate::cache;
use crate::output::{num, Artifacts};
use crate::settings::Effective;
use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// Frozen transmission T(E).
    Fig2a,
    /// Born-Oppenheimer surfaces with left/right/unit weights.
    Fig2bc,
    /// N_R(t) for several nu plus the frozen reference, thermal average.
    Fig3,
    /// Surface populations and transition probabilities of a mobile run.
    Fig4,
    /// Conical-intersection preset: unit levels, surfaces, frozen T(E).
    CiSpectrum,
    /// Conical-intersection preset: mobile against frozen transport.
    CiTransport,
    /// Site- and angle-resolved densities over time.
    SiDynamics,
    /// Per-snapshot site populations for animation.
    MovieFrames,
    /// Whatever the config asks for: a scan, plus runs when `run.nus` is set.
    Custom,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fig2a => "fig2a",
            Scenario::Fig2bc => "fig2bc",
            Scenario::Fig3 => "fig3",
            Scenario::Fig4 => "fig4",
            Scenario::CiSpectrum => "ci-spectrum",
            Scenario::CiTransport => "ci-transport",
            Scenario::SiDynamics => "si-dynamics",
            Scenario::MovieFrames => "movie-frames",
            Scenario::Custom => "custom",
        }
    }

    pub fn default_preset(self) -> Preset {
        match self {
            Scenario::CiSpectrum | Scenario::CiTransport => Preset::Ci,
            _ => Preset::Slanted,
        }
    }
}

pub struct Context<'a> {
    pub eff: &'a Effective,
    pub cache_dir: Option<&'a Path>,
}

pub fn run(scenario: Scenario, ctx: &Context, out: &mut Artifacts) -> Result<(), CliError> {
    match scenario {
        Scenario::Fig2a => fig2a(ctx, out),
        Scenario::Fig2bc => surfaces(ctx, out, "fig2bc_surfaces.csv"),
        Scenario::Fig3 => transport(ctx, out, "fig3", true),
        Scenario::Fig4 => fig4(ctx, out),
        Scenario::CiSpectrum => ci_spectrum(ctx, out),
        Scenario::CiTransport => transport(ctx, out, "ci_transport", false),
        Scenario::SiDynamics => si_dynamics(ctx, out),
        Scenario::MovieFrames => movie(ctx, out),
        Scenario::Custom => custom(ctx, out),
    }
}

fn scan(ctx: &Context, out: &mut Artifacts, name: &str) -> Result<(), CliError> {
    let e = ctx.eff;
    let theta = e.model.control_unit.theta_alpha0;
    let energies = statics::energy_grid(e.scan.e_min, e.scan.e_max, e.scan.points);
    let curve = statics::scan(&e.model, &energies, theta)?;
    out.csv(
        name,
        &["energy", "transmission", "reflection"],
        (0..energies.len()).map(|i| vec![num(energies[i]), num(curve.transmission[i]), num(curve.reflection[i])]),
    )?;
    out.put("max_transmission", curve.max_transmission());
    if e.model.chain.onsite.abs() < 2.0 * e.model.chain.hop_j {
        let (t0, _) = statics::transmission(&e.model, e.model.chain.onsite, theta)?;
        out.put("transmission_band_center", t0);
    }
    Ok(())
}

fn fig2a(ctx: &Context, out: &mut Artifacts) -> Result<(), CliError> {
    scan(ctx, out, "fig2a_transmission.csv")?;
    let theta = ctx.eff.model.control_unit.theta_alpha0;
    let (vals, vecs) = statics::cu_levels(&ctx.eff.model, theta)?;
    out.csv(
        "fig2a_levels.csv",
        &["level", "energy", "alpha_weight"],
        (0..3).map(|m| vec![m.to_string(), num(vals[m]), num(vecs[(0, m)].powi(2))]),
    )
}

fn surface_rows(spec: &AdiabaticSpectrum, window: f64, theta0: f64) -> (Vec<usize>, Vec<Vec<String>>) {
    let loc = localization(spec);
    let j0 = spec.grid.nearest(theta0);
    let keep: Vec<usize> = (0..spec.dim()).filter(|&k| spec.energy(k, j0).abs() <= window).collect();
    let mut rows = Vec::new();
    for j in 0..spec.grid.n_points {
        for &k in &keep {
            rows.push(vec![
                num(spec.grid.point(j)),
                spec.label(k).to_string(),
                num(spec.energy(k, j)),
                num(loc.left(k, j)),
                num(loc.right(k, j)),
                num(loc.cu(k, j)),
            ]);
        }
    }
    (keep, rows)
}

const SURFACE_HEADER: [&str; 6] = ["theta", "surface", "energy", "w_left", "w_right", "w_cu"];

fn surfaces(ctx: &Context, out: &mut Artifacts, name: &str) -> Result<(), CliError> {
    let e = ctx.eff;
    let spec = cache::spectrum(ctx.cache_dir, &e.model, &e.grid())?;
    let (keep, rows) = surface_rows(&spec, e.run.surface_window, e.model.control_unit.theta_alpha0);
    out.csv(name, &SURFACE_HEADER, rows)?;
    out.put("surfaces_written", keep.len());
    out.put("tracking_flags", spec.flags.len());
    Ok(())
}

/// One propagation with an arbitrary recorder.
fn propagate(
    cfg: &ModelConfig,
    eff: &Effective,
    nu: usize,
    frozen: bool,
    recorder: &mut TransportRecorder,
) -> Result<RunDiagnostics, CliError> {
    let grid = eff.grid();
    let model = if frozen { freeze_check(cfg, cfg.sigma_theta())? } else { cfg.clone() };
    let packet = PacketSpec::with_energy_width(eff.run.k, eff.run.n0, eff.run.sigma_e, nu);
    let prop = DiabaticPropagator::new(&model, &grid)?;
    let mut psi = initial_state(&model, &grid, &packet)?;
    Ok(prop.propagate(&mut psi, &eff.settings(frozen), recorder)?)
}

fn case_name(nu: usize, frozen: bool) -> String {
    format!("{}nu{nu}", if frozen { "frozen-" } else { "" })
}

/// `(nu, frozen)` pairs to run. With `run.frozen` every nu runs frozen.
/// Otherwise `single_reference` adds one frozen nu = 0 run in front of
/// the mobile ones, and without it every nu is run both ways.
fn cases(eff: &Effective, single_reference: bool) -> Vec<(usize, bool)> {
    let nus = &eff.run.nus;
    if eff.run.frozen {
        return nus.iter().map(|&nu| (nu, true)).collect();
    }
    let mut out: Vec<(usize, bool)> = if single_reference {
        vec![(0, true)]
    } else {
        nus.iter().map(|&nu| (nu, true)).collect()
    };
    out.extend(nus.iter().map(|&nu| (nu, false)));
    out
}

fn transport(ctx: &Context, out: &mut Artifacts, prefix: &str, fig3: bool) -> Result<(), CliError> {
    let e = ctx.eff;
    let sites = Sites::of(&e.model);
    let mut series: Vec<((usize, bool), TransportRecord)> = Vec::new();
    for (nu, frozen) in cases(e, fig3) {
        let mut rec = TransportRecorder::new(sites);
        let d = propagate(&e.model, e, nu, frozen, &mut rec)?;
        let case = case_name(nu, frozen);
        out.run(&case, d);
        out.put_in("n_right_final", &case, rec.record.final_n_right());
        series.push(((nu, frozen), rec.record));
    }
    let mut rows = Vec::new();
    for ((nu, frozen), r) in &series {
        for (t, n) in r.times.iter().zip(&r.n_right) {
            rows.push(vec![num(*t), nu.to_string(), frozen.to_string(), num(*n)]);
        }
    }
    let name = if fig3 { "fig3b_transmission.csv".to_string() } else { format!("{prefix}.csv") };
    out.csv(&name, &["t", "nu", "frozen", "n_right"], rows)?;

    if fig3 {
        // Site populations of the first mobile case.
        if let Some((_, r)) = series.iter().find(|((_, f), _)| *f == e.run.frozen) {
            let stride = e.density_every();
            let mut rows = Vec::new();
            for (i, (t, p)) in r.times.iter().zip(&r.site_populations).enumerate() {
                if i % stride != 0 && i + 1 != r.times.len() {
                    continue;
                }
                for n in 0..sites.n_sites {
                    rows.push(vec![num(*t), sites.label(n).unwrap().to_string(), num(p[n])]);
                }
            }
            out.csv("fig3a_populations.csv", &["t", "n", "p_n"], rows)?;
        }
        // Thermal average over consecutive nu = 0, 1, ... when available.
        let mut per_nu = Vec::new();
        while let Some((_, r)) = series.iter().find(|((nu, f), _)| *nu == per_nu.len() && *f == e.run.frozen) {
            per_nu.push(r.final_n_right());
        }
        if !per_nu.is_empty() {
            let mut rows = Vec::new();
            for &t in &e.run.temperatures {
                match thermal_transmission(&per_nu, t) {
                    Ok(v) => rows.push(vec![num(t), num(v)]),
                    Err(err) => log::warn!("thermal average skipped at T = {t}: {err}"),
                }
            }
            out.csv("fig3b_thermal.csv", &["temperature", "n_right"], rows)?;
        }
    }
    Ok(())
}

fn fig4(ctx: &Context, out: &mut Artifacts) -> Result<(), CliError> {
    let e = ctx.eff;
    let grid = e.grid();
    let spec = cache::spectrum(ctx.cache_dir, &e.model, &grid)?;
    let nac = nac_hellmann_feynman(&e.model, &spec)?;
    let loc = localization(&spec);
    let nu = e.run.nus.first().copied().unwrap_or(1);
    let mut rec = TransportRecorder::new(Sites::of(&e.model))
        .with_spectrum(&spec)
        .with_localization(&loc)
        .with_rates(&nac)
        .with_densities(e.density_every());
    let d = propagate(&e.model, e, nu, e.run.frozen, &mut rec)?;
    out.run(&case_name(nu, e.run.frozen), d);

    let j0 = grid.nearest(e.model.control_unit.theta_alpha0);
    let keep: Vec<usize> = (0..spec.dim())
        .filter(|&k| spec.energy(k, j0).abs() <= e.run.surface_window)
        .collect();
    let mut rows = Vec::new();
    for (t, dens) in &rec.surface_densities {
        for j in 0..grid.n_points {
            for &k in &keep {
                rows.push(vec![
                    num(*t),
                    num(grid.point(j)),
                    spec.label(k).to_string(),
                    num(spec.energy(k, j)),
                    num(dens[k][j]),
                ]);
            }
        }
    }
    out.csv("fig4a_surfaces.csv", &["t", "theta", "surface", "energy", "density"], rows)?;

    let r = &rec.record;
    let p0 = &r.surface_populations[0];
    let mut rows = Vec::new();
    for (t, p) in r.times.iter().zip(&r.surface_populations) {
        for &k in &keep {
            rows.push(vec![num(*t), spec.label(k).to_string(), num(p[k] - p0[k])]);
        }
    }
    out.csv("fig4b_populations.csv", &["t", "surface", "delta_population"], rows)?;

    let report = transition_probabilities(r, None)?;
    let mut rows = Vec::new();
    let p = &report.probabilities;
    for k in 0..p.nrows() {
        for l in 0..p.ncols() {
            if k != l && p[(k, l)].abs() > 1e-10 {
                rows.push(vec![spec.label(k).to_string(), spec.label(l).to_string(), num(p[(k, l)])]);
            }
        }
    }
    out.csv("fig4_transitions.csv", &["surface_to", "surface_from", "probability"], rows)?;
    let (adj, far) = report.adjacent_split();
    out.put("t_star", report.t_star);
    out.put("adjacent_transitions", adj);
    out.put("non_adjacent_transitions", far);
    out.put("stride_sensitivity", report.stride_sensitivity);
    out.put("n_right_final", r.final_n_right());
    Ok(())
}

fn ci_spectrum(ctx: &Context, out: &mut Artifacts) -> Result<(), CliError> {
    let e = ctx.eff;
    let grid = e.grid();
    let mut rows = Vec::new();
    for t in grid.points() {
        let (vals, vecs) = statics::cu_levels(&e.model, t)?;
        for m in 0..3 {
            rows.push(vec![num(t), m.to_string(), num(vals[m]), num(vecs[(0, m)].powi(2))]);
        }
    }
    out.csv("ci_levels.csv", &["theta", "level", "energy", "alpha_weight"], rows)?;
    let (vals, _) = statics::cu_levels(&e.model, e.model.control_unit.theta_alpha0)?;
    out.put("degenerate_gap", (vals[2] - vals[1]).abs());
    scan(ctx, out, "ci_transmission.csv")?;
    surfaces(ctx, out, "ci_surfaces.csv")
}

fn si_dynamics(ctx: &Context, out: &mut Artifacts) -> Result<(), CliError> {
    let e = ctx.eff;
    let sites = Sites::of(&e.model);
    let grid = e.grid();
    let mut site_rows = Vec::new();
    let mut theta_rows = Vec::new();
    for (nu, frozen) in cases(e, true) {
        let mut rec = TransportRecorder::new(sites).with_densities(e.density_every());
        let d = propagate(&e.model, e, nu, frozen, &mut rec)?;
        let case = case_name(nu, frozen);
        out.run(&case, d);
        out.put_in("n_right_final", &case, rec.record.final_n_right());
        let unit = [sites.attach(), sites.alpha(), sites.beta(), sites.eta()];
        for (t, dens) in &rec.densities {
            let i = rec.record.times.iter().position(|x| x == t).expect("density at a snapshot");
            for n in 0..sites.n_sites {
                site_rows.push(vec![
                    num(*t),
                    nu.to_string(),
                    frozen.to_string(),
                    sites.label(n).unwrap().to_string(),
                    num(rec.record.site_populations[i][n]),
                ]);
            }
            for j in 0..grid.n_points {
                let left: f64 = sites.left().map(|n| dens[n][j]).sum();
                let right: f64 = sites.right().map(|n| dens[n][j]).sum();
                let cu: f64 = unit.iter().map(|&n| dens[n][j]).sum();
                theta_rows.push(vec![
                    num(*t),
                    nu.to_string(),
                    frozen.to_string(),
                    num(grid.point(j)),
                    num(left),
                    num(cu),
                    num(right),
                ]);
            }
        }
    }
    out.csv("si_dynamics_sites.csv", &["t", "nu", "frozen", "n", "p_n"], site_rows)?;
    out.csv(
        "si_dynamics_theta.csv",
        &["t", "nu", "frozen", "theta", "density_left", "density_unit", "density_right"],
        theta_rows,
    )
}

fn movie(ctx: &Context, out: &mut Artifacts) -> Result<(), CliError> {
    let e = ctx.eff;
    let sites = Sites::of(&e.model);
    let nu = e.run.nus.first().copied().unwrap_or(1);
    let mut rec = TransportRecorder::new(sites).with_densities(e.density_every());
    let d = propagate(&e.model, e, nu, e.run.frozen, &mut rec)?;
    out.run(&case_name(nu, e.run.frozen), d);
    let labels: Vec<String> = (0..sites.dim())
        .map(|i| match sites.label(i) {
            Some(n) => n.to_string(),
            None => ["alpha", "beta", "eta"][i - sites.n_sites].to_string(),
        })
        .collect();
    let mut index = Vec::new();
    for (f, (t, _)) in rec.densities.iter().enumerate() {
        let i = rec.record.times.iter().position(|x| x == t).expect("density at a snapshot");
        let p = &rec.record.site_populations[i];
        let name = format!("frames/frame_{f:05}.csv");
        out.csv(&name, &["site", "probability"], (0..sites.dim()).map(|n| vec![labels[n].clone(), num(p[n])]))?;
        index.push(vec![f.to_string(), num(*t), name, num(rec.record.n_right[i])]);
    }
    out.put("snapshots", index.len());
    out.csv("movie_frames.csv", &["frame", "t", "file", "n_right"], index)
}

fn custom(ctx: &Context, out: &mut Artifacts) -> Result<(), CliError> {
    if ctx.eff.model.coupling_mode == vibrofano::config::CouplingMode::NearestNeighborChain {
        scan(ctx, out, "custom_transmission.csv")?;
    }
    if !ctx.eff.run.nus.is_empty() {
        transport(ctx, out, "custom_transport", false)?;
    }
    Ok(())
}
