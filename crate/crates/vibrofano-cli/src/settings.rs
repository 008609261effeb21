//! Effective configuration: preset, then config file, then `--set` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use vibrofano::dynamics::{BoundaryPolicy, PropagationSettings, RunDefaults, SplittingOrder, GUARD_SITES};
use vibrofano::grid::AngularGrid;
use vibrofano::model::Sites;
use vibrofano::statics::{self, CalibrationTargets};
use vibrofano::{Error, ModelConfig, Preset};

use crate::scenario::Scenario;
use crate::CliError;

/// Everything a pipeline reads. Echoed into the manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Effective {
    pub preset: String,
    /// Re-run the static calibration after overrides.
    #[serde(default)]
    pub recalibrate: bool,
    pub model: ModelConfig,
    pub run: RunSection,
    pub scan: ScanSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_points: usize,
    pub half_width: f64,
    /// Packet carrier wavenumber.
    pub k: f64,
    pub n0: i64,
    pub sigma_e: f64,
    pub t_final: f64,
    pub dt: f64,
    /// Step used for stiff-trap frozen runs.
    pub frozen_dt: f64,
    pub splitting: SplittingOrder,
    pub boundary_policy: BoundaryPolicy,
    /// Vibrational quantum numbers of the mobile runs.
    pub nus: Vec<usize>,
    /// Run every case in the frozen limit instead of mobile.
    pub frozen: bool,
    /// Time between recorded snapshots.
    pub snapshot_interval: f64,
    /// Time between stored densities (heatmaps, movie frames).
    pub density_interval: f64,
    /// Temperatures (units of omega / k_B) for the thermal average.
    pub temperatures: Vec<f64>,
    /// Surfaces with |U| below this (J) at theta_0 are written to surface CSVs.
    pub surface_window: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub e_min: f64,
    pub e_max: f64,
    pub points: usize,
}

impl Effective {
    pub fn grid(&self) -> AngularGrid {
        AngularGrid {
            n_points: self.run.n_points,
            half_width: self.run.half_width,
        }
    }

    pub fn settings(&self, frozen: bool) -> PropagationSettings {
        let dt = if frozen { self.run.frozen_dt } else { self.run.dt };
        PropagationSettings {
            dt,
            t_final: self.run.t_final,
            snapshot_stride: ((self.run.snapshot_interval / dt).round() as usize).max(1),
            splitting: self.run.splitting,
            boundary_policy: self.run.boundary_policy,
            ..Default::default()
        }
    }

    /// Densities are stored every this many snapshots.
    pub fn density_every(&self) -> usize {
        ((self.run.density_interval / self.run.snapshot_interval).round() as usize).max(1)
    }

    pub fn preset(&self) -> Result<Preset, CliError> {
        Preset::from_name(&self.preset).ok_or_else(|| unknown_preset(&self.preset))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("effective config serialises")
    }
}

fn unknown_preset(name: &str) -> CliError {
    CliError::Lib(Error::InvalidConfig {
        key: "preset".into(),
        reason: format!("unknown preset `{name}` (slanted, flat, ci)"),
    })
}

fn defaults(scenario: Scenario, preset: Preset) -> Effective {
    let rd = RunDefaults::for_preset(preset);
    let nus = match scenario {
        Scenario::Fig3 | Scenario::SiDynamics => vec![0, 1, 2],
        Scenario::Custom => Vec::new(),
        _ => vec![1],
    };
    Effective {
        preset: preset.name().to_string(),
        recalibrate: false,
        model: preset.config(),
        run: RunSection {
            n_points: rd.grid.n_points,
            half_width: rd.grid.half_width,
            k: rd.k,
            n0: rd.n0,
            sigma_e: rd.sigma_e,
            t_final: rd.t_final,
            dt: rd.dt,
            frozen_dt: rd.frozen_dt,
            splitting: rd.splitting,
            boundary_policy: BoundaryPolicy::SizeLimited,
            nus,
            frozen: false,
            snapshot_interval: 0.1,
            density_interval: if scenario == Scenario::MovieFrames { 0.2 } else { 2.0 },
            temperatures: (1..=15).map(|i| 0.02 * i as f64).collect(),
            surface_window: 1.0,
        },
        scan: ScanSection {
            e_min: -1.9,
            e_max: 1.9,
            points: 400,
        },
    }
}

/// Parse `a.b.c=value`. The value is read as a TOML literal and falls back to a bare string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{text}`")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(CliError::Usage(format!("empty key segment in `{key}`")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn set_path(root: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for (i, seg) in parents.iter().enumerate() {
        table = match table.entry(seg.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => {
                return Err(CliError::Usage(format!(
                    "`{}` is a value, not a section",
                    path[..=i].join(".")
                )))
            }
        };
    }
    table.insert(last.clone(), value);
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_error(what: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Lib(Error::Parse(format!("{what}: {e}")))
}

/// Build the effective configuration for `scenario`.
pub fn load(scenario: Scenario, config: Option<&Path>, sets: &[String]) -> Result<Effective, CliError> {
    let file: Table = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            text.parse::<Table>().map_err(|e| parse_error(&p.display().to_string(), e))?
        }
        None => Table::new(),
    };
    let overrides: Vec<(Vec<String>, Value)> = sets.iter().map(|s| parse_override(s)).collect::<Result<_, _>>()?;

    let mut preset_name = scenario.default_preset().name().to_string();
    if let Some(Value::String(p)) = file.get("preset") {
        preset_name = p.clone();
    }
    for (path, v) in &overrides {
        if path.len() == 1 && path[0] == "preset" {
            preset_name = v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string());
        }
    }
    let preset = Preset::from_name(&preset_name).ok_or_else(|| unknown_preset(&preset_name))?;

    let mut doc = Table::try_from(defaults(scenario, preset)).map_err(|e| parse_error("defaults", e))?;
    merge(&mut doc, file);
    for (path, v) in overrides {
        set_path(&mut doc, &path, v)?;
    }
    doc.try_into().map_err(|e| parse_error("config", e))
}

/// Reject invalid configurations with the full report, then recalibrate if asked.
pub fn prepare(mut eff: Effective) -> Result<Effective, CliError> {
    let problems = report(&eff);
    if !problems.is_empty() {
        return Err(CliError::Validation(problems));
    }
    if eff.recalibrate {
        let targets = CalibrationTargets {
            level: eff.preset()?.resonant_level(),
            ..Default::default()
        };
        eff.model = statics::calibrate(&eff.model, &targets)?;
    }
    Ok(eff)
}

/// Model invariants plus discretisation checks, each with its key path.
pub fn report(eff: &Effective) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = eff
        .model
        .violations()
        .into_iter()
        .map(|e| match e {
            Error::InvalidConfig { key, reason } => (key, reason),
            other => ("model".to_string(), other.to_string()),
        })
        .collect();
    let r = &eff.run;
    if r.n_points == 0 || !r.n_points.is_power_of_two() {
        out.push(("run.n_points".into(), format!("must be a power of two (got {})", r.n_points)));
    }
    if !(r.half_width > 0.0 && r.half_width <= std::f64::consts::PI) {
        out.push(("run.half_width".into(), "must lie in (0, pi]".into()));
    }
    // sigma_theta only needs the vibration and the ring radius.
    let v = &eff.model.vibration;
    let sigma_defined = v.mass > 0.0 && v.freq > 0.0 && eff.model.control_unit.ring_radius > 0.0;
    if sigma_defined && r.n_points > 0 && r.half_width > 0.0 {
        let sigma = eff.model.sigma_theta();
        let per_sigma = sigma / (2.0 * r.half_width / r.n_points as f64);
        if per_sigma < 8.0 {
            out.push((
                "run.n_points".into(),
                format!(
                    "sigma_theta = {sigma:.4} rad spans {per_sigma:.1} grid points (need >= 8); use n_points = {}",
                    AngularGrid::points_to_resolve(r.half_width, sigma, 8.0)
                ),
            ));
        }
    }
    if !(r.k > 0.0 && r.k < std::f64::consts::PI) {
        out.push(("run.k".into(), "must lie in (0, pi)".into()));
    }
    if !(r.sigma_e > 0.0) {
        out.push(("run.sigma_e".into(), "must be > 0".into()));
    } else if r.k > 0.0 && r.k < std::f64::consts::PI && eff.model.chain.n_sites >= 4 {
        let sigma = vibrofano::dynamics::sigma_for_energy_width(r.k, r.sigma_e);
        let sites = Sites::of(&eff.model);
        let (lo, _) = sites.label_range();
        let tail = (4.0 * sigma).ceil() as i64;
        if sigma < 2.0 {
            out.push((
                "run.sigma_e".into(),
                format!("packet is {sigma:.2} sites wide (need >= 2); lower sigma_e"),
            ));
        } else if r.n0 - tail < lo + GUARD_SITES as i64 || r.n0 + tail >= 0 {
            out.push((
                "run.n0".into(),
                format!(
                    "packet of width {sigma:.2} sites at n0 = {} does not fit between the left guard band (label {}) and site 0",
                    r.n0,
                    lo + GUARD_SITES as i64
                ),
            ));
        }
    }
    for (key, v) in [("run.dt", r.dt), ("run.frozen_dt", r.frozen_dt), ("run.snapshot_interval", r.snapshot_interval)] {
        if !(v > 0.0) {
            out.push((key.into(), "must be > 0".into()));
        }
    }
    if !(r.t_final >= 0.0) {
        out.push(("run.t_final".into(), "must be >= 0".into()));
    }
    if eff.scan.points == 0 || !(eff.scan.e_min < eff.scan.e_max) {
        out.push(("scan".into(), "need points >= 1 and e_min < e_max".into()));
    }
    out
}
