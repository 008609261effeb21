//! Binary spectrum cache keyed by a hash of the model and the grid.
//!
//! Layout, little endian: magic, then `dim`, `n_points`, `band_center`,
//! flag count as u64; energies; eigenvector matrices column-major; flags
//! as (u64 theta index, u64 surface, f64 overlap).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use vibrofano::grid::AngularGrid;
use vibrofano::model::Sites;
use vibrofano::surfaces::{compute_spectrum, AdiabaticSpectrum, TrackingFlag};
use vibrofano::ModelConfig;

use crate::output::sha256_hex;
use crate::CliError;

const MAGIC: &[u8; 8] = b"VFSPEC1\n";

pub fn key(cfg: &ModelConfig, grid: &AngularGrid) -> String {
    let text = format!("{}\n[grid]\nn_points = {}\nhalf_width = {:e}\n", cfg.to_toml(), grid.n_points, grid.half_width);
    sha256_hex(text.as_bytes())[..24].to_string()
}

fn path_for(dir: &Path, cfg: &ModelConfig, grid: &AngularGrid) -> PathBuf {
    dir.join(format!("spectrum-{}.bin", key(cfg, grid)))
}

fn encode(s: &AdiabaticSpectrum) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (4 + s.energies.len() * (1 + s.dim())));
    out.extend_from_slice(MAGIC);
    for v in [s.dim(), s.grid.n_points, s.band_center, s.flags.len()] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    for e in &s.energies {
        out.extend_from_slice(&e.to_le_bytes());
    }
    for m in &s.vectors {
        for x in m.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    for f in &s.flags {
        out.extend_from_slice(&(f.theta_index as u64).to_le_bytes());
        out.extend_from_slice(&(f.surface as u64).to_le_bytes());
        out.extend_from_slice(&f.overlap.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8], cfg: &ModelConfig, grid: &AngularGrid) -> Option<AdiabaticSpectrum> {
    let mut words = bytes.strip_prefix(MAGIC.as_slice())?.chunks_exact(8).map(|c| <[u8; 8]>::try_from(c).unwrap());
    let mut u = || words.next().map(u64::from_le_bytes).map(|x| x as usize);
    let (dim, n, band_center, n_flags) = (u()?, u()?, u()?, u()?);
    let sites = Sites::of(cfg);
    if dim != sites.dim() || n != grid.n_points {
        return None;
    }
    let rest = &bytes[MAGIC.len() + 32..];
    let floats: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let n_e = dim * n;
    let n_v = dim * dim * n;
    if floats.len() != n_e + n_v + 3 * n_flags {
        return None;
    }
    let energies = floats[..n_e].to_vec();
    let vectors = (0..n)
        .map(|j| DMatrix::from_column_slice(dim, dim, &floats[n_e + j * dim * dim..n_e + (j + 1) * dim * dim]))
        .collect();
    let flags = rest[8 * (n_e + n_v)..]
        .chunks_exact(24)
        .map(|c| TrackingFlag {
            theta_index: u64::from_le_bytes(c[..8].try_into().unwrap()) as usize,
            surface: u64::from_le_bytes(c[8..16].try_into().unwrap()) as usize,
            overlap: f64::from_le_bytes(c[16..].try_into().unwrap()),
        })
        .collect();
    Some(AdiabaticSpectrum {
        grid: *grid,
        sites,
        energies,
        vectors,
        band_center,
        flags,
    })
}

/// Load from `dir` when present and intact, otherwise compute and store.
pub fn spectrum(dir: Option<&Path>, cfg: &ModelConfig, grid: &AngularGrid) -> Result<AdiabaticSpectrum, CliError> {
    let Some(dir) = dir else {
        return Ok(compute_spectrum(cfg, grid)?);
    };
    let path = path_for(dir, cfg, grid);
    if let Ok(bytes) = fs::read(&path) {
        if let Some(s) = decode(&bytes, cfg, grid) {
            log::info!("spectrum cache hit: {}", path.display());
            return Ok(s);
        }
        log::warn!("ignoring unreadable spectrum cache {}", path.display());
    }
    let s = compute_spectrum(cfg, grid)?;
    let write = fs::create_dir_all(dir).and_then(|_| fs::write(&path, encode(&s)));
    if let Err(e) = write {
        log::warn!("could not write spectrum cache {}: {e}", path.display());
    }
    Ok(s)
}
