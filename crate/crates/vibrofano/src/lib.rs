//! Single-excitation transport along a tight-binding chain that is
//! side-coupled to a three-site control unit, one site of which vibrates
//! on a ring.
//!
//! A frozen control unit blocks the band centre through a Fano zero.
//! Letting the mobile site move opens transport, and the motion does it
//! through non-adiabatic transitions between Born-Oppenheimer surfaces
//! that are alternately localised left and right of the unit.
//!
//! Modules follow the workflow:
//! [`model`] builds `H_el(theta)`, [`surfaces`] diagonalises it on an
//! [`grid::AngularGrid`], [`statics`] gives frozen transmission,
//! [`dynamics`] propagates wavepackets and [`analysis`] turns runs into
//! observables.
//!
//! ```
//! use vibrofano::{config::Preset, statics};
//!
//! let cfg = Preset::Slanted.config();
//! let (t, r) = statics::transmission(&cfg, 0.5, 0.0).unwrap();
//! assert!(t < 0.07 && (t + r - 1.0).abs() < 1e-12);
//! ```

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod model;
pub mod spectral;
pub mod state;
pub mod statics;
pub mod surfaces;

pub use config::{ModelConfig, Preset};
pub use error::{Error, Result};
pub use grid::AngularGrid;
pub use state::{SurfaceWavefunction, Wavefunction};
