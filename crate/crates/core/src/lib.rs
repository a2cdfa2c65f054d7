//! Simulation and analysis of cavity-mediated interactions between optically
//! levitated nanoparticles.
//!
//! The crate is organised bottom-up:
//!
//! - [`params`]: domain types, unit conventions and configuration validation.
//! - [`coupling`]: closed-form coupling physics (single-particle couplings,
//!   cavity-mediated particle-particle coupling, normal modes, self-energy,
//!   short-range estimators and parameter sweeps).
//! - [`dynamics`]: the linearised two-particle/one-cavity Langevin model,
//!   its eigenfrequencies, power spectral densities and exact stochastic
//!   integration.
//! - [`experiment`]: power ramps, spectrogram synthesis and sweep campaigns.
//! - [`analysis`]: peak detection, mode tracking, power calibration and
//!   avoided-crossing fits.
//!
//! Internally every frequency is an angular frequency in rad/s. Files and
//! reports use ordinary frequencies (Hz).

pub mod analysis;
pub mod config;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod params;
pub mod units;

pub use error::{Error, Result, ValidationError};
pub use params::{Axis, CavitySpec, Config, NoiseSpec, ParticleSpec, Polarization, ValidatedConfig};
