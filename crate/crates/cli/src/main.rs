//! `levicav`: closed-form sweeps, virtual spectrograms, short-range
//! estimates and sweep campaigns for cavity-coupled levitated particles.
//!
//! Exit codes: 0 success, 1 invalid configuration or arguments, 2 numerical
//! failure, 3 I/O failure.

mod commands;
mod grid;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use grid::Grid;

#[derive(Debug, Parser)]
#[command(name = "levicav", version, about = "Cavity-mediated coupling of levitated nanoparticles")]
pub struct Cli {
    /// Configuration file (TOML); the built-in operating point when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "LEVICAV_OUT", default_value = "levicav-out")]
    pub out: PathBuf,
    /// Seed of stochastic spectrograms.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Spectrogram synthesis mode.
    #[arg(long, global = true, value_enum, default_value_t = Mode::Analytic)]
    pub mode: Mode,
    /// Validate inputs and print the manifest without computing anything.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Analytic,
    Stochastic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form splittings over one swept parameter (sweep.csv).
    Couple(SweepArgs),
    /// Virtual power-ramp spectrogram with mode tracks and avoided-crossing
    /// fits.
    Spectrogram(SpectrogramArgs),
    /// Coulomb and optical-binding estimates against the cavity coupling and
    /// the resolution floor (estimate.json).
    Estimate,
    /// One spectrogram and fit per grid point (campaign.csv, campaign.json).
    Campaign {
        #[command(flatten)]
        sweep: SweepArgs,
        #[command(flatten)]
        ramp: RampArgs,
    },
}

/// Exactly one grid, as start:stop:count with inclusive endpoints.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SweepArgs {
    /// Cavity detuning Δ/2π in MHz.
    #[arg(long, value_name = "MHZ_GRID")]
    pub detuning: Option<Grid>,
    /// Particle separation in wavelengths, particle 1 at a node.
    #[arg(long, value_name = "WAVELENGTH_GRID")]
    pub distance: Option<Grid>,
    /// Common standing-wave phase in rad, particles four wavelengths apart.
    #[arg(long, value_name = "RAD_GRID")]
    pub phase: Option<Grid>,
}

#[derive(Debug, Clone, Args)]
pub struct RampArgs {
    /// Number of power steps.
    #[arg(long, default_value_t = levicav_core::experiment::DEFAULT_STEPS)]
    pub steps: usize,
    /// Centre power in W; the first particle's power when absent.
    #[arg(long)]
    pub center: Option<f64>,
    /// Power difference swept, relative to the centre power.
    #[arg(long, default_value_t = levicav_core::experiment::DEFAULT_RELATIVE_SPAN)]
    pub span: f64,
    /// Ramp duration in s; long enough for stochastic holds when absent.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SpectrogramArgs {
    #[command(flatten)]
    pub ramp: RampArgs,
    /// Simulated axes; x is required for the power calibration.
    #[arg(long, value_delimiter = ',', default_value = "x,y")]
    pub axes: Vec<levicav_core::Axis>,
    /// Fit model.
    #[arg(long, value_enum, default_value_t = Model::Linearized)]
    pub model: Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Linearized,
    CoupledMode,
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

impl From<levicav_core::Error> for CliError {
    fn from(e: levicav_core::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<levicav_core::ValidationError> for CliError {
    fn from(e: levicav_core::ValidationError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("levicav: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
