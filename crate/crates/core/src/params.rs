//! Domain types, unit conventions, derived single-particle quantities and
//! configuration validation.
//!
//! All quantities are SI with angular frequencies in rad/s. Conversion to and
//! from the Hz values used in files happens in [`crate::config`].

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coupling;
use crate::error::ValidationError;
use crate::units::{khz, mhz, TWO_PI};

/// Centre-of-mass axis. `y` is the cavity axis, `z` the tweezer axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }

    /// Transverse axes couple through the field gradient (`sin`), the
    /// tweezer axis through the field amplitude (`cos`).
    pub fn is_transverse(self) -> bool {
        !matches!(self, Axis::Z)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

/// Tweezer polarisation. Along the cavity axis no light is scattered into
/// the cavity and every optomechanical coupling vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarization {
    #[default]
    Transverse,
    CavityAxis,
}

/// One levitated nanoparticle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    /// Sphere radius (m).
    pub radius: f64,
    /// Mass density (kg/m^3).
    pub density: f64,
    /// Net charge in elementary charges.
    pub charge: i64,
    /// Tweezer power (W).
    pub power: f64,
    /// Coordinate along the cavity axis (m).
    pub position: f64,
    /// Bare mechanical frequencies for x, y, z at `power` (rad/s).
    pub mech_freq: [f64; 3],
    /// Gas damping rate (rad/s); equals the peak FWHM in angular units.
    pub gas_damping: f64,
}

impl ParticleSpec {
    pub fn freq(&self, axis: Axis) -> f64 {
        self.mech_freq[axis.index()]
    }

    /// The same particle with the tweezer power changed; frequencies follow
    /// the square-root law.
    pub fn at_power(&self, power: f64) -> ParticleSpec {
        let scale = (power / self.power).sqrt();
        ParticleSpec {
            power,
            mech_freq: self.mech_freq.map(|w| w * scale),
            ..self.clone()
        }
    }

    pub fn at_position(&self, position: f64) -> ParticleSpec {
        ParticleSpec {
            position,
            ..self.clone()
        }
    }
}

/// Cavity mode parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CavitySpec {
    /// Energy decay rate κ (rad/s).
    pub linewidth: f64,
    /// Δ = ω_cav − ω_tweezer (rad/s).
    pub detuning: f64,
    /// Optical wavelength (m).
    pub wavelength: f64,
    /// Maximal optomechanical coupling per axis at `ref_power` (rad/s).
    pub coupling_scale: [f64; 3],
    /// Reference power for `coupling_scale` (W).
    pub ref_power: f64,
    #[serde(default)]
    pub polarization: Polarization,
    /// Mirror separation (m); informational only.
    #[serde(default)]
    pub length: Option<f64>,
}

impl CavitySpec {
    pub fn wavenumber(&self) -> f64 {
        TWO_PI / self.wavelength
    }

    pub fn with_detuning(&self, detuning: f64) -> CavitySpec {
        CavitySpec {
            detuning,
            ..self.clone()
        }
    }
}

/// Noise and read-out parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Effective bath temperature of the centre-of-mass motion (K).
    pub temperature: f64,
    /// Amplitude of the direct (non-cavity) motional imprint on the
    /// detected signal, per unit quadrature.
    pub readout_leak: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            temperature: 300.0,
            readout_leak: 0.02,
        }
    }
}

/// Distance of a particle to the nearest intensity maximum, as a phase.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct StandingWavePhase(f64);

impl StandingWavePhase {
    pub fn new(phase: f64) -> Result<Self, ValidationError> {
        if !(0.0..=FRAC_PI_2).contains(&phase) {
            return Err(ValidationError::single(
                "phase",
                format!("{phase} outside [0, pi/2]"),
            ));
        }
        Ok(StandingWavePhase(phase))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Full simulation configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub particles: Vec<ParticleSpec>,
    pub cavity: CavitySpec,
    pub noise: NoiseSpec,
}

/// Nominal operating point used throughout the examples and tests: 150 nm
/// silica spheres at 130 mW, one at a node and one 3.5 wavelengths away,
/// κ/2π = 600 kHz, Δ/2π = 1.2 MHz, y couplings tuned so the avoided
/// crossing at Δ/2π = 0.45 MHz is 6.6 kHz wide and z couplings tuned so
/// |G_zz|/Ω_z = 0.238 at the antinodes.
pub mod defaults {
    pub const RADIUS: f64 = 75e-9;
    pub const DENSITY: f64 = 1850.0;
    pub const POWER: f64 = 0.13;
    pub const WAVELENGTH: f64 = 1550e-9;
    pub const CHARGE: i64 = 50;
    /// Ω/2π for x, y, z at [`POWER`] (Hz).
    pub const MECH_FREQ_HZ: [f64; 3] = [59e3, 80e3, 22e3];
    pub const GAS_DAMPING_HZ: f64 = 600.0;
    pub const LINEWIDTH_HZ: f64 = 600e3;
    pub const DETUNING_HZ: f64 = 1.2e6;
    pub const CAVITY_LENGTH: f64 = 9.6e-3;
    /// Separation used for the default pair, in wavelengths.
    pub const SEPARATION_WAVELENGTHS: f64 = 3.5;
    /// Target y splitting at the calibration detuning.
    pub const Y_SPLITTING_HZ: f64 = 6.6e3;
    pub const Y_CALIBRATION_DETUNING_HZ: f64 = 0.45e6;
    /// Target |G_zz| / Ω_z at the antinodes.
    pub const Z_COUPLING_RATIO: f64 = 0.238;
}

impl Config {
    pub fn paper_defaults() -> Config {
        use defaults::*;
        let mech_freq = MECH_FREQ_HZ.map(|f| TWO_PI * f);
        let node = WAVELENGTH / 4.0;
        let particle = |position: f64| ParticleSpec {
            radius: RADIUS,
            density: DENSITY,
            charge: CHARGE,
            power: POWER,
            position,
            mech_freq,
            gas_damping: TWO_PI * GAS_DAMPING_HZ,
        };
        let mut cavity = CavitySpec {
            linewidth: TWO_PI * LINEWIDTH_HZ,
            detuning: TWO_PI * DETUNING_HZ,
            wavelength: WAVELENGTH,
            coupling_scale: [0.0, 0.0, 0.0],
            ref_power: POWER,
            polarization: Polarization::Transverse,
            length: Some(CAVITY_LENGTH),
        };
        let y_target = khz(Y_SPLITTING_HZ * 1e-3) / 2.0;
        cavity.coupling_scale[Axis::Y.index()] = coupling::calibrate_coupling_scale(
            y_target,
            mech_freq[Axis::Y.index()],
            &cavity.with_detuning(mhz(Y_CALIBRATION_DETUNING_HZ * 1e-6)),
        );
        cavity.coupling_scale[Axis::Z.index()] = coupling::calibrate_coupling_scale(
            Z_COUPLING_RATIO * mech_freq[Axis::Z.index()],
            mech_freq[Axis::Z.index()],
            &cavity,
        );
        Config {
            particles: vec![
                particle(node),
                particle(node + SEPARATION_WAVELENGTHS * WAVELENGTH),
            ],
            cavity,
            noise: NoiseSpec::default(),
        }
    }

    pub fn with_detuning(&self, detuning: f64) -> Config {
        Config {
            cavity: self.cavity.with_detuning(detuning),
            ..self.clone()
        }
    }
}

/// A configuration that passed [`validate_config`], with derived data.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    config: Config,
    separation: f64,
    warnings: Vec<String>,
}

impl ValidatedConfig {
    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn into_inner(self) -> Config {
        self.config
    }

    /// d = |y1 − y2| (m).
    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn particles(&self) -> &[ParticleSpec] {
        &self.config.particles
    }

    pub fn cavity(&self) -> &CavitySpec {
        &self.config.cavity
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.config.noise
    }
}

impl std::ops::Deref for ValidatedConfig {
    type Target = Config;

    fn deref(&self) -> &Config {
        &self.config
    }
}

/// Sphere mass (4/3)πr³ρ.
pub fn mass_from_spec(p: &ParticleSpec) -> Result<f64, ValidationError> {
    let mut err = ValidationError::default();
    if !(p.radius > 0.0) {
        err.push("radius", "must be positive");
    }
    if !(p.density > 0.0) {
        err.push("density", "must be positive");
    }
    err.into_result()?;
    Ok(4.0 / 3.0 * PI * p.radius.powi(3) * p.density)
}

/// Folds a position onto the standing wave: 0 at an intensity maximum, π/2 at
/// a node. The result is λ/2-periodic and even about every antinode.
pub fn phase_from_position(y: f64, wavelength: f64) -> Result<StandingWavePhase, ValidationError> {
    if !(wavelength > 0.0) || !y.is_finite() {
        return Err(ValidationError::single("wavelength", "must be positive"));
    }
    let half = wavelength / 2.0;
    let u = y.rem_euclid(half);
    let dist = u.min(half - u).max(0.0);
    let phase = (TWO_PI * dist / wavelength).min(FRAC_PI_2);
    Ok(StandingWavePhase(phase))
}

/// Ω(P) = Ω_ref·√(P/P_ref).
pub fn mech_freq_from_power(omega_ref: f64, power: f64, ref_power: f64) -> Result<f64, ValidationError> {
    let mut err = ValidationError::default();
    if !(power > 0.0) {
        err.push("power", "must be positive");
    }
    if !(ref_power > 0.0) {
        err.push("ref_power", "must be positive");
    }
    err.into_result()?;
    Ok(omega_ref * (power / ref_power).sqrt())
}

fn check_particle(i: usize, p: &ParticleSpec, err: &mut ValidationError) {
    let field = |name: &str| format!("particle.{}.{name}", i + 1);
    if !(p.radius > 0.0) {
        err.push(field("radius"), "must be positive");
    }
    if !(p.density > 0.0) {
        err.push(field("density"), "must be positive");
    }
    if !(p.power > 0.0) {
        err.push(field("power"), "must be positive");
    }
    if !(p.gas_damping >= 0.0) {
        err.push(field("gas_damping"), "must be non-negative");
    }
    if !p.position.is_finite() {
        err.push(field("position"), "must be finite");
    }
    if p.mech_freq.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        err.push(field("mech_freq"), "all frequencies must be positive");
    } else {
        let [x, y, z] = p.mech_freq;
        if x == y || y == z || x == z {
            err.push(field("mech_freq"), "axis frequencies must be pairwise distinct");
        }
    }
}

/// Checks every invariant of the configuration and attaches derived data.
/// Validation is idempotent.
pub fn validate_config(config: &Config) -> Result<ValidatedConfig, ValidationError> {
    let mut err = ValidationError::default();
    if config.particles.len() < 2 {
        err.push("particles", "at least two particles are required");
    }
    for (i, p) in config.particles.iter().enumerate() {
        check_particle(i, p, &mut err);
    }
    let c = &config.cavity;
    if !(c.linewidth > 0.0) {
        err.push("cavity.linewidth", "must be positive");
    }
    if !c.detuning.is_finite() {
        err.push("cavity.detuning", "must be finite");
    }
    if !(c.wavelength > 0.0) {
        err.push("cavity.wavelength", "must be positive");
    }
    if c.coupling_scale.iter().any(|g| !(*g >= 0.0)) {
        err.push("cavity.coupling_scale", "must be non-negative");
    }
    if !(c.ref_power > 0.0) {
        err.push("cavity.ref_power", "must be positive");
    }
    if !(config.noise.temperature >= 0.0) {
        err.push("noise.temperature", "must be non-negative");
    }
    if !(config.noise.readout_leak >= 0.0) {
        err.push("noise.readout_leak", "must be non-negative");
    }
    for i in 0..config.particles.len() {
        for j in (i + 1)..config.particles.len() {
            if config.particles[i].position == config.particles[j].position {
                err.push(
                    format!("particle.{}.position", j + 1),
                    format!("coincides with particle {}; zero separation is unsupported", i + 1),
                );
            }
        }
    }
    err.into_result()?;

    let (p1, p2) = (&config.particles[0], &config.particles[1]);
    let separation = (p1.position - p2.position).abs();
    let mut warnings = Vec::new();
    let omega = 0.5 * (p1.freq(Axis::Y) + p2.freq(Axis::Y));
    let floor = 0.25 * p1.gas_damping.max(p2.gas_damping);
    if let (Ok(gc), Ok(go)) = (
        coupling::coulomb_coupling_estimate(p1, p2, separation, omega),
        coupling::optical_binding_estimate(p1, p2, separation, omega, c),
    ) {
        if gc > floor {
            warnings.push(format!(
                "Coulomb coupling estimate {:.3} kHz exceeds the resolution floor {:.3} kHz",
                crate::units::to_khz(gc),
                crate::units::to_khz(floor)
            ));
        }
        if go > floor {
            warnings.push(format!(
                "optical binding estimate {:.3} kHz exceeds the resolution floor {:.3} kHz",
                crate::units::to_khz(go),
                crate::units::to_khz(floor)
            ));
        }
    }
    Ok(ValidatedConfig {
        config: config.clone(),
        separation,
        warnings,
    })
}
