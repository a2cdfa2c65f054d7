//! Closed-form coupling physics.
//!
//! Couplings are taken real, with the sign carried by the standing-wave
//! factor (`sin ky` for transverse axes, `cos ky` for the tweezer axis);
//! complex values only enter through user overrides. The cavity-mediated
//! particle-particle coupling is
//!
//! ```text
//! G = g1 g2* / ((Δ + Ω) + iκ/2) + g1* g2 / ((Δ − Ω) − iκ/2)
//! ```
//!
//! and the single-particle self-energy is `Σ = −|g|² χ(Ω)` with
//! `χ(Ω) = 1/((Δ + Ω) + iκ/2) + 1/((Δ − Ω) − iκ/2)`, so that the optical
//! spring shift is `Re Σ` and the optical damping `−2 Im Σ`.

use std::io::{BufRead, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationError};
use crate::params::{defaults, mass_from_spec, Axis, CavitySpec, Config, ParticleSpec, Polarization, StandingWavePhase};
use crate::units::{to_hz, ELEMENTARY_CHARGE, TWO_PI, VACUUM_PERMITTIVITY};

/// Optomechanical coupling g_{i,μ} of one particle (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptoCoupling {
    pub axis: Axis,
    pub g: Complex64,
}

impl OptoCoupling {
    pub fn real(axis: Axis, g: f64) -> Self {
        OptoCoupling {
            axis,
            g: Complex64::new(g, 0.0),
        }
    }

    pub fn magnitude(&self) -> f64 {
        self.g.norm()
    }
}

/// Cavity-mediated particle-particle coupling G_{μ,μ} (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCoupling {
    pub axis: Axis,
    pub g: Complex64,
}

impl EffectiveCoupling {
    pub fn magnitude(&self) -> f64 {
        self.g.norm()
    }
}

/// Normal-mode frequencies λ∓ (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalModes {
    pub lambda_minus: f64,
    pub lambda_plus: f64,
}

impl NormalModes {
    pub fn gap(&self) -> f64 {
        self.lambda_plus - self.lambda_minus
    }
}

/// Optical spring shift and optical damping (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfEnergy {
    pub shift: f64,
    pub damping: f64,
}

/// Cavity response χ(Ω) shared by the self-energy and the effective coupling.
pub fn cavity_susceptibility(omega: f64, cavity: &CavitySpec) -> Complex64 {
    susceptibility(omega, cavity.detuning, cavity.linewidth)
}

pub(crate) fn susceptibility(omega: f64, detuning: f64, linewidth: f64) -> Complex64 {
    let half = 0.5 * linewidth;
    Complex64::new(detuning + omega, half).inv() + Complex64::new(detuning - omega, -half).inv()
}

fn power_factor(power: f64, cavity: &CavitySpec) -> f64 {
    (power / cavity.ref_power).max(0.0).sqrt()
}

/// |g| from the distance to the nearest intensity maximum:
/// `g_max √(P/P_ref) sin φ` for x, y and `g_max √(P/P_ref) cos φ` for z.
pub fn single_particle_coupling(
    phase: StandingWavePhase,
    axis: Axis,
    power: f64,
    cavity: &CavitySpec,
) -> OptoCoupling {
    if cavity.polarization == Polarization::CavityAxis {
        return OptoCoupling::real(axis, 0.0);
    }
    let trig = if axis.is_transverse() {
        phase.value().sin()
    } else {
        phase.value().cos()
    };
    OptoCoupling::real(
        axis,
        cavity.coupling_scale[axis.index()] * power_factor(power, cavity) * trig,
    )
}

/// Signed coupling at an absolute position on the standing wave (antinode at
/// y = 0). Magnitude equals [`single_particle_coupling`] at the folded phase.
pub fn coupling_at_position(position: f64, axis: Axis, power: f64, cavity: &CavitySpec) -> OptoCoupling {
    if cavity.polarization == Polarization::CavityAxis {
        return OptoCoupling::real(axis, 0.0);
    }
    let ky = cavity.wavenumber() * position;
    let trig = if axis.is_transverse() { ky.sin() } else { ky.cos() };
    OptoCoupling::real(
        axis,
        cavity.coupling_scale[axis.index()] * power_factor(power, cavity) * trig,
    )
}

/// Coupling of a particle as configured (its own position and power).
pub fn particle_coupling(p: &ParticleSpec, axis: Axis, cavity: &CavitySpec) -> OptoCoupling {
    coupling_at_position(p.position, axis, p.power, cavity)
}

/// Cavity-mediated coupling between two near-degenerate modes at Ω.
pub fn effective_coupling(
    g1: OptoCoupling,
    g2: OptoCoupling,
    omega: f64,
    cavity: &CavitySpec,
) -> EffectiveCoupling {
    EffectiveCoupling {
        axis: g1.axis,
        g: effective_coupling_raw(g1.g, g2.g, omega, cavity.detuning, cavity.linewidth),
    }
}

pub(crate) fn effective_coupling_raw(g1: Complex64, g2: Complex64, omega: f64, detuning: f64, linewidth: f64) -> Complex64 {
    let half = 0.5 * linewidth;
    g1 * g2.conj() / Complex64::new(detuning + omega, half)
        + g1.conj() * g2 / Complex64::new(detuning - omega, -half)
}

/// λ± = (Ω1 + Ω2)/2 ± √((Ω1 − Ω2)²/4 + |G|²) for (self-energy shifted)
/// frequencies Ω1, Ω2.
pub fn normal_mode_frequencies(omega1: f64, omega2: f64, coupling: &EffectiveCoupling) -> NormalModes {
    normal_modes_raw(omega1, omega2, coupling.magnitude())
}

pub(crate) fn normal_modes_raw(omega1: f64, omega2: f64, g_abs: f64) -> NormalModes {
    let mean = 0.5 * (omega1 + omega2);
    let half = 0.5 * (omega1 - omega2);
    let root = half.hypot(g_abs);
    NormalModes {
        lambda_minus: mean - root,
        lambda_plus: mean + root,
    }
}

/// Minimal normal-mode splitting 2|G| at the avoided crossing.
pub fn min_splitting(coupling: &EffectiveCoupling) -> f64 {
    2.0 * coupling.magnitude()
}

pub fn self_energy(g: &OptoCoupling, omega: f64, cavity: &CavitySpec) -> SelfEnergy {
    self_energy_raw(g.g.norm_sqr(), omega, cavity.detuning, cavity.linewidth)
}

pub(crate) fn self_energy_raw(g_sq: f64, omega: f64, detuning: f64, linewidth: f64) -> SelfEnergy {
    let sigma = -g_sq * susceptibility(omega, detuning, linewidth);
    SelfEnergy {
        shift: sigma.re,
        damping: -2.0 * sigma.im,
    }
}

/// g_max such that two particles at maximal coupling and reference power
/// have |G| = `target` at mode frequency Ω.
pub fn calibrate_coupling_scale(target: f64, omega: f64, cavity: &CavitySpec) -> f64 {
    (target.abs() / cavity_susceptibility(omega, cavity).norm()).sqrt()
}

fn check_separation(d: f64) -> Result<()> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(ValidationError::single("separation", "must be positive").into());
    }
    Ok(())
}

/// Linearised Coulomb coupling `q1 q2 / (4πε0 d³ · 2 m Ω)` between two
/// charged particles; scales as 1/d³.
pub fn coulomb_coupling_estimate(p1: &ParticleSpec, p2: &ParticleSpec, d: f64, omega: f64) -> Result<f64> {
    check_separation(d)?;
    let mass = (mass_from_spec(p1)? * mass_from_spec(p2)?).sqrt();
    let q1q2 = (p1.charge * p2.charge) as f64 * ELEMENTARY_CHARGE * ELEMENTARY_CHARGE;
    let stiffness = q1q2 / (4.0 * std::f64::consts::PI * VACUUM_PERMITTIVITY * d.powi(3));
    Ok((stiffness / (2.0 * mass * omega)).abs())
}

/// Reference value the optical-binding amplitude is pinned to (rad/s), at
/// d = 3.5 λ with the default particles and frequencies.
pub const OPTICAL_BINDING_REFERENCE: f64 = TWO_PI * 140.0;

fn optical_binding_constant() -> f64 {
    let mass = 4.0 / 3.0 * std::f64::consts::PI * defaults::RADIUS.powi(3) * defaults::DENSITY;
    let d = defaults::SEPARATION_WAVELENGTHS * defaults::WAVELENGTH;
    let omega = TWO_PI * defaults::MECH_FREQ_HZ[Axis::Y.index()];
    OPTICAL_BINDING_REFERENCE * d * mass * omega / defaults::POWER
}

/// Free-space optical binding estimate `K √(P1 P2) / (d √(m1 m2) Ω)` with a
/// single constant K pinned to [`OPTICAL_BINDING_REFERENCE`]; scales as 1/d.
pub fn optical_binding_estimate(
    p1: &ParticleSpec,
    p2: &ParticleSpec,
    d: f64,
    omega: f64,
    cavity: &CavitySpec,
) -> Result<f64> {
    check_separation(d)?;
    if cavity.polarization == Polarization::CavityAxis {
        // no light scattered along the separation axis
        return Ok(0.0);
    }
    let mass = (mass_from_spec(p1)? * mass_from_spec(p2)?).sqrt();
    Ok(optical_binding_constant() * (p1.power * p2.power).sqrt() / (d * mass * omega))
}

/// Which parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Detuning,
    Distance,
    Phase,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Detuning => "detuning",
            SweepKind::Distance => "distance",
            SweepKind::Phase => "phase",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detuning" => Ok(SweepKind::Detuning),
            "distance" => Ok(SweepKind::Distance),
            "phase" => Ok(SweepKind::Phase),
            other => Err(Error::Parse(format!("unknown sweep variable `{other}`"))),
        }
    }
}

/// One grid point of a closed-form sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: SweepKind,
    /// Δ (rad/s), d (m) or φ (rad).
    pub value: f64,
    pub coupling_y: Complex64,
    pub coupling_z: Complex64,
}

impl SweepRow {
    pub fn splitting_y(&self) -> f64 {
        2.0 * self.coupling_y.norm()
    }

    pub fn splitting_z(&self) -> f64 {
        2.0 * self.coupling_z.norm()
    }

    /// Grid value as written to files: Δ/2π in Hz, d in m, φ in rad.
    pub fn value_si(&self) -> f64 {
        match self.kind {
            SweepKind::Detuning => to_hz(self.value),
            _ => self.value,
        }
    }
}

/// G for the first two particles on one axis at their mean frequency.
pub fn pair_coupling(p1: &ParticleSpec, p2: &ParticleSpec, axis: Axis, cavity: &CavitySpec) -> EffectiveCoupling {
    let omega = 0.5 * (p1.freq(axis) + p2.freq(axis));
    effective_coupling(
        particle_coupling(p1, axis, cavity),
        particle_coupling(p2, axis, cavity),
        omega,
        cavity,
    )
}

fn row(kind: SweepKind, value: f64, p1: &ParticleSpec, p2: &ParticleSpec, cavity: &CavitySpec) -> SweepRow {
    SweepRow {
        kind,
        value,
        coupling_y: pair_coupling(p1, p2, Axis::Y, cavity).g,
        coupling_z: pair_coupling(p1, p2, Axis::Z, cavity).g,
    }
}

fn first_pair(config: &Config) -> (&ParticleSpec, &ParticleSpec) {
    (&config.particles[0], &config.particles[1])
}

/// Splittings over a list of detunings (rad/s) at fixed positions and powers.
pub fn detuning_sweep(config: &Config, detunings: &[f64]) -> Vec<SweepRow> {
    let (p1, p2) = first_pair(config);
    detunings
        .par_iter()
        .map(|&delta| row(SweepKind::Detuning, delta, p1, p2, &config.cavity.with_detuning(delta)))
        .collect()
}

/// Splittings with particle 1 pinned at the node y = λ/4 and particle 2 at
/// distance d (m) from it.
pub fn distance_sweep(config: &Config, distances: &[f64]) -> Vec<SweepRow> {
    let (p1, p2) = first_pair(config);
    let node = config.cavity.wavelength / 4.0;
    let p1 = p1.at_position(node);
    distances
        .par_iter()
        .map(|&d| row(SweepKind::Distance, d, &p1, &p2.at_position(node + d), &config.cavity))
        .collect()
}

/// Splittings with both particles at phase φ, separated by a whole number of
/// wavelengths so that φ1 = φ2.
pub fn phase_sweep(config: &Config, phases: &[f64], separation_wavelengths: u32) -> Vec<SweepRow> {
    let (p1, p2) = first_pair(config);
    let k = config.cavity.wavenumber();
    let lambda = config.cavity.wavelength;
    phases
        .par_iter()
        .map(|&phi| {
            let y1 = phi / k;
            let y2 = y1 + separation_wavelengths as f64 * lambda;
            row(SweepKind::Phase, phi, &p1.at_position(y1), &p2.at_position(y2), &config.cavity)
        })
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "sweep_variable,value_si,splitting_hz_y,splitting_hz_z,G_real,G_imag";

/// Writes sweep rows as CSV. `G_real`/`G_imag` are the y-axis coupling in Hz.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.kind.name(),
            r.value_si(),
            to_hz(r.splitting_y()),
            to_hz(r.splitting_z()),
            to_hz(r.coupling_y.re),
            to_hz(r.coupling_y.im)
        )?;
    }
    Ok(())
}

/// A parsed sweep CSV row, in file units.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub variable: String,
    pub value_si: f64,
    pub splitting_hz_y: f64,
    pub splitting_hz_z: f64,
    pub g_real: f64,
    pub g_imag: f64,
}

pub fn read_sweep_csv<R: BufRead>(input: R) -> Result<Vec<SweepRecord>> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == SWEEP_CSV_HEADER => {}
        _ => return Err(Error::Parse("missing sweep CSV header".into())),
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(Error::Parse(format!("expected 6 columns, got {}", cols.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s}: {e}")));
        out.push(SweepRecord {
            variable: cols[0].to_string(),
            value_si: num(cols[1])?,
            splitting_hz_y: num(cols[2])?,
            splitting_hz_z: num(cols[3])?,
            g_real: num(cols[4])?,
            g_imag: num(cols[5])?,
        });
    }
    Ok(out)
}

pub fn write_sweep_records<W: Write>(records: &[SweepRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.variable, r.value_si, r.splitting_hz_y, r.splitting_hz_z, r.g_real, r.g_imag
        )?;
    }
    Ok(())
}
