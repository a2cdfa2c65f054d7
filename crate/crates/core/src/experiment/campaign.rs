use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::spectrogram::{hold_config, run_spectrogram, SpectrogramData, SpectrogramMode, SpectrogramOptions};
use super::RampSchedule;
use crate::analysis::{
    calibrate_powers_from_x, fit_avoided_crossing, track_modes, AnalysisOptions, BranchSeries, FitResult,
};
use crate::coupling::{pair_coupling, particle_coupling, SweepKind};
use crate::error::Result;
use crate::params::{validate_config, Axis, Config};
use crate::units::to_hz;

/// Separation used by the phase campaign, in wavelengths.
pub const PHASE_SEPARATION_WAVELENGTHS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignOptions {
    pub mode: SpectrogramMode,
    /// `axes` is overridden per campaign.
    pub spectrogram: SpectrogramOptions,
    pub analysis: AnalysisOptions,
    /// Keep each point's spectrogram in the result.
    pub keep_spectrograms: bool,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        CampaignOptions {
            mode: SpectrogramMode::Analytic,
            spectrogram: SpectrogramOptions::default(),
            analysis: AnalysisOptions::default(),
            keep_spectrograms: false,
        }
    }
}

/// One grid point. A failed point keeps its slot with `error` set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPoint {
    /// Δ (rad/s), d (m) or φ (rad).
    pub value: f64,
    /// Standing-wave phases of the two particles (rad).
    pub phases: [f64; 2],
    pub fits: Vec<FitResult>,
    /// Closed-form 2|G| per fitted axis at the crossing powers (rad/s).
    pub predicted: Vec<(Axis, f64)>,
    pub error: Option<String>,
    pub spectrogram: Option<SpectrogramData>,
}

impl CampaignPoint {
    pub fn fit(&self, axis: Axis) -> Option<&FitResult> {
        self.fits.iter().find(|f| f.axis == axis)
    }

    pub fn predicted(&self, axis: Axis) -> Option<f64> {
        self.predicted.iter().find(|(a, _)| *a == axis).map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCampaignResult {
    pub kind: SweepKind,
    pub points: Vec<CampaignPoint>,
}

/// One spectrogram and fit per detuning (rad/s); y is fitted.
pub fn run_detuning_campaign(
    config: &Config,
    detunings: &[f64],
    schedule: &RampSchedule,
    options: &CampaignOptions,
) -> Result<SweepCampaignResult> {
    prepare(config, schedule)?;
    let setup = Setup {
        axes: &[Axis::X, Axis::Y],
        fit_axes: &[Axis::Y],
        known_weights: false,
    };
    run(SweepKind::Detuning, detunings, schedule, options, setup, |delta| {
        config.with_detuning(delta)
    })
}

/// Particle 1 pinned at the node y = λ/4, particle 2 at distance d (m);
/// y is fitted. The couplings differ between the particles, so the fit is
/// given their ratio from the configured positions unless the options
/// already carry one.
pub fn run_distance_campaign(
    config: &Config,
    distances: &[f64],
    schedule: &RampSchedule,
    options: &CampaignOptions,
) -> Result<SweepCampaignResult> {
    prepare(config, schedule)?;
    let node = config.cavity.wavelength / 4.0;
    let setup = Setup {
        axes: &[Axis::X, Axis::Y],
        fit_axes: &[Axis::Y],
        known_weights: true,
    };
    run(SweepKind::Distance, distances, schedule, options, setup, |d| {
        let mut c = config.clone();
        c.particles[0] = c.particles[0].at_position(node);
        c.particles[1] = c.particles[1].at_position(node + d);
        c
    })
}

/// Both particles at phase φ (rad), four wavelengths apart; y and z are
/// fitted.
pub fn run_phase_campaign(
    config: &Config,
    phases: &[f64],
    schedule: &RampSchedule,
    options: &CampaignOptions,
) -> Result<SweepCampaignResult> {
    prepare(config, schedule)?;
    let k = config.cavity.wavenumber();
    let lambda = config.cavity.wavelength;
    let setup = Setup {
        axes: &[Axis::X, Axis::Y, Axis::Z],
        fit_axes: &[Axis::Y, Axis::Z],
        known_weights: false,
    };
    run(
        SweepKind::Phase,
        phases,
        schedule,
        options,
        setup,
        |phi| {
            let y1 = phi / k;
            let mut c = config.clone();
            c.particles[0] = c.particles[0].at_position(y1);
            c.particles[1] = c.particles[1].at_position(y1 + PHASE_SEPARATION_WAVELENGTHS as f64 * lambda);
            c
        },
    )
}

fn prepare(config: &Config, schedule: &RampSchedule) -> Result<()> {
    validate_config(config)?;
    schedule.validate()?;
    Ok(())
}

struct Setup<'a> {
    axes: &'a [Axis],
    fit_axes: &'a [Axis],
    /// Pass the configured coupling ratio to the fit.
    known_weights: bool,
}

fn run(
    kind: SweepKind,
    grid: &[f64],
    schedule: &RampSchedule,
    options: &CampaignOptions,
    setup: Setup,
    configure: impl Fn(f64) -> Config + Sync,
) -> Result<SweepCampaignResult> {
    let points = grid
        .par_iter()
        .map(|&value| {
            let config = configure(value);
            let phases = [0, 1].map(|i| {
                (config.cavity.wavenumber() * config.particles[i].position).rem_euclid(std::f64::consts::PI)
            });
            let crossing = hold_config(&config, schedule, schedule.steps / 2);
            let Setup { axes, fit_axes, .. } = setup;
            let predicted = fit_axes
                .iter()
                .map(|&a| {
                    let g = pair_coupling(&crossing.particles[0], &crossing.particles[1], a, &crossing.cavity);
                    (a, 2.0 * g.magnitude())
                })
                .collect();
            let mode = match options.mode {
                // decorrelate points while keeping each independent of grid order
                SpectrogramMode::Stochastic { seed } => SpectrogramMode::Stochastic {
                    seed: seed ^ value.to_bits(),
                },
                m => m,
            };
            let spec_options = SpectrogramOptions {
                axes: axes.to_vec(),
                ..options.spectrogram.clone()
            };
            let mut point = CampaignPoint {
                value,
                phases,
                fits: Vec::new(),
                predicted,
                error: None,
                spectrogram: None,
            };
            let spec = match run_spectrogram(&config, schedule, mode, &spec_options) {
                Ok(s) => s,
                Err(e) => {
                    point.error = Some(e.to_string());
                    return point;
                }
            };
            let mut errors = Vec::new();
            let tracks = track_modes(&spec, &options.analysis.track);
            match calibrate_powers_from_x(&tracks, &spec.time_bins, spec.bin_width()) {
                Ok(cal) => {
                    for &axis in fit_axes {
                        let branches = BranchSeries::from_spectrogram(&spec, &tracks, axis);
                        let edges = spec.metadata.edges(axis).expect("fitted axes are simulated");
                        let mut fit_options = options.analysis.fit;
                        if setup.known_weights && fit_options.coupling_weights.is_none() {
                            // the crossing hold has equal powers
                            fit_options.coupling_weights = Some(
                                [0, 1].map(|i| particle_coupling(&crossing.particles[i], axis, &crossing.cavity).magnitude()),
                            );
                        }
                        match fit_avoided_crossing(&branches, &cal, &config, edges, &fit_options) {
                            Ok(f) => point.fits.push(f),
                            Err(e) => errors.push(format!("{axis}: {e}")),
                        }
                    }
                }
                Err(e) => errors.push(e.to_string()),
            }
            if !errors.is_empty() {
                point.error = Some(errors.join("; "));
            }
            if options.keep_spectrograms {
                point.spectrogram = Some(spec);
            }
            point
        })
        .collect();
    Ok(SweepCampaignResult { kind, points })
}

pub const CAMPAIGN_CSV_HEADER: &str =
    "sweep_variable,value_si,splitting_hz_y,splitting_hz_z,G_real,G_imag,sigma_hz_y,sigma_hz_z,resolved_y,resolved_z,error";

/// Campaign summary: the sweep columns from fitted values (NaN where an
/// axis was not fitted) plus uncertainties and verdicts. `G_real`/`G_imag`
/// are |g1 g2| χ(Ω) in Hz from the y fit.
pub fn write_campaign_csv<W: Write>(result: &SweepCampaignResult, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CAMPAIGN_CSV_HEADER}")?;
    for p in &result.points {
        let value_si = match result.kind {
            SweepKind::Detuning => to_hz(p.value),
            _ => p.value,
        };
        let (y, z) = (p.fit(Axis::Y), p.fit(Axis::Z));
        let split = |f: Option<&FitResult>| f.map_or(f64::NAN, |f| to_hz(f.splitting));
        let sigma = |f: Option<&FitResult>| f.map_or(f64::NAN, |f| to_hz(f.sigma));
        let resolved = |f: Option<&FitResult>| f.map_or(String::new(), |f| f.resolved.to_string());
        let g = y.map_or(Complex64::new(f64::NAN, f64::NAN), |f| f.coupling);
        let error = p.error.as_deref().unwrap_or("").replace([',', '\n', '\r'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            result.kind.name(),
            value_si,
            split(y),
            split(z),
            to_hz(g.re),
            to_hz(g.im),
            sigma(y),
            sigma(z),
            resolved(y),
            resolved(z),
            error
        )?;
    }
    Ok(())
}
