//! Virtual experiments: power ramps, spectrogram synthesis and sweep
//! campaigns.
//!
//! A ramp is a sequence of stepped holds. During each hold the powers are
//! constant and the spectrum is that of the stationary model at those
//! powers; in stochastic mode the state is carried over between holds.

mod campaign;
mod spectrogram;

pub use campaign::{
    run_detuning_campaign, run_distance_campaign, run_phase_campaign, write_campaign_csv, CampaignOptions,
    CampaignPoint, SweepCampaignResult, CAMPAIGN_CSV_HEADER, PHASE_SEPARATION_WAVELENGTHS,
};
pub use spectrogram::{
    axis_bands, hold_config, run_spectrogram, AxisBand, EdgeFrequencies, SpectrogramData, SpectrogramMetadata,
    SpectrogramMode, SpectrogramOptions, WindowMetadata,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ValidationError};

/// Hold length that fits 15 half-overlapping 1024-sample segments at
/// 250 kHz.
pub const DEFAULT_HOLD: f64 = 8.0 * 1024.0 / 250e3;
pub const DEFAULT_STEPS: usize = 200;
/// Ramp span relative to the centre power.
pub const DEFAULT_RELATIVE_SPAN: f64 = 0.2;

/// Per-step tweezer powers of a differential ramp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    /// Total duration (s); each step lasts `duration / steps`.
    pub duration: f64,
    pub steps: usize,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
    /// P1 + P2 is held constant.
    pub differential: bool,
}

impl RampSchedule {
    pub fn hold(&self) -> f64 {
        self.duration / self.steps as f64
    }

    /// Mid-hold times (s).
    pub fn times(&self) -> Vec<f64> {
        (0..self.steps).map(|k| (k as f64 + 0.5) * self.hold()).collect()
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let mut err = ValidationError::default();
        if self.steps == 0 {
            err.push("steps", "must be positive");
        }
        if !(self.duration > 0.0) {
            err.push("duration", "must be positive");
        }
        if self.p1.len() != self.steps || self.p2.len() != self.steps {
            err.push("powers", "one power per step is required");
        }
        if self.p1.iter().chain(&self.p2).any(|p| !(*p > 0.0)) {
            err.push("powers", "must be positive at every step");
        }
        if err.is_empty() {
            Ok(())
        } else {
            Err(err)
        }
    }
}

/// Linear antisymmetric ramp: P1 falls from `center + span/2` and P2 mirrors
/// it, so P1 = P2 at step `steps / 2`.
pub fn make_power_ramp(center: f64, span: f64, steps: usize, duration: f64) -> Result<RampSchedule> {
    let mut err = ValidationError::default();
    if !(center - span.abs() / 2.0 > 0.0) {
        err.push("span", "center - span/2 must stay positive");
    }
    if steps == 0 {
        err.push("steps", "must be positive");
    }
    if !(duration > 0.0) {
        err.push("duration", "must be positive");
    }
    if !err.is_empty() {
        return Err(err.into());
    }
    let offset = |k: usize| span * (0.5 - k as f64 / steps as f64);
    let schedule = RampSchedule {
        duration,
        steps,
        p1: (0..steps).map(|k| center + offset(k)).collect(),
        p2: (0..steps).map(|k| center - offset(k)).collect(),
        differential: true,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// The default ramp around the configured power of the first particle.
pub fn default_ramp(center: f64) -> Result<RampSchedule> {
    make_power_ramp(center, DEFAULT_RELATIVE_SPAN * center, DEFAULT_STEPS, DEFAULT_STEPS as f64 * DEFAULT_HOLD)
}
