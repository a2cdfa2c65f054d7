//! Extraction pipeline: per-bin peak detection, track linking, power
//! calibration from the uncoupled x modes and avoided-crossing fits with
//! |g1 g2| as the single free parameter.
//!
//! Fits use peak positions only; heights and line shapes are not modelled.

mod calibration;
mod fit;
mod peaks;
mod tracks;

pub use calibration::{calibrate_from_branches, calibrate_powers_from_x, PowerCalibration, CALIBRATION_MIN_SEPARATION};
pub use fit::{
    fit_avoided_crossing, resolvability, FitModel, FitOptions, FitReport, FitResult, Resolvability,
    RESOLUTION_FRACTION,
};
pub use peaks::{detect_peaks, detect_peaks_log, Peak};
pub use tracks::{detect_all, track_modes, BranchSeries, PeakTrack, TrackOptions, TrackPoint};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::SpectrogramData;
use crate::params::{Axis, Config};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct AnalysisOptions {
    pub track: TrackOptions,
    pub fit: FitOptions,
}

/// Everything the pipeline extracted from one spectrogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub tracks: Vec<PeakTrack>,
    pub calibration: PowerCalibration,
    pub fits: Vec<FitResult>,
}

/// Tracks, calibrates from x and fits each requested axis. The spectrogram
/// must contain the x axis; `config` supplies damping, detuning and
/// linewidth.
pub fn analyze_spectrogram(
    spec: &SpectrogramData,
    config: &Config,
    axes: &[Axis],
    options: &AnalysisOptions,
) -> Result<Analysis> {
    let tracks = track_modes(spec, &options.track);
    let calibration = calibrate_powers_from_x(&tracks, &spec.time_bins, spec.bin_width())?;
    let fits = axes
        .par_iter()
        .map(|&axis| {
            let edges = spec
                .metadata
                .edges(axis)
                .ok_or_else(|| Error::Fit(format!("spectrogram has no {axis} axis")))?;
            let branches = BranchSeries::from_spectrogram(spec, &tracks, axis);
            fit_avoided_crossing(&branches, &calibration, config, edges, &options.fit)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis {
        tracks,
        calibration,
        fits,
    })
}
