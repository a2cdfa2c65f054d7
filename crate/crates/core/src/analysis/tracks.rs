use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::peaks::{detect_peaks_log, Peak};
use crate::experiment::SpectrogramData;
use crate::params::Axis;
use crate::units::to_hz;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackOptions {
    /// Minimum peak prominence in decades.
    pub min_prominence_decades: f64,
    /// Largest centre jump between consecutive time bins, in frequency bins.
    pub max_jump_bins: f64,
}

impl Default for TrackOptions {
    fn default() -> Self {
        TrackOptions {
            min_prominence_decades: 0.5,
            max_jump_bins: 3.0,
        }
    }
}

/// One detected peak attributed to a time bin. Frequencies in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub bin: usize,
    pub time: f64,
    pub center: f64,
    pub width: f64,
    pub height: f64,
}

/// A continuous run of linked peaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakTrack {
    /// Axis whose band contains the median centre.
    pub axis: Option<Axis>,
    pub points: Vec<TrackPoint>,
}

impl PeakTrack {
    pub fn median_center(&self) -> f64 {
        let mut c: Vec<f64> = self.points.iter().map(|p| p.center).collect();
        c.sort_by(f64::total_cmp);
        c[c.len() / 2]
    }
}

/// Peaks of every time bin, in time order.
pub fn detect_all(spec: &SpectrogramData, min_decades: f64) -> Vec<Vec<Peak>> {
    spec.psd
        .par_iter()
        .map(|row| detect_peaks_log(row, &spec.frequency_bins, min_decades))
        .collect()
}

/// Links per-bin peaks into tracks by nearest-neighbour matching. A track
/// that finds no partner within the jump limit ends; unmatched peaks start
/// new tracks. Tracks are returned ordered by first bin, then centre.
pub fn track_modes(spec: &SpectrogramData, options: &TrackOptions) -> Vec<PeakTrack> {
    let peaks = detect_all(spec, options.min_prominence_decades);
    let max_jump = options.max_jump_bins * spec.bin_width();
    let mut tracks: Vec<PeakTrack> = Vec::new();
    let mut active: Vec<usize> = Vec::new();
    for (bin, row) in peaks.iter().enumerate() {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (a, &t) in active.iter().enumerate() {
            let last = tracks[t].points.last().expect("tracks are never empty").center;
            for (j, p) in row.iter().enumerate() {
                let d = (p.center - last).abs();
                if d <= max_jump {
                    pairs.push((d, a, j));
                }
            }
        }
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let mut track_used = vec![false; active.len()];
        let mut peak_used = vec![false; row.len()];
        let mut next_active = Vec::new();
        for (_, a, j) in pairs {
            if track_used[a] || peak_used[j] {
                continue;
            }
            track_used[a] = true;
            peak_used[j] = true;
            let t = active[a];
            tracks[t].points.push(point(spec, bin, &row[j]));
            next_active.push(t);
        }
        for (j, p) in row.iter().enumerate() {
            if !peak_used[j] {
                tracks.push(PeakTrack {
                    axis: None,
                    points: vec![point(spec, bin, p)],
                });
                next_active.push(tracks.len() - 1);
            }
        }
        active = next_active;
    }
    for t in &mut tracks {
        let f = to_hz(t.median_center());
        t.axis = spec.metadata.bands.iter().find(|b| b.contains(f)).map(|b| b.axis);
    }
    tracks.sort_by(|a, b| {
        a.points[0]
            .bin
            .cmp(&b.points[0].bin)
            .then(a.points[0].center.total_cmp(&b.points[0].center))
    });
    tracks
}

fn point(spec: &SpectrogramData, bin: usize, p: &Peak) -> TrackPoint {
    TrackPoint {
        bin,
        time: spec.time_bins[bin],
        center: p.center,
        width: p.width,
        height: p.height,
    }
}

/// Lower and upper normal-mode branch of one axis, per time bin. A bin with
/// a single detected peak is marked merged and has neither branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSeries {
    pub axis: Axis,
    pub time: Vec<f64>,
    pub lower: Vec<Option<TrackPoint>>,
    pub upper: Vec<Option<TrackPoint>>,
    pub merged: Vec<bool>,
    /// Frequency bin width of the source spectrogram (rad/s).
    pub bin_width: f64,
}

impl BranchSeries {
    /// Collects the points of all tracks labelled `axis`; with more than two
    /// peaks in a bin the two highest are kept.
    pub fn from_tracks(tracks: &[PeakTrack], axis: Axis, time: &[f64], bin_width: f64) -> Self {
        let n = time.len();
        let mut per_bin: Vec<Vec<TrackPoint>> = vec![Vec::new(); n];
        for t in tracks.iter().filter(|t| t.axis == Some(axis)) {
            for p in &t.points {
                if p.bin < n {
                    per_bin[p.bin].push(*p);
                }
            }
        }
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let mut merged = Vec::with_capacity(n);
        for mut pts in per_bin {
            pts.sort_by(|a, b| b.height.total_cmp(&a.height));
            pts.truncate(2);
            pts.sort_by(|a, b| a.center.total_cmp(&b.center));
            match pts.as_slice() {
                [a, b] => {
                    lower.push(Some(*a));
                    upper.push(Some(*b));
                    merged.push(false);
                }
                [_] => {
                    lower.push(None);
                    upper.push(None);
                    merged.push(true);
                }
                _ => {
                    lower.push(None);
                    upper.push(None);
                    merged.push(false);
                }
            }
        }
        BranchSeries {
            axis,
            time: time.to_vec(),
            lower,
            upper,
            merged,
            bin_width,
        }
    }

    pub fn from_spectrogram(spec: &SpectrogramData, tracks: &[PeakTrack], axis: Axis) -> Self {
        Self::from_tracks(tracks, axis, &spec.time_bins, spec.bin_width())
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Bins where both branches were detected.
    pub fn paired_bins(&self) -> usize {
        self.lower.iter().zip(&self.upper).filter(|(l, u)| l.is_some() && u.is_some()).count()
    }
}
