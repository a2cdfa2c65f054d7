use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RampSchedule;
use crate::dynamics::{
    build_multi_axis, build_state_space, heterodyne_signal, mechanical_frequencies, psd_frequency_domain,
    stationary_sample, welch_complex, ExactPropagator, StepWork,
};
use crate::error::{Error, Result, ValidationError};
use crate::params::{phase_from_position, validate_config, Axis, Config};
use crate::units::{hz, to_hz};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SpectrogramMode {
    /// Frequency-domain PSD of each hold; noise free.
    Analytic,
    /// Exact stochastic integration through the ramp with Welch estimates
    /// per hold.
    Stochastic { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramOptions {
    pub axes: Vec<Axis>,
    /// Frequency window (Hz); derived from the mode frequencies when unset.
    pub freq_range_hz: Option<(f64, f64)>,
    /// Grid spacing of analytic spectrograms (Hz).
    pub bin_hz: f64,
    /// Output sample rate of stochastic traces (Hz).
    pub sample_rate: f64,
    pub segment_len: usize,
}

impl Default for SpectrogramOptions {
    fn default() -> Self {
        SpectrogramOptions {
            axes: vec![Axis::X, Axis::Y],
            freq_range_hz: None,
            bin_hz: 50.0,
            sample_rate: 250e3,
            segment_len: 1024,
        }
    }
}

impl SpectrogramOptions {
    pub fn with_axes(axes: &[Axis]) -> Self {
        SpectrogramOptions {
            axes: axes.to_vec(),
            ..Self::default()
        }
    }
}

/// Frequency interval (Hz) attributed to one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBand {
    pub axis: Axis,
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub center_hz: f64,
}

impl AxisBand {
    pub fn contains(&self, f_hz: f64) -> bool {
        f_hz >= self.lo_hz && f_hz < self.hi_hz
    }
}

/// Bare mechanical frequencies (Hz) of both particles in the first and last
/// hold of the ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeFrequencies {
    pub axis: Axis,
    pub first_hz: [f64; 2],
    pub last_hz: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetadata {
    pub window: String,
    pub segment_len: usize,
    pub overlap: f64,
    pub segments_per_hold: usize,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramMetadata {
    pub mode: SpectrogramMode,
    pub detuning_hz: f64,
    pub linewidth_hz: f64,
    pub positions_m: Vec<f64>,
    pub separation_m: f64,
    /// Exact standing-wave phases; recorded for reference only, never read
    /// by the analysis.
    pub phases_rad: Vec<f64>,
    pub schedule: RampSchedule,
    pub axes: Vec<Axis>,
    pub bands: Vec<AxisBand>,
    pub edge_bare: Vec<EdgeFrequencies>,
    pub window: Option<WindowMetadata>,
    pub bin_hz: f64,
    /// Powers are held constant within each step.
    pub stepped_hold: bool,
    pub readout_leak: f64,
}

impl SpectrogramMetadata {
    pub fn band(&self, axis: Axis) -> Option<&AxisBand> {
        self.bands.iter().find(|b| b.axis == axis)
    }

    pub fn edges(&self, axis: Axis) -> Option<&EdgeFrequencies> {
        self.edge_bare.iter().find(|e| e.axis == axis)
    }
}

/// Time-binned heterodyne PSD; `psd[t][f]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramData {
    /// Mid-hold times (s).
    pub time_bins: Vec<f64>,
    /// Angular frequencies (rad/s), strictly increasing and uniform.
    pub frequency_bins: Vec<f64>,
    pub psd: Vec<Vec<f64>>,
    pub metadata: SpectrogramMetadata,
}

#[derive(Serialize, Deserialize)]
struct SpectrogramHeader {
    metadata: SpectrogramMetadata,
    time_bins_s: Vec<f64>,
    frequency_bins_hz: Vec<f64>,
    matrix_file: String,
}

impl SpectrogramData {
    /// Frequency spacing (rad/s).
    pub fn bin_width(&self) -> f64 {
        match self.frequency_bins.as_slice() {
            [a, b, ..] => b - a,
            _ => 0.0,
        }
    }

    /// Writes `<stem>.json` (metadata) and `<stem>.csv` (matrix, one row per
    /// time bin, columns headed by frequency in Hz).
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let csv_name = format!("{stem}.csv");
        let json_path = dir.join(format!("{stem}.json"));
        let csv_path = dir.join(&csv_name);
        let header = SpectrogramHeader {
            metadata: self.metadata.clone(),
            time_bins_s: self.time_bins.clone(),
            frequency_bins_hz: self.frequency_bins.iter().map(|&w| to_hz(w)).collect(),
            matrix_file: csv_name,
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Numerical(e.to_string()))?;
        fs::write(&json_path, json + "\n")?;
        let mut out = BufWriter::new(fs::File::create(&csv_path)?);
        write!(out, "time_s")?;
        for f in &header.frequency_bins_hz {
            write!(out, ",{f}")?;
        }
        writeln!(out)?;
        for (t, row) in self.time_bins.iter().zip(&self.psd) {
            write!(out, "{t}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok((json_path, csv_path))
    }

    pub fn load(json_path: impl AsRef<Path>) -> Result<Self> {
        let json_path = json_path.as_ref();
        let header: SpectrogramHeader =
            serde_json::from_str(&fs::read_to_string(json_path)?).map_err(|e| Error::Parse(e.to_string()))?;
        let csv_path = json_path.with_file_name(&header.matrix_file);
        let reader = BufReader::new(fs::File::open(csv_path)?);
        let mut psd = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 || line.is_empty() {
                continue;
            }
            let values: std::result::Result<Vec<f64>, _> = line.split(',').skip(1).map(str::parse).collect();
            let values = values.map_err(|e| Error::Parse(format!("spectrogram row {i}: {e}")))?;
            if values.len() != header.frequency_bins_hz.len() {
                return Err(Error::Parse(format!("spectrogram row {i} has {} columns", values.len())));
            }
            psd.push(values);
        }
        if psd.len() != header.time_bins_s.len() {
            return Err(Error::Parse("spectrogram row count does not match time bins".into()));
        }
        Ok(SpectrogramData {
            time_bins: header.time_bins_s,
            frequency_bins: header.frequency_bins_hz.iter().map(|&f| hz(f)).collect(),
            psd,
            metadata: header.metadata,
        })
    }
}

/// The configuration during hold `k`: first two particles at the scheduled
/// powers, frequencies and couplings following the square-root law.
pub fn hold_config(config: &Config, schedule: &RampSchedule, k: usize) -> Config {
    let mut c = config.clone();
    c.particles[0] = config.particles[0].at_power(schedule.p1[k]);
    c.particles[1] = config.particles[1].at_power(schedule.p2[k]);
    c
}

/// Bands between the mean coupled-mode frequencies of each axis, clipped to
/// `[lo_hz, hi_hz]`.
pub fn axis_bands(config: &Config, axes: &[Axis], lo_hz: f64, hi_hz: f64) -> Result<Vec<AxisBand>> {
    let mut centers = Vec::with_capacity(axes.len());
    for &axis in axes {
        let freqs = mechanical_frequencies(&build_state_space(config, axis)?);
        let mean = freqs.iter().map(|f| f.frequency).sum::<f64>() / freqs.len() as f64;
        centers.push((axis, to_hz(mean)));
    }
    centers.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut bands = Vec::with_capacity(centers.len());
    for (i, &(axis, center)) in centers.iter().enumerate() {
        let lo = if i == 0 { lo_hz } else { 0.5 * (centers[i - 1].1 + center) };
        let hi = if i + 1 == centers.len() { hi_hz } else { 0.5 * (centers[i + 1].1 + center) };
        bands.push(AxisBand {
            axis,
            lo_hz: lo,
            hi_hz: hi,
            center_hz: center,
        });
    }
    Ok(bands)
}

fn auto_range(config: &Config, schedule: &RampSchedule, axes: &[Axis], bin_hz: f64) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for k in [0, schedule.steps / 2, schedule.steps - 1] {
        let model = build_multi_axis(&hold_config(config, schedule, k), axes)?;
        for f in mechanical_frequencies(&model) {
            lo = lo.min(to_hz(f.frequency));
            hi = hi.max(to_hz(f.frequency));
        }
    }
    Ok(((0.85 * lo / bin_hz).floor() * bin_hz, (1.15 * hi / bin_hz).ceil() * bin_hz))
}

/// Synthesises the heterodyne spectrogram of a power ramp.
pub fn run_spectrogram(
    config: &Config,
    schedule: &RampSchedule,
    mode: SpectrogramMode,
    options: &SpectrogramOptions,
) -> Result<SpectrogramData> {
    let validated = validate_config(config)?;
    schedule.validate()?;
    if options.axes.is_empty() {
        return Err(ValidationError::single("axes", "at least one axis is required").into());
    }
    let bin_hz = match mode {
        SpectrogramMode::Analytic => options.bin_hz,
        SpectrogramMode::Stochastic { .. } => options.sample_rate / options.segment_len as f64,
    };
    if !(bin_hz > 0.0) {
        return Err(ValidationError::single("bin_hz", "must be positive").into());
    }
    let (lo_hz, hi_hz) = match options.freq_range_hz {
        Some(r) => r,
        None => auto_range(config, schedule, &options.axes, bin_hz)?,
    };
    if !(hi_hz > lo_hz) || lo_hz < 0.0 {
        return Err(ValidationError::single("freq_range_hz", "must be an increasing non-negative interval").into());
    }

    let mid = hold_config(config, schedule, schedule.steps / 2);
    let bands = axis_bands(&mid, &options.axes, lo_hz, hi_hz)?;
    let first = hold_config(config, schedule, 0);
    let last = hold_config(config, schedule, schedule.steps - 1);
    let edge_bare = options
        .axes
        .iter()
        .map(|&axis| EdgeFrequencies {
            axis,
            first_hz: [to_hz(first.particles[0].freq(axis)), to_hz(first.particles[1].freq(axis))],
            last_hz: [to_hz(last.particles[0].freq(axis)), to_hz(last.particles[1].freq(axis))],
        })
        .collect();
    let leak = config.noise.readout_leak;

    let (frequency_bins, psd, window) = match mode {
        SpectrogramMode::Analytic => {
            let n = ((hi_hz - lo_hz) / bin_hz).round() as usize + 1;
            let grid: Vec<f64> = (0..n).map(|i| hz(lo_hz + i as f64 * bin_hz)).collect();
            let mut rows = Vec::with_capacity(schedule.steps);
            for k in 0..schedule.steps {
                let model = build_multi_axis(&hold_config(config, schedule, k), &options.axes)?;
                rows.push(psd_frequency_domain(&model, &heterodyne_signal(&model, leak), &grid)?.values);
            }
            (grid, rows, None)
        }
        SpectrogramMode::Stochastic { seed } => stochastic_rows(config, schedule, options, seed, lo_hz, hi_hz)?,
    };

    let positions: Vec<f64> = config.particles.iter().map(|p| p.position).collect();
    let phases = positions
        .iter()
        .map(|&y| phase_from_position(y, config.cavity.wavelength).map(|p| p.value()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(SpectrogramData {
        time_bins: schedule.times(),
        frequency_bins,
        psd,
        metadata: SpectrogramMetadata {
            mode,
            detuning_hz: to_hz(config.cavity.detuning),
            linewidth_hz: to_hz(config.cavity.linewidth),
            positions_m: positions,
            separation_m: validated.separation(),
            phases_rad: phases,
            schedule: schedule.clone(),
            axes: options.axes.clone(),
            bands,
            edge_bare,
            window,
            bin_hz,
            stepped_hold: true,
            readout_leak: leak,
        },
    })
}

type Rows = (Vec<f64>, Vec<Vec<f64>>, Option<WindowMetadata>);

fn stochastic_rows(
    config: &Config,
    schedule: &RampSchedule,
    options: &SpectrogramOptions,
    seed: u64,
    lo_hz: f64,
    hi_hz: f64,
) -> Result<Rows> {
    let fs = options.sample_rate;
    let nseg = options.segment_len;
    let n_hold = (schedule.hold() * fs).round() as usize;
    if n_hold < nseg {
        return Err(ValidationError::single(
            "schedule.duration",
            format!("each hold has {n_hold} samples, fewer than one segment of {nseg}"),
        )
        .into());
    }
    let leak = config.noise.readout_leak;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state: Option<DVector<f64>> = None;
    let mut rows = Vec::with_capacity(schedule.steps);
    let mut keep: Vec<usize> = Vec::new();
    let mut freqs_hz: Vec<f64> = Vec::new();
    let mut segments = 0;
    for k in 0..schedule.steps {
        let model = build_multi_axis(&hold_config(config, schedule, k), &options.axes)?;
        let prop = ExactPropagator::new(&model, 1.0 / fs)?;
        let mut x = match state.take() {
            Some(x) => x,
            None => stationary_sample(&model, &mut rng)?,
        };
        let mut work = StepWork::new(model.dim());
        let cav = model.cavity_index().expect("multi-axis models include the cavity");
        let n_mech = model.modes.len();
        let mut cavity_channel = Vec::with_capacity(n_hold);
        let mut direct: Vec<Vec<Complex64>> = vec![Vec::with_capacity(n_hold); n_mech];
        for _ in 0..n_hold {
            prop.step(&mut x, &mut work, &mut rng);
            cavity_channel.push(Complex64::new(0.5 * x[cav], -0.5 * x[cav + 1]));
            for (m, ch) in direct.iter_mut().enumerate() {
                ch.push(Complex64::from(leak * x[model.q_index(m)]));
            }
        }
        state = Some(x);
        let mut spec = welch_complex(&cavity_channel, fs, nseg)?;
        if leak > 0.0 {
            for ch in &direct {
                let s = welch_complex(ch, fs, nseg)?;
                for (a, b) in spec.values.iter_mut().zip(&s.values) {
                    *a += b;
                }
            }
        }
        if k == 0 {
            keep = (0..spec.frequencies_hz.len())
                .filter(|&i| spec.frequencies_hz[i] >= lo_hz && spec.frequencies_hz[i] <= hi_hz)
                .collect();
            freqs_hz = keep.iter().map(|&i| spec.frequencies_hz[i]).collect();
            segments = spec.segments;
        }
        rows.push(keep.iter().map(|&i| spec.values[i]).collect());
    }
    if freqs_hz.len() < 3 {
        return Err(ValidationError::single("freq_range_hz", "fewer than three Welch bins in range").into());
    }
    Ok((
        freqs_hz.into_iter().map(hz).collect(),
        rows,
        Some(WindowMetadata {
            window: "hann".into(),
            segment_len: nseg,
            overlap: 0.5,
            segments_per_hold: segments,
            sample_rate: fs,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::make_power_ramp;
    use crate::units::mhz;

    fn short_ramp(steps: usize, hold: f64) -> RampSchedule {
        make_power_ramp(0.13, 0.026, steps, steps as f64 * hold).unwrap()
    }

    #[test]
    fn analytic_dimensions_and_metadata() {
        let cfg = Config::paper_defaults();
        let s = run_spectrogram(&cfg, &short_ramp(6, 0.01), SpectrogramMode::Analytic, &SpectrogramOptions::default())
            .unwrap();
        assert_eq!(s.psd.len(), 6);
        assert!(s.psd.iter().all(|r| r.len() == s.frequency_bins.len()));
        assert!(s.psd.iter().flatten().all(|v| *v >= 0.0));
        assert!((to_hz(s.bin_width()) - 50.0).abs() < 1e-6);
        let bx = s.metadata.band(Axis::X).unwrap();
        let by = s.metadata.band(Axis::Y).unwrap();
        assert_eq!(bx.hi_hz, by.lo_hz);
        assert!(bx.contains(59e3) && by.contains(78e3));
        let e = s.metadata.edges(Axis::X).unwrap();
        assert!(e.first_hz[0] > e.first_hz[1] && e.last_hz[0] < e.last_hz[1]);
        assert!(s.metadata.stepped_hold);
    }

    #[test]
    fn stochastic_is_reproducible_and_saved_identically() {
        let cfg = Config::paper_defaults().with_detuning(mhz(0.45));
        let ramp = short_ramp(3, 2048.0 / 250e3);
        let opts = SpectrogramOptions::default();
        let a = run_spectrogram(&cfg, &ramp, SpectrogramMode::Stochastic { seed: 3 }, &opts).unwrap();
        let b = run_spectrogram(&cfg, &ramp, SpectrogramMode::Stochastic { seed: 3 }, &opts).unwrap();
        assert_eq!(a, b);
        let w = a.metadata.window.as_ref().unwrap();
        assert_eq!((w.segment_len, w.segments_per_hold), (1024, 3));
        let dir = tempfile::tempdir().unwrap();
        let (j1, c1) = a.save(dir.path(), "one").unwrap();
        let (_, c2) = b.save(dir.path(), "two").unwrap();
        assert_eq!(fs::read(&c1).unwrap(), fs::read(&c2).unwrap());
        let back = SpectrogramData::load(&j1).unwrap();
        assert_eq!(back.psd, a.psd);
        assert_eq!(back.metadata, a.metadata);
        for (x, y) in back.frequency_bins.iter().zip(&a.frequency_bins) {
            assert!((x - y).abs() <= 1e-12 * y);
        }
    }

    #[test]
    fn hold_too_short_is_rejected() {
        let cfg = Config::paper_defaults();
        let ramp = short_ramp(3, 1e-4);
        let err = run_spectrogram(&cfg, &ramp, SpectrogramMode::Stochastic { seed: 1 }, &SpectrogramOptions::default());
        assert!(matches!(err, Err(Error::Validation(_))));
    }
}
