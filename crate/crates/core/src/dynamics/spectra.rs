use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::model::StateSpaceModel;
use crate::error::{Error, Result, ValidationError};
use crate::units::to_hz;

/// A detected signal: one or more linear functionals `cᵀx` of the state
/// whose spectra add incoherently.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub name: String,
    pub channels: Vec<DVector<Complex64>>,
    /// Two-sided spectra distinguish ±ω (complex channels); one-sided
    /// spectra fold negative frequencies onto positive ones.
    pub two_sided: bool,
}

impl Observable {
    /// A single real state component, one-sided.
    pub fn component(model: &StateSpaceModel, index: usize) -> Self {
        let mut c = DVector::zeros(model.dim());
        c[index] = Complex64::from(1.0);
        Observable {
            name: model.labels[index].clone(),
            channels: vec![c],
            two_sided: false,
        }
    }

    /// Position of a mechanical mode in metres, one-sided.
    pub fn position(model: &StateSpaceModel, mode: usize) -> Self {
        let mut c = DVector::zeros(model.dim());
        c[model.q_index(mode)] = Complex64::from(model.modes[mode].zpf());
        Observable {
            name: format!("x{}", model.modes[mode].label()),
            channels: vec![c],
            two_sided: false,
        }
    }
}

/// Spectral density on a frequency grid. Frequencies are angular (rad/s),
/// values are per Hz so that `∫ S dν` is the variance (one-sided) or the
/// mean square modulus (two-sided, integrated over ±ν).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PSDCurve {
    pub frequencies: Vec<f64>,
    pub values: Vec<f64>,
    pub one_sided: bool,
}

impl PSDCurve {
    /// Trapezoidal integral over the grid in Hz.
    pub fn integral(&self) -> f64 {
        self.frequencies
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(f, v)| 0.5 * (v[0] + v[1]) * to_hz(f[1] - f[0]))
            .sum()
    }
}

/// `S(ω) = Σ_c cᵀ H D H† c̄` with `H = (iωI − A)⁻¹`, doubled for one-sided
/// observables.
pub fn psd_frequency_domain(model: &StateSpaceModel, observable: &Observable, grid: &[f64]) -> Result<PSDCurve> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ValidationError::single("grid", "must be non-empty and strictly increasing").into());
    }
    if !observable.two_sided && grid[0] < 0.0 {
        return Err(ValidationError::single("grid", "one-sided spectra need non-negative frequencies").into());
    }
    if observable.channels.iter().any(|c| c.len() != model.dim()) {
        return Err(ValidationError::single("observable", "dimension does not match the model").into());
    }
    let n = model.dim();
    let at = model.drift.transpose().map(Complex64::from);
    let d = model.diffusion.map(Complex64::from);
    let factor = if observable.two_sided { 1.0 } else { 2.0 };
    let values: Option<Vec<f64>> = grid
        .par_iter()
        .map(|&w| {
            // Mᵀ y = c gives yᵀ = cᵀ H
            let mt = DMatrix::<Complex64>::identity(n, n) * Complex64::new(0.0, w) - &at;
            let lu = mt.lu();
            let mut s = 0.0;
            for c in &observable.channels {
                let y = lu.solve(c)?;
                let dy = &d * y.map(|v| v.conj());
                s += y.dot(&dy).re;
            }
            Some(factor * s.max(0.0))
        })
        .collect();
    let values = values.ok_or_else(|| Error::Numerical("singular resolvent on the frequency grid".into()))?;
    Ok(PSDCurve {
        frequencies: grid.to_vec(),
        values,
        one_sided: !observable.two_sided,
    })
}

/// Heterodyne detection of the cavity output with the tweezer frequency at
/// zero. The cavity channel is `a† = (X − iY)/2`, so anti-Stokes sidebands
/// appear at `+Ω`. Each mechanical mode also imprints directly on the signal
/// with amplitude `readout_leak` per unit quadrature; these channels are
/// incoherent with the cavity channel.
pub fn heterodyne_signal(model: &StateSpaceModel, readout_leak: f64) -> Observable {
    let n = model.dim();
    let mut channels = Vec::new();
    if let Some(x) = model.cavity_index() {
        let mut c = DVector::zeros(n);
        c[x] = Complex64::new(0.5, 0.0);
        c[x + 1] = Complex64::new(0.0, -0.5);
        channels.push(c);
    }
    if readout_leak > 0.0 {
        for k in 0..model.modes.len() {
            let mut c = DVector::zeros(n);
            c[model.q_index(k)] = Complex64::from(readout_leak);
            channels.push(c);
        }
    }
    Observable {
        name: "heterodyne".into(),
        channels,
        two_sided: true,
    }
}

pub fn write_psd_csv<W: Write>(curve: &PSDCurve, mut out: W) -> std::io::Result<()> {
    writeln!(out, "frequency_hz,psd_value")?;
    for (f, v) in curve.frequencies.iter().zip(&curve.values) {
        writeln!(out, "{},{}", to_hz(*f), v)?;
    }
    Ok(())
}

/// Welch estimate. Frequencies in Hz, ascending; values per Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies_hz: Vec<f64>,
    pub values: Vec<f64>,
    pub segment_len: usize,
    pub segments: usize,
}

fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 - 0.5 * (std::f64::consts::TAU * k as f64 / n as f64).cos())
        .collect()
}

/// Averaged periodograms `|Σ w x e^{−2πikn/N}|² / (fs Σ w²)` over Hann
/// windowed segments with 50% overlap. Returns raw bins in FFT order.
fn welch_raw(x: &[Complex64], fs: f64, segment_len: usize) -> Result<(Vec<f64>, usize)> {
    if segment_len < 4 || x.len() < segment_len {
        return Err(ValidationError::single("segment_len", "must be at least 4 and at most the signal length").into());
    }
    if !(fs > 0.0) {
        return Err(ValidationError::single("sample_rate", "must be positive").into());
    }
    let w = hann(segment_len);
    let norm = fs * w.iter().map(|v| v * v).sum::<f64>();
    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let hop = segment_len / 2;
    let mut acc = vec![0.0; segment_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); segment_len];
    let mut count = 0;
    let mut start = 0;
    while start + segment_len <= x.len() {
        for (b, (xv, wv)) in buf.iter_mut().zip(x[start..start + segment_len].iter().zip(&w)) {
            *b = xv * wv;
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += hop;
    }
    let scale = 1.0 / (norm * count as f64);
    Ok((acc.into_iter().map(|v| v * scale).collect(), count))
}

/// One-sided Welch spectrum of a real signal, bins 0..=N/2.
pub fn welch_real(x: &[f64], fs: f64, segment_len: usize) -> Result<Spectrum> {
    let cx: Vec<Complex64> = x.iter().map(|&v| Complex64::from(v)).collect();
    let (raw, segments) = welch_raw(&cx, fs, segment_len)?;
    let half = segment_len / 2;
    let values = (0..=half)
        .map(|k| if k == 0 || k == half { raw[k] } else { 2.0 * raw[k] })
        .collect();
    Ok(Spectrum {
        frequencies_hz: (0..=half).map(|k| k as f64 * fs / segment_len as f64).collect(),
        values,
        segment_len,
        segments,
    })
}

/// Two-sided Welch spectrum of a complex signal, ascending from −fs/2.
pub fn welch_complex(x: &[Complex64], fs: f64, segment_len: usize) -> Result<Spectrum> {
    let (raw, segments) = welch_raw(x, fs, segment_len)?;
    let n = segment_len as i64;
    let order: Vec<i64> = (-(n / 2)..(n - n / 2)).collect();
    Ok(Spectrum {
        frequencies_hz: order.iter().map(|&k| k as f64 * fs / segment_len as f64).collect(),
        values: order.iter().map(|&k| raw[k.rem_euclid(n) as usize]).collect(),
        segment_len,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_state_space, single_oscillator, stationary_covariance};
    use crate::params::{Axis, Config, Polarization};
    use crate::units::{hz, khz, mhz};

    fn grid(lo_khz: f64, hi_khz: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| khz(lo_khz + (hi_khz - lo_khz) * i as f64 / (n - 1) as f64)).collect()
    }

    fn local_maxima(curve: &PSDCurve) -> Vec<f64> {
        let v = &curve.values;
        (1..v.len() - 1)
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
            .map(|i| curve.frequencies[i])
            .collect()
    }

    #[test]
    fn single_mode_is_lorentzian() {
        let w = khz(80.0);
        let gamma = khz(0.6);
        let m = single_oscillator(w, gamma, 3.27e-18, 300.0).unwrap();
        let g = grid(70.0, 90.0, 2001);
        let psd = psd_frequency_domain(&m, &Observable::component(&m, 0), &g).unwrap();
        let peak = psd.values.iter().cloned().fold(0.0, f64::max);
        let idx = psd.values.iter().position(|&v| v == peak).unwrap();
        assert!((psd.frequencies[idx] - w).abs() <= khz(0.01) + 1e-9);
        // full width at half maximum
        let above: Vec<f64> = psd
            .frequencies
            .iter()
            .zip(&psd.values)
            .filter(|(_, v)| **v >= 0.5 * peak)
            .map(|(f, _)| *f)
            .collect();
        let fwhm = above.last().unwrap() - above.first().unwrap();
        assert!((fwhm - gamma).abs() < khz(0.02), "{}", to_hz(fwhm));
    }

    #[test]
    fn area_matches_variance() {
        let w = khz(80.0);
        let m = single_oscillator(w, khz(2.0), 3.27e-18, 300.0).unwrap();
        let p = stationary_covariance(&m).unwrap();
        let psd = psd_frequency_domain(&m, &Observable::component(&m, 0), &grid(0.0, 2000.0, 400_001)).unwrap();
        assert!((psd.integral() / p[(0, 0)] - 1.0).abs() < 2e-3);
        let hot = single_oscillator(w, khz(2.0), 3.27e-18, 600.0).unwrap();
        let psd_hot = psd_frequency_domain(&hot, &Observable::component(&hot, 0), &grid(70.0, 90.0, 101)).unwrap();
        let small = psd_frequency_domain(&m, &Observable::component(&m, 0), &grid(70.0, 90.0, 101)).unwrap();
        for (a, b) in psd_hot.values.iter().zip(&small.values) {
            assert!((a / b - 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn coupled_degenerate_modes_split() {
        let cfg = Config::paper_defaults().with_detuning(mhz(0.45));
        let m = build_state_space(&cfg, Axis::Y).unwrap();
        let obs = heterodyne_signal(&m, cfg.noise.readout_leak);
        let psd = psd_frequency_domain(&m, &obs, &grid(60.0, 95.0, 7001)).unwrap();
        let peaks = local_maxima(&psd);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        let mech = crate::dynamics::mechanical_frequencies(&m);
        for (p, f) in peaks.iter().zip(&mech) {
            assert!((p - f.frequency).abs() < khz(0.02));
        }
    }

    #[test]
    fn decoupled_particle_has_no_cross_correlation() {
        let mut cfg = Config::paper_defaults();
        cfg.particles[1].position = 0.0; // antinode: g_{2,y} = 0
        let m = build_state_space(&cfg, Axis::Y).unwrap();
        assert_eq!(m.modes[1].coupling.abs() < 1e-9 * m.modes[0].coupling.abs(), true);
        let p = stationary_covariance(&m).unwrap();
        let cross = p[(0, 2)].abs().max(p[(0, 3)].abs()).max(p[(1, 2)].abs());
        assert!(cross <= 1e-10 * p[(0, 0)].min(p[(2, 2)]), "{cross}");
    }

    #[test]
    fn heterodyne_shows_six_anti_stokes_peaks() {
        let mut cfg = Config::paper_defaults();
        // spread the frequencies so no pair is degenerate
        cfg.particles[1].mech_freq = [khz(64.0), khz(86.0), khz(26.0)];
        cfg.particles[0].position += cfg.cavity.wavelength / 10.0;
        let m = crate::dynamics::build_multi_axis(&cfg, &Axis::ALL).unwrap();
        let obs = heterodyne_signal(&m, cfg.noise.readout_leak);
        let psd = psd_frequency_domain(&m, &obs, &grid(10.0, 100.0, 9001)).unwrap();
        let floor = psd.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let peaks: Vec<f64> = local_maxima(&psd)
            .into_iter()
            .filter(|f| {
                let i = psd.frequencies.iter().position(|g| g == f).unwrap();
                psd.values[i] > 10.0 * floor
            })
            .collect();
        assert_eq!(peaks.len(), 6, "{:?}", peaks.iter().map(|f| to_hz(*f)).collect::<Vec<_>>());
    }

    #[test]
    fn anti_stokes_dominates_for_blue_detuning() {
        let mut cfg = Config::paper_defaults();
        cfg.particles[1].position = 0.0;
        let m = build_state_space(&cfg, Axis::Y).unwrap();
        let obs = heterodyne_signal(&m, 0.0);
        // the coupled mode is the one pulled away from the bare frequency
        let w = crate::dynamics::mechanical_frequencies(&m)[0].frequency;
        let both = psd_frequency_domain(&m, &obs, &[-w, w]).unwrap();
        // thermal sidebands are weighted by the cavity Lorentzian at Δ ∓ Ω
        let (d, k) = (cfg.cavity.detuning, cfg.cavity.linewidth);
        let expected = ((d + w).powi(2) + k * k / 4.0) / ((d - w).powi(2) + k * k / 4.0);
        let ratio = both.values[1] / both.values[0];
        assert!(ratio > 1.0);
        assert!((ratio / expected - 1.0).abs() < 0.03, "{ratio} {expected}");
    }

    #[test]
    fn cavity_axis_polarization_removes_peaks() {
        let mut cfg = Config::paper_defaults();
        cfg.cavity.polarization = Polarization::CavityAxis;
        let m = crate::dynamics::build_multi_axis(&cfg, &Axis::ALL).unwrap();
        let obs = heterodyne_signal(&m, 0.0);
        let psd = psd_frequency_domain(&m, &obs, &grid(10.0, 100.0, 901)).unwrap();
        // only the smooth cavity vacuum background remains
        assert!(local_maxima(&psd).is_empty());
        assert!(psd.values.windows(2).all(|v| v[1] >= v[0]));
    }

    #[test]
    fn peak_height_scales_with_g_squared() {
        // weak couplings so that optical damping stays negligible against γ
        let mut cfg = Config::paper_defaults();
        cfg.particles[1].position = 0.0;
        let height = |scale: f64| {
            let mut c = cfg.clone();
            c.cavity.coupling_scale[1] *= scale;
            let m = build_state_space(&c, Axis::Y).unwrap();
            let obs = heterodyne_signal(&m, 0.0);
            let w = crate::dynamics::mechanical_frequencies(&m)
                .into_iter()
                .min_by(|a, b| (a.frequency - m.modes[0].omega).abs().total_cmp(&(b.frequency - m.modes[0].omega).abs()))
                .unwrap();
            let floor = psd_frequency_domain(&m, &obs, &[w.frequency + khz(50.0)]).unwrap().values[0];
            psd_frequency_domain(&m, &obs, &[w.frequency]).unwrap().values[0] - floor
        };
        let ratio = height(0.1) / height(0.05);
        assert!((ratio - 4.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn welch_of_white_noise_is_flat() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let fs = 1000.0;
        let x: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = welch_real(&x, fs, 256).unwrap();
        // variance 1 spread over fs/2
        let mean: f64 = s.values[1..128].iter().sum::<f64>() / 127.0;
        assert!((mean - 2.0 / fs).abs() < 0.02 * 2.0 / fs);
        let cx: Vec<Complex64> = x.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
        let sc = welch_complex(&cx, fs, 256).unwrap();
        assert_eq!(sc.frequencies_hz[0], -fs / 2.0);
        let mean_c: f64 = sc.values.iter().sum::<f64>() / 256.0;
        assert!((mean_c - 2.0 / fs).abs() < 0.03 * 2.0 / fs);
    }

    #[test]
    fn welch_locates_a_complex_tone() {
        let fs = 1000.0;
        let f0 = 125.0;
        let x: Vec<Complex64> = (0..4096)
            .map(|n| Complex64::from_polar(1.0, hz(f0) * n as f64 / fs))
            .collect();
        let s = welch_complex(&x, fs, 256).unwrap();
        let imax = (0..256).max_by(|&a, &b| s.values[a].total_cmp(&s.values[b])).unwrap();
        assert_eq!(s.frequencies_hz[imax], f0);
    }

    #[test]
    fn psd_csv_header() {
        let m = single_oscillator(khz(80.0), khz(1.0), 1e-18, 300.0).unwrap();
        let psd = psd_frequency_domain(&m, &Observable::component(&m, 0), &grid(70.0, 90.0, 3)).unwrap();
        let mut out = Vec::new();
        write_psd_csv(&psd, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("frequency_hz,psd_value\n70000,"));
        assert_eq!(text.lines().count(), 4);
    }
}
