use levicav_core::analysis::{
    analyze_spectrogram, calibrate_from_branches, calibrate_powers_from_x, detect_peaks, fit_avoided_crossing,
    track_modes, AnalysisOptions, BranchSeries, FitModel, FitOptions, TrackOptions, TrackPoint,
};
use levicav_core::coupling::{pair_coupling, particle_coupling};
use levicav_core::dynamics::linearized_mechanical_frequencies;
use levicav_core::experiment::{
    hold_config, make_power_ramp, run_spectrogram, EdgeFrequencies, RampSchedule, SpectrogramData,
    SpectrogramMode, SpectrogramOptions,
};
use levicav_core::units::{khz, mhz, to_hz, to_khz};
use levicav_core::{Axis, Config, Polarization};

fn ramp(steps: usize) -> RampSchedule {
    make_power_ramp(0.13, 0.026, steps, 1.0).unwrap()
}

fn analytic(cfg: &Config, schedule: &RampSchedule, axes: &[Axis]) -> SpectrogramData {
    run_spectrogram(cfg, schedule, SpectrogramMode::Analytic, &SpectrogramOptions::with_axes(axes)).unwrap()
}

/// |g1 g2| of the y modes at the crossing powers.
fn injected_product(cfg: &Config, schedule: &RampSchedule, axis: Axis) -> f64 {
    let c = hold_config(cfg, schedule, schedule.steps / 2);
    particle_coupling(&c.particles[0], axis, &c.cavity).magnitude()
        * particle_coupling(&c.particles[1], axis, &c.cavity).magnitude()
}

fn exact_point(k: usize, center: f64, width: f64) -> Option<TrackPoint> {
    Some(TrackPoint {
        bin: k,
        time: k as f64,
        center,
        width,
        height: 1.0,
    })
}

/// Branch series whose centres are the exact eigenfrequencies of the
/// linearised model at every hold.
fn exact_series(cfg: &Config, schedule: &RampSchedule, axis: Axis) -> BranchSeries {
    let n = schedule.steps;
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for k in 0..n {
        let c = hold_config(cfg, schedule, k);
        let (p1, p2) = (&c.particles[0], &c.particles[1]);
        let g = [
            particle_coupling(p1, axis, &c.cavity).g.re,
            particle_coupling(p2, axis, &c.cavity).g.re,
        ];
        let f = linearized_mechanical_frequencies(
            [p1.freq(axis), p2.freq(axis)],
            [p1.gas_damping, p2.gas_damping],
            g,
            c.cavity.detuning,
            c.cavity.linewidth,
        )
        .unwrap();
        lower.push(exact_point(k, f[0], p1.gas_damping));
        upper.push(exact_point(k, f[1], p1.gas_damping));
    }
    BranchSeries {
        axis,
        time: (0..n).map(|k| k as f64).collect(),
        lower,
        upper,
        merged: vec![false; n],
        bin_width: p_bin(),
    }
}

fn p_bin() -> f64 {
    levicav_core::units::hz(50.0)
}

fn edges(cfg: &Config, schedule: &RampSchedule, axis: Axis) -> EdgeFrequencies {
    let first = hold_config(cfg, schedule, 0);
    let last = hold_config(cfg, schedule, schedule.steps - 1);
    EdgeFrequencies {
        axis,
        first_hz: [to_hz(first.particles[0].freq(axis)), to_hz(first.particles[1].freq(axis))],
        last_hz: [to_hz(last.particles[0].freq(axis)), to_hz(last.particles[1].freq(axis))],
    }
}

#[test]
fn exact_tracks_give_injected_product() {
    for delta in [0.45, 1.2, 2.5] {
        let cfg = Config::paper_defaults().with_detuning(mhz(delta));
        let schedule = ramp(120);
        let cal = calibrate_from_branches(&exact_series(&cfg, &schedule, Axis::X)).unwrap();
        let series = exact_series(&cfg, &schedule, Axis::Y);
        let fit = fit_avoided_crossing(&series, &cal, &cfg, &edges(&cfg, &schedule, Axis::Y), &FitOptions::default())
            .unwrap();
        let truth = injected_product(&cfg, &schedule, Axis::Y);
        assert!(
            (fit.coupling_product / truth - 1.0).abs() < 1e-6,
            "Δ = {delta} MHz: {} vs {truth}",
            fit.coupling_product
        );
        assert!(fit.resolved);
    }
}

#[test]
fn calibration_recovers_schedule() {
    let cfg = Config::paper_defaults();
    let schedule = ramp(100);
    let spec = analytic(&cfg, &schedule, &[Axis::X]);
    let tracks = track_modes(&spec, &TrackOptions::default());
    let cal = calibrate_powers_from_x(&tracks, &spec.time_bins, spec.bin_width()).unwrap();
    for k in 0..schedule.steps {
        assert!((cal.rel_p1[k] / (schedule.p1[k] / 0.13) - 1.0).abs() < 0.01);
        assert!((cal.rel_p2[k] / (schedule.p2[k] / 0.13) - 1.0).abs() < 0.01);
    }
    let mid = schedule.times()[schedule.steps / 2];
    assert!((cal.crossing_time - mid).abs() < schedule.hold());
}

#[test]
fn pipeline_reproduces_calibrated_splitting() {
    let cfg = Config::paper_defaults().with_detuning(mhz(0.45));
    let schedule = ramp(100);
    let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
    let a = analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap();
    let fit = &a.fits[0];
    assert!((to_khz(fit.splitting) - 6.6).abs() < 0.2, "{}", to_khz(fit.splitting));
    assert!(fit.resolved && !fit.near_floor);
    let report: serde_json::Value = serde_json::from_str(&fit.to_json()).unwrap();
    for key in ["axis", "coupling_product_hz2", "splitting_hz", "sigma_hz", "resolved", "residual", "n_bins_used"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn coupled_mode_model_agrees_far_from_cavity() {
    let cfg = Config::paper_defaults().with_detuning(mhz(2.5));
    let schedule = ramp(100);
    let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
    let options = AnalysisOptions {
        fit: FitOptions {
            model: FitModel::CoupledMode,
            ..FitOptions::default()
        },
        ..AnalysisOptions::default()
    };
    let fit = &analyze_spectrogram(&spec, &cfg, &[Axis::Y], &options).unwrap().fits[0];
    let truth = injected_product(&cfg, &schedule, Axis::Y);
    assert!((fit.coupling_product / truth - 1.0).abs() < 0.02);
}

#[test]
fn zero_coupling_is_unresolved() {
    let mut cfg = Config::paper_defaults();
    cfg.cavity.coupling_scale = [0.0; 3];
    let schedule = ramp(100);
    let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
    let fit = &analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap().fits[0];
    assert!(!fit.resolved);
    assert!(fit.splitting <= fit.floor.max(3.0 * fit.sigma), "{fit:?}");
    assert!(fit.splitting >= 0.0 && fit.sigma >= 0.0);
}

#[test]
fn cavity_axis_polarization_only_crosses() {
    let mut cfg = Config::paper_defaults().with_detuning(mhz(0.45));
    cfg.cavity.polarization = Polarization::CavityAxis;
    let schedule = ramp(100);
    let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
    let tracks = track_modes(&spec, &TrackOptions::default());
    // without coupling both pairs merge into a single peak at the crossing
    for axis in [Axis::X, Axis::Y] {
        let series = BranchSeries::from_spectrogram(&spec, &tracks, axis);
        assert!(series.merged.iter().any(|m| *m), "{axis}");
    }
    let fit = &analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap().fits[0];
    assert!(!fit.resolved);
}

#[test]
fn coupled_branches_never_touch() {
    let cfg = Config::paper_defaults().with_detuning(mhz(0.45));
    let schedule = ramp(100);
    let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
    let tracks = track_modes(&spec, &TrackOptions::default());
    let series = BranchSeries::from_spectrogram(&spec, &tracks, Axis::Y);
    assert_eq!(series.paired_bins(), schedule.steps);
    let max_lower = series.lower.iter().flatten().map(|p| p.center).fold(0.0, f64::max);
    let min_upper = series.upper.iter().flatten().map(|p| p.center).fold(f64::INFINITY, f64::min);
    assert!(min_upper - max_lower > khz(6.0));
}

#[test]
fn track_invariants() {
    let cfg = Config::paper_defaults();
    let spec = analytic(&cfg, &ramp(60), &[Axis::X, Axis::Y]);
    let (lo, hi) = (spec.frequency_bins[0], *spec.frequency_bins.last().unwrap());
    for t in track_modes(&spec, &TrackOptions::default()) {
        assert!(t.axis.is_some());
        for p in &t.points {
            assert!(p.center >= lo && p.center <= hi);
            assert!(p.width > 0.0);
        }
        for w in t.points.windows(2) {
            assert_eq!(w[1].bin, w[0].bin + 1);
            assert!((w[1].center - w[0].center).abs() <= 3.0 * spec.bin_width());
        }
    }
}

#[test]
fn permuted_bins_restore_identical_tracks() {
    let cfg = Config::paper_defaults();
    let spec = analytic(&cfg, &ramp(40), &[Axis::X, Axis::Y]);
    let n = spec.time_bins.len();
    let order: Vec<usize> = (0..n).map(|k| (k * 17 + 5) % n).collect();
    let mut shuffled = spec.clone();
    shuffled.time_bins = order.iter().map(|&k| spec.time_bins[k]).collect();
    shuffled.psd = order.iter().map(|&k| spec.psd[k].clone()).collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| shuffled.time_bins[a].total_cmp(&shuffled.time_bins[b]));
    let mut restored = shuffled.clone();
    restored.time_bins = idx.iter().map(|&k| shuffled.time_bins[k]).collect();
    restored.psd = idx.iter().map(|&k| shuffled.psd[k].clone()).collect();
    let options = TrackOptions::default();
    assert_eq!(track_modes(&restored, &options), track_modes(&spec, &options));
}

#[test]
fn splitting_increases_with_coupling() {
    let schedule = ramp(80);
    let mut last = -1.0;
    for step in 1..=10 {
        let mut cfg = Config::paper_defaults().with_detuning(mhz(1.2));
        cfg.cavity.coupling_scale[1] *= (0.15 * step as f64).sqrt();
        let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
        let fit = &analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap().fits[0];
        assert!(fit.splitting > last, "step {step}: {} after {last}", fit.splitting);
        last = fit.splitting;
    }
}

#[test]
fn missing_x_tracks_fail_calibration() {
    let cfg = Config::paper_defaults();
    let spec = analytic(&cfg, &ramp(30), &[Axis::Y]);
    let err = analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap_err();
    assert!(matches!(err, levicav_core::Error::Calibration(_)), "{err}");
}

#[test]
fn too_few_bins_is_a_fit_error() {
    let cfg = Config::paper_defaults();
    let schedule = ramp(8);
    let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
    let err = analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap_err();
    assert!(matches!(err, levicav_core::Error::Fit(_)), "{err}");
}

#[test]
fn closed_form_prediction_matches_fit_for_two_particles() {
    // an oracle independent of the pipeline: 2|G| straight from the couplings
    let cfg = Config::paper_defaults().with_detuning(mhz(1.2));
    let schedule = ramp(100);
    let c = hold_config(&cfg, &schedule, 50);
    let predicted = 2.0 * pair_coupling(&c.particles[0], &c.particles[1], Axis::Y, &c.cavity).magnitude();
    let spec = analytic(&cfg, &schedule, &[Axis::X, Axis::Y]);
    let fit = &analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap().fits[0];
    assert!((fit.splitting / predicted - 1.0).abs() < 0.01);
}

#[test]
fn detect_peaks_reports_lorentzian_width() {
    let f: Vec<f64> = (0..4000).map(|i| i as f64 * 25.0).collect();
    let (f0, w) = (50_012.0, 600.0);
    let row: Vec<f64> = f.iter().map(|&x| 1.0 / (1.0 + ((x - f0) / (w / 2.0)).powi(2))).collect();
    let peaks = detect_peaks(&row, &f, 0.5);
    assert_eq!(peaks.len(), 1);
    assert!((peaks[0].center - f0).abs() < 25.0);
    assert!((peaks[0].width / w - 1.0).abs() < 0.1);
}

#[test]
fn unequal_couplings_need_their_ratio() {
    let mut cfg = Config::paper_defaults().with_detuning(mhz(0.45));
    let k = cfg.cavity.wavenumber();
    cfg.particles[1] = cfg.particles[1].at_position(cfg.particles[0].position + 3.5 * cfg.cavity.wavelength - 0.9 / k);
    let schedule = ramp(120);
    let cal = calibrate_from_branches(&exact_series(&cfg, &schedule, Axis::X)).unwrap();
    let series = exact_series(&cfg, &schedule, Axis::Y);
    let c = hold_config(&cfg, &schedule, schedule.steps / 2);
    let weights = [0, 1].map(|i| particle_coupling(&c.particles[i], Axis::Y, &c.cavity).magnitude());
    let options = FitOptions {
        coupling_weights: Some(weights),
        ..FitOptions::default()
    };
    let e = edges(&cfg, &schedule, Axis::Y);
    let fit = fit_avoided_crossing(&series, &cal, &cfg, &e, &options).unwrap();
    let truth = injected_product(&cfg, &schedule, Axis::Y);
    assert!((fit.coupling_product / truth - 1.0).abs() < 1e-6, "{} vs {truth}", fit.coupling_product);
    let symmetric = fit_avoided_crossing(&series, &cal, &cfg, &e, &FitOptions::default()).unwrap();
    assert!(symmetric.residual > 100.0 * fit.residual);

    let bad = FitOptions {
        coupling_weights: Some([-1.0, 1.0]),
        ..FitOptions::default()
    };
    assert!(fit_avoided_crossing(&series, &cal, &cfg, &e, &bad).is_err());
}

#[test]
fn reported_sigma_matches_replica_scatter() {
    let cfg = Config::paper_defaults().with_detuning(mhz(0.45));
    let schedule = levicav_core::experiment::default_ramp(0.13).unwrap();
    let truth = injected_product(&cfg, &schedule, Axis::Y);
    let options = SpectrogramOptions::with_axes(&[Axis::X, Axis::Y]);
    let (mut products, mut sigmas) = (Vec::new(), Vec::new());
    for seed in 0..100 {
        let mode = SpectrogramMode::Stochastic { seed: 1000 + seed };
        let spec = run_spectrogram(&cfg, &schedule, mode, &options).unwrap();
        let fit = &analyze_spectrogram(&spec, &cfg, &[Axis::Y], &AnalysisOptions::default()).unwrap().fits[0];
        products.push(fit.coupling_product / truth);
        sigmas.push(fit.sigma_product / truth);
    }
    let n = products.len() as f64;
    let mean = products.iter().sum::<f64>() / n;
    let sd = (products.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sigma = sigmas.iter().sum::<f64>() / n;
    assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    assert!(sd / sigma < 2.0 && sigma / sd < 2.0, "scatter {sd} vs reported {sigma}");
}
