use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use levicav_core::analysis::{
    calibrate_powers_from_x, fit_avoided_crossing, resolvability, track_modes, BranchSeries, FitModel, FitOptions,
    FitReport, TrackOptions,
};
use levicav_core::config::{load_config, to_toml};
use levicav_core::coupling::{
    coulomb_coupling_estimate, detuning_sweep, distance_sweep, optical_binding_estimate, pair_coupling, phase_sweep,
    write_sweep_csv, SweepKind,
};
use levicav_core::experiment::{
    make_power_ramp, run_detuning_campaign, run_distance_campaign, run_phase_campaign, run_spectrogram,
    write_campaign_csv, CampaignOptions, RampSchedule, SpectrogramMode, SpectrogramOptions, DEFAULT_HOLD,
    PHASE_SEPARATION_WAVELENGTHS,
};
use levicav_core::params::validate_config;
use levicav_core::units::{mhz, to_hz};
use levicav_core::{Axis, Config};

use crate::manifest::{now_utc, RunManifest};
use crate::{Cli, CliError, Command, Mode, Model, RampArgs, SpectrogramArgs, SweepArgs};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let started = now_utc();
    let config = match &cli.config {
        Some(path) => load_config(path).map_err(|e| match CliError::from(e) {
            CliError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
            other => other,
        })?,
        None => Config::paper_defaults(),
    };
    validate_config(&config)?;
    let mut manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        arguments: std::env::args().skip(1).collect(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        config: to_toml(&config),
        seed: cli.seed,
        mode: match cli.mode {
            Mode::Analytic => "analytic".into(),
            Mode::Stochastic => "stochastic".into(),
        },
        output_dir: cli.out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        started_utc: started,
        finished_utc: None,
        outputs: Vec::new(),
    };
    // argument checks that need no computation
    match &cli.command {
        Command::Couple(sweep) => {
            sweep_values(sweep, &config)?;
        }
        Command::Spectrogram(args) => {
            ramp(&config, &args.ramp)?;
            fit_axes(&args.axes)?;
        }
        Command::Estimate => {}
        Command::Campaign { sweep, ramp: r } => {
            sweep_values(sweep, &config)?;
            ramp(&config, r)?;
        }
    }
    if cli.dry_run {
        print!("{}", manifest.to_json());
        return Ok(());
    }

    fs::create_dir_all(&cli.out)?;
    let mut out = Outputs {
        dir: &cli.out,
        written: Vec::new(),
    };
    match &cli.command {
        Command::Couple(sweep) => couple(&config, sweep, &mut out)?,
        Command::Spectrogram(args) => spectrogram(&config, args, mode(cli), &mut out)?,
        Command::Estimate => estimate(&config, &mut out)?,
        Command::Campaign { sweep, ramp: r } => campaign(&config, sweep, r, mode(cli), &mut out)?,
    }
    manifest.outputs = out.written;
    manifest.finished_utc = Some(now_utc());
    manifest.write(&cli.out)?;
    Ok(())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Couple(_) => "couple",
        Command::Spectrogram(_) => "spectrogram",
        Command::Estimate => "estimate",
        Command::Campaign { .. } => "campaign",
    }
}

fn mode(cli: &Cli) -> SpectrogramMode {
    match cli.mode {
        Mode::Analytic => SpectrogramMode::Analytic,
        Mode::Stochastic => SpectrogramMode::Stochastic { seed: cli.seed },
    }
}

struct Outputs<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(self.dir.join(name))?);
        fill(&mut w)?;
        w.flush()?;
        self.record(name);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
        self.write(name, |w| writeln!(w, "{text}"))
    }

    fn record(&mut self, name: &str) {
        println!("wrote {}", self.dir.join(name).display());
        self.written.push(name.to_string());
    }
}

/// Sweep kind and grid values in internal units (rad/s, m, rad).
fn sweep_values(sweep: &SweepArgs, config: &Config) -> Result<(SweepKind, Vec<f64>)> {
    match (sweep.detuning, sweep.distance, sweep.phase) {
        (Some(g), None, None) => Ok((SweepKind::Detuning, g.values().into_iter().map(mhz).collect())),
        (None, Some(g), None) => {
            let lambda = config.cavity.wavelength;
            let d: Vec<f64> = g.values().into_iter().map(|v| v * lambda).collect();
            if d.iter().any(|&d| d == 0.0) {
                return Err(CliError::Validation("distance grid contains d = 0".into()));
            }
            Ok((SweepKind::Distance, d))
        }
        (None, None, Some(g)) => Ok((SweepKind::Phase, g.values())),
        _ => Err(CliError::Validation("exactly one of --detuning, --distance, --phase is required".into())),
    }
}

fn ramp(config: &Config, args: &RampArgs) -> Result<RampSchedule> {
    let center = args.center.unwrap_or(config.particles[0].power);
    let duration = args.duration.unwrap_or(args.steps as f64 * DEFAULT_HOLD);
    Ok(make_power_ramp(center, args.span * center, args.steps, duration)?)
}

/// Every simulated axis except x, which serves the power calibration.
fn fit_axes(axes: &[Axis]) -> Result<Vec<Axis>> {
    if !axes.contains(&Axis::X) {
        return Err(CliError::Validation("--axes must include x for the power calibration".into()));
    }
    let fitted: Vec<Axis> = axes.iter().copied().filter(|a| *a != Axis::X).collect();
    if fitted.is_empty() {
        return Err(CliError::Validation("--axes must include y or z to fit".into()));
    }
    Ok(fitted)
}

fn couple(config: &Config, sweep: &SweepArgs, out: &mut Outputs) -> Result<()> {
    let (kind, values) = sweep_values(sweep, config)?;
    let rows = match kind {
        SweepKind::Detuning => detuning_sweep(config, &values),
        SweepKind::Distance => distance_sweep(config, &values),
        SweepKind::Phase => phase_sweep(config, &values, PHASE_SEPARATION_WAVELENGTHS),
    };
    out.write("sweep.csv", |w| write_sweep_csv(&rows, w))
}

fn spectrogram(config: &Config, args: &SpectrogramArgs, mode: SpectrogramMode, out: &mut Outputs) -> Result<()> {
    let schedule = ramp(config, &args.ramp)?;
    let axes = fit_axes(&args.axes)?;
    let spec = run_spectrogram(config, &schedule, mode, &SpectrogramOptions::with_axes(&args.axes))?;
    spec.save(out.dir, "spectrogram")?;
    out.record("spectrogram.json");
    out.record("spectrogram.csv");

    let tracks = track_modes(&spec, &TrackOptions::default());
    out.write("tracks.csv", |w| {
        writeln!(w, "track,axis,time_s,center_hz,width_hz,height")?;
        for (i, t) in tracks.iter().enumerate() {
            let axis = t.axis.map_or(String::new(), |a| a.to_string());
            for p in &t.points {
                writeln!(w, "{i},{axis},{},{},{},{}", p.time, to_hz(p.center), to_hz(p.width), p.height)?;
            }
        }
        Ok(())
    })?;

    let cal = calibrate_powers_from_x(&tracks, &spec.time_bins, spec.bin_width())?;
    out.write("calibration.csv", |w| {
        writeln!(w, "time_s,rel_p1,rel_p2")?;
        for k in 0..cal.time.len() {
            writeln!(w, "{},{},{}", cal.time[k], cal.rel_p1[k], cal.rel_p2[k])?;
        }
        Ok(())
    })?;

    let options = FitOptions {
        model: match args.model {
            Model::Linearized => FitModel::Linearized,
            Model::CoupledMode => FitModel::CoupledMode,
        },
        ..FitOptions::default()
    };
    let mut reports: Vec<FitReport> = Vec::new();
    for axis in axes {
        let branches = BranchSeries::from_spectrogram(&spec, &tracks, axis);
        let edges = spec
            .metadata
            .edges(axis)
            .ok_or_else(|| CliError::Numerical(format!("no edge frequencies for {axis}")))?;
        let fit = fit_avoided_crossing(&branches, &cal, config, edges, &options)?;
        println!(
            "{axis}: splitting {:.1} ± {:.1} Hz (3 s.d. {:.1} Hz), {}",
            to_hz(fit.splitting),
            to_hz(fit.sigma),
            3.0 * to_hz(fit.sigma),
            if fit.resolved { "resolved" } else { "unresolved" }
        );
        reports.push(fit.report());
    }
    out.write_json("fits.json", &reports)
}

#[derive(Debug, Serialize)]
struct Estimate {
    separation_m: f64,
    peak_width_hz: f64,
    floor_hz: f64,
    couplings: Vec<EstimateLine>,
}

#[derive(Debug, Serialize)]
struct EstimateLine {
    name: &'static str,
    coupling_hz: f64,
    verdict: &'static str,
}

fn estimate(config: &Config, out: &mut Outputs) -> Result<()> {
    let (p1, p2) = (&config.particles[0], &config.particles[1]);
    let d = (p2.position - p1.position).abs();
    let omega = 0.5 * (p1.freq(Axis::Y) + p2.freq(Axis::Y));
    let width = 0.5 * (p1.gas_damping + p2.gas_damping);
    let couplings = [
        ("coulomb", coulomb_coupling_estimate(p1, p2, d, omega)?),
        ("optical_binding", optical_binding_estimate(p1, p2, d, omega, &config.cavity)?),
        ("cavity", pair_coupling(p1, p2, Axis::Y, &config.cavity).magnitude()),
    ];
    let floor = resolvability(0.0, width).floor;
    let lines: Vec<EstimateLine> = couplings
        .iter()
        .map(|&(name, g)| {
            let r = resolvability(2.0 * g, width);
            let verdict = match (r.resolved, r.near_floor) {
                (false, _) => "below floor",
                (true, true) => "near floor",
                (true, false) => "resolved",
            };
            EstimateLine {
                name,
                coupling_hz: to_hz(g),
                verdict,
            }
        })
        .collect();
    let mut summary = String::new();
    for l in &lines {
        let _ = writeln!(
            summary,
            "{}: G/2π = {:.3} kHz, {} (floor {:.3} kHz)",
            l.name,
            l.coupling_hz / 1e3,
            l.verdict,
            to_hz(floor) / 1e3
        );
    }
    print!("{summary}");
    let report = Estimate {
        separation_m: d,
        peak_width_hz: to_hz(width),
        floor_hz: to_hz(floor),
        couplings: lines,
    };
    out.write_json("estimate.json", &report)
}

fn campaign(
    config: &Config,
    sweep: &SweepArgs,
    r: &RampArgs,
    mode: SpectrogramMode,
    out: &mut Outputs,
) -> Result<()> {
    let (kind, values) = sweep_values(sweep, config)?;
    let schedule = ramp(config, r)?;
    let options = CampaignOptions {
        mode,
        ..CampaignOptions::default()
    };
    let result = match kind {
        SweepKind::Detuning => run_detuning_campaign(config, &values, &schedule, &options)?,
        SweepKind::Distance => run_distance_campaign(config, &values, &schedule, &options)?,
        SweepKind::Phase => run_phase_campaign(config, &values, &schedule, &options)?,
    };
    let failed = result.points.iter().filter(|p| p.error.is_some()).count();
    println!("{} points, {failed} with errors", result.points.len());
    out.write("campaign.csv", |w| write_campaign_csv(&result, w))?;
    out.write_json("campaign.json", &result)
}
