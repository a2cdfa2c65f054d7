use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::calibration::PowerCalibration;
use super::tracks::{BranchSeries, TrackPoint};
use crate::coupling::{normal_modes_raw, self_energy_raw, susceptibility};
use crate::dynamics::linearized_mechanical_frequencies;
use crate::error::{Error, Result};
use crate::experiment::EdgeFrequencies;
use crate::params::{Axis, Config};
use crate::units::{hz, to_hz, TWO_PI};

/// Normal-mode model the branch frequencies are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// Mechanical eigenfrequencies of the linearised two-mode, one-cavity
    /// drift. Valid at any coupling strength.
    Linearized,
    /// λ± of the cavity-eliminated two-mode model with self-energy shifts.
    /// Adequate for |G| ≪ Ω and κ, |Δ| ≫ Ω.
    CoupledMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub model: FitModel,
    /// Relative |g1|, |g2| at equal power; `None` splits the product
    /// symmetrically. The split fixes how the cavity pulling divides between
    /// the particles, which matters when one sits near a coupling zero.
    pub coupling_weights: Option<[f64; 2]>,
    /// Minimum usable bins on each branch.
    pub min_bins: usize,
    /// Bins whose branch separation is below this fraction of the peak width
    /// are treated as merged.
    pub merged_fraction: f64,
    /// Coarse grid size over √product before golden-section refinement.
    pub scan_points: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            model: FitModel::Linearized,
            coupling_weights: None,
            min_bins: 10,
            merged_fraction: 0.2,
            scan_points: 80,
        }
    }
}

/// Outcome of one avoided-crossing fit. Angular units throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub axis: Axis,
    /// Fitted |g1 g2| (rad²/s²).
    pub coupling_product: f64,
    /// One s.d. of `coupling_product`.
    pub sigma_product: f64,
    /// 2|G| at the fitted product (rad/s).
    pub splitting: f64,
    /// One s.d. of `splitting`.
    pub sigma: f64,
    pub resolved: bool,
    pub near_floor: bool,
    /// Resolution floor on |G| (rad/s).
    pub floor: f64,
    /// RMS of the branch-frequency residuals (rad/s).
    pub residual: f64,
    pub n_bins_used: usize,
    pub model: FitModel,
    /// Bare frequency at the crossing, where 2|G| is evaluated (rad/s).
    pub omega_cross: f64,
    /// |g1 g2| χ(Ω_cross); the sign of g1 g2 is not observable.
    pub coupling: Complex64,
    /// Set when the objective is too flat for a curvature-based sigma.
    pub wide_sigma: bool,
}

/// JSON report with frequencies in Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub axis: Axis,
    pub coupling_product_hz2: f64,
    pub splitting_hz: f64,
    pub sigma_hz: f64,
    pub resolved: bool,
    pub residual: f64,
    pub n_bins_used: usize,
}

impl FitResult {
    pub fn report(&self) -> FitReport {
        FitReport {
            axis: self.axis,
            coupling_product_hz2: self.coupling_product / (TWO_PI * TWO_PI),
            splitting_hz: to_hz(self.splitting),
            sigma_hz: to_hz(self.sigma),
            resolved: self.resolved,
            residual: to_hz(self.residual),
            n_bins_used: self.n_bins_used,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.report()).expect("plain data serialises")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolvability {
    pub resolved: bool,
    /// Smallest resolvable |G| (same units as the inputs).
    pub floor: f64,
    /// Resolved, but by less than 50% above the floor.
    pub near_floor: bool,
}

/// Fraction of the peak width below which |G| cannot be extracted.
pub const RESOLUTION_FRACTION: f64 = 0.25;

/// `floor = width / 4`; resolved iff `splitting / 2 ≥ floor`.
pub fn resolvability(splitting: f64, peak_width: f64) -> Resolvability {
    let floor = RESOLUTION_FRACTION * peak_width.max(0.0);
    let g = 0.5 * splitting;
    let resolved = g >= floor;
    Resolvability {
        resolved,
        floor,
        near_floor: resolved && g < 1.5 * floor,
    }
}

const CLIP_MADS: f64 = 6.0;

#[derive(Clone)]
struct Datum {
    k: usize,
    obs: f64,
    weight: f64,
    upper: bool,
}

#[derive(Clone)]
struct Problem {
    omega: Vec<[f64; 2]>,
    power: Vec<[f64; 2]>,
    data: Vec<Datum>,
    gamma: [f64; 2],
    detuning: f64,
    linewidth: f64,
    split: [f64; 2],
    model: FitModel,
}

impl Problem {
    /// Model branch frequencies (lower, upper) in bin `k` at √product `s`.
    fn branches(&self, k: usize, s: f64) -> Option<[f64; 2]> {
        let [w1, w2] = self.omega[k];
        let g1 = s * self.split[0] * self.power[k][0].sqrt();
        let g2 = s * self.split[1] * self.power[k][1].sqrt();
        match self.model {
            FitModel::Linearized => {
                linearized_mechanical_frequencies([w1, w2], self.gamma, [g1, g2], self.detuning, self.linewidth)
            }
            FitModel::CoupledMode => {
                let s1 = self_energy_raw(g1 * g1, w1, self.detuning, self.linewidth).shift;
                let s2 = self_energy_raw(g2 * g2, w2, self.detuning, self.linewidth).shift;
                let mean = 0.5 * (w1 + w2);
                let g = g1 * g2 * susceptibility(mean, self.detuning, self.linewidth).norm();
                let m = normal_modes_raw(w1 + s1, w2 + s2, g);
                Some([m.lambda_minus, m.lambda_plus])
            }
        }
    }

    fn chi2(&self, s: f64) -> f64 {
        let mut cache: Option<(usize, [f64; 2])> = None;
        let mut total = 0.0;
        for d in &self.data {
            let pair = match cache {
                Some((k, p)) if k == d.k => Some(p),
                _ => self.branches(d.k, s),
            };
            let Some(pair) = pair else {
                return f64::INFINITY;
            };
            cache = Some((d.k, pair));
            let m = if d.upper { pair[1] } else { pair[0] };
            total += d.weight * (d.obs - m).powi(2);
        }
        total
    }

    /// Drops points further than `CLIP_MADS` robust deviations and one
    /// frequency bin from the model; true if any were dropped.
    fn clip_outliers(&mut self, s: f64, bin: f64) -> bool {
        let res: Vec<f64> = self
            .data
            .iter()
            .map(|d| {
                let pair = self.branches(d.k, s).unwrap_or([f64::NAN; 2]);
                d.obs - if d.upper { pair[1] } else { pair[0] }
            })
            .collect();
        let mut scaled: Vec<f64> = res.iter().zip(&self.data).map(|(r, d)| (r * d.weight.sqrt()).abs()).collect();
        scaled.sort_by(f64::total_cmp);
        let scale = 1.4826 * scaled[scaled.len() / 2];
        let before = self.data.len();
        let mut k = 0;
        self.data.retain(|d| {
            let r = res[k];
            k += 1;
            !(r.abs() > bin && (r * d.weight.sqrt()).abs() > CLIP_MADS * scale)
        });
        self.data.len() < before
    }

    /// Heteroscedasticity-consistent s.d. of p from the model Jacobian;
    /// stays valid when the per-point weights are only proportional to the
    /// true inverse variances.
    fn sandwich_sigma(&self, p: f64, h: f64) -> f64 {
        let (lo, hi) = ((p - h).max(0.0), p + h);
        let (s_lo, s_hi, s0) = (lo.sqrt(), hi.sqrt(), p.sqrt());
        let (mut bread, mut meat) = (0.0, 0.0);
        for d in &self.data {
            let pick = |s: f64| {
                let pair = self.branches(d.k, s).unwrap_or([f64::NAN; 2]);
                if d.upper { pair[1] } else { pair[0] }
            };
            let j = (pick(s_hi) - pick(s_lo)) / (hi - lo);
            let r = d.obs - pick(s0);
            bread += d.weight * j * j;
            meat += (d.weight * j * r).powi(2);
        }
        let n = self.data.len() as f64;
        (meat * n / (n - 1.0)).sqrt() / bread
    }

    fn sum_sq(&self, s: f64) -> f64 {
        let mut total = 0.0;
        for d in &self.data {
            let pair = self.branches(d.k, s).unwrap_or([f64::NAN; 2]);
            let m = if d.upper { pair[1] } else { pair[0] };
            total += (d.obs - m).powi(2);
        }
        total
    }
}

/// Weighted least-squares fit of the branch frequencies with |g1 g2| as the
/// only free parameter.
///
/// Bare frequencies follow `Ω_i(t) = Ω_i(t0) √(P_i(t)/P_i(t0))` from the
/// edge frequencies and the x-mode power calibration; couplings scale as
/// `√P_i`. Each branch point is weighted by `1/max(width, bin)²`.
pub fn fit_avoided_crossing(
    branches: &BranchSeries,
    calibration: &PowerCalibration,
    config: &Config,
    edges: &EdgeFrequencies,
    options: &FitOptions,
) -> Result<FitResult> {
    let n = branches.len();
    if calibration.rel_p1.len() != n || calibration.rel_p2.len() != n || n == 0 {
        return Err(Error::Fit(format!(
            "calibration covers {} bins, branches {}",
            calibration.rel_p1.len(),
            n
        )));
    }
    if config.particles.len() < 2 {
        return Err(Error::Fit("two particles are required".into()));
    }
    let r0 = [calibration.rel_p1[0], calibration.rel_p2[0]];
    if !(r0[0] > 0.0 && r0[1] > 0.0) {
        return Err(Error::Fit("non-positive calibrated power in the first bin".into()));
    }
    let edge = [hz(edges.first_hz[0]), hz(edges.first_hz[1])];
    let (omega, power) = ramp_curves(calibration, edge);

    let bin = branches.bin_width;
    let mut data = Vec::new();
    let mut widths = Vec::new();
    let (mut n_lower, mut n_upper) = (0, 0);
    let mut max_sep = 0.0f64;
    let push = |k: usize, p: &TrackPoint, upper: bool, data: &mut Vec<Datum>| {
        let sigma = p.width.max(bin);
        data.push(Datum {
            k,
            obs: p.center,
            weight: 1.0 / (sigma * sigma),
            upper,
        });
    };
    for k in 0..n {
        if branches.merged[k] {
            continue;
        }
        let (Some(l), Some(u)) = (branches.lower[k], branches.upper[k]) else {
            continue;
        };
        let sep = u.center - l.center;
        if sep < options.merged_fraction * l.width.max(u.width) {
            continue;
        }
        max_sep = max_sep.max(sep);
        push(k, &l, false, &mut data);
        push(k, &u, true, &mut data);
        widths.push(l.width);
        widths.push(u.width);
        n_lower += 1;
        n_upper += 1;
    }
    if n_lower < options.min_bins || n_upper < options.min_bins {
        return Err(Error::Fit(format!(
            "{} axis: {n_lower} lower and {n_upper} upper branch bins usable, {} required",
            branches.axis,
            options.min_bins
        )));
    }

    let split = match options.coupling_weights {
        None => [1.0, 1.0],
        Some(w) if w.iter().all(|x| x.is_finite() && *x >= 0.0) && w[0] + w[1] > 0.0 => {
            // normalised so that the symmetric split is [1, 1]
            let norm = (2.0 / (w[0] * w[0] + w[1] * w[1])).sqrt();
            [w[0] * norm, w[1] * norm]
        }
        Some(w) => return Err(Error::Fit(format!("invalid coupling weights {w:?}"))),
    };
    // product per unit scale q = s²; at most 1
    let product_per_scale = split[0] * split[1];
    let problem = Problem {
        omega,
        power,
        data,
        gamma: [config.particles[0].gas_damping, config.particles[1].gas_damping],
        detuning: config.cavity.detuning,
        linewidth: config.cavity.linewidth,
        split,
        model: options.model,
    };

    // bare frequency at the crossing, where both calibrated powers are 1
    let omega_cross = 0.5 * (edge[0] / r0[0].sqrt() + edge[1] / r0[1].sqrt());
    let chi = susceptibility(omega_cross, config.cavity.detuning, config.cavity.linewidth).norm();
    if !(chi > 0.0) {
        return Err(Error::Fit("vanishing cavity susceptibility".into()));
    }
    // a lopsided split needs a larger scale for the same pulling
    let s_max = (2.0 * max_sep.max(bin) / (chi * product_per_scale.max(1.0 / 16.0))).sqrt();

    let axis = branches.axis;
    let mut problem = problem;
    let mut s_hat = minimize(&problem, s_max, options.scan_points, axis)?;
    if problem.clip_outliers(s_hat, bin) {
        s_hat = minimize(&problem, s_max, options.scan_points, axis)?;
    }
    let chi2_min = problem.chi2(s_hat);
    let n_up = problem.data.iter().filter(|d| d.upper).count();
    let n_used = n_up.min(problem.data.len() - n_up);
    let p_hat = s_hat * s_hat;

    // curvature in the scale q = s², scaled by the reduced χ²
    let n_pts = problem.data.len();
    let reduced = (chi2_min / (n_pts as f64 - 1.0)).max(f64::MIN_POSITIVE);
    let f = |p: f64| problem.chi2(p.max(0.0).sqrt());
    let p_max = s_max * s_max;
    let h = (1e-4 * p_hat).max(1e-6 * p_max);
    let curvature = if p_hat > h {
        (f(p_hat + h) - 2.0 * chi2_min + f(p_hat - h)) / (h * h)
    } else {
        (f(p_hat + 2.0 * h) - 2.0 * f(p_hat + h) + chi2_min) / (h * h)
    };
    let mut wide_sigma = false;
    let mut sigma_p = if curvature.is_finite() && curvature > 0.0 {
        let hessian = (2.0 * reduced / curvature).sqrt();
        let sandwich = problem.sandwich_sigma(p_hat, h);
        let cal = calibration_sigma(&problem, calibration, edge, p_hat, h, curvature);
        hessian.max(sandwich).hypot(cal)
    } else {
        wide_sigma = true;
        profile_width(&f, p_hat, chi2_min + reduced, 4.0 * p_max)
    };
    if sigma_p > p_hat.max(1e-12 * p_max) && sigma_p > 0.5 * p_max {
        wide_sigma = true;
    }
    if !sigma_p.is_finite() {
        sigma_p = 4.0 * p_max;
        wide_sigma = true;
    }

    let (product, sigma_product) = (product_per_scale * p_hat, product_per_scale * sigma_p);
    let splitting = 2.0 * product * chi;
    let sigma = 2.0 * chi * sigma_product;
    widths.sort_by(f64::total_cmp);
    let width = widths[widths.len() / 2];
    let res = resolvability(splitting, width);
    let residual = (problem.sum_sq(s_hat) / n_pts as f64).sqrt();
    Ok(FitResult {
        axis: branches.axis,
        coupling_product: product,
        sigma_product,
        splitting,
        sigma,
        resolved: res.resolved && splitting >= 3.0 * sigma,
        near_floor: res.near_floor,
        floor: res.floor,
        residual,
        n_bins_used: n_used,
        model: options.model,
        omega_cross,
        coupling: product * susceptibility(omega_cross, config.cavity.detuning, config.cavity.linewidth),
        wide_sigma,
    })
}

/// Bare frequencies and relative powers per bin.
fn ramp_curves(calibration: &PowerCalibration, edge: [f64; 2]) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    let r0 = [calibration.rel_p1[0], calibration.rel_p2[0]];
    calibration
        .rel_p1
        .iter()
        .zip(&calibration.rel_p2)
        .map(|(&a, &b)| {
            let r = [a.max(0.0), b.max(0.0)];
            ([edge[0] * (r[0] / r0[0]).sqrt(), edge[1] * (r[1] / r0[1]).sqrt()], r)
        })
        .unzip()
}

/// s.d. of p induced by the uncertainty of the power calibration, from the
/// shift of the χ² minimum along each principal direction of the
/// calibration-coefficient covariance.
fn calibration_sigma(
    problem: &Problem,
    calibration: &PowerCalibration,
    edge: [f64; 2],
    p: f64,
    h: f64,
    curvature: f64,
) -> f64 {
    let slope = |prob: &Problem| {
        let f = |x: f64| prob.chi2(x.max(0.0).sqrt());
        if p > h {
            (f(p + h) - f(p - h)) / (2.0 * h)
        } else {
            (f(p + h) - f(p)) / h
        }
    };
    let mut var = 0.0;
    for i in 0..2 {
        let cov = Matrix3::from_fn(|r, c| calibration.fits[i].cov[r][c]);
        let eig = cov.symmetric_eigen();
        for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
            if !(lambda > 0.0) {
                continue;
            }
            let v = eig.eigenvectors.column(k) * lambda.sqrt();
            let delta = [v[0], v[1], v[2]];
            let shifted = |sign: f64| {
                let cal = calibration.perturbed(i, delta.map(|d| sign * d));
                let (omega, power) = ramp_curves(&cal, edge);
                Problem {
                    omega,
                    power,
                    ..problem.clone()
                }
            };
            let dp = -(slope(&shifted(1.0)) - slope(&shifted(-1.0))) / (2.0 * curvature);
            if dp.is_finite() {
                var += dp * dp;
            }
        }
    }
    var.sqrt()
}

fn minimize(problem: &Problem, s_max: f64, scan_points: usize, axis: Axis) -> Result<f64> {
    let m = scan_points.max(3);
    let grid: Vec<f64> = (0..m).map(|j| s_max * j as f64 / (m - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&s| problem.chi2(s)).collect();
    let j = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(j, _)| j)
        .ok_or_else(|| Error::Fit(format!("{axis} axis: model undefined over the whole scan")))?;
    let lo = grid[j.saturating_sub(1)];
    let hi = grid[(j + 1).min(m - 1)];
    let s_hat = golden_section(|s| problem.chi2(s), lo, hi, 1e-12 * s_max);
    if !problem.chi2(s_hat).is_finite() {
        return Err(Error::Fit(format!(
            "{axis} axis: no convergence (scan minimum at √p = {:.4e} of {:.4e})",
            grid[j], s_max
        )));
    }
    Ok(s_hat)
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the interval may end at the scan boundary where the edge is optimal
    [a, mid, b].into_iter().min_by(|x, y| f(*x).total_cmp(&f(*y))).unwrap_or(mid)
}

/// Distance above `p0` at which `f` first exceeds `level`, by bisection.
fn profile_width(f: &impl Fn(f64) -> f64, p0: f64, level: f64, limit: f64) -> f64 {
    if f(p0 + limit) <= level {
        return limit;
    }
    let (mut a, mut b) = (0.0, limit);
    for _ in 0..100 {
        let m = 0.5 * (a + b);
        if f(p0 + m) > level {
            b = m;
        } else {
            a = m;
        }
    }
    b
}
