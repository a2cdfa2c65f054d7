use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::tracks::{BranchSeries, PeakTrack};
use crate::error::{Error, Result};
use crate::params::Axis;

/// Bins closer than this many peak widths are not used for calibration.
pub const CALIBRATION_MIN_SEPARATION: f64 = 2.5;

/// Relative tweezer powers recovered from the uncoupled x modes,
/// normalised to the power at the crossing (P1 = P2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCalibration {
    pub time: Vec<f64>,
    pub rel_p1: Vec<f64>,
    pub rel_p2: Vec<f64>,
    pub crossing_time: f64,
    /// x frequency at the crossing (rad/s).
    pub omega_ref: f64,
    pub bins_used: usize,
    /// Smoothed `Ω_{i,x}²(t)` for both particles.
    pub fits: [QuadraticFit; 2],
}

/// `c0 + c1 u + c2 u²` with `u = (t − mean)/scale`, and the covariance of
/// the coefficients from the fit residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub coeffs: [f64; 3],
    pub cov: [[f64; 3]; 3],
    pub mean: f64,
    pub scale: f64,
}

impl QuadraticFit {
    pub fn eval(&self, t: f64) -> f64 {
        let u = (t - self.mean) / self.scale;
        let c = self.coeffs;
        c[0] + u * (c[1] + u * c[2])
    }

    /// Least squares; the covariance is zero for fewer than four points.
    pub fn fit(t: &[f64], y: &[f64]) -> QuadraticFit {
        let n = t.len() as f64;
        let mean = t.iter().sum::<f64>() / n;
        let scale = t.iter().map(|x| (x - mean).abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let a = DMatrix::from_fn(t.len(), 3, |i, j| ((t[i] - mean) / scale).powi(j as i32));
        let b = DVector::from_column_slice(y);
        let c = a
            .clone()
            .svd(true, true)
            .solve(&b, 1e-12)
            .unwrap_or_else(|_| DVector::from_element(3, y.iter().sum::<f64>() / n));
        let mut cov = [[0.0; 3]; 3];
        if t.len() > 3 {
            let ssr = (&a * &c - &b).norm_squared();
            if let Some(inv) = (a.transpose() * &a).try_inverse() {
                let s2 = ssr / (n - 3.0);
                for (i, row) in cov.iter_mut().enumerate() {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = s2 * inv[(i, j)];
                    }
                }
            }
        }
        QuadraticFit {
            coeffs: [c[0], c[1], c[2]],
            cov,
            mean,
            scale,
        }
    }
}

impl PowerCalibration {
    /// Relative powers recomputed with the coefficients of particle `i`
    /// shifted by `delta`; the normalisation is kept.
    pub fn perturbed(&self, i: usize, delta: [f64; 3]) -> PowerCalibration {
        let mut out = self.clone();
        let mut fit = self.fits[i];
        for (c, d) in fit.coeffs.iter_mut().zip(delta) {
            *c += d;
        }
        out.fits[i] = fit;
        let ref_sq = self.omega_ref * self.omega_ref;
        let rel: Vec<f64> = self.time.iter().map(|&t| fit.eval(t) / ref_sq).collect();
        if i == 0 {
            out.rel_p1 = rel;
        } else {
            out.rel_p2 = rel;
        }
        out
    }
}

/// Calibrates from x-labelled tracks, see [`calibrate_from_branches`].
pub fn calibrate_powers_from_x(tracks: &[PeakTrack], time: &[f64], bin_width: f64) -> Result<PowerCalibration> {
    calibrate_from_branches(&BranchSeries::from_tracks(tracks, Axis::X, time, bin_width))
}

/// `P_i(t)/P_cross = (Ω_{i,x}(t)/Ω_ref)²`. Particle 1 is the upper branch
/// in the first bin; its identity flips where `Ω1² − Ω2²`, linear in time for
/// a linear ramp, changes sign. Each `Ω_i²(t)` is smoothed by a quadratic
/// least-squares fit, which also bridges the bins near the crossing; ramps
/// are assumed smooth on the scale of the whole schedule.
pub fn calibrate_from_branches(series: &BranchSeries) -> Result<PowerCalibration> {
    let mut t = Vec::new();
    let mut diff = Vec::new();
    let mut sum = Vec::new();
    for k in 0..series.len() {
        if let (Some(l), Some(u)) = (series.lower[k], series.upper[k]) {
            if u.center - l.center >= CALIBRATION_MIN_SEPARATION * l.width.max(u.width) {
                t.push(series.time[k]);
                diff.push(u.center * u.center - l.center * l.center);
                sum.push(u.center * u.center + l.center * l.center);
            }
        }
    }
    if t.len() < 4 {
        return Err(Error::Calibration(format!("only {} usable x-track bins", t.len())));
    }
    // Ω1² + Ω2² and |Ω1² − Ω2²| are both piecewise linear for a linear ramp;
    // spurious peaks show up as outliers from either
    let keep: Vec<bool> = {
        let abs_diff: Vec<f64> = diff.iter().map(|d| d.abs()).collect();
        let a = inliers(&t, &sum);
        let b = inliers_v(&t, &abs_diff);
        a.iter().zip(&b).map(|(x, y)| *x && *y).collect()
    };
    let filter = |v: &[f64]| -> Vec<f64> { v.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect() };
    let (t, diff, sum) = (filter(&t), filter(&diff), filter(&sum));
    let n = t.len();
    if n < 4 {
        return Err(Error::Calibration(format!("only {n} consistent x-track bins")));
    }

    // choose the flip index that makes ±diff most nearly linear in time
    let mut best: Option<(f64, usize, f64, f64)> = None;
    for c in 1..=n {
        let signed: Vec<f64> = (0..n).map(|k| if k < c { diff[k] } else { -diff[k] }).collect();
        let (a, b, ssr) = line_fit(&t, &signed);
        if best.is_none_or(|(s, ..)| ssr < s) {
            best = Some((ssr, c, a, b));
        }
    }
    let (_, c, a, b) = best.expect("at least one candidate");
    let crossing_time = if b != 0.0 { -a / b } else { f64::NAN };
    if !crossing_time.is_finite() {
        return Err(Error::Calibration("x tracks never approach each other".into()));
    }

    let w1: Vec<f64> = (0..n)
        .map(|k| 0.5 * (sum[k] + if k < c { diff[k] } else { -diff[k] }))
        .collect();
    let w2: Vec<f64> = (0..n).map(|k| sum[k] - w1[k]).collect();
    let ref_sq = 0.5 * QuadraticFit::fit(&t, &sum).eval(crossing_time);
    if !(ref_sq > 0.0) {
        return Err(Error::Calibration("non-positive reference frequency".into()));
    }
    let fits = [QuadraticFit::fit(&t, &w1), QuadraticFit::fit(&t, &w2)];
    let rel_p1 = series.time.iter().map(|&x| fits[0].eval(x) / ref_sq).collect();
    let rel_p2 = series.time.iter().map(|&x| fits[1].eval(x) / ref_sq).collect();
    Ok(PowerCalibration {
        time: series.time.clone(),
        rel_p1,
        rel_p2,
        crossing_time,
        omega_ref: ref_sq.sqrt(),
        bins_used: n,
        fits,
    })
}

const OUTLIER_MADS: f64 = 6.0;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Points within `OUTLIER_MADS` robust deviations of a least-squares line,
/// refitted once after the first rejection.
fn inliers(t: &[f64], y: &[f64]) -> Vec<bool> {
    let mut keep = vec![true; t.len()];
    for _ in 0..2 {
        let (ts, ys): (Vec<f64>, Vec<f64>) = t.iter().zip(y).zip(&keep).filter(|(_, k)| **k).map(|(p, _)| (*p.0, *p.1)).unzip();
        let (a, b, _) = line_fit(&ts, &ys);
        let res: Vec<f64> = t.iter().zip(y).map(|(x, v)| v - a - b * x).collect();
        let scale = 1.4826 * median(res.iter().map(|r| r.abs()).collect());
        let tol = OUTLIER_MADS * scale + 1e-9 * y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        keep = res.iter().map(|r| r.abs() <= tol).collect();
    }
    keep
}

/// As [`inliers`] for a V-shaped series (|linear|): the line is fitted to
/// the series with its descending part negated at the minimum.
fn inliers_v(t: &[f64], y: &[f64]) -> Vec<bool> {
    let kmin = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(k, _)| k);
    let signed: Vec<f64> = y.iter().enumerate().map(|(k, v)| if k < kmin { *v } else { -v }).collect();
    let a = inliers(t, &signed);
    // the minimum itself may sit on either side
    let flipped: Vec<f64> = y.iter().enumerate().map(|(k, v)| if k <= kmin { *v } else { -v }).collect();
    let b = inliers(t, &flipped);
    if a.iter().filter(|k| **k).count() >= b.iter().filter(|k| **k).count() {
        a
    } else {
        b
    }
}

/// Least-squares line `a + b t` and its residual sum of squares.
fn line_fit(t: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = t.iter().map(|x| (x - mt).powi(2)).sum();
    let sxy: f64 = t.iter().zip(y).map(|(x, v)| (x - mt) * (v - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mt;
    let ssr = t.iter().zip(y).map(|(x, v)| (v - a - b * x).powi(2)).sum();
    (a, b, ssr)
}

/// Least-squares `c0 + c1 u + c2 u²` with `u = (t − mean)/scale`, returned
/// together with the centring constants.
#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::tracks::TrackPoint;

    fn point(bin: usize, center: f64) -> TrackPoint {
        TrackPoint {
            bin,
            time: bin as f64,
            center,
            width: 1.0,
            height: 1.0,
        }
    }

    fn synthetic(p1: &[f64], p2: &[f64], w_ref: f64) -> BranchSeries {
        let n = p1.len();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for k in 0..n {
            let (a, b) = (w_ref * p1[k].sqrt(), w_ref * p2[k].sqrt());
            lower.push(Some(point(k, a.min(b))));
            upper.push(Some(point(k, a.max(b))));
        }
        BranchSeries {
            axis: Axis::X,
            time: (0..n).map(|k| k as f64).collect(),
            lower,
            upper,
            merged: vec![false; n],
            bin_width: 1.0,
        }
    }

    #[test]
    fn recovers_linear_ramp() {
        let n = 101;
        let p1: Vec<f64> = (0..n).map(|k| 1.1 - 0.2 * k as f64 / 100.0).collect();
        let p2: Vec<f64> = p1.iter().map(|p| 2.0 - p).collect();
        let cal = calibrate_from_branches(&synthetic(&p1, &p2, 1000.0)).unwrap();
        assert!((cal.crossing_time - 50.0).abs() < 1e-6);
        assert!((cal.omega_ref - 1000.0).abs() < 1e-6);
        for k in 0..n {
            assert!((cal.rel_p1[k] - p1[k]).abs() < 1e-9);
            assert!((cal.rel_p2[k] - p2[k]).abs() < 1e-9);
        }
        assert!((cal.rel_p1[50] - cal.rel_p2[50]).abs() < 1e-9);
        // bins within 2.5 widths of each other were skipped
        assert!(cal.bins_used < n);
    }

    #[test]
    fn frequency_ratio_two_is_power_ratio_four() {
        let p1 = vec![4.0; 10];
        let p2 = vec![1.0; 10];
        let s = synthetic(&p1, &p2, 100.0);
        // constant powers never cross: calibration must refuse
        assert!(calibrate_from_branches(&s).is_err());
        let ramp1: Vec<f64> = (0..10).map(|k| 4.0 - 0.3 * k as f64).collect();
        let ramp2: Vec<f64> = (0..10).map(|k| 1.0 + 0.3 * k as f64).collect();
        let cal = calibrate_from_branches(&synthetic(&ramp1, &ramp2, 100.0)).unwrap();
        assert!((cal.rel_p1[0] / cal.rel_p2[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn missing_tracks_fail() {
        let s = BranchSeries {
            axis: Axis::X,
            time: vec![0.0, 1.0],
            lower: vec![None, None],
            upper: vec![None, None],
            merged: vec![false, false],
            bin_width: 1.0,
        };
        assert!(matches!(calibrate_from_branches(&s), Err(Error::Calibration(_))));
    }
}
