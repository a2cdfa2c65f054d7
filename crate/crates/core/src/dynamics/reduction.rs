use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use super::model::StateSpaceModel;
use crate::coupling::{effective_coupling_raw, self_energy_raw, EffectiveCoupling};
use crate::error::{Error, Result};
use num_complex::Complex64;

/// Two-mode effective description obtained by eliminating the cavity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    /// Self-energy shifted frequencies (rad/s).
    pub omega1: f64,
    pub omega2: f64,
    pub coupling: EffectiveCoupling,
    /// Set when neither κ nor |Δ| exceeds five times every mechanical
    /// frequency.
    pub warning: Option<String>,
}

/// Shifted frequencies and G for a two-mode single-axis model.
pub fn effective_model_reduction(model: &StateSpaceModel) -> Result<Reduction> {
    let cavity = model
        .cavity
        .ok_or_else(|| Error::Numerical("reduction needs a cavity mode".into()))?;
    if model.modes.len() != 2 || model.modes[0].axis != model.modes[1].axis {
        return Err(Error::Numerical("reduction needs exactly two modes on one axis".into()));
    }
    let (m1, m2) = (&model.modes[0], &model.modes[1]);
    let omega_max = m1.omega.max(m2.omega);
    let warning = (cavity.linewidth < 5.0 * omega_max && cavity.detuning.abs() < 5.0 * omega_max).then(|| {
        format!(
            "outside the adiabatic regime: kappa/Omega = {:.2}, |Delta|/Omega = {:.2}",
            cavity.linewidth / omega_max,
            cavity.detuning.abs() / omega_max
        )
    });
    let shift = |g: f64, w: f64| self_energy_raw(g * g, w, cavity.detuning, cavity.linewidth).shift;
    let mean = 0.5 * (m1.omega + m2.omega);
    let g = effective_coupling_raw(
        Complex64::from(m1.coupling),
        Complex64::from(m2.coupling),
        mean,
        cavity.detuning,
        cavity.linewidth,
    );
    Ok(Reduction {
        omega1: m1.omega + shift(m1.coupling, m1.omega),
        omega2: m2.omega + shift(m2.coupling, m2.omega),
        coupling: EffectiveCoupling { axis: m1.axis, g },
        warning,
    })
}

/// Mechanical eigenfrequencies (ascending) of the two-mode, one-cavity
/// drift, without building a full model. Used inside fitting loops.
pub fn linearized_mechanical_frequencies(
    omega: [f64; 2],
    gamma: [f64; 2],
    coupling: [f64; 2],
    detuning: f64,
    linewidth: f64,
) -> Option<[f64; 2]> {
    let mut a = Matrix6::<f64>::zeros();
    for k in 0..2 {
        let (q, p) = (2 * k, 2 * k + 1);
        a[(q, q)] = -0.5 * gamma[k];
        a[(p, p)] = -0.5 * gamma[k];
        a[(q, p)] = omega[k];
        a[(p, q)] = -omega[k];
        a[(p, 4)] = -2.0 * coupling[k];
        a[(5, q)] = -2.0 * coupling[k];
    }
    a[(4, 4)] = -0.5 * linewidth;
    a[(5, 5)] = -0.5 * linewidth;
    a[(4, 5)] = detuning;
    a[(5, 4)] = -detuning;
    let ev = a.complex_eigenvalues();
    let mut positive: Vec<(f64, f64)> = ev.iter().filter(|e| e.im > 0.0).map(|e| (e.im, -e.re)).collect();
    if positive.len() < 2 {
        return None;
    }
    positive.sort_by(|x, y| x.1.total_cmp(&y.1));
    let mut pair = [positive[0].0, positive[1].0];
    pair.sort_by(f64::total_cmp);
    Some(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::normal_mode_frequencies;
    use crate::dynamics::{build_state_space, mechanical_frequencies};
    use crate::params::{Axis, Config};
    use crate::units::{khz, mhz};

    #[test]
    fn zero_coupling_returns_bare_frequencies() {
        let mut cfg = Config::paper_defaults();
        cfg.cavity.coupling_scale = [0.0; 3];
        cfg.particles[1].mech_freq[1] = khz(81.0);
        let r = effective_model_reduction(&build_state_space(&cfg, Axis::Y).unwrap()).unwrap();
        assert_eq!(r.omega1, cfg.particles[0].freq(Axis::Y));
        assert_eq!(r.omega2, khz(81.0));
        assert_eq!(r.coupling.magnitude(), 0.0);
    }

    #[test]
    fn warning_outside_adiabatic_regime() {
        let cfg = Config::paper_defaults().with_detuning(mhz(0.2));
        let mut cfg = cfg;
        cfg.cavity.linewidth = khz(200.0);
        let r = effective_model_reduction(&build_state_space(&cfg, Axis::Y).unwrap()).unwrap();
        assert!(r.warning.is_some());
        let ok = effective_model_reduction(&build_state_space(&Config::paper_defaults(), Axis::Y).unwrap()).unwrap();
        assert!(ok.warning.is_none());
    }

    #[test]
    fn agreement_degrades_as_detuning_approaches_omega() {
        let base = Config::paper_defaults();
        let mut errors = Vec::new();
        for delta in [2.5, 1.2, 0.6] {
            let m = build_state_space(&base.with_detuning(mhz(delta)), Axis::Y).unwrap();
            let r = effective_model_reduction(&m).unwrap();
            let full = mechanical_frequencies(&m);
            let gap = full[1].frequency - full[0].frequency;
            let rwa = normal_mode_frequencies(r.omega1, r.omega2, &r.coupling).gap();
            errors.push((gap - rwa).abs() / rwa);
        }
        assert!(errors.windows(2).all(|w| w[1] > w[0]), "{errors:?}");
    }

    #[test]
    fn fast_path_matches_model() {
        let cfg = Config::paper_defaults();
        let m = build_state_space(&cfg, Axis::Z).unwrap();
        let full = mechanical_frequencies(&m);
        let fast = linearized_mechanical_frequencies(
            [m.modes[0].omega, m.modes[1].omega],
            [m.modes[0].gamma, m.modes[1].gamma],
            [m.modes[0].coupling, m.modes[1].coupling],
            cfg.cavity.detuning,
            cfg.cavity.linewidth,
        )
        .unwrap();
        for k in 0..2 {
            assert!((fast[k] - full[k].frequency).abs() < 1e-9 * full[k].frequency);
        }
    }
}
