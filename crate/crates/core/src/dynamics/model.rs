use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coupling::particle_coupling;
use crate::error::{Error, Result, ValidationError};
use crate::params::{mass_from_spec, Axis, Config};
use crate::units::{thermal_quadrature_variance, HBAR};

/// One mechanical degree of freedom in a [`StateSpaceModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanicalMode {
    /// Zero-based particle index.
    pub particle: usize,
    pub axis: Axis,
    pub omega: f64,
    pub gamma: f64,
    /// Signed optomechanical coupling (rad/s).
    pub coupling: f64,
    pub mass: f64,
    pub temperature: f64,
}

impl MechanicalMode {
    /// Zero-point amplitude √(ħ/2mΩ): position in metres is `zpf · q`.
    pub fn zpf(&self) -> f64 {
        (HBAR / (2.0 * self.mass * self.omega)).sqrt()
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.particle + 1, self.axis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityMode {
    pub detuning: f64,
    pub linewidth: f64,
}

/// Linear Langevin model `dx = A x dt + dW`, `E[dW dWᵀ] = D dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub drift: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
    pub labels: Vec<String>,
    pub modes: Vec<MechanicalMode>,
    pub cavity: Option<CavityMode>,
}

/// Frequency (rad/s) and energy damping rate (rad/s) of one eigenmode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeFrequency {
    pub frequency: f64,
    pub damping: f64,
}

impl StateSpaceModel {
    /// Assembles drift and diffusion and checks stability.
    pub fn new(modes: Vec<MechanicalMode>, cavity: Option<CavityMode>) -> Result<Self> {
        let mut err = ValidationError::default();
        for m in &modes {
            let field = |f: &str| format!("mode.{}.{f}", m.label());
            if !(m.omega > 0.0) {
                err.push(field("omega"), "must be positive");
            }
            if !(m.gamma >= 0.0) {
                err.push(field("gamma"), "must be non-negative");
            }
            if !(m.mass > 0.0) {
                err.push(field("mass"), "must be positive");
            }
            if !m.coupling.is_finite() {
                err.push(field("coupling"), "must be finite");
            }
        }
        if let Some(c) = &cavity {
            if !(c.linewidth > 0.0) {
                err.push("cavity.linewidth", "must be positive");
            }
        }
        if !err.is_empty() {
            return Err(err.into());
        }

        let n_mech = modes.len();
        let dim = 2 * n_mech + if cavity.is_some() { 2 } else { 0 };
        let mut a = DMatrix::zeros(dim, dim);
        let mut d = DMatrix::zeros(dim, dim);
        let mut labels = Vec::with_capacity(dim);
        for (k, m) in modes.iter().enumerate() {
            let (q, p) = (2 * k, 2 * k + 1);
            a[(q, q)] = -0.5 * m.gamma;
            a[(p, p)] = -0.5 * m.gamma;
            a[(q, p)] = m.omega;
            a[(p, q)] = -m.omega;
            let nth = m.gamma * thermal_quadrature_variance(m.omega, m.temperature);
            d[(q, q)] = nth;
            d[(p, p)] = nth;
            labels.push(format!("q{}", m.label()));
            labels.push(format!("p{}", m.label()));
        }
        if let Some(c) = &cavity {
            let (x, y) = (2 * n_mech, 2 * n_mech + 1);
            a[(x, x)] = -0.5 * c.linewidth;
            a[(y, y)] = -0.5 * c.linewidth;
            a[(x, y)] = c.detuning;
            a[(y, x)] = -c.detuning;
            for (k, m) in modes.iter().enumerate() {
                a[(2 * k + 1, x)] = -2.0 * m.coupling;
                a[(y, 2 * k)] = -2.0 * m.coupling;
            }
            d[(x, x)] = c.linewidth;
            d[(y, y)] = c.linewidth;
            labels.push("X".into());
            labels.push("Y".into());
        }
        let model = StateSpaceModel {
            drift: a,
            diffusion: d,
            labels,
            modes,
            cavity,
        };
        check_stability(&model)?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn q_index(&self, mode: usize) -> usize {
        2 * mode
    }

    pub fn p_index(&self, mode: usize) -> usize {
        2 * mode + 1
    }

    /// Index of the cavity `X` quadrature (`Y` follows it).
    pub fn cavity_index(&self) -> Option<usize> {
        self.cavity.map(|_| 2 * self.modes.len())
    }

    pub fn mode_index(&self, particle: usize, axis: Axis) -> Option<usize> {
        self.modes.iter().position(|m| m.particle == particle && m.axis == axis)
    }

    pub fn max_mech_freq(&self) -> f64 {
        self.modes.iter().map(|m| m.omega).fold(0.0, f64::max)
    }

    pub fn eigenvalues(&self) -> Vec<num_complex::Complex64> {
        self.drift.complex_eigenvalues().iter().copied().collect()
    }
}

/// Rejects models whose drift has an eigenvalue with positive real part
/// beyond round-off.
pub fn check_stability(model: &StateSpaceModel) -> Result<()> {
    let scale = model.drift.amax().max(1.0);
    for ev in model.drift.complex_eigenvalues().iter() {
        if !ev.re.is_finite() || !ev.im.is_finite() {
            return Err(Error::Numerical("non-finite drift eigenvalue".into()));
        }
        if ev.re > 1e-12 * scale {
            return Err(Error::Unstable { re: ev.re, im: ev.im });
        }
    }
    Ok(())
}

/// One axis of the first two particles plus the cavity (dimension 6).
pub fn build_state_space(config: &Config, axis: Axis) -> Result<StateSpaceModel> {
    build_multi_axis(config, &[axis])
}

/// Several axes of every particle sharing the cavity. Modes are ordered by
/// axis, then particle.
pub fn build_multi_axis(config: &Config, axes: &[Axis]) -> Result<StateSpaceModel> {
    let mut modes = Vec::with_capacity(axes.len() * config.particles.len());
    for &axis in axes {
        for (i, p) in config.particles.iter().enumerate() {
            modes.push(MechanicalMode {
                particle: i,
                axis,
                omega: p.freq(axis),
                gamma: p.gas_damping,
                coupling: particle_coupling(p, axis, &config.cavity).g.re,
                mass: mass_from_spec(p)?,
                temperature: config.noise.temperature,
            });
        }
    }
    StateSpaceModel::new(
        modes,
        Some(CavityMode {
            detuning: config.cavity.detuning,
            linewidth: config.cavity.linewidth,
        }),
    )
}

/// A single damped oscillator with no cavity (dimension 2).
pub fn single_oscillator(omega: f64, gamma: f64, mass: f64, temperature: f64) -> Result<StateSpaceModel> {
    StateSpaceModel::new(
        vec![MechanicalMode {
            particle: 0,
            axis: Axis::Y,
            omega,
            gamma,
            coupling: 0.0,
            mass,
            temperature,
        }],
        None,
    )
}

/// Every oscillating eigenmode (one per complex-conjugate pair), sorted by
/// frequency.
pub fn eigenfrequencies(model: &StateSpaceModel) -> Vec<ModeFrequency> {
    let mut out: Vec<ModeFrequency> = model
        .eigenvalues()
        .into_iter()
        .filter(|ev| ev.im > 0.0)
        .map(|ev| ModeFrequency {
            frequency: ev.im,
            damping: -2.0 * ev.re,
        })
        .collect();
    out.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    out
}

/// The eigenmodes of mechanical character: the `modes.len()` least damped
/// ones, sorted by frequency.
pub fn mechanical_frequencies(model: &StateSpaceModel) -> Vec<ModeFrequency> {
    let mut all = eigenfrequencies(model);
    if model.cavity.is_some() {
        all.sort_by(|a, b| a.damping.total_cmp(&b.damping));
        all.truncate(model.modes.len());
        all.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    }
    all
}

/// Solves `A P + P Aᵀ + D = 0` for the stationary covariance.
pub fn stationary_covariance(model: &StateSpaceModel) -> Result<DMatrix<f64>> {
    let n = model.dim();
    let a = &model.drift;
    let eye = DMatrix::<f64>::identity(n, n);
    // column-major vec: vec(A P) = (I ⊗ A) vec P, vec(P Aᵀ) = (A ⊗ I) vec P
    let lhs = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, model.diffusion.iter().map(|v| -v));
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular Lyapunov operator".into()))?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{effective_coupling, OptoCoupling};
    use crate::units::{khz, mhz, BOLTZMANN};
    use num_complex::Complex64;

    fn defaults() -> Config {
        Config::paper_defaults()
    }

    #[test]
    fn layout_and_labels() {
        let m = build_state_space(&defaults(), Axis::Y).unwrap();
        assert_eq!(m.dim(), 6);
        assert_eq!(m.labels, ["q1y", "p1y", "q2y", "p2y", "X", "Y"]);
        assert_eq!(m.cavity_index(), Some(4));
        let multi = build_multi_axis(&defaults(), &Axis::ALL).unwrap();
        assert_eq!(multi.dim(), 14);
        assert_eq!(multi.mode_index(1, Axis::Z), Some(5));
    }

    #[test]
    fn uncoupled_model_is_block_diagonal() {
        let mut cfg = defaults();
        cfg.cavity.coupling_scale = [0.0; 3];
        let m = build_state_space(&cfg, Axis::Y).unwrap();
        for i in 0..4 {
            for j in 4..6 {
                assert_eq!(m.drift[(i, j)], 0.0);
                assert_eq!(m.drift[(j, i)], 0.0);
            }
        }
        let freqs = eigenfrequencies(&m);
        let w = cfg.particles[0].freq(Axis::Y);
        let mech: Vec<_> = freqs.iter().filter(|f| f.frequency < 2.0 * w).collect();
        assert_eq!(mech.len(), 2);
        for f in mech {
            assert!((f.frequency - w).abs() / w < 1e-10);
            assert!((f.damping - cfg.particles[0].gas_damping).abs() / cfg.particles[0].gas_damping < 1e-6);
        }
        let cav = freqs.iter().find(|f| f.frequency > 2.0 * w).unwrap();
        assert!((cav.frequency - cfg.cavity.detuning).abs() / cfg.cavity.detuning < 1e-10);
        assert!((cav.damping - cfg.cavity.linewidth).abs() / cfg.cavity.linewidth < 1e-10);
    }

    #[test]
    fn symmetric_pair_has_a_dark_mode() {
        // equal couplings of opposite sign (node and node + 3.5 λ): the
        // combination g2 q1 − g1 q2 never drives the cavity
        let cfg = defaults();
        let m = build_state_space(&cfg, Axis::Y).unwrap();
        let (g1, g2) = (m.modes[0].coupling, m.modes[1].coupling);
        assert!((g1.abs() - g2.abs()).abs() < 1e-9 * g1.abs());
        let lambda = Complex64::new(-0.5 * m.modes[0].gamma, m.modes[0].omega);
        let i = Complex64::i();
        let v = DVector::from_vec(vec![
            Complex64::from(g2),
            i * g2,
            Complex64::from(-g1),
            -i * g1,
            Complex64::from(0.0),
            Complex64::from(0.0),
        ]);
        let av = m.drift.map(Complex64::from) * &v;
        let residual = (&av - &v * lambda).norm() / (v.norm() * lambda.norm());
        assert!(residual < 1e-14, "{residual}");
        // and the bare eigenvalue is present in the spectrum
        let closest = m
            .eigenvalues()
            .into_iter()
            .map(|ev| (ev - lambda).norm())
            .fold(f64::INFINITY, f64::min);
        assert!(closest < 1e-6 * lambda.norm());
    }

    #[test]
    fn stable_across_detuning_range() {
        for delta in [0.45, 0.8, 1.2, 1.8, 2.5] {
            let cfg = defaults().with_detuning(mhz(delta));
            build_multi_axis(&cfg, &Axis::ALL).unwrap();
        }
    }

    #[test]
    fn cavity_cooling_broadens_y_modes() {
        let cfg = defaults().with_detuning(mhz(0.45));
        let m = build_state_space(&cfg, Axis::Y).unwrap();
        let mech = mechanical_frequencies(&m);
        assert_eq!(mech.len(), 2);
        // the bright mode is cooled, the dark one keeps γ
        assert!(mech.iter().any(|f| f.damping > 1.5 * cfg.particles[0].gas_damping));
    }

    #[test]
    fn red_detuning_with_strong_coupling_is_unstable() {
        let mut cfg = defaults().with_detuning(mhz(-0.1));
        cfg.cavity.coupling_scale[1] *= 5.0;
        match build_state_space(&cfg, Axis::Y) {
            Err(Error::Unstable { re, .. }) => assert!(re > 0.0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn degenerate_gap_tracks_effective_coupling() {
        let cfg = defaults().with_detuning(mhz(2.5));
        let m = build_state_space(&cfg, Axis::Y).unwrap();
        let mech = mechanical_frequencies(&m);
        let gap = mech[1].frequency - mech[0].frequency;
        let g = effective_coupling(
            OptoCoupling::real(Axis::Y, m.modes[0].coupling),
            OptoCoupling::real(Axis::Y, m.modes[1].coupling),
            m.modes[0].omega,
            &cfg.cavity,
        );
        // equal shifts keep the pair degenerate: dark mode at Ω, bright at Ω + 2 Re Σ
        let rel = (gap - 2.0 * g.magnitude()).abs() / (2.0 * g.magnitude());
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn lyapunov_matches_equipartition() {
        let mass = 3.27e-18;
        let w = khz(80.0);
        let m = single_oscillator(w, khz(0.6), mass, 300.0).unwrap();
        let p = stationary_covariance(&m).unwrap();
        let x2 = p[(0, 0)] * m.modes[0].zpf().powi(2);
        let expected = BOLTZMANN * 300.0 / (mass * w * w);
        assert!((x2 / expected - 1.0).abs() < 1e-6);
        assert!(p[(0, 1)].abs() < 1e-9 * p[(0, 0)]);
    }

    #[test]
    fn lyapunov_residual_vanishes_for_full_model() {
        let m = build_multi_axis(&defaults(), &Axis::ALL).unwrap();
        let p = stationary_covariance(&m).unwrap();
        let r = &m.drift * &p + &p * m.drift.transpose() + &m.diffusion;
        assert!(r.amax() < 1e-9 * m.diffusion.amax());
    }
}
