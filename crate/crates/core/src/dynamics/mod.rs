//! Linearised Langevin dynamics of trapped particles coupled to one cavity
//! mode.
//!
//! The state is ordered per mechanical mode as `(q, p)` followed by the
//! cavity quadratures `(X, Y)`, with `q = b + b†`, `p = −i(b − b†)`,
//! `X = a + a†` and `Y = −i(a − a†)` in the frame rotating at the tweezer
//! frequency. Drift:
//!
//! ```text
//! dq/dt = Ω p − γ/2 q
//! dp/dt = −Ω q − γ/2 p − 2g X
//! dX/dt = Δ Y − κ/2 X
//! dY/dt = −Δ X − κ/2 Y − 2 Σ_j g_j q_j
//! ```
//!
//! Damping is split symmetrically between `q` and `p`, so an uncoupled mode
//! has eigenvalues exactly `−γ/2 ± iΩ`. The diffusion is `γ(2n̄ + 1)` on each
//! mechanical quadrature and `κ` (vacuum input) on each cavity quadrature.

mod model;
mod reduction;
mod sde;
mod spectra;

pub use model::{
    build_multi_axis, build_state_space, check_stability, eigenfrequencies, mechanical_frequencies,
    single_oscillator, stationary_covariance, CavityMode, MechanicalMode, ModeFrequency, StateSpaceModel,
};
pub use reduction::{effective_model_reduction, linearized_mechanical_frequencies, Reduction};
pub use sde::{
    integrate_sde, max_step, read_trace, stationary_sample, write_trace, ExactPropagator, StepWork, TimeTrace,
};
pub use spectra::{
    heterodyne_signal, psd_frequency_domain, welch_complex, welch_real, write_psd_csv, Observable, PSDCurve,
    Spectrum,
};
