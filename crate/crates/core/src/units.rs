//! Physical constants and unit helpers.

use std::f64::consts::PI;

pub const TWO_PI: f64 = 2.0 * PI;

/// Boltzmann constant (J/K).
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Elementary charge (C).
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity (F/m).
pub const VACUUM_PERMITTIVITY: f64 = 8.854_187_812_8e-12;

/// Ordinary frequency (Hz) to angular frequency (rad/s).
#[inline]
pub fn hz(nu: f64) -> f64 {
    TWO_PI * nu
}

#[inline]
pub fn khz(nu: f64) -> f64 {
    hz(nu * 1e3)
}

#[inline]
pub fn mhz(nu: f64) -> f64 {
    hz(nu * 1e6)
}

/// Angular frequency (rad/s) to ordinary frequency (Hz).
#[inline]
pub fn to_hz(omega: f64) -> f64 {
    omega / TWO_PI
}

#[inline]
pub fn to_khz(omega: f64) -> f64 {
    to_hz(omega) * 1e-3
}

/// Thermal quadrature variance `2n + 1 = coth(hbar Ω / 2 k_B T)`.
pub fn thermal_quadrature_variance(omega: f64, temperature: f64) -> f64 {
    if temperature <= 0.0 {
        return 1.0;
    }
    let x = HBAR * omega / (2.0 * BOLTZMANN * temperature);
    if x < 1e-6 {
        // coth x = 1/x + x/3 + ...
        1.0 / x + x / 3.0
    } else {
        1.0 / x.tanh()
    }
}
