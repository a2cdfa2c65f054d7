//! Plain-text configuration files.
//!
//! TOML with sections `[particle.N]`, `[cavity]` and `[noise]`. Field names
//! match [`ParticleSpec`], [`CavitySpec`] and [`NoiseSpec`]; frequencies and
//! rates are written in Hz and converted to rad/s on load.
//!
//! ```toml
//! [cavity]
//! linewidth = 600e3
//! detuning = 1.2e6
//! wavelength = 1.55e-6
//! coupling_scale = [0.0, 32614.3, 57766.9]
//! ref_power = 0.13
//!
//! [particle.1]
//! radius = 75e-9
//! power = 0.13
//! position = 3.875e-7
//! mech_freq = [59e3, 80e3, 22e3]
//! gas_damping = 600.0
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{defaults, CavitySpec, Config, NoiseSpec, ParticleSpec, Polarization};
use crate::units::{hz, to_hz};

fn default_density() -> f64 {
    defaults::DENSITY
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParticleFile {
    radius: f64,
    #[serde(default = "default_density")]
    density: f64,
    #[serde(default)]
    charge: i64,
    power: f64,
    position: f64,
    mech_freq: [f64; 3],
    gas_damping: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CavityFile {
    linewidth: f64,
    detuning: f64,
    wavelength: f64,
    coupling_scale: [f64; 3],
    ref_power: f64,
    #[serde(default)]
    polarization: Polarization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    length: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    cavity: CavityFile,
    #[serde(default)]
    noise: NoiseSpec,
    particle: BTreeMap<String, ParticleFile>,
}

impl From<&ParticleSpec> for ParticleFile {
    fn from(p: &ParticleSpec) -> Self {
        ParticleFile {
            radius: p.radius,
            density: p.density,
            charge: p.charge,
            power: p.power,
            position: p.position,
            mech_freq: p.mech_freq.map(to_hz),
            gas_damping: to_hz(p.gas_damping),
        }
    }
}

impl From<ParticleFile> for ParticleSpec {
    fn from(p: ParticleFile) -> Self {
        ParticleSpec {
            radius: p.radius,
            density: p.density,
            charge: p.charge,
            power: p.power,
            position: p.position,
            mech_freq: p.mech_freq.map(hz),
            gas_damping: hz(p.gas_damping),
        }
    }
}

/// Parses a configuration from TOML text. Validation is separate; see
/// [`crate::params::validate_config`].
pub fn parse_config(text: &str) -> Result<Config> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let mut indexed = Vec::with_capacity(file.particle.len());
    for (key, p) in file.particle {
        let index: usize = key
            .parse()
            .map_err(|_| Error::Parse(format!("particle section `{key}` is not a number")))?;
        indexed.push((index, ParticleSpec::from(p)));
    }
    indexed.sort_by_key(|(i, _)| *i);
    let c = file.cavity;
    Ok(Config {
        particles: indexed.into_iter().map(|(_, p)| p).collect(),
        cavity: CavitySpec {
            linewidth: hz(c.linewidth),
            detuning: hz(c.detuning),
            wavelength: c.wavelength,
            coupling_scale: c.coupling_scale.map(hz),
            ref_power: c.ref_power,
            polarization: c.polarization,
            length: c.length,
        },
        noise: file.noise,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Serializes a configuration back to the file schema.
pub fn to_toml(config: &Config) -> String {
    let c = &config.cavity;
    let file = ConfigFile {
        cavity: CavityFile {
            linewidth: to_hz(c.linewidth),
            detuning: to_hz(c.detuning),
            wavelength: c.wavelength,
            coupling_scale: c.coupling_scale.map(to_hz),
            ref_power: c.ref_power,
            polarization: c.polarization,
            length: c.length,
        },
        noise: config.noise.clone(),
        particle: config
            .particles
            .iter()
            .enumerate()
            .map(|(i, p)| ((i + 1).to_string(), ParticleFile::from(p)))
            .collect(),
    };
    toml::to_string(&file).expect("configuration is always representable as TOML")
}
