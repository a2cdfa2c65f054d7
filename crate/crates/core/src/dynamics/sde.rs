use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::model::{stationary_covariance, StateSpaceModel};
use crate::error::{Error, Result, ValidationError};
use crate::units::TWO_PI;

/// Exact one-step map `x ← Φ x + L ξ` of the linear SDE over `dt`, with
/// `Φ = exp(A dt)` and `L Lᵀ = ∫₀^dt e^{As} D e^{Aᵀs} ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPropagator {
    pub dt: f64,
    pub transition: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    noise_factor: DMatrix<f64>,
}

/// Symmetric square-root factor with negative round-off eigenvalues clamped.
fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut f = eig.eigenvectors;
    for (j, s) in sqrt.iter().enumerate() {
        f.column_mut(j).scale_mut(*s);
    }
    f
}

impl ExactPropagator {
    pub fn new(model: &StateSpaceModel, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(ValidationError::single("dt", "must be positive").into());
        }
        let n = model.dim();
        // Van Loan: exp([[−A, D], [0, Aᵀ]] dt) = [[·, F12], [0, F22]],
        // Φ = F22ᵀ, Q = Φ F12. D is normalised to keep the blocks balanced.
        let sigma = model.diffusion.amax().max(f64::MIN_POSITIVE);
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m.view_mut((0, 0), (n, n)).copy_from(&(-&model.drift * dt));
        m.view_mut((0, n), (n, n)).copy_from(&(&model.diffusion * (dt / sigma)));
        m.view_mut((n, n), (n, n)).copy_from(&(model.drift.transpose() * dt));
        let e = m.exp();
        let transition = e.view((n, n), (n, n)).transpose();
        let f12 = e.view((0, n), (n, n)).into_owned();
        let q = &transition * f12 * sigma;
        let covariance = (&q + q.transpose()) * 0.5;
        if transition.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("matrix exponential overflowed".into()));
        }
        let noise_factor = psd_factor(&covariance);
        Ok(ExactPropagator {
            dt,
            transition,
            covariance,
            noise_factor,
        })
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    /// Advances `state` in place by one step.
    pub fn step<R: Rng>(&self, state: &mut DVector<f64>, work: &mut StepWork, rng: &mut R) {
        for v in work.xi.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        work.next.gemv(1.0, &self.noise_factor, &work.xi, 0.0);
        work.next.gemv(1.0, &self.transition, state, 1.0);
        std::mem::swap(state, &mut work.next);
    }
}

/// Scratch buffers for [`ExactPropagator::step`].
#[derive(Debug, Clone)]
pub struct StepWork {
    xi: DVector<f64>,
    next: DVector<f64>,
}

impl StepWork {
    pub fn new(dim: usize) -> Self {
        StepWork {
            xi: DVector::zeros(dim),
            next: DVector::zeros(dim),
        }
    }
}

/// Draws a state from the stationary distribution of `model`.
pub fn stationary_sample<R: Rng>(model: &StateSpaceModel, rng: &mut R) -> Result<DVector<f64>> {
    let factor = psd_factor(&stationary_covariance(model)?);
    let xi = DVector::from_fn(model.dim(), |_, _| rng.sample(StandardNormal));
    Ok(factor * xi)
}

/// Largest admissible step: a tenth of the fastest mechanical period and of
/// the cavity decay time.
pub fn max_step(model: &StateSpaceModel) -> f64 {
    let mech = TWO_PI / model.max_mech_freq();
    let cav = model.cavity.map_or(f64::INFINITY, |c| 1.0 / c.linewidth);
    0.1 * mech.min(cav)
}

/// Sampled trajectory; `samples[k]` is the time series of state component k.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeTrace {
    pub dt: f64,
    pub seed: u64,
    pub labels: Vec<String>,
    pub samples: Vec<Vec<f64>>,
}

impl TimeTrace {
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|i| self.samples[i].as_slice())
    }
}

/// Integrates `model` from its stationary distribution for `duration`
/// seconds. Bit-for-bit reproducible for fixed `(model, dt, seed)`.
pub fn integrate_sde(model: &StateSpaceModel, duration: f64, dt: f64, seed: u64) -> Result<TimeTrace> {
    let limit = max_step(model);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { dt, limit });
    }
    if !(duration > 0.0) {
        return Err(ValidationError::single("duration", "must be positive").into());
    }
    let steps = (duration / dt).round() as usize;
    let prop = ExactPropagator::new(model, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = stationary_sample(model, &mut rng)?;
    let mut work = StepWork::new(model.dim());
    let mut samples = vec![Vec::with_capacity(steps); model.dim()];
    for _ in 0..steps {
        prop.step(&mut state, &mut work, &mut rng);
        for (col, v) in samples.iter_mut().zip(state.iter()) {
            col.push(*v);
        }
    }
    Ok(TimeTrace {
        dt,
        seed,
        labels: model.labels.clone(),
        samples,
    })
}

const TRACE_MAGIC: &[u8; 8] = b"LVCTRACE";
const TRACE_VERSION: u32 = 1;

/// Binary columnar layout, little-endian: magic, version u32, dt f64,
/// seed u64, label count u32, labels (u32 length + UTF-8), sample count u64,
/// then each column as f64s.
pub fn write_trace<W: Write>(trace: &TimeTrace, mut out: W) -> std::io::Result<()> {
    out.write_all(TRACE_MAGIC)?;
    out.write_all(&TRACE_VERSION.to_le_bytes())?;
    out.write_all(&trace.dt.to_le_bytes())?;
    out.write_all(&trace.seed.to_le_bytes())?;
    out.write_all(&(trace.labels.len() as u32).to_le_bytes())?;
    for l in &trace.labels {
        out.write_all(&(l.len() as u32).to_le_bytes())?;
        out.write_all(l.as_bytes())?;
    }
    out.write_all(&(trace.len() as u64).to_le_bytes())?;
    for col in &trace.samples {
        for v in col {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Parse(format!("truncated trace: {e}")))?;
    Ok(buf)
}

pub fn read_trace<R: Read>(mut input: R) -> Result<TimeTrace> {
    if &read_array::<8, _>(&mut input)? != TRACE_MAGIC {
        return Err(Error::Parse("not a trace file".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != TRACE_VERSION {
        return Err(Error::Parse(format!("unsupported trace version {version}")));
    }
    let dt = f64::from_le_bytes(read_array(&mut input)?);
    let seed = u64::from_le_bytes(read_array(&mut input)?);
    let n_labels = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let mut labels = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let len = u32::from_le_bytes(read_array(&mut input)?) as usize;
        let mut buf = vec![0u8; len];
        input
            .read_exact(&mut buf)
            .map_err(|e| Error::Parse(format!("truncated trace: {e}")))?;
        labels.push(String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))?);
    }
    let n = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let mut samples = Vec::with_capacity(n_labels);
    for _ in 0..n_labels {
        let mut col = Vec::with_capacity(n);
        for _ in 0..n {
            col.push(f64::from_le_bytes(read_array(&mut input)?));
        }
        samples.push(col);
    }
    Ok(TimeTrace {
        dt,
        seed,
        labels,
        samples,
    })
}
