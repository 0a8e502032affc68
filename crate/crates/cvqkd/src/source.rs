//! Passive encoder model: two-laser phase difference, 90-degree-hybrid phase
//! readout with ADC quantization, intensity jitter, VOA, the quadrant/remainder
//! decomposition, and the closed-form state-preparation excess noise.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngSeed;

#[derive(Debug, Error, PartialEq)]
pub enum SourceError {
    #[error("empty input: pulse count must be at least 1")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid noise parameters: {0}")]
    InvalidParams(String),
    #[error("phase out of domain [0, 2pi): {0}")]
    PhaseDomain(f64),
    #[error("indeterminate phase: both hybrid differences are zero")]
    IndeterminatePhase,
}

/// Configuration of the passive two-laser encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PassiveSourceConfig {
    /// Intensity of laser 1 (metadata; the phase statistics are intensity-free).
    pub mu1: f64,
    /// Intensity of laser 2.
    pub mu2: f64,
    /// Coherent signal amplitude after the VOA.
    pub signal_amplitude: f64,
    /// VOA attenuation in dB (>= 0); transmittance t0 = 10^(-dB/10).
    pub voa_attenuation_db: f64,
    /// Relative standard deviation of the pulse intensity jitter.
    pub intensity_rel_std: f64,
    /// ADC resolution in bits for the hybrid readout.
    pub adc_bits: u32,
    /// Pulse repetition rate in Hz (metadata only).
    pub repetition_rate_hz: f64,
    /// Pulse width in seconds (metadata only).
    pub pulse_width_s: f64,
}

impl Default for PassiveSourceConfig {
    fn default() -> Self {
        Self {
            mu1: 1.0,
            mu2: 1.0,
            signal_amplitude: 0.8,
            voa_attenuation_db: 70.0,
            // measured 0.0024 std at mean 0.991
            intensity_rel_std: 0.0024 / 0.991,
            adc_bits: 8,
            repetition_rate_hz: 20e6,
            pulse_width_s: 20e-9,
        }
    }
}

impl PassiveSourceConfig {
    pub fn validate(&self) -> Result<(), SourceError> {
        let mut problems = Vec::new();
        if !(self.signal_amplitude > 0.0) {
            problems.push(format!("signal_amplitude must be > 0, got {}", self.signal_amplitude));
        }
        if !(self.voa_attenuation_db >= 0.0) {
            problems.push(format!("voa_attenuation_db must be >= 0, got {}", self.voa_attenuation_db));
        }
        if !(1..=16).contains(&self.adc_bits) {
            problems.push(format!("adc_bits must be in [1, 16], got {}", self.adc_bits));
        }
        if !(self.intensity_rel_std >= 0.0) {
            problems.push(format!("intensity_rel_std must be >= 0, got {}", self.intensity_rel_std));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SourceError::InvalidConfig(problems.join("; ")))
        }
    }

    /// VOA transmittance t0 = 10^(-dB/10).
    pub fn voa_transmittance(&self) -> f64 {
        10f64.powf(-self.voa_attenuation_db / 10.0)
    }
}

/// One emitted pulse. `theta` is the phase Alice *measured* (quantized by the
/// hybrid ADC readout), since her announcements derive from her measurement;
/// the residual quantization error acts as source noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalRecord {
    /// Measured phase in [0, 2pi).
    pub theta: f64,
    /// Secret quadrant index, floor(theta / (pi/2)).
    pub x: u8,
    /// Announced remainder in [0, pi/2).
    pub phi: f64,
    /// Pulse amplitude including intensity jitter.
    pub amplitude: f64,
}

/// A record together with the true (unquantized) interference phase, for
/// resolution diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmittedPulse {
    pub theta_true: f64,
    pub record: SignalRecord,
}

/// Parameters of the source excess-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    /// VOA transmittance in [0, 1].
    pub t0: f64,
    /// Alice's local detection efficiency in (0, 1].
    pub t_aq: f64,
    /// Detector excess-noise variance, >= 0.
    pub e_aq: f64,
    /// Classical-light intensity |mu_s|^2, > 0.
    pub mu_s_sq: f64,
}

impl NoiseModelParams {
    pub fn validate(&self) -> Result<(), SourceError> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.t0) {
            problems.push(format!("t0 must be in [0, 1], got {}", self.t0));
        }
        if !(self.t_aq > 0.0 && self.t_aq <= 1.0) {
            problems.push(format!("t_aq must be in (0, 1], got {}", self.t_aq));
        }
        if !(self.e_aq >= 0.0) {
            problems.push(format!("e_aq must be >= 0, got {}", self.e_aq));
        }
        if !(self.mu_s_sq > 0.0) {
            problems.push(format!("mu_s_sq must be > 0, got {}", self.mu_s_sq));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SourceError::InvalidParams(problems.join("; ")))
        }
    }
}

/// The four quantized detector outputs of the 90-degree hybrid readout.
///
/// The ADC digitizes the balanced differences, so the pairs are stored as
/// symmetric grid values: `i1 - i2` is proportional to sin(theta) and
/// `q1 - q2` to cos(theta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridReading {
    pub i1: f64,
    pub i2: f64,
    pub q1: f64,
    pub q2: f64,
}

/// Draws `n` interference phases theta = (phi1 - phi2) mod 2pi with phi1,
/// phi2 independent uniform on [0, 2pi); theta is again uniform on [0, 2pi).
pub fn sample_theta(n: usize, seed: RngSeed) -> Result<Vec<f64>, SourceError> {
    if n == 0 {
        return Err(SourceError::EmptyInput);
    }
    let mut rng = seed.rng();
    Ok((0..n)
        .map(|_| {
            let phi1 = rng.random::<f64>() * TAU;
            let phi2 = rng.random::<f64>() * TAU;
            (phi1 - phi2).rem_euclid(TAU)
        })
        .collect())
}

/// Uniform mid-rise quantizer with `2^bits` levels spanning
/// [-full_scale, +full_scale]; out-of-range inputs clamp to the extreme
/// levels. Step size is `2 * full_scale / 2^bits`.
pub fn quantize_adc(value: f64, full_scale: f64, bits: u32) -> f64 {
    debug_assert!(bits >= 1 && full_scale > 0.0);
    let levels = (1u64 << bits) as f64;
    let step = 2.0 * full_scale / levels;
    let idx = ((value + full_scale) / step).floor().clamp(0.0, levels - 1.0);
    -full_scale + (idx + 0.5) * step
}

/// Simulates the quantized hybrid readout of a pulse with true phase `theta`.
pub fn hybrid_readout(theta: f64, adc_bits: u32) -> HybridReading {
    let s = quantize_adc(theta.sin(), 1.0, adc_bits);
    let c = quantize_adc(theta.cos(), 1.0, adc_bits);
    HybridReading {
        i1: s,
        i2: -s,
        q1: c,
        q2: -c,
    }
}

/// Recovers the phase from a hybrid reading: atan2(I1-I2, Q1-Q2) mapped into
/// [0, 2pi).
pub fn phase_from_hybrid(r: &HybridReading) -> Result<f64, SourceError> {
    let di = r.i1 - r.i2;
    let dq = r.q1 - r.q2;
    if di == 0.0 && dq == 0.0 {
        return Err(SourceError::IndeterminatePhase);
    }
    Ok(di.atan2(dq).rem_euclid(TAU))
}

/// Splits a phase in [0, 2pi) into its quadrant x = floor(theta / (pi/2)) and
/// remainder phi = theta - x*pi/2. Exact quadrant boundaries map to the upper
/// quadrant by floor semantics.
pub fn decompose_phase(theta: f64) -> Result<(u8, f64), SourceError> {
    if !(0.0..TAU).contains(&theta) {
        return Err(SourceError::PhaseDomain(theta));
    }
    let x = ((theta / FRAC_PI_2).floor() as u8).min(3);
    let phi = theta - f64::from(x) * FRAC_PI_2;
    // floating-point guard at the 2pi boundary
    let phi = phi.clamp(0.0, FRAC_PI_2 - f64::EPSILON);
    Ok((x, phi))
}

/// Emits `n` pulses: samples the two-laser phase, runs the quantized hybrid
/// readout, decomposes the *measured* phase into (x, phi), and applies
/// multiplicative Gaussian intensity jitter to the amplitude.
pub fn emit_pulses_traced(
    cfg: &PassiveSourceConfig,
    n: usize,
    seed: RngSeed,
) -> Result<Vec<EmittedPulse>, SourceError> {
    if n == 0 {
        return Err(SourceError::EmptyInput);
    }
    cfg.validate()?;
    let thetas = sample_theta(n, seed)?;
    let mut jitter_rng = seed.substream(1);
    thetas
        .into_iter()
        .map(|theta_true| {
            let reading = hybrid_readout(theta_true, cfg.adc_bits);
            let theta = phase_from_hybrid(&reading)?;
            let (x, phi) = decompose_phase(theta)?;
            let jitter: f64 = jitter_rng.sample(StandardNormal);
            let amplitude = cfg.signal_amplitude * (1.0 + cfg.intensity_rel_std * jitter);
            Ok(EmittedPulse {
                theta_true,
                record: SignalRecord { theta, x, phi, amplitude },
            })
        })
        .collect()
}

/// [`emit_pulses_traced`] without the true-phase diagnostics.
pub fn emit_pulses(
    cfg: &PassiveSourceConfig,
    n: usize,
    seed: RngSeed,
) -> Result<Vec<SignalRecord>, SourceError> {
    Ok(emit_pulses_traced(cfg, n, seed)?
        .into_iter()
        .map(|p| p.record)
        .collect())
}

/// State-preparation excess noise of the passive source, derived from the
/// linear mode equations of the noise model:
///
/// ```text
/// eps = 2 t0 |mu_s|^2 (1 + E_aq) / (|mu_s|^2 t_aq + 4 + 4 E_aq)
/// ```
///
/// This is `V_{q1|q2} - 1` for the chain realized by
/// [`crate::gaussian::monte_carlo_source_chain`].
pub fn excess_noise(p: &NoiseModelParams) -> Result<f64, SourceError> {
    p.validate()?;
    let d = p.mu_s_sq * p.t_aq + 4.0 + 4.0 * p.e_aq;
    Ok(2.0 * p.t0 * p.mu_s_sq * (1.0 + p.e_aq) / d)
}

/// Large-|mu_s| limit of [`excess_noise`]: `2 t0 / t_aq`.
pub fn excess_noise_approx(p: &NoiseModelParams) -> Result<f64, SourceError> {
    p.validate()?;
    Ok(2.0 * p.t0 / p.t_aq)
}

/// Alice's optimal linear estimator coefficient of q1 from q2:
/// `beta = |mu_s|^2 sqrt(2 t0 t_aq) / (|mu_s|^2 t_aq + 4 + 4 E_aq)`.
pub fn beta_estimator(p: &NoiseModelParams) -> Result<f64, SourceError> {
    p.validate()?;
    let d = p.mu_s_sq * p.t_aq + 4.0 + 4.0 * p.e_aq;
    Ok(p.mu_s_sq * (2.0 * p.t0 * p.t_aq).sqrt() / d)
}

/// Conservative worst-case phase error of the quantized hybrid readout on the
/// unit circle: `sqrt(2) * 2^(1-bits) / 2`, i.e. `sqrt(2)/128` at 8 bits.
pub fn phase_resolution_bound(bits: u32) -> f64 {
    2f64.sqrt() * 2f64.powi(1 - bits as i32) / 2.0
}

/// Smallest signed distance between two phases on the circle.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}
