//! Lossy Gaussian channel and heterodyne receiver.
//!
//! Receiver convention (pinned once, used by the sampler, the key map, and
//! the key-rate constraint generator): the heterodyne outcome mean equals the
//! transmitted complex amplitude, and the vacuum outcome has per-quadrature
//! variance 1/2. Channel excess noise `xi` is channel-input referred in
//! shot-noise units with vacuum = 1, so the outcome per-quadrature variance
//! is (2 + T*xi)/4. The source model in [`crate::gaussian`] uses vacuum
//! variance 1; the bridge between the conventions is that single factor of
//! two.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remap::ComplexOutcome;
use crate::rng::RngSeed;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("empty input: sample count must be at least 1")]
    EmptyInput,
    #[error("invalid channel parameters: {0}")]
    InvalidParams(String),
}

/// Fiber channel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub distance_km: f64,
    /// Fiber attenuation rate, dB/km.
    pub loss_db_per_km: f64,
    /// Channel excess noise, shot-noise units, channel-input referred.
    pub excess_noise_xi: f64,
    /// Additional untrusted inline loss, dB.
    pub extra_attenuation_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            distance_km: 0.0,
            loss_db_per_km: 0.2,
            excess_noise_xi: 0.01,
            extra_attenuation_db: 0.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let mut problems = Vec::new();
        if !(self.distance_km >= 0.0) {
            problems.push(format!("distance_km must be >= 0, got {}", self.distance_km));
        }
        if !(self.loss_db_per_km >= 0.0) {
            problems.push(format!("loss_db_per_km must be >= 0, got {}", self.loss_db_per_km));
        }
        if !(self.excess_noise_xi >= 0.0) {
            problems.push(format!("excess_noise_xi must be >= 0, got {}", self.excess_noise_xi));
        }
        if !(self.extra_attenuation_db >= 0.0) {
            problems.push(format!(
                "extra_attenuation_db must be >= 0, got {}",
                self.extra_attenuation_db
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(ChannelError::InvalidParams(problems.join("; ")))
        }
    }
}

/// Channel transmittance T = 10^(-(loss*distance + extra)/10).
pub fn transmittance(c: &ChannelParams) -> f64 {
    10f64.powf(-(c.loss_db_per_km * c.distance_km + c.extra_attenuation_db) / 10.0)
}

/// Per-quadrature variance of the heterodyne outcome: (2 + T*xi)/4.
pub fn heterodyne_sigma_sq(c: &ChannelParams) -> f64 {
    (2.0 + transmittance(c) * c.excess_noise_xi) / 4.0
}

/// Draws `n` heterodyne outcomes for a coherent pulse of the given amplitude
/// and phase sent through the channel. Outcomes are complex Gaussian with
/// mean sqrt(T)*amplitude*e^{i*sent_phase} and per-quadrature variance
/// [`heterodyne_sigma_sq`].
pub fn heterodyne_sample(
    sent_phase: f64,
    amplitude: f64,
    c: &ChannelParams,
    seed: RngSeed,
    n: usize,
) -> Result<Vec<ComplexOutcome>, ChannelError> {
    if n == 0 {
        return Err(ChannelError::EmptyInput);
    }
    c.validate()?;
    let t = transmittance(c);
    let mean_re = t.sqrt() * amplitude * sent_phase.cos();
    let mean_im = t.sqrt() * amplitude * sent_phase.sin();
    let sigma = heterodyne_sigma_sq(c).sqrt();
    let mut rng = seed.rng();
    Ok((0..n)
        .map(|_| ComplexOutcome {
            re: mean_re + sigma * rng.sample::<f64, _>(StandardNormal),
            im: mean_im + sigma * rng.sample::<f64, _>(StandardNormal),
        })
        .collect())
}

/// Analytic conditional expectations of the Fock-space observables used as
/// key-rate constraints, given the sent quadrant.
///
/// Quadrature observables are defined as q = (a + a†)/2 and p = (a - a†)/(2i)
/// so that <q> + i<p> equals the heterodyne outcome mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSet {
    pub q: f64,
    pub p: f64,
    pub n: f64,
    pub n_sq: f64,
}

/// Moments of the channel-output state for sent quadrant `x`: a displaced
/// thermal state with displacement sqrt(T)*amplitude*e^{i*x*pi/2} and thermal
/// occupation T*xi/2.
pub fn first_second_moments(x: u8, amplitude: f64, c: &ChannelParams) -> MomentSet {
    let t = transmittance(c);
    let phase = f64::from(x) * std::f64::consts::FRAC_PI_2;
    let d_re = t.sqrt() * amplitude * phase.cos();
    let d_im = t.sqrt() * amplitude * phase.sin();
    let d_sq = d_re * d_re + d_im * d_im;
    let nbar = t * c.excess_noise_xi / 2.0;
    let n = d_sq + nbar;
    MomentSet {
        q: d_re,
        p: d_im,
        n,
        n_sq: n * n + d_sq * (2.0 * nbar + 1.0) + nbar * (nbar + 1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{mean, variance};

    #[test]
    fn transmittance_examples() {
        let c = ChannelParams { distance_km: 0.0, extra_attenuation_db: 0.0, ..Default::default() };
        assert_eq!(transmittance(&c), 1.0);
        let c = ChannelParams { distance_km: 50.0, ..Default::default() };
        assert!((transmittance(&c) - 0.1).abs() < 1e-15);
        let c = ChannelParams { distance_km: 100.0, ..Default::default() };
        assert!((transmittance(&c) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn vacuum_heterodyne_variance() {
        let c = ChannelParams {
            distance_km: 0.0,
            excess_noise_xi: 0.0,
            ..Default::default()
        };
        let ys = heterodyne_sample(0.0, 0.0, &c, RngSeed(30), 1_000_000).unwrap();
        let re: Vec<f64> = ys.iter().map(|y| y.re).collect();
        let im: Vec<f64> = ys.iter().map(|y| y.im).collect();
        assert!((variance(&re) - 0.5).abs() / 0.5 < 0.01);
        assert!((variance(&im) - 0.5).abs() / 0.5 < 0.01);
    }

    #[test]
    fn identity_channel_mean() {
        let c = ChannelParams {
            distance_km: 0.0,
            excess_noise_xi: 0.0,
            ..Default::default()
        };
        let n = 1_000_000;
        let ys = heterodyne_sample(0.0, 1.0, &c, RngSeed(31), n).unwrap();
        let re: Vec<f64> = ys.iter().map(|y| y.re).collect();
        let im: Vec<f64> = ys.iter().map(|y| y.im).collect();
        let se = (0.5f64 / n as f64).sqrt();
        assert!((mean(&re) - 1.0).abs() < 3.0 * se);
        assert!(mean(&im).abs() < 3.0 * se);
    }

    #[test]
    fn noisy_channel_variance() {
        let c = ChannelParams {
            distance_km: 50.0,
            excess_noise_xi: 0.05,
            ..Default::default()
        };
        let expected = (2.0 + 0.1 * 0.05) / 4.0;
        let ys = heterodyne_sample(1.0, 0.8, &c, RngSeed(32), 1_000_000).unwrap();
        let re: Vec<f64> = ys.iter().map(|y| y.re).collect();
        assert!((variance(&re) - expected).abs() / expected < 0.01);
    }

    #[test]
    fn phase_covariance() {
        // rotating the sent phase rotates the outcome mean, variances fixed
        let c = ChannelParams { distance_km: 10.0, ..Default::default() };
        let n = 1_000_000;
        let delta = 0.7;
        let a = heterodyne_sample(0.2, 1.0, &c, RngSeed(33), n).unwrap();
        let b = heterodyne_sample(0.2 + delta, 1.0, &c, RngSeed(34), n).unwrap();
        let rot: Vec<ComplexOutcome> = a
            .iter()
            .map(|y| ComplexOutcome {
                re: delta.cos() * y.re - delta.sin() * y.im,
                im: delta.sin() * y.re + delta.cos() * y.im,
            })
            .collect();
        let m_rot = mean(&rot.iter().map(|y| y.re).collect::<Vec<_>>());
        let m_b = mean(&b.iter().map(|y| y.re).collect::<Vec<_>>());
        let se = (heterodyne_sigma_sq(&c) / n as f64).sqrt();
        assert!((m_rot - m_b).abs() < 6.0 * se);
        let v_rot = variance(&rot.iter().map(|y| y.re).collect::<Vec<_>>());
        let v_b = variance(&b.iter().map(|y| y.re).collect::<Vec<_>>());
        assert!((v_rot - v_b).abs() / v_b < 0.01);
    }

    #[test]
    fn moments_coherent_state() {
        let c = ChannelParams {
            distance_km: 0.0,
            excess_noise_xi: 0.0,
            ..Default::default()
        };
        let m = first_second_moments(0, 1.0, &c);
        assert!((m.q - 1.0).abs() < 1e-15);
        assert!(m.p.abs() < 1e-15);
        assert!((m.n - 1.0).abs() < 1e-15);
        assert!((m.n_sq - 2.0).abs() < 1e-15); // <n^2> = |d|^4 + |d|^2
    }

    #[test]
    fn moments_dark_channel() {
        let c = ChannelParams {
            distance_km: 0.0,
            extra_attenuation_db: 1e6,
            excess_noise_xi: 0.0,
            ..Default::default()
        };
        let m = first_second_moments(1, 1.0, &c);
        assert!(m.n.abs() < 1e-15);
        assert!(m.q.abs() < 1e-15 && m.p.abs() < 1e-15);
    }

    #[test]
    fn sampler_matches_moment_generator() {
        let c = ChannelParams {
            distance_km: 35.0,
            excess_noise_xi: 0.04,
            ..Default::default()
        };
        let n = 1_000_000;
        for x in 0..4u8 {
            let m = first_second_moments(x, 0.8, &c);
            let phase = f64::from(x) * std::f64::consts::FRAC_PI_2;
            let ys = heterodyne_sample(phase, 0.8, &c, RngSeed(35 + u64::from(x)), n).unwrap();
            let re: Vec<f64> = ys.iter().map(|y| y.re).collect();
            let im: Vec<f64> = ys.iter().map(|y| y.im).collect();
            let se = (heterodyne_sigma_sq(&c) / n as f64).sqrt();
            assert!((mean(&re) - m.q).abs() < 3.0 * se, "x = {x}");
            assert!((mean(&im) - m.p).abs() < 3.0 * se, "x = {x}");
        }
    }
}
