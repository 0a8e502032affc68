//! Phase-space primitives and the Monte-Carlo oracle.
//!
//! Convention used throughout this module: the vacuum state has quadrature
//! variance exactly [`VACUUM_VARIANCE`] = 1. Every analytic variance in the
//! source model is expressed in these units; the heterodyne receiver in
//! [`crate::channel`] uses a variance-1/2 outcome convention and the bridge
//! between the two is the single factor of two documented there.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::rng::RngSeed;
use crate::source::NoiseModelParams;

/// Vacuum quadrature variance under the source-model convention.
pub const VACUUM_VARIANCE: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum GaussianError {
    #[error("empty input: sample count must be at least 1")]
    EmptyInput,
    #[error("inputs must have equal lengths of at least {min}, got {a} and {b}")]
    LengthMismatch { a: usize, b: usize, min: usize },
    #[error("degenerate regressor: second moment of q2 is zero")]
    DegenerateRegressor,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// A single two-quadrature sample (q, p).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSample {
    pub q: f64,
    pub p: f64,
}

/// A lossless beamsplitter with transmittance in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamsplitterSpec {
    transmittance: f64,
}

impl BeamsplitterSpec {
    pub fn new(transmittance: f64) -> Result<Self, GaussianError> {
        if !(0.0..=1.0).contains(&transmittance) || !transmittance.is_finite() {
            return Err(GaussianError::InvalidParams(format!(
                "transmittance must be in [0, 1], got {transmittance}"
            )));
        }
        Ok(Self { transmittance })
    }

    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }
}

/// Draws `n` i.i.d. vacuum samples: both quadratures Gaussian, mean 0,
/// variance [`VACUUM_VARIANCE`].
pub fn sample_vacuum(n: usize, seed: RngSeed) -> Result<Vec<QuadratureSample>, GaussianError> {
    if n == 0 {
        return Err(GaussianError::EmptyInput);
    }
    let mut rng = seed.rng();
    Ok((0..n)
        .map(|_| QuadratureSample {
            q: rng.sample(StandardNormal),
            p: rng.sample(StandardNormal),
        })
        .collect())
}

/// Orthogonal beamsplitter mixing of two input modes:
/// `out_a = sqrt(t) a + sqrt(1-t) b`, `out_b = sqrt(1-t) a - sqrt(t) b`,
/// applied per quadrature.
pub fn apply_beamsplitter(
    in_a: QuadratureSample,
    in_b: QuadratureSample,
    spec: BeamsplitterSpec,
) -> (QuadratureSample, QuadratureSample) {
    let t = spec.transmittance();
    let (ct, cr) = (t.sqrt(), (1.0 - t).sqrt());
    let out_a = QuadratureSample {
        q: ct * in_a.q + cr * in_b.q,
        p: ct * in_a.p + cr * in_b.p,
    };
    let out_b = QuadratureSample {
        q: cr * in_a.q - ct * in_b.q,
        p: cr * in_a.p - ct * in_b.p,
    };
    (out_a, out_b)
}

/// Realizes the two linear mode equations of the passive-source model and
/// returns `n` paired samples of (q1, q2).
///
/// `q1` is the Q quadrature of the attenuated signal leaving Alice's lab,
/// `q2` the quadrature recorded by her local detector:
///
/// ```text
/// q1 = sqrt(t0/2) qs - sqrt(t0/2) qv1 - sqrt(1-t0) qv3
/// q2 = (sqrt(t_aq)/2) qs + (sqrt(t_aq)/2) qv1 + sqrt(t_aq/2) qv2
///      - sqrt(1-t_aq) q_aq + e_aq
/// ```
///
/// where `qs` has mean `|mu_s|` and variance 1, the `qv*`/`q_aq` modes are
/// vacuum, and `e_aq` is detector noise with variance `E_aq`.
pub fn monte_carlo_source_chain(
    params: &NoiseModelParams,
    n: usize,
    seed: RngSeed,
) -> Result<(Vec<f64>, Vec<f64>), GaussianError> {
    if n == 0 {
        return Err(GaussianError::EmptyInput);
    }
    params
        .validate()
        .map_err(|e| GaussianError::InvalidParams(e.to_string()))?;

    let mu_s = params.mu_s_sq.sqrt();
    let c_s1 = (params.t0 / 2.0).sqrt();
    let c_v3 = (1.0 - params.t0).sqrt();
    let c_s2 = params.t_aq.sqrt() / 2.0;
    let c_v2 = (params.t_aq / 2.0).sqrt();
    let c_aq = (1.0 - params.t_aq).sqrt();
    let sigma_e = params.e_aq.sqrt();

    let mut rng = seed.rng();
    let mut q1 = Vec::with_capacity(n);
    let mut q2 = Vec::with_capacity(n);
    for _ in 0..n {
        let qs: f64 = mu_s + rng.sample::<f64, _>(StandardNormal);
        let qv1: f64 = rng.sample(StandardNormal);
        let qv2: f64 = rng.sample(StandardNormal);
        let qv3: f64 = rng.sample(StandardNormal);
        let qaq: f64 = rng.sample(StandardNormal);
        let eaq: f64 = sigma_e * rng.sample::<f64, _>(StandardNormal);
        q1.push(c_s1 * qs - c_s1 * qv1 - c_v3 * qv3);
        q2.push(c_s2 * qs + c_s2 * qv1 + c_v2 * qv2 - c_aq * qaq + eaq);
    }
    Ok((q1, q2))
}

/// Alice's residual uncertainty on `q1` after her optimal linear estimate
/// from `q2`: returns `min over beta of mean((q1 - beta*q2)^2)`.
///
/// The minimizing coefficient is `beta = <q1 q2> / <q2^2>` in uncentered
/// sample moments, matching the estimator of the source noise model.
pub fn conditional_variance_oracle(q1: &[f64], q2: &[f64]) -> Result<f64, GaussianError> {
    const MIN_LEN: usize = 1_000;
    if q1.len() != q2.len() || q1.len() < MIN_LEN {
        return Err(GaussianError::LengthMismatch {
            a: q1.len(),
            b: q2.len(),
            min: MIN_LEN,
        });
    }
    let n = q1.len() as f64;
    let m12: f64 = q1.iter().zip(q2).map(|(a, b)| a * b).sum::<f64>() / n;
    let m22: f64 = q2.iter().map(|b| b * b).sum::<f64>() / n;
    if m22 == 0.0 {
        return Err(GaussianError::DegenerateRegressor);
    }
    let beta = m12 / m22;
    Ok(q1
        .iter()
        .zip(q2)
        .map(|(a, b)| {
            let r = a - beta * b;
            r * r
        })
        .sum::<f64>()
        / n)
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance about the sample mean (population normalization).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    const N: usize = 1_000_000;

    #[test]
    fn vacuum_moments() {
        let samples = sample_vacuum(N, RngSeed(1)).unwrap();
        let q: Vec<f64> = samples.iter().map(|s| s.q).collect();
        let p: Vec<f64> = samples.iter().map(|s| s.p).collect();
        assert!(mean(&q).abs() < 0.005);
        assert!(mean(&p).abs() < 0.005);
        assert!((variance(&q) - 1.0).abs() < 0.01);
        assert!((variance(&p) - 1.0).abs() < 0.01);
    }

    #[test]
    fn vacuum_rejects_empty() {
        assert_eq!(sample_vacuum(0, RngSeed(1)), Err(GaussianError::EmptyInput));
    }

    #[test]
    fn vacuum_deterministic() {
        let a = sample_vacuum(100, RngSeed(9)).unwrap();
        let b = sample_vacuum(100, RngSeed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beamsplitter_identity_passthrough() {
        let a = QuadratureSample { q: 2.0, p: 0.0 };
        let b = QuadratureSample { q: 0.3, p: 0.0 };
        let (oa, ob) = apply_beamsplitter(a, b, BeamsplitterSpec::new(1.0).unwrap());
        assert_eq!(oa, a);
        assert_eq!(ob.q, -0.3);
    }

    #[test]
    fn beamsplitter_symmetric_interference() {
        let a = QuadratureSample { q: 1.0, p: 0.0 };
        let (oa, ob) = apply_beamsplitter(a, a, BeamsplitterSpec::new(0.5).unwrap());
        assert!((oa.q - 2f64.sqrt()).abs() < 1e-12);
        assert!(ob.q.abs() < 1e-12);
    }

    #[test]
    fn beamsplitter_preserves_vacuum_variance() {
        let spec = BeamsplitterSpec::new(0.5).unwrap();
        let ins_a = sample_vacuum(N, RngSeed(2)).unwrap();
        let ins_b = sample_vacuum(N, RngSeed(3)).unwrap();
        let (qa, qb): (Vec<f64>, Vec<f64>) = ins_a
            .iter()
            .zip(&ins_b)
            .map(|(&a, &b)| {
                let (oa, ob) = apply_beamsplitter(a, b, spec);
                (oa.q, ob.q)
            })
            .unzip();
        assert!((variance(&qa) - 1.0).abs() < 0.01);
        assert!((variance(&qb) - 1.0).abs() < 0.01);
        // second-moment conservation
        assert!((variance(&qa) + variance(&qb) - 2.0).abs() < 0.02);
    }

    #[test]
    fn chain_blocked_signal_is_vacuum() {
        let params = NoiseModelParams {
            t0: 0.0,
            t_aq: 0.6,
            e_aq: 0.1,
            mu_s_sq: 1e4,
        };
        let (q1, _) = monte_carlo_source_chain(&params, N, RngSeed(4)).unwrap();
        assert!((variance(&q1) - 1.0).abs() < 0.01);
        assert!(mean(&q1).abs() < 0.01);
    }

    #[test]
    fn chain_unit_detection_variance() {
        // E_aq = 0, t_aq = 1: Var(q2) = 1/4 + 1/4 + 1/2 = 1.
        let params = NoiseModelParams {
            t0: 1e-3,
            t_aq: 1.0,
            e_aq: 0.0,
            mu_s_sq: 1e4,
        };
        let (_, q2) = monte_carlo_source_chain(&params, N, RngSeed(5)).unwrap();
        assert!((variance(&q2) - 1.0).abs() < 0.01);
        let expected_mean = params.t_aq.sqrt() / 2.0 * params.mu_s_sq.sqrt();
        assert!((mean(&q2) - expected_mean).abs() / expected_mean < 1e-4);
    }

    #[test]
    fn chain_covariance_matches_linear_model() {
        let params = NoiseModelParams {
            t0: 1e-3,
            t_aq: 0.6,
            e_aq: 0.1,
            mu_s_sq: 1e4,
        };
        let (q1, q2) = monte_carlo_source_chain(&params, N, RngSeed(6)).unwrap();
        // uncentered <q1 q2> = |mu_s|^2 sqrt(2 t0 t_aq) / 4
        let expected = params.mu_s_sq * (2.0 * params.t0 * params.t_aq).sqrt() / 4.0;
        let m12 = q1.iter().zip(&q2).map(|(a, b)| a * b).sum::<f64>() / N as f64;
        // 3 standard errors of the product moment
        let prods: Vec<f64> = q1.iter().zip(&q2).map(|(a, b)| a * b).collect();
        let se = (variance(&prods) / N as f64).sqrt();
        assert!(
            (m12 - expected).abs() < 3.0 * se,
            "m12 = {m12}, expected = {expected}, se = {se}"
        );
    }

    #[test]
    fn oracle_independent_inputs() {
        let v = sample_vacuum(N / 10, RngSeed(7)).unwrap();
        let q1: Vec<f64> = v.iter().map(|s| s.q).collect();
        let q2: Vec<f64> = v.iter().map(|s| s.p).collect();
        let res = conditional_variance_oracle(&q1, &q2).unwrap();
        assert!((res - variance(&q1)).abs() < 0.02);
    }

    #[test]
    fn oracle_perfect_predictor() {
        let v = sample_vacuum(N / 10, RngSeed(8)).unwrap();
        let q2: Vec<f64> = v.iter().map(|s| s.q).collect();
        let q1: Vec<f64> = q2.iter().map(|x| 2.5 * x).collect();
        let res = conditional_variance_oracle(&q1, &q2).unwrap();
        assert!(res.abs() < 1e-20);
    }

    #[test]
    fn oracle_scale_invariant_in_q2() {
        let v = sample_vacuum(10_000, RngSeed(10)).unwrap();
        let q1: Vec<f64> = v.iter().map(|s| s.q + 0.3 * s.p).collect();
        let q2: Vec<f64> = v.iter().map(|s| s.p).collect();
        let q2s: Vec<f64> = q2.iter().map(|x| -17.0 * x).collect();
        let a = conditional_variance_oracle(&q1, &q2).unwrap();
        let b = conditional_variance_oracle(&q1, &q2s).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn oracle_rejects_degenerate() {
        let q1 = vec![1.0; 2000];
        let q2 = vec![0.0; 2000];
        assert_eq!(
            conditional_variance_oracle(&q1, &q2),
            Err(GaussianError::DegenerateRegressor)
        );
    }
}
