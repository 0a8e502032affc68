//! Shared statistical helpers: chi-square tests, normal CDF, and a plug-in
//! mutual-information estimate.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail probability of the chi-square distribution with `dof` degrees
/// of freedom.
pub fn chi_square_sf(x: f64, dof: f64) -> f64 {
    let dist = ChiSquared::new(dof).expect("dof > 0");
    1.0 - dist.cdf(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Chi-square goodness-of-fit of `xs` against a uniform distribution on
/// [lo, hi), using equal-width bins. Returns (statistic, p-value).
pub fn chi_square_uniform(xs: &[f64], lo: f64, hi: f64, bins: usize) -> (f64, f64) {
    let mut counts = vec![0u64; bins];
    let w = hi - lo;
    for &x in xs {
        let b = (((x - lo) / w * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expected = xs.len() as f64 / bins as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    (chi2, chi_square_sf(chi2, bins as f64 - 1.0))
}

/// Two-sample chi-square homogeneity test over pre-binned counts.
/// Cells where both samples are empty are skipped. Returns (statistic,
/// p-value).
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let k1 = ((nb as f64) / (na as f64)).sqrt();
    let k2 = 1.0 / k1;
    let mut chi2 = 0.0;
    let mut cells = 0usize;
    for (&ca, &cb) in a.iter().zip(b) {
        if ca + cb == 0 {
            continue;
        }
        let d = k1 * ca as f64 - k2 * cb as f64;
        chi2 += d * d / (ca + cb) as f64;
        cells += 1;
    }
    let dof = cells.saturating_sub(1) as f64;
    (chi2, chi_square_sf(chi2, dof.max(1.0)))
}

/// Plug-in estimate of the mutual information I(X; bin(Y)) in bits, for a
/// discrete label `x` and a real value `y` binned uniformly on [lo, hi).
pub fn mutual_information_binned(
    labels: &[u8],
    values: &[f64],
    n_labels: usize,
    lo: f64,
    hi: f64,
    bins: usize,
) -> f64 {
    assert_eq!(labels.len(), values.len());
    let n = labels.len() as f64;
    let mut joint = vec![vec![0f64; bins]; n_labels];
    for (&x, &y) in labels.iter().zip(values) {
        let b = (((y - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
        joint[x as usize][b] += 1.0;
    }
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / n).collect();
    let py: Vec<f64> = (0..bins)
        .map(|b| joint.iter().map(|r| r[b]).sum::<f64>() / n)
        .collect();
    let mut mi = 0.0;
    for (x, row) in joint.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if c > 0.0 {
                let pxy = c / n;
                mi += pxy * (pxy / (px[x] * py[b])).log2();
            }
        }
    }
    mi
}
