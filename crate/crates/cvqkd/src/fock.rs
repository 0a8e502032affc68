//! Dense operators on a truncated Fock space: coherent/thermal/displaced
//! states, quadrature and number observables, heterodyne region operators,
//! and Hermitian matrix functions (sqrt, floored log) via eigendecomposition.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

pub type C = Complex64;
pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Truncated coherent-state ket |alpha> (not renormalized; the truncation
/// deficit is the Poisson tail beyond the cutoff).
pub fn coherent_ket(alpha: C, dim: usize) -> CVec {
    let mut v = CVec::zeros(dim);
    let norm = (-(alpha.norm_sqr()) / 2.0).exp();
    let mut amp = C::new(norm, 0.0);
    v[0] = amp;
    for n in 1..dim {
        amp *= alpha / C::new((n as f64).sqrt(), 0.0);
        v[n] = amp;
    }
    v
}

/// Annihilation operator: a|n> = sqrt(n)|n-1>.
pub fn annihilation_op(dim: usize) -> CMat {
    let mut a = CMat::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Photon-number operator.
pub fn number_op(dim: usize) -> CMat {
    CMat::from_diagonal(&CVec::from_iterator(
        dim,
        (0..dim).map(|n| C::new(n as f64, 0.0)),
    ))
}

/// Quadrature observable q = (a + a†)/2, matching the heterodyne-outcome
/// convention <q> + i<p> = <a>.
pub fn q_op(dim: usize) -> CMat {
    let a = annihilation_op(dim);
    (&a + a.adjoint()).scale(0.5)
}

/// Quadrature observable p = (a - a†)/(2i).
pub fn p_op(dim: usize) -> CMat {
    let a = annihilation_op(dim);
    let d = &a - a.adjoint();
    d * C::new(0.0, -0.5)
}

/// Thermal state with mean occupation `nbar` (truncated).
pub fn thermal_state(nbar: f64, dim: usize) -> CMat {
    if nbar <= 0.0 {
        let mut m = CMat::zeros(dim, dim);
        m[(0, 0)] = C::new(1.0, 0.0);
        return m;
    }
    let r = nbar / (1.0 + nbar);
    CMat::from_diagonal(&CVec::from_iterator(
        dim,
        (0..dim).map(|n| C::new(r.powi(n as i32) / (1.0 + nbar), 0.0)),
    ))
}

/// Displacement operator D(d) = exp(d a† - d* a).
pub fn displacement_op(d: C, dim: usize) -> CMat {
    // d a† - d* a is anti-Hermitian; exponentiate via the Hermitian generator
    let a = annihilation_op(dim);
    let gen = a.adjoint().scale(1.0) * d - a * d.conj();
    let h = &gen * C::new(0.0, -1.0); // gen = i h with h Hermitian
    let (vals, vecs) = eigh(&h);
    let phases = CVec::from_iterator(dim, vals.iter().map(|&l| C::new(0.0, l).exp()));
    &vecs * CMat::from_diagonal(&phases) * vecs.adjoint()
}

/// Displaced thermal state, built at a larger working dimension and truncated
/// to `dim` to suppress edge artifacts of the truncated displacement.
pub fn displaced_thermal(d: C, nbar: f64, dim: usize, work_dim: usize) -> CMat {
    assert!(work_dim >= dim);
    let disp = displacement_op(d, work_dim);
    let full = &disp * thermal_state(nbar, work_dim) * disp.adjoint();
    full.view((0, 0), (dim, dim)).into_owned()
}

/// Heterodyne region operators for the quadrant key map: R_z integrates the
/// POVM density |gamma><gamma|/pi over the wedge of half-angle pi/4 centered
/// on phase z*pi/2. The four operators sum to the identity exactly.
pub fn region_operators(dim: usize) -> [CMat; 4] {
    let radial = |m: usize, n: usize| -> f64 {
        // Gamma((m+n)/2 + 1) / (2 sqrt(m! n!))
        (ln_gamma((m + n) as f64 / 2.0 + 1.0)
            - 0.5 * (ln_gamma(m as f64 + 1.0) + ln_gamma(n as f64 + 1.0)))
        .exp()
            / 2.0
    };
    std::array::from_fn(|z| {
        let theta_z = z as f64 * FRAC_PI_2;
        CMat::from_fn(dim, dim, |m, n| {
            let k = m as f64 - n as f64;
            let ang = if m == n {
                C::new(FRAC_PI_2, 0.0)
            } else {
                C::new(0.0, k * theta_z).exp() * (2.0 * (k * FRAC_PI_4).sin() / k)
            };
            ang * radial(m, n) / PI
        })
    })
}

/// Eigendecomposition of a Hermitian matrix: (eigenvalues, eigenvectors).
pub fn eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let se = m.clone().symmetric_eigen();
    (se.eigenvalues.iter().copied().collect(), se.eigenvectors)
}

/// Eigenvalues only (cheaper than [`eigh`]).
pub fn eigvalsh(m: &CMat) -> Vec<f64> {
    m.clone().symmetric_eigenvalues().iter().copied().collect()
}

/// Hermitian square root with negative eigenvalues clipped to zero.
pub fn sqrtm_psd(m: &CMat) -> CMat {
    let (vals, vecs) = eigh(m);
    let d = CVec::from_iterator(
        vals.len(),
        vals.iter().map(|&l| C::new(l.max(0.0).sqrt(), 0.0)),
    );
    &vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Base-2 matrix logarithm with eigenvalues floored at `floor` before the
/// log, the standard regularization for relative entropy on near-singular
/// states.
pub fn logm2_floored(m: &CMat, floor: f64) -> CMat {
    let (vals, vecs) = eigh(m);
    let d = CVec::from_iterator(
        vals.len(),
        vals.iter().map(|&l| C::new(l.max(floor).log2(), 0.0)),
    );
    &vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Sum of clamped-eigenvalue contributions `l * log2(max(l, floor))`; equals
/// Tr[m log2 m] for PSD m up to the floor regularization.
pub fn trace_x_log2_x(eigenvalues: &[f64], floor: f64) -> f64 {
    eigenvalues
        .iter()
        .map(|&l| {
            if l <= 0.0 {
                0.0
            } else {
                l * l.max(floor).log2()
            }
        })
        .sum()
}

/// Real part of the trace.
pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|c| c.re).sum()
}

/// Hilbert-Schmidt inner product Tr[a† b], real for Hermitian pairs.
pub fn hs_inner(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Largest absolute deviation from Hermiticity.
pub fn hermiticity_error(m: &CMat) -> f64 {
    let adj = m.adjoint();
    m.iter()
        .zip(adj.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    eigvalsh(m).into_iter().fold(f64::INFINITY, f64::min)
}

/// Checks the density-operator invariants: Hermitian to `herm_tol`, minimum
/// eigenvalue >= -`psd_tol`, |trace - 1| <= `trace_tol`.
pub fn density_violation(m: &CMat, herm_tol: f64, psd_tol: f64, trace_tol: f64) -> Option<String> {
    let h = hermiticity_error(m);
    if h > herm_tol {
        return Some(format!("hermiticity error {h:.3e} > {herm_tol:.1e}"));
    }
    let tr = trace_re(m);
    if (tr - 1.0).abs() > trace_tol {
        return Some(format!("trace {tr} deviates from 1 by more than {trace_tol:.1e}"));
    }
    let lmin = min_eigenvalue(m);
    if lmin < -psd_tol {
        return Some(format!("minimum eigenvalue {lmin:.3e} < -{psd_tol:.1e}"));
    }
    None
}

/// Gauss-Hermite nodes and weights for integrals of the form
/// `int exp(-u^2) f(u) du`, via the Golub-Welsch tridiagonal eigenproblem.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let se = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let node = se.eigenvalues[i];
            let v0 = se.eigenvectors[(0, i)];
            (node, PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
