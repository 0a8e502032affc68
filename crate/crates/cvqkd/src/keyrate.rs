//! Asymptotic secret-key-rate engine for the four-state heterodyne protocol.
//!
//! The rate is computed as a certified lower bound on the constrained minimum
//! of the quantum relative entropy between the post-key-map state and its
//! pinched version, minus the error-correction leakage. The optimization runs
//! over density operators on a 4-dimensional register tensored with a
//! truncated Fock space, subject to equality constraints formed from the
//! conditional heterodyne moments and the register marginal of the
//! source-replacement state. The minimization uses Frank-Wolfe with exact line
//! search; the linearized subproblem (a semidefinite program with equality
//! constraints) is solved through a log-det barrier on its dual, whose
//! feasible dual point converts the final linearization into a valid lower
//! bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

use crate::channel::{
    first_second_moments, heterodyne_sigma_sq, transmittance, ChannelError, ChannelParams,
};
use crate::fock::{
    coherent_ket, density_violation, eigh, eigvalsh, gauss_hermite, hs_inner, logm2_floored,
    min_eigenvalue, number_op, p_op, q_op, region_operators, sqrtm_psd, trace_re, trace_x_log2_x,
    C, CMat, CVec,
};
use crate::source::{excess_noise, NoiseModelParams, SourceError};

/// Eigenvalue floor applied before matrix logarithms; reported here once and
/// used everywhere the objective or its gradient is evaluated.
pub const EIG_FLOOR: f64 = 1e-12;

/// Tail weight above which a Fock cutoff is rejected as too small.
pub const TAIL_TOL: f64 = 1e-6;

const REGISTER_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum KeyRateError {
    #[error("invalid key-rate parameters: {0}")]
    InvalidParams(String),
    #[error("cutoff {cutoff} too small: truncation tail weight {tail:.3e} exceeds {TAIL_TOL:.1e}")]
    CutoffTooSmall { cutoff: usize, tail: f64 },
    #[error("infeasible setup: constraint projection stalled at residual {residual:.3e}")]
    InfeasibleSetup { residual: f64 },
    #[error("state violates density-operator invariants: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// One equality constraint Tr[observable * rho] = expected. The observable is
/// also kept in block form `sum |x><x'| (x) op` (at most two terms), which the
/// subproblem solver exploits.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub observable: CMat,
    pub expected: f64,
    terms: Vec<(usize, usize, CMat)>,
}

/// Source-replacement problem instance: constraint set, key-map operators,
/// and a feasible starting state (the simulated channel output, projected
/// onto the constraint set).
#[derive(Debug, Clone)]
pub struct ProtocolSetup {
    pub alpha: f64,
    pub cutoff: usize,
    pub fock_dim: usize,
    /// Total dimension: 4 * fock_dim.
    pub dim: usize,
    pub constraints: Vec<Constraint>,
    pub rho_start: CMat,
    /// sqrt(R_z) on the Fock factor for the four quadrant region operators.
    region_sqrt: [CMat; 4],
    /// Orthonormalized constraint observables (Hilbert-Schmidt) and their
    /// transformed expectations, for projection onto the affine set.
    ortho_basis: Vec<CMat>,
    ortho_expected: Vec<f64>,
}

fn embed_block(x: usize, xp: usize, op: &CMat, fock_dim: usize) -> CMat {
    let dim = REGISTER_DIM * fock_dim;
    let mut m = CMat::zeros(dim, dim);
    m.view_mut((x * fock_dim, xp * fock_dim), (fock_dim, fock_dim))
        .copy_from(op);
    m
}

fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Conjugation rho -> (I (x) s) rho (I (x) s) for Hermitian s, done block by
/// block on the register factor.
fn conjugate_blockdiag(rho: &CMat, s: &CMat, fock_dim: usize) -> CMat {
    let dim = rho.nrows();
    let mut out = CMat::zeros(dim, dim);
    for x in 0..REGISTER_DIM {
        for xp in 0..REGISTER_DIM {
            let block = rho.view((x * fock_dim, xp * fock_dim), (fock_dim, fock_dim));
            out.view_mut((x * fock_dim, xp * fock_dim), (fock_dim, fock_dim))
                .copy_from(&(s * block * s));
        }
    }
    out
}

/// The simulated channel-output state (1/4) sum_{x,x'} |x><x'| (x) E(|a_x><a_x'|)
/// in the truncated Fock space: pure loss acting on coherent dyads followed by
/// additive Gaussian displacement noise with thermal occupation T*xi/2,
/// evaluated by 2-D Gauss-Hermite quadrature.
fn channel_output_state(alpha: f64, c: &ChannelParams, fock_dim: usize) -> CMat {
    let t = transmittance(c);
    let nbar = t * c.excess_noise_xi / 2.0;
    let dim = REGISTER_DIM * fock_dim;
    let mut rho = CMat::zeros(dim, dim);

    let gamma: Vec<C> = (0..REGISTER_DIM)
        .map(|x| C::new(0.0, x as f64 * FRAC_PI_2).exp() * t.sqrt() * alpha)
        .collect();
    // <a_x'|a_x>^(1-T) for the input coherent dyad under pure loss
    let loss_factor = |x: usize, xp: usize| -> C {
        let inner = C::new(0.0, (x as f64 - xp as f64) * FRAC_PI_2).exp() * alpha * alpha
            - C::new(alpha * alpha, 0.0);
        (inner * (1.0 - t)).exp()
    };

    // quadrature points for the complex displacement d
    let displacements: Vec<(C, f64)> = if nbar < 1e-15 {
        vec![(C::new(0.0, 0.0), 1.0)]
    } else {
        let (nodes, weights) = gauss_hermite(12);
        let s = nbar.sqrt();
        let mut pts = Vec::with_capacity(nodes.len() * nodes.len());
        for (u, wu) in nodes.iter().zip(&weights) {
            for (v, wv) in nodes.iter().zip(&weights) {
                pts.push((C::new(s * u, s * v), wu * wv / std::f64::consts::PI));
            }
        }
        pts
    };

    for x in 0..REGISTER_DIM {
        for xp in 0..REGISTER_DIM {
            let mut block = CMat::zeros(fock_dim, fock_dim);
            for &(d, w) in &displacements {
                // D(d)|g> = exp((d g* - d* g)/2) |g + d>
                let phase_l = ((d * gamma[x].conj() - d.conj() * gamma[x]) / 2.0).exp();
                let phase_r = ((d * gamma[xp].conj() - d.conj() * gamma[xp]) / 2.0).exp();
                let ket = coherent_ket(gamma[x] + d, fock_dim);
                let bra = coherent_ket(gamma[xp] + d, fock_dim);
                block += (&ket * bra.adjoint()) * (phase_l * phase_r.conj() * w);
            }
            rho.view_mut((x * fock_dim, xp * fock_dim), (fock_dim, fock_dim))
                .copy_from(&(block * (loss_factor(x, xp) * 0.25)));
        }
    }
    hermitize(&rho)
}

/// Projection of a Hermitian matrix onto the affine constraint set.
fn project_affine(m: &CMat, setup: &ProtocolSetup) -> CMat {
    let mut out = m.clone();
    for (b, &e) in setup.ortho_basis.iter().zip(&setup.ortho_expected) {
        let coeff = e - hs_inner(b, &out);
        out += b * C::new(coeff, 0.0);
    }
    out
}

fn project_psd(m: &CMat) -> CMat {
    let (vals, vecs) = eigh(m);
    let d = CVec::from_iterator(vals.len(), vals.iter().map(|&l| C::new(l.max(0.0), 0.0)));
    &vecs * CMat::from_diagonal(&d) * vecs.adjoint()
}

/// Largest absolute constraint residual of `m`.
pub fn constraint_residual(m: &CMat, setup: &ProtocolSetup) -> f64 {
    setup
        .constraints
        .iter()
        .map(|c| (hs_inner(&c.observable, m) - c.expected).abs())
        .fold(0.0, f64::max)
}

/// Dykstra's alternating projection onto (affine constraint set) intersect
/// (PSD cone). Returns a point on the affine set with minimum eigenvalue
/// >= -tol.
fn dykstra_project(
    start: &CMat,
    setup: &ProtocolSetup,
    tol: f64,
    max_iter: usize,
) -> Result<CMat, KeyRateError> {
    let dim = start.nrows();
    let mut x = start.clone();
    let mut p = CMat::zeros(dim, dim);
    let mut q = CMat::zeros(dim, dim);
    let mut last_violation = f64::INFINITY;
    for it in 0..max_iter {
        let y = project_psd(&(&x + &p));
        p = &x + &p - &y;
        // near states with very thin Fock tails the PSD-side iterate often
        // meets the feasibility contract long before the affine-side one
        // clears the eigenvalue tolerance
        if it % 16 == 15 && constraint_residual(&y, setup) <= tol.max(1e-9) {
            return Ok(hermitize(&y));
        }
        let x_new = project_affine(&(&y + &q), setup);
        q = &y + &q - &x_new;
        x = x_new;
        let psd_violation = (-min_eigenvalue(&x)).max(0.0);
        last_violation = psd_violation;
        if psd_violation <= tol {
            return Ok(hermitize(&x));
        }
    }
    Err(KeyRateError::InfeasibleSetup {
        residual: last_violation,
    })
}

/// Builds the source-replacement setup: constraint observables with analytic
/// expectations, the quadrant key-map operators, and a feasible start state.
pub fn build_protocol_state_setup(
    alpha: f64,
    c: &ChannelParams,
    cutoff: usize,
) -> Result<ProtocolSetup, KeyRateError> {
    if !(alpha > 0.0) {
        return Err(KeyRateError::InvalidParams(format!(
            "alpha must be > 0, got {alpha}"
        )));
    }
    if cutoff < 4 {
        return Err(KeyRateError::InvalidParams(format!(
            "cutoff must be >= 4, got {cutoff}"
        )));
    }
    c.validate()?;
    let fock_dim = cutoff + 1;
    let dim = REGISTER_DIM * fock_dim;

    let rho_raw = channel_output_state(alpha, c, fock_dim);
    let tail = 1.0 - trace_re(&rho_raw);
    if tail > TAIL_TOL {
        return Err(KeyRateError::CutoffTooSmall { cutoff, tail });
    }

    // conditional-moment constraints: |x><x| (x) {q, p, n, n^2}
    let q = q_op(fock_dim);
    let p = p_op(fock_dim);
    let n = number_op(fock_dim);
    let n_sq = &n * &n;
    let mut constraints = Vec::with_capacity(32);
    for x in 0..REGISTER_DIM {
        let m = first_second_moments(x as u8, alpha, c);
        for (op, expected) in [(&q, m.q), (&p, m.p), (&n, m.n), (&n_sq, m.n_sq)] {
            constraints.push(Constraint {
                observable: embed_block(x, x, op, fock_dim),
                expected: 0.25 * expected,
                terms: vec![(x, x, op.clone())],
            });
        }
    }
    // register-marginal constraints: rho_A[x,x'] = (1/4) <a_x'|a_x>
    let eye = CMat::identity(fock_dim, fock_dim);
    for x in 0..REGISTER_DIM {
        constraints.push(Constraint {
            observable: embed_block(x, x, &eye, fock_dim),
            expected: 0.25,
            terms: vec![(x, x, eye.clone())],
        });
    }
    for x in 0..REGISTER_DIM {
        for xp in (x + 1)..REGISTER_DIM {
            let z = (C::new(0.0, (x as f64 - xp as f64) * FRAC_PI_2).exp() * alpha * alpha
                - C::new(alpha * alpha, 0.0))
            .exp()
                * 0.25;
            constraints.push(Constraint {
                observable: embed_block(x, xp, &eye, fock_dim)
                    + embed_block(xp, x, &eye, fock_dim),
                expected: 2.0 * z.re,
                terms: vec![(x, xp, eye.clone()), (xp, x, eye.clone())],
            });
            let i_eye = &eye * C::new(0.0, 1.0);
            constraints.push(Constraint {
                observable: (embed_block(x, xp, &eye, fock_dim)
                    - embed_block(xp, x, &eye, fock_dim))
                    * C::new(0.0, 1.0),
                expected: 2.0 * z.im,
                terms: vec![(x, xp, i_eye.clone()), (xp, x, -i_eye)],
            });
        }
    }

    // orthonormal basis of the constraint span (modified Gram-Schmidt)
    let mut ortho_basis: Vec<CMat> = Vec::with_capacity(constraints.len());
    let mut ortho_expected: Vec<f64> = Vec::with_capacity(constraints.len());
    for cst in &constraints {
        let mut v = cst.observable.clone();
        let mut e = cst.expected;
        for (b, &be) in ortho_basis.iter().zip(&ortho_expected) {
            let coeff = hs_inner(b, &v);
            v -= b * C::new(coeff, 0.0);
            e -= coeff * be;
        }
        let norm = hs_inner(&v, &v).sqrt();
        if norm < 1e-10 {
            continue; // linearly dependent; drop
        }
        ortho_basis.push(v.unscale(norm));
        ortho_expected.push(e / norm);
    }

    let regions = region_operators(fock_dim);
    let region_sqrt = std::array::from_fn(|z| sqrtm_psd(&regions[z]));

    let mut setup = ProtocolSetup {
        alpha,
        cutoff,
        fock_dim,
        dim,
        constraints,
        rho_start: CMat::zeros(dim, dim),
        region_sqrt,
        ortho_basis,
        ortho_expected,
    };
    // the normalized raw state is exactly PSD and, away from heavy
    // truncation, already satisfies the moment constraints to far better
    // accuracy than an iterative projection would reach; only project when
    // it is actually needed
    let normalized = rho_raw.unscale(trace_re(&rho_raw));
    setup.rho_start = if constraint_residual(&normalized, &setup) <= 1e-9 {
        normalized
    } else {
        dykstra_project(&normalized, &setup, 1e-10, 2000)?
    };
    Ok(setup)
}

/// Post-key-map blocks B_z = (I (x) sqrt(R_z)) rho (I (x) sqrt(R_z)).
fn key_map_blocks(rho: &CMat, setup: &ProtocolSetup) -> [CMat; 4] {
    std::array::from_fn(|z| {
        hermitize(&conjugate_blockdiag(rho, &setup.region_sqrt[z], setup.fock_dim))
    })
}

fn objective_raw(rho: &CMat, setup: &ProtocolSetup) -> f64 {
    let mut f = trace_x_log2_x(&eigvalsh(rho), EIG_FLOOR);
    for b in key_map_blocks(rho, setup) {
        f -= trace_x_log2_x(&eigvalsh(&b), EIG_FLOOR);
    }
    f
}

/// Relative entropy D(G(rho) || Z(G(rho))) in bits, the conditional-entropy
/// objective of the key-rate minimization. Validates the density-operator
/// invariants before evaluating.
pub fn objective(rho: &CMat, setup: &ProtocolSetup) -> Result<f64, KeyRateError> {
    if rho.nrows() != setup.dim || rho.ncols() != setup.dim {
        return Err(KeyRateError::InvalidState(format!(
            "dimension {}x{} does not match setup dimension {}",
            rho.nrows(),
            rho.ncols(),
            setup.dim
        )));
    }
    if let Some(problem) = density_violation(rho, 1e-10, 1e-9, 1e-9) {
        return Err(KeyRateError::InvalidState(problem));
    }
    Ok(objective_raw(rho, setup))
}

/// Gradient of the objective at rho (Hermitian matrix, base-2 logs). The
/// identity contributions of the two entropy terms cancel because the region
/// operators sum to the identity.
pub fn gradient(rho: &CMat, setup: &ProtocolSetup) -> CMat {
    let mut g = logm2_floored(rho, EIG_FLOOR);
    for z in 0..4 {
        let s = &setup.region_sqrt[z];
        let b = hermitize(&conjugate_blockdiag(rho, s, setup.fock_dim));
        g -= conjugate_blockdiag(&logm2_floored(&b, EIG_FLOOR), s, setup.fock_dim);
    }
    hermitize(&g)
}

/// Cholesky factorization that actually verifies positive definiteness.
/// nalgebra's complex Cholesky takes complex square roots, so it "succeeds"
/// on indefinite Hermitian matrices; the factor diagonal must be checked.
fn chol_pd(m: CMat) -> Option<nalgebra::Cholesky<C, nalgebra::Dyn>> {
    let chol = nalgebra::Cholesky::new(m)?;
    let ok = chol
        .l_dirty()
        .diagonal()
        .iter()
        .all(|v| v.re > 0.0 && v.im.abs() <= 1e-8 * v.re);
    ok.then_some(chol)
}

struct LmoSolution {
    sigma: CMat,
    dual_value: f64,
    /// Dual point in gradient-normalized units, for warm starts.
    y: DVector<f64>,
}

/// A_i = slack_inv * Gamma_i, stored as dense column blocks (Gamma_i has at
/// most two nonzero register blocks).
struct ColBlocks {
    /// (register column block, dim x fock_dim values)
    blocks: Vec<(usize, CMat)>,
}

impl ColBlocks {
    fn trace(&self, fock_dim: usize) -> f64 {
        self.blocks
            .iter()
            .map(|(c, m)| (0..fock_dim).map(|b| m[(c * fock_dim + b, b)].re).sum::<f64>())
            .sum()
    }

    fn pair_trace(&self, other: &Self, fock_dim: usize) -> f64 {
        // Tr[A_i A_j] over the nonzero block pairs
        let mut total = 0.0;
        for (c1, m1) in &self.blocks {
            for (c2, m2) in &other.blocks {
                let s1 = m1.view((c2 * fock_dim, 0), (fock_dim, fock_dim));
                let s2 = m2.view((c1 * fock_dim, 0), (fock_dim, fock_dim));
                let mut acc = 0.0;
                for a in 0..fock_dim {
                    for b in 0..fock_dim {
                        acc += (s1[(a, b)] * s2[(b, a)]).re;
                    }
                }
                total += acc;
            }
        }
        total
    }
}

/// Per-constraint relaxation width: the dual bound is certified against the
/// relaxed set |Tr[Gamma_i sigma] - gamma_i| <= EPS_RELAX, which contains
/// every iterate the solver produces (their affine projections are exact to
/// well below this). The relaxation keeps the dual coercive even when the
/// exact-equality set has empty interior, as happens when the moment
/// constraints pin a conditional block to a pure coherent state.
const EPS_RELAX: f64 = 1e-15;

/// Solves min Tr[g sigma] over sigma PSD satisfying the (relaxed) constraint
/// set, via a log-det barrier on the penalized dual
/// max { gamma^T y - EPS_RELAX ||y||_1 : g - sum_i y_i Gamma_i >= 0 },
/// path-following with damped Newton steps on the Frobenius-normalized
/// gradient (the l1 term is smoothed for the Newton model). Every accepted
/// dual point keeps the slack strictly positive definite, so for any state
/// whose constraint residual is at most `eta` the value
/// gamma^T y - eta ||y||_1 is a certified lower bound on Tr[g sigma],
/// regardless of how well the path was followed; `eta` should therefore be
/// the largest residual among the iterates being compared against.
/// `y_warm` restarts from a previous dual point. The primal is recovered from
/// an interior point of the path and polished back onto the constraint set.
fn linear_minimize(
    g: &CMat,
    setup: &ProtocolSetup,
    y_warm: Option<&DVector<f64>>,
    eta: f64,
) -> Result<LmoSolution, KeyRateError> {
    let m = setup.constraints.len();
    let dim = setup.dim;
    let fock_dim = setup.fock_dim;
    let g_norm = g.norm().max(1e-300);
    let g_hat = g.unscale(g_norm);
    let targets = DVector::<f64>::from_iterator(m, setup.constraints.iter().map(|c| c.expected));
    // indices of the |x><x| (x) I constraints, whose observables sum to the
    // identity: shifting y along this direction shifts the slack by a
    // multiple of I
    let identity_dir: Vec<usize> = (16..20).collect();

    let slack = |y: &DVector<f64>| -> CMat {
        let mut s = g_hat.clone();
        for (i, cst) in setup.constraints.iter().enumerate() {
            if y[i] == 0.0 {
                continue;
            }
            for (x, xp, op) in &cst.terms {
                let mut view = s.view_mut((x * fock_dim, xp * fock_dim), (fock_dim, fock_dim));
                view -= op * C::new(y[i], 0.0);
            }
        }
        s
    };

    let mut y = match y_warm {
        Some(w) if w.len() == m => w.clone(),
        _ => DVector::zeros(m),
    };
    // make the initial slack strictly positive definite
    {
        let lmin = min_eigenvalue(&slack(&y));
        let margin = 1e-3;
        if lmin < margin {
            let shift = margin - lmin;
            for &i in &identity_dir {
                y[i] -= shift;
            }
        }
    }

    let mu_min = 5e-10;
    // dual point harvested for primal recovery: small enough that the
    // centered primal mu S^-1 is near-optimal, large enough that its
    // positive-definiteness margin (~mu) dominates the centering error
    let mu_rec = 1e-7;
    let mut y_rec: Option<(DVector<f64>, f64)> = None;
    let mut mu: f64 = if y_warm.is_some() { 1e-5 } else { 0.05 };
    // y only ever advances through steps whose slack passed the factorization
    // check, so whenever further centering breaks down numerically (slack or
    // Hessian factorization at machine precision) the current y still carries
    // a valid certificate and the path simply ends there
    'path: loop {
        let at_final = mu <= mu_min;
        // the recovery stage is centered much more tightly: the residual of
        // the corrected primal, and hence the eigenvalue shift introduced by
        // the affine projection, scales with the square of the decrement
        let at_rec = mu <= mu_rec && y_rec.is_none();
        let (newton_cap, lambda_tol) = if at_rec {
            (16, 1e-5)
        } else if at_final {
            (24, 1e-4)
        } else {
            (6, 0.1)
        };
        let mut stalled = 0;
        for _ in 0..newton_cap {
            let s = slack(&y);
            let chol = match chol_pd(s) {
                Some(c) => c,
                None => break 'path,
            };
            let log_det =
                |c: &nalgebra::Cholesky<C, nalgebra::Dyn>| -> f64 {
                    2.0 * c.l_dirty().diagonal().iter().map(|v| v.re.ln()).sum::<f64>()
                };
            let phi = |yv: &DVector<f64>, ld: f64| -> f64 {
                targets.dot(yv)
                    - EPS_RELAX
                        * yv.iter().map(|v| (v * v + 1e-8).sqrt()).sum::<f64>()
                    + mu * ld
            };
            let phi_curr = phi(&y, log_det(&chol));
            let s_inv = chol.inverse();
            let a: Vec<ColBlocks> = setup
                .constraints
                .iter()
                .map(|cst| ColBlocks {
                    blocks: cst
                        .terms
                        .iter()
                        .map(|(x, xp, op)| {
                            (*xp, s_inv.view((0, x * fock_dim), (dim, fock_dim)) * op)
                        })
                        .collect(),
                })
                .collect();
            // mu-free Newton system on the smoothed penalized objective:
            // (Tr[A_i A_j] + D/mu) d = (targets - eps*l1')/mu - Tr[A_i]
            let smooth = 1e-4;
            let mut rhs = DVector::<f64>::zeros(m);
            for i in 0..m {
                let root = (y[i] * y[i] + smooth * smooth).sqrt();
                rhs[i] = (targets[i] - EPS_RELAX * y[i] / root) / mu - a[i].trace(fock_dim);
            }
            let mut hess = DMatrix::<f64>::zeros(m, m);
            for i in 0..m {
                for j in i..m {
                    let t = a[i].pair_trace(&a[j], fock_dim);
                    hess[(i, j)] = t;
                    hess[(j, i)] = t;
                }
                let root = (y[i] * y[i] + smooth * smooth).sqrt();
                hess[(i, i)] += EPS_RELAX * smooth * smooth / (root * root * root) / mu;
            }
            // Jacobi-preconditioned solve (the constraint observables span
            // several orders of magnitude in norm), with a ridge fallback
            let scale_vec = DVector::<f64>::from_iterator(
                m,
                (0..m).map(|i| hess[(i, i)].max(1e-300).sqrt()),
            );
            for i in 0..m {
                rhs[i] /= scale_vec[i];
                for j in 0..m {
                    hess[(i, j)] /= scale_vec[i] * scale_vec[j];
                }
            }
            let mut d = None;
            let mut ridge_used = 0.0;
            for ridge in [0.0, 1e-12, 1e-9, 1e-6] {
                let mut h = hess.clone();
                for i in 0..m {
                    h[(i, i)] += ridge;
                }
                if let Some(ch) = nalgebra::Cholesky::new(h) {
                    d = Some(ch.solve(&rhs));
                    ridge_used = ridge;
                    break;
                }
            }
            let mut d = match d {
                Some(d) => d,
                None => break 'path,
            };
            for i in 0..m {
                d[i] /= scale_vec[i];
                rhs[i] *= scale_vec[i];
            }
            if !d.iter().all(|v| v.is_finite()) {
                break 'path;
            }
            // affine-invariant Newton decrement of the barrier objective
            let gd = mu * rhs.dot(&d);
            let lambda = gd.abs().sqrt();
            // largest step keeping the slack positive definite: the slack
            // moves as S - t sum_i d_i Gamma_i, so the boundary sits at the
            // reciprocal of the top eigenvalue of L^-1 (sum d Gamma) L^-H
            let mut dg = CMat::zeros(dim, dim);
            for (i, cst) in setup.constraints.iter().enumerate() {
                if d[i] == 0.0 {
                    continue;
                }
                for (x, xp, op) in &cst.terms {
                    let mut view =
                        dg.view_mut((x * fock_dim, xp * fock_dim), (fock_dim, fock_dim));
                    view += op * C::new(d[i], 0.0);
                }
            }
            let t_bound = chol
                .l()
                .solve_lower_triangular(&dg)
                .and_then(|t| chol.l().solve_lower_triangular(&t.adjoint().into_owned()))
                .map(|b| {
                    let top = eigvalsh(&b).iter().cloned().fold(f64::MIN, f64::max);
                    if top > 0.0 {
                        0.98 / top
                    } else {
                        f64::INFINITY
                    }
                })
                .unwrap_or(f64::INFINITY);
            // damped step, backtracked further until the slack stays positive
            // definite and the barrier objective actually increases
            let mut step = (1.0 / (1.0 + lambda)).min(t_bound);
            let mut accepted = false;
            for _ in 0..60 {
                let y_try = &y + &d * step;
                if let Some(ch) = chol_pd(slack(&y_try)) {
                    if phi(&y_try, log_det(&ch)) >= phi_curr + 1e-4 * step * gd {
                        y = y_try;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            // heavily backtracked steps mean the quadratic model has broken
            // down near the cone boundary; at intermediate mu further steps
            // make negligible progress, while the recovery and final stages
            // are allowed to grind since their accuracy sets the certificate
            if step < 0.05 {
                stalled += 1;
                if stalled >= 3 && !at_final && !at_rec {
                    break;
                }
            } else {
                stalled = 0;
            }
            if std::env::var_os("KR_DEBUG").is_some() {
                let lmin_s = min_eigenvalue(&slack(&y));
                eprintln!(
                    "  mu {mu:.3e} lambda {lambda:.3e} step {step:.3e} ridge {ridge_used:.1e} lmin(S) {lmin_s:.3e}"
                );
            }
            if lambda <= lambda_tol {
                break;
            }
        }
        if mu <= mu_rec && y_rec.is_none() {
            y_rec = Some((y.clone(), mu));
        }
        if at_final {
            break;
        }
        mu = (mu * 0.1).max(mu_min);
    }

    // primal recovery, first attempt: at a centered dual point the scaled
    // inverse slack mu S^-1 satisfies the constraints to roughly the
    // centering accuracy, and one Newton correction
    // W = mu (S^-1 + S^-1 (sum_i d_i Gamma_i) S^-1) reduces the residual to
    // second order in the decrement while leaving the ~mu positive spectrum
    // intact, so when the problem has an interior this is the minimizer up
    // to O(mu)
    let central = y_rec.as_ref().and_then(|(yr, mur)| {
        let chol = chol_pd(slack(yr))?;
        let s_inv = chol.inverse();
        let a: Vec<ColBlocks> = setup
            .constraints
            .iter()
            .map(|cst| ColBlocks {
                blocks: cst
                    .terms
                    .iter()
                    .map(|(x, xp, op)| {
                        (*xp, s_inv.view((0, x * fock_dim), (dim, fock_dim)) * op)
                    })
                    .collect(),
            })
            .collect();
        let mut rhs = DVector::<f64>::zeros(m);
        for i in 0..m {
            rhs[i] = targets[i] / mur - a[i].trace(fock_dim);
        }
        let mut hess = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let t = a[i].pair_trace(&a[j], fock_dim);
                hess[(i, j)] = t;
                hess[(j, i)] = t;
            }
        }
        let scale_vec = DVector::<f64>::from_iterator(
            m,
            (0..m).map(|i| hess[(i, i)].max(1e-300).sqrt()),
        );
        for i in 0..m {
            rhs[i] /= scale_vec[i];
            for j in 0..m {
                hess[(i, j)] /= scale_vec[i] * scale_vec[j];
            }
        }
        let mut d = None;
        for ridge in [0.0, 1e-12, 1e-9, 1e-6] {
            let mut h = hess.clone();
            for i in 0..m {
                h[(i, i)] += ridge;
            }
            if let Some(ch) = nalgebra::Cholesky::new(h) {
                d = Some(ch.solve(&rhs));
                break;
            }
        }
        let mut d = d?;
        for i in 0..m {
            d[i] /= scale_vec[i];
        }
        if !d.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut corr = CMat::zeros(dim, dim);
        for (i, cst) in setup.constraints.iter().enumerate() {
            for (x, xp, op) in &cst.terms {
                let block = s_inv.view((0, x * fock_dim), (dim, fock_dim)) * op;
                let mut view = corr.view_mut((0, xp * fock_dim), (dim, fock_dim));
                view += block * C::new(d[i], 0.0);
            }
        }
        let w = (&s_inv + &corr * &s_inv).scale(*mur);
        Some(project_affine(&hermitize(&w), setup))
    });
    if std::env::var("KR_DEBUG").is_ok() {
        if let Some(sigma) = &central {
            eprintln!(
                "  recovery: lmin {:.3e}, residual {:.3e}",
                min_eigenvalue(sigma),
                constraint_residual(sigma, setup)
            );
        } else {
            eprintln!("  recovery: none");
        }
    }
    let sigma = match central {
        Some(sigma)
            if min_eigenvalue(&sigma) >= -1e-9 && constraint_residual(&sigma, setup) <= 1e-7 =>
        {
            sigma
        }
        _ => {
            // no contract-feasible minimizer could be recovered (the feasible
            // set can be so thin that its numeric thickness is below the
            // recovery accuracy); fall back to the start state, which is
            // always feasible — the dual value, and hence the reported gap,
            // is unaffected
            setup.rho_start.clone()
        }
    };
    // every accepted dual step kept the slack strictly positive definite, so
    // the eta-penalized value certifies the subproblem bound after undoing
    // the gradient normalization
    let penalty: f64 = y.iter().map(|v| v.abs()).sum::<f64>() * eta.max(EPS_RELAX);
    let dual_value = (targets.dot(&y) - penalty) * g_norm;
    if std::env::var_os("KR_DEBUG").is_some() {
        eprintln!(
            "  LMO dual: gamma.y {:.7e}, penalty {:.3e}, g_norm {:.3e}, eta {:.2e}",
            targets.dot(&y) * g_norm,
            penalty * g_norm,
            g_norm,
            eta
        );
    }
    Ok(LmoSolution {
        sigma,
        dual_value,
        y,
    })
}

/// Result of a Frank-Wolfe minimization run.
#[derive(Debug, Clone)]
pub struct FwResult {
    pub rho: CMat,
    /// Objective value at the returned iterate, bits/pulse.
    pub primal: f64,
    /// Last certified duality-gap bound Tr[grad rho] - dual, bits/pulse.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Primal/dual state carried between solves at nearby parameters: the
/// previous optimum projected onto the new affine section is a far better
/// starting iterate than the protocol state, and the previous multipliers
/// let the subproblem skip most of its barrier path.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    rho: CMat,
    y: DVector<f64>,
}

/// Frank-Wolfe minimization of the objective over the constraint set,
/// starting from the feasible state in `setup`. Stops when the certified
/// duality-gap bound drops below `tol` or after `max_iter` iterations; the
/// returned iterate is always feasible.
pub fn frank_wolfe_minimize(
    setup: &ProtocolSetup,
    tol: f64,
    max_iter: usize,
) -> Result<FwResult, KeyRateError> {
    frank_wolfe_minimize_impl(setup, tol, max_iter, None).map(|(r, _)| r)
}

fn frank_wolfe_minimize_impl(
    setup: &ProtocolSetup,
    tol: f64,
    max_iter: usize,
    warm: Option<&WarmStart>,
) -> Result<(FwResult, WarmStart), KeyRateError> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(KeyRateError::InvalidParams(format!(
            "tol must be > 0 and max_iter >= 1, got tol={tol}, max_iter={max_iter}"
        )));
    }
    let mut rho = setup.rho_start.clone();
    if let Some(w) = warm {
        if w.rho.nrows() == setup.dim {
            if let Ok(p) = dykstra_project(&w.rho, setup, 1e-10, 600) {
                if density_violation(&p, 1e-10, 1e-9, 1e-9).is_none()
                    && constraint_residual(&p, setup) <= 1e-9
                    && objective_raw(&p, setup) < objective_raw(&rho, setup)
                {
                    rho = p;
                }
            }
        }
    }
    let mut f = objective_raw(&rho, setup);
    let mut y_warm: Option<DVector<f64>> =
        warm.filter(|w| w.y.len() == setup.constraints.len()).map(|w| w.y.clone());
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    // largest constraint residual among the iterates; the dual certificate
    // must account for all states it is compared against
    let mut eta = constraint_residual(&rho, setup);
    // active atoms (feasible states whose convex hull contains rho) with
    // their key-map blocks and weights; pairwise steps shift weight from the
    // worst atom toward the subproblem minimizer, which avoids the zigzag
    // stalls of plain conditional-gradient updates
    let mut atoms: Vec<(CMat, [CMat; 4], f64)> =
        vec![(rho.clone(), key_map_blocks(&rho, setup), 1.0)];
    let mut stall = 0usize;
    let mut best_gap = f64::INFINITY;
    let mut f_prev = f;
    let mut converged = false;
    for it in 1..=max_iter {
        iterations = it;
        let g = gradient(&rho, setup);
        let lmo = linear_minimize(&g, setup, y_warm.as_ref(), eta)?;
        y_warm = Some(lmo.y);
        gap = hs_inner(&g, &rho) - lmo.dual_value;
        if std::env::var_os("KR_DEBUG").is_some() {
            eprintln!("FW it {it}: f {f:.9}, gap {gap:.4e}, atoms {}", atoms.len());
        }
        if gap <= tol {
            converged = true;
            break;
        }
        // away atom: the active atom the gradient most wants to leave
        let away = atoms
            .iter()
            .enumerate()
            .filter(|(_, (_, _, w))| *w > 1e-14)
            .max_by(|(_, (a, _, _)), (_, (b, _, _))| {
                hs_inner(&g, a).total_cmp(&hs_inner(&g, b))
            })
            .map(|(i, _)| i)
            .expect("atom weights sum to one");
        let w_away = atoms[away].2;
        let blocks_rho = key_map_blocks(&rho, setup);
        let blocks_sig = key_map_blocks(&lmo.sigma, setup);
        // candidate directions: pairwise (weight from the away atom toward
        // sigma), plain conditional-gradient (contract the hull toward
        // sigma), and pure away (off the away atom, staying in the hull);
        // near the optimum the recovered sigma is suboptimal by O(mu_rec)
        // and stops being a descent direction, but away steps keep polishing
        // the hull weights without needing sigma, so each iteration tries
        // the candidates in descending order of their linearized decrease
        // until one improves
        let gap_fw = hs_inner(&g, &rho) - hs_inner(&g, &lmo.sigma);
        let gap_away = hs_inner(&g, &atoms[away].0) - hs_inner(&g, &rho);
        let order: [usize; 3] = if gap_fw >= gap_away || w_away >= 1.0 - 1e-12 {
            [0, 1, 2]
        } else {
            [2, 0, 1]
        };
        let mut improved = false;
        for kind in order {
            // linearized decrease of each candidate; skip ascent directions
            let lin = match kind {
                0 => gap_fw + gap_away,
                1 => gap_fw,
                _ => gap_away,
            };
            if lin <= 0.0 {
                continue;
            }
            let (dir, dir_blocks, t_hi): (CMat, [CMat; 4], f64) = match kind {
                0 => (
                    &lmo.sigma - &atoms[away].0,
                    std::array::from_fn(|z| &blocks_sig[z] - &atoms[away].1[z]),
                    w_away,
                ),
                1 => (
                    &lmo.sigma - &rho,
                    std::array::from_fn(|z| &blocks_sig[z] - &blocks_rho[z]),
                    1.0,
                ),
                _ => (
                    &rho - &atoms[away].0,
                    std::array::from_fn(|z| &blocks_rho[z] - &atoms[away].1[z]),
                    // clamped: a weight near one makes the exact bound blow
                    // up along an (almost) zero direction
                    (w_away / (1.0 - w_away).max(1e-6)).min(1e3),
                ),
            };
            if !(t_hi > 0.0) || !t_hi.is_finite() {
                continue;
            }
            // exact line search; the key-map blocks are linear in rho, so
            // they are interpolated rather than recomputed per trial point
            let mut phi = |s: f64| {
                let mix = &rho + &dir * C::new(s, 0.0);
                let mut val = trace_x_log2_x(&eigvalsh(&mix), EIG_FLOOR);
                for z in 0..4 {
                    let bmix = &blocks_rho[z] + &dir_blocks[z] * C::new(s, 0.0);
                    val -= trace_x_log2_x(&eigvalsh(&bmix), EIG_FLOOR);
                }
                val
            };
            let (s_best, f_best) = line_search_min(&mut phi, t_hi);
            if f_best >= f {
                continue;
            }
            // the away direction extrapolates outside the recorded hull, and
            // accumulated weight drift can push it off the cone; reject such
            // steps rather than walking into an invalid iterate
            let rho_try = hermitize(&(&rho + &dir * C::new(s_best, 0.0)));
            if density_violation(&rho_try, 1e-10, 1e-9, 1e-9).is_some() {
                continue;
            }
            rho = rho_try;
            f = f_best;
            match kind {
                0 => {
                    atoms[away].2 -= s_best;
                    if atoms[away].2 <= 1e-14 {
                        atoms.swap_remove(away);
                    }
                    atoms.push((lmo.sigma.clone(), blocks_sig.clone(), s_best));
                }
                1 => {
                    for (_, _, w) in &mut atoms {
                        *w *= 1.0 - s_best;
                    }
                    atoms.push((lmo.sigma.clone(), blocks_sig.clone(), s_best));
                }
                _ => {
                    // rho + t (rho - a) rescales every weight by 1 + t and
                    // removes t from the away atom
                    for (_, _, w) in &mut atoms {
                        *w *= 1.0 + s_best;
                    }
                    atoms[away].2 -= s_best;
                    if atoms[away].2 <= 1e-14 {
                        atoms.swap_remove(away);
                    }
                }
            }
            improved = true;
            break;
        }
        // stop once neither side is making meaningful progress: the primal
        // decrease per iteration has fallen well below the remaining gap and
        // the warm-started dual has stagnated, so further iterations only
        // polish digits the certificate cannot use
        let f_progress = (f_prev - f) > 0.01 * gap;
        f_prev = f;
        if (improved && f_progress) || (!improved && gap < 0.99 * best_gap) {
            stall = 0;
        } else {
            stall += 1;
            if stall >= 25 {
                break;
            }
        }
        best_gap = best_gap.min(gap);
        // feasibility contract on every iterate
        if let Some(problem) = density_violation(&rho, 1e-10, 1e-9, 1e-9) {
            return Err(KeyRateError::InvalidState(problem));
        }
        let residual = constraint_residual(&rho, setup);
        if residual > 1e-7 {
            return Err(KeyRateError::InvalidState(format!(
                "constraint residual {residual:.3e} exceeds 1e-7"
            )));
        }
        eta = eta.max(residual);
    }
    let warm_out = WarmStart {
        rho: rho.clone(),
        y: y_warm.unwrap_or_else(|| DVector::zeros(setup.constraints.len())),
    };
    Ok((
        FwResult {
            rho,
            primal: f,
            gap,
            iterations,
            converged,
        },
        warm_out,
    ))
}

/// Line search on [0, hi] for objectives whose curvature can be extreme near
/// the cone boundary: a geometric sweep locates the right order of magnitude
/// (uniform golden sampling cannot resolve optima many decades below hi),
/// then a golden-section pass refines the surviving bracket.
fn line_search_min(phi: &mut dyn FnMut(f64) -> f64, hi: f64) -> (f64, f64) {
    let mut best = (hi, phi(hi));
    let mut s = hi;
    for _ in 0..24 {
        s *= 0.5;
        let v = phi(s);
        if v < best.1 {
            best = (s, v);
        } else if best.0 > s * 4.0 {
            // the sweep has passed the minimum and started climbing again
            break;
        }
    }
    let (refined, f_refined) =
        golden_section_min(phi, best.0 * 0.5, (best.0 * 2.0).min(hi), 12);
    if f_refined < best.1 {
        (refined, f_refined)
    } else {
        best
    }
}

fn golden_section_min(
    phi: &mut dyn FnMut(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    evals: usize,
) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = phi(x1);
    let mut f2 = phi(x2);
    let mut best = if f1 < f2 { (x1, f1) } else { (x2, f2) };
    for _ in 0..evals.saturating_sub(2) {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = phi(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = phi(x2);
        }
        let (xc, fc) = if f1 < f2 { (x1, f1) } else { (x2, f2) };
        if fc < best.1 {
            best = (xc, fc);
        }
    }
    best
}

/// A lower bound on the constrained minimum of the objective, with a flag
/// recording whether the bound is certified by a feasible dual point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerBound {
    pub bits: f64,
    pub certified: bool,
}

/// Converts the linearization at `rho_star` into a lower bound on the true
/// constrained minimum: objective(rho*) - (Tr[grad rho*] - dual optimum of
/// the linearized subproblem).
pub fn certified_lower_bound(
    rho_star: &CMat,
    setup: &ProtocolSetup,
) -> Result<LowerBound, KeyRateError> {
    let f = objective(rho_star, setup)?;
    let g = gradient(rho_star, setup);
    let eta = constraint_residual(rho_star, setup).max(constraint_residual(&setup.rho_start, setup));
    let lmo = linear_minimize(&g, setup, None, eta)?;
    Ok(LowerBound {
        bits: f - (hs_inner(&g, rho_star) - lmo.dual_value),
        certified: true,
    })
}

fn binary_entropy(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.log2() };
    term(p) + term(1.0 - p)
}

/// Reverse-reconciliation leakage delta_EC = H(Z) - beta_rec * I(X;Z) for the
/// quadrant key map of the heterodyne outcome.
///
/// The quadrant wedge centered on the sent phase is the intersection of two
/// orthogonal half-planes with inward normals at +-45 degrees from it, so
/// Bob's key symbol splits into two independent sign bits, each correct with
/// probability Phi(sqrt(T) alpha / (sqrt(2) sigma)); H(Z) = 2 by symmetry.
pub fn delta_ec(alpha: f64, c: &ChannelParams, beta_rec: f64) -> Result<f64, KeyRateError> {
    if !(beta_rec > 0.0 && beta_rec <= 1.0) {
        return Err(KeyRateError::InvalidParams(format!(
            "beta_rec must be in (0, 1], got {beta_rec}"
        )));
    }
    if !(alpha >= 0.0) {
        return Err(KeyRateError::InvalidParams(format!(
            "alpha must be >= 0, got {alpha}"
        )));
    }
    c.validate()?;
    let m = transmittance(c).sqrt() * alpha;
    let sigma = heterodyne_sigma_sq(c).sqrt();
    let a = crate::stats::normal_cdf(m / (2f64.sqrt() * sigma));
    let h_z_given_x = 2.0 * binary_entropy(a);
    let mutual_information = 2.0 - h_z_given_x;
    Ok(2.0 - beta_rec * mutual_information)
}

/// Source noise scenario entering the key-rate model as additive
/// state-preparation excess noise at the channel input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VoaSetting {
    /// Zero state-preparation noise (the active-encoder limit).
    Ideal,
    /// VOA attenuation in dB; the source noise model supplies the rest.
    Db(f64),
}

impl VoaSetting {
    /// Sort key: ideal sources order after any finite attenuation.
    pub fn sort_key(&self) -> f64 {
        match self {
            VoaSetting::Ideal => f64::INFINITY,
            VoaSetting::Db(v) => *v,
        }
    }
}

/// Full parameter set for one key-rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointSettings {
    pub loss_db_per_km: f64,
    /// Channel excess noise, exclusive of source preparation noise.
    pub xi_channel: f64,
    pub extra_attenuation_db: f64,
    pub beta_rec: f64,
    pub cutoff: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Alice's local detection efficiency in the source noise model.
    pub t_aq: f64,
    /// Alice's detector excess noise in the source noise model.
    pub e_aq: f64,
    /// Classical-light intensity |mu_s|^2 in the source noise model.
    pub mu_s_sq: f64,
}

impl Default for PointSettings {
    fn default() -> Self {
        Self {
            loss_db_per_km: 0.2,
            xi_channel: 0.01,
            extra_attenuation_db: 0.0,
            beta_rec: 0.95,
            cutoff: 12,
            tol: 2e-5,
            max_iter: 300,
            t_aq: 1.0,
            e_aq: 0.0,
            mu_s_sq: 1e8,
        }
    }
}

impl PointSettings {
    /// State-preparation excess noise for the given source scenario.
    pub fn source_epsilon(&self, voa: &VoaSetting) -> Result<f64, KeyRateError> {
        match voa {
            VoaSetting::Ideal => Ok(0.0),
            VoaSetting::Db(db) => {
                if !(*db >= 0.0) {
                    return Err(KeyRateError::InvalidParams(format!(
                        "voa_db must be >= 0, got {db}"
                    )));
                }
                Ok(excess_noise(&NoiseModelParams {
                    t0: 10f64.powf(-db / 10.0),
                    t_aq: self.t_aq,
                    e_aq: self.e_aq,
                    mu_s_sq: self.mu_s_sq,
                })?)
            }
        }
    }

    fn channel(&self, distance_km: f64, voa: &VoaSetting) -> Result<ChannelParams, KeyRateError> {
        Ok(ChannelParams {
            distance_km,
            loss_db_per_km: self.loss_db_per_km,
            excess_noise_xi: self.xi_channel + self.source_epsilon(voa)?,
            extra_attenuation_db: self.extra_attenuation_db,
        })
    }
}

/// One evaluated point of the key-rate curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRatePoint {
    pub distance_km: f64,
    pub alpha_opt: f64,
    pub primal: f64,
    pub lower_bound: f64,
    pub certified: bool,
    pub delta_ec: f64,
    /// max(0, lower_bound - delta_ec), bits/pulse.
    pub key_rate: f64,
    pub iterations: usize,
    pub cutoff_used: usize,
}

/// Computes the key rate at a fixed amplitude: builds the setup (retrying
/// once with cutoff + 4 if the truncation tail is too heavy), runs the
/// solver, converts the final linearization into a certified bound, and
/// subtracts the error-correction leakage.
pub fn keyrate_point(
    distance_km: f64,
    alpha: f64,
    voa: &VoaSetting,
    s: &PointSettings,
) -> Result<KeyRatePoint, KeyRateError> {
    keyrate_point_impl(distance_km, alpha, voa, s, None).map(|(pt, _)| pt)
}

fn keyrate_point_impl(
    distance_km: f64,
    alpha: f64,
    voa: &VoaSetting,
    s: &PointSettings,
    warm: Option<&WarmStart>,
) -> Result<(KeyRatePoint, WarmStart), KeyRateError> {
    let c = s.channel(distance_km, voa)?;
    let (setup, cutoff_used) = match build_protocol_state_setup(alpha, &c, s.cutoff) {
        Ok(setup) => (setup, s.cutoff),
        // a truncation tail too heavy for the declared cutoff can surface
        // either as the explicit tail check or as a projection that cannot
        // reach feasibility; both are cured by more Fock levels
        Err(KeyRateError::CutoffTooSmall { .. }) | Err(KeyRateError::InfeasibleSetup { .. }) => (
            build_protocol_state_setup(alpha, &c, s.cutoff + 4)?,
            s.cutoff + 4,
        ),
        Err(e) => return Err(e),
    };
    let (fw, warm_out) = frank_wolfe_minimize_impl(&setup, s.tol, s.max_iter, warm)?;
    // the final gap bound is exactly the dual correction at the last iterate
    let lower = fw.primal - fw.gap;
    let leak = delta_ec(alpha, &c, s.beta_rec)?;
    Ok((
        KeyRatePoint {
            distance_km,
            alpha_opt: alpha,
            primal: fw.primal,
            lower_bound: lower,
            certified: true,
            delta_ec: leak,
            key_rate: (lower - leak).max(0.0),
            iterations: fw.iterations,
            cutoff_used,
        },
        warm_out,
    ))
}

/// Amplitude search range for sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlphaSearch {
    pub min: f64,
    pub max: f64,
    pub resolution: f64,
}

impl Default for AlphaSearch {
    fn default() -> Self {
        Self {
            min: 0.3,
            max: 1.5,
            resolution: 0.01,
        }
    }
}

/// Golden-section maximization of the key rate over the amplitude, guarded by
/// a 5-point coarse scan (whose global maximum picks the bracket when the
/// scan is not unimodal).
pub fn optimize_alpha(
    distance_km: f64,
    voa: &VoaSetting,
    s: &PointSettings,
    search: &AlphaSearch,
) -> Result<KeyRatePoint, KeyRateError> {
    optimize_alpha_hinted(distance_km, voa, s, search, None)
}

/// `optimize_alpha` with an optional prior guess of the optimum: the coarse
/// scan is then replaced by a narrow bracket around the guess, which a sweep
/// exploits since the optimal amplitude drifts slowly along a curve.
fn optimize_alpha_hinted(
    distance_km: f64,
    voa: &VoaSetting,
    s: &PointSettings,
    search: &AlphaSearch,
    hint: Option<f64>,
) -> Result<KeyRatePoint, KeyRateError> {
    if !(search.min > 0.0 && search.max > search.min && search.resolution > 0.0) {
        return Err(KeyRateError::InvalidParams(format!(
            "alpha search range must satisfy 0 < min < max and resolution > 0, got {search:?}"
        )));
    }
    let mut best: Option<KeyRatePoint> = None;
    // the optimum state and multipliers drift slowly with alpha, so every
    // evaluation seeds the next one
    let mut warm: Option<WarmStart> = None;
    let eval = |a: f64, warm: &mut Option<WarmStart>, best: &mut Option<KeyRatePoint>| {
        let (pt, w) = keyrate_point_impl(distance_km, a, voa, s, warm.as_ref())?;
        *warm = Some(w);
        if best.map_or(true, |b| pt.key_rate > b.key_rate) {
            *best = Some(pt);
        }
        Ok::<f64, KeyRateError>(pt.key_rate)
    };

    let (mut lo, mut hi) = match hint {
        Some(h) if h.is_finite() && h >= search.min && h <= search.max => (
            (h - 0.05).max(search.min),
            (h + 0.05).min(search.max),
        ),
        _ => {
            const COARSE: usize = 5;
            let grid: Vec<f64> = (0..COARSE)
                .map(|i| search.min + (search.max - search.min) * i as f64 / (COARSE - 1) as f64)
                .collect();
            let mut coarse_rates = Vec::with_capacity(COARSE);
            for &a in &grid {
                coarse_rates.push(eval(a, &mut warm, &mut best)?);
            }
            let argmax = coarse_rates
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            (
                grid[argmax.saturating_sub(1)],
                grid[(argmax + 1).min(COARSE - 1)],
            )
        }
    };

    let (bracket_lo, bracket_hi) = (lo, hi);
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut r1 = eval(x1, &mut warm, &mut best)?;
    let mut r2 = eval(x2, &mut warm, &mut best)?;
    while hi - lo > search.resolution {
        if r1 > r2 {
            hi = x2;
            x2 = x1;
            r2 = r1;
            x1 = hi - INV_PHI * (hi - lo);
            r1 = eval(x1, &mut warm, &mut best)?;
        } else {
            lo = x1;
            x1 = x2;
            r1 = r2;
            x2 = lo + INV_PHI * (hi - lo);
            r2 = eval(x2, &mut warm, &mut best)?;
        }
    }
    let best = best.expect("at least one amplitude evaluated");
    // a maximum pinned to the edge of a hinted bracket means the guess was
    // stale; redo the full scan
    if hint.is_some()
        && (best.alpha_opt - bracket_lo)
            .abs()
            .min((bracket_hi - best.alpha_opt).abs())
            <= search.resolution
        && (bracket_lo > search.min || bracket_hi < search.max)
    {
        return optimize_alpha_hinted(distance_km, voa, s, search, None);
    }
    Ok(best)
}

/// One row of a sweep: solver failures are carried per row so a long sweep
/// survives individual bad points.
#[derive(Debug)]
pub struct SweepRow {
    pub voa: VoaSetting,
    pub distance_km: f64,
    pub result: Result<KeyRatePoint, KeyRateError>,
}

/// Distance x VOA sweep with per-point amplitude optimization. Rows are
/// ordered by (voa sort key, distance).
pub fn sweep(
    distances: &[f64],
    voa_settings: &[VoaSetting],
    s: &PointSettings,
    search: &AlphaSearch,
) -> Result<Vec<SweepRow>, KeyRateError> {
    if distances.is_empty() || voa_settings.is_empty() {
        return Err(KeyRateError::InvalidParams(
            "distances and voa settings must be nonempty".into(),
        ));
    }
    let mut voa_sorted = voa_settings.to_vec();
    voa_sorted.sort_by(|a, b| a.sort_key().total_cmp(&b.sort_key()));
    let mut dist_sorted = distances.to_vec();
    dist_sorted.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(voa_sorted.len() * dist_sorted.len());
    for voa in &voa_sorted {
        let mut hint = None;
        for &d in &dist_sorted {
            let result = optimize_alpha_hinted(d, voa, s, search, hint);
            if let Ok(pt) = &result {
                hint = Some(pt.alpha_opt);
            }
            rows.push(SweepRow {
                voa: *voa,
                distance_km: d,
                result,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::hermiticity_error;
    use crate::remap::ComplexOutcome;
    use crate::rng::RngSeed;

    fn loss_only(t_db_total: f64) -> ChannelParams {
        ChannelParams {
            distance_km: t_db_total / 0.2,
            loss_db_per_km: 0.2,
            excess_noise_xi: 0.0,
            extra_attenuation_db: 0.0,
        }
    }

    #[test]
    fn coherent_setup_tail_and_feasibility() {
        let c = ChannelParams {
            distance_km: 0.0,
            excess_noise_xi: 0.0,
            ..Default::default()
        };
        let setup = build_protocol_state_setup(0.8, &c, 12).unwrap();
        assert_eq!(setup.constraints.len(), 32);
        assert!(density_violation(&setup.rho_start, 1e-10, 1e-9, 1e-9).is_none());
        assert!(constraint_residual(&setup.rho_start, &setup) < 1e-9);
    }

    #[test]
    fn cutoff_too_small_rejected() {
        let c = ChannelParams {
            distance_km: 0.0,
            excess_noise_xi: 0.0,
            ..Default::default()
        };
        match build_protocol_state_setup(2.0, &c, 4) {
            Err(KeyRateError::CutoffTooSmall { tail, .. }) => assert!(tail > TAIL_TOL),
            other => panic!("expected cutoff error, got {other:?}"),
        }
    }

    #[test]
    fn channel_output_moments_match_analytics() {
        // trace of each conditional block and its q/p/n moments against the
        // analytic displaced-thermal expectations
        let c = ChannelParams {
            distance_km: 5.0,
            loss_db_per_km: 0.2,
            excess_noise_xi: 0.05,
            extra_attenuation_db: 0.0,
        };
        let fock_dim = 21;
        let rho = channel_output_state(0.9, &c, fock_dim);
        let q = q_op(fock_dim);
        let p = p_op(fock_dim);
        let n = number_op(fock_dim);
        let n_sq = &n * &n;
        for x in 0..4 {
            let block = rho
                .view((x * fock_dim, x * fock_dim), (fock_dim, fock_dim))
                .into_owned();
            let tr = trace_re(&block);
            assert!((tr - 0.25).abs() < 1e-9, "trace {tr}");
            let m = first_second_moments(x as u8, 0.9, &c);
            let cond = block.unscale(tr);
            assert!((hs_inner(&q, &cond) - m.q).abs() < 1e-8);
            assert!((hs_inner(&p, &cond) - m.p).abs() < 1e-8);
            assert!((hs_inner(&n, &cond) - m.n).abs() < 1e-8);
            assert!((hs_inner(&n_sq, &cond) - m.n_sq).abs() < 1e-7);
        }
    }

    #[test]
    fn constraints_match_sampled_heterodyne_moments() {
        // the q/p/n constraint expectations against the Monte-Carlo sampler;
        // <n> relates to the outcome through E|y|^2 - 1
        let c = ChannelParams {
            distance_km: 50.0,
            loss_db_per_km: 0.2,
            excess_noise_xi: 0.05,
            extra_attenuation_db: 0.0,
        };
        let alpha = 0.8;
        let n = 1_000_000usize;
        let sigma_sq = heterodyne_sigma_sq(&c);
        for x in 0..4u8 {
            let m = first_second_moments(x, alpha, &c);
            let samples = crate::channel::heterodyne_sample(
                f64::from(x) * FRAC_PI_2,
                alpha,
                &c,
                RngSeed(400 + u64::from(x)),
                n,
            )
            .unwrap();
            let mean_re = samples.iter().map(|s| s.re).sum::<f64>() / n as f64;
            let mean_im = samples.iter().map(|s| s.im).sum::<f64>() / n as f64;
            let mean_sq =
                samples.iter().map(|s| s.re * s.re + s.im * s.im).sum::<f64>() / n as f64;
            let se = (sigma_sq / n as f64).sqrt();
            assert!((mean_re - m.q).abs() < 3.0 * se, "q at x={x}");
            assert!((mean_im - m.p).abs() < 3.0 * se, "p at x={x}");
            // var(|y|^2) = 4 sigma^2 |mean|^2 + 8 sigma^4 for a symmetric
            // complex Gaussian; use a generous 4x band
            let mag_sq = m.q * m.q + m.p * m.p;
            let se_sq = ((4.0 * sigma_sq * mag_sq + 8.0 * sigma_sq * sigma_sq) / n as f64).sqrt();
            assert!((mean_sq - 1.0 - m.n).abs() < 4.0 * se_sq, "n at x={x}");
        }
    }

    #[test]
    fn objective_positive_and_double_implementation() {
        let c = loss_only(7.0); // T ~ 0.2
        let setup = build_protocol_state_setup(0.8, &c, 10).unwrap();
        let rho = setup.rho_start.clone();
        let f = objective(&rho, &setup).unwrap();
        assert!(f > 0.0, "objective {f}");

        // independent dense evaluation: build the isometry output
        // G = K rho K†, K = sum_z |z> (x) (I (x) sqrt(R_z)), pinch the key
        // register, and take D(G || Z(G)) directly
        let dim = setup.dim;
        let fd = setup.fock_dim;
        let big = 4 * dim;
        let mut k = CMat::zeros(big, dim);
        for z in 0..4 {
            let mut s_full = CMat::zeros(dim, dim);
            for x in 0..REGISTER_DIM {
                s_full
                    .view_mut((x * fd, x * fd), (fd, fd))
                    .copy_from(&setup.region_sqrt[z]);
            }
            k.view_mut((z * dim, 0), (dim, dim)).copy_from(&s_full);
        }
        let g_state = &k * &rho * k.adjoint();
        let mut pinched = CMat::zeros(big, big);
        for z in 0..4 {
            pinched
                .view_mut((z * dim, z * dim), (dim, dim))
                .copy_from(&g_state.view((z * dim, z * dim), (dim, dim)).into_owned());
        }
        let f2 = trace_x_log2_x(&eigvalsh(&g_state), EIG_FLOOR)
            - trace_x_log2_x(&eigvalsh(&pinched), EIG_FLOOR);
        assert!((f - f2).abs() < 1e-8, "{f} vs {f2}");
    }

    #[test]
    fn objective_rejects_invalid_state() {
        let c = loss_only(7.0);
        let setup = build_protocol_state_setup(0.8, &c, 8).unwrap();
        let bad = setup.rho_start.scale(2.0);
        assert!(matches!(
            objective(&bad, &setup),
            Err(KeyRateError::InvalidState(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = loss_only(7.0);
        let setup = build_protocol_state_setup(0.8, &c, 8).unwrap();
        // base point strictly inside the PSD cone (any physical state has
        // near-zero weight on the highest Fock levels, so exactly feasible
        // states sit on the cone boundary and two-sided differences through
        // them straddle the eigenvalue floor); the directions, not the base
        // point, are what carry the constraint structure
        let dim = setup.dim;
        let mixed = CMat::identity(dim, dim).unscale(dim as f64);
        let interior = setup.rho_start.scale(0.95) + mixed.scale(0.05);
        let g = gradient(&interior, &setup);
        let mut rng = RngSeed(77).rng();
        let step = 1e-5;
        let mut checked = 0;
        while checked < 20 {
            // random Hermitian direction in the null space of the constraints
            let h = CMat::from_fn(dim, dim, |_, _| {
                C::new(
                    rand::Rng::random_range(&mut rng, -1.0..1.0),
                    rand::Rng::random_range(&mut rng, -1.0..1.0),
                )
            });
            let mut d = hermitize(&h);
            for b in &setup.ortho_basis {
                let coeff = hs_inner(b, &d);
                d -= b * C::new(coeff, 0.0);
            }
            let norm = hs_inner(&d, &d).sqrt();
            if norm < 1e-8 {
                continue;
            }
            d = d.unscale(norm);
            let f_plus = objective_raw(&(&interior + &d * C::new(step, 0.0)), &setup);
            let f_minus = objective_raw(&(&interior - &d * C::new(step, 0.0)), &setup);
            let fd = (f_plus - f_minus) / (2.0 * step);
            let an = hs_inner(&g, &d);
            assert!(
                (fd - an).abs() <= 1e-4 * an.abs().max(1.0),
                "direction {checked}: fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
    }

    #[test]
    fn frank_wolfe_converges_on_loss_only_instance() {
        let c = loss_only(7.0); // T ~ 0.2
        let setup = build_protocol_state_setup(0.8, &c, 12).unwrap();
        let fw = frank_wolfe_minimize(&setup, 1e-5, 300).unwrap();
        assert!(
            fw.converged,
            "gap {} after {} iterations",
            fw.gap, fw.iterations
        );
        assert!(fw.gap <= 1e-5);
        assert!(density_violation(&fw.rho, 1e-10, 1e-9, 1e-9).is_none());
        assert!(constraint_residual(&fw.rho, &setup) < 1e-7);
        // certified bound: positive, below the primal, within 10% of it
        let lb = certified_lower_bound(&fw.rho, &setup).unwrap();
        assert!(lb.certified);
        assert!(lb.bits <= fw.primal + 1e-6);
        assert!(lb.bits > 0.0);
        assert!((fw.primal - lb.bits) / fw.primal < 0.1);
    }

    #[test]
    fn lmo_block_algebra_matches_dense() {
        let c = loss_only(7.0);
        let setup = build_protocol_state_setup(0.7, &c, 6).unwrap();
        let dim = setup.dim;
        let fd = setup.fock_dim;
        // a strictly PD "slack": identity plus a small Hermitian perturbation
        let mut rng = RngSeed(91).rng();
        let h = CMat::from_fn(dim, dim, |_, _| {
            C::new(
                rand::Rng::random_range(&mut rng, -0.02..0.02),
                rand::Rng::random_range(&mut rng, -0.02..0.02),
            )
        });
        let s = CMat::identity(dim, dim) + hermitize(&h);
        let s_inv = chol_pd(s).unwrap().inverse();
        let a: Vec<ColBlocks> = setup
            .constraints
            .iter()
            .map(|cst| ColBlocks {
                blocks: cst
                    .terms
                    .iter()
                    .map(|(x, xp, op)| (*xp, s_inv.view((0, x * fd), (dim, fd)) * op))
                    .collect(),
            })
            .collect();
        let dense: Vec<CMat> = setup
            .constraints
            .iter()
            .map(|cst| &s_inv * &cst.observable)
            .collect();
        for (i, ai) in a.iter().enumerate() {
            let t_dense = trace_re(&dense[i]);
            assert!(
                (ai.trace(fd) - t_dense).abs() < 1e-10 * t_dense.abs().max(1.0),
                "trace mismatch at {i}"
            );
            for (j, aj) in a.iter().enumerate() {
                let p_dense = (&dense[i] * &dense[j]).diagonal().iter().map(|v| v.re).sum::<f64>();
                assert!(
                    (ai.pair_trace(aj, fd) - p_dense).abs() < 1e-10 * p_dense.abs().max(1.0),
                    "pair trace mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn delta_ec_limits() {
        let c = ChannelParams {
            distance_km: 0.0,
            excess_noise_xi: 0.0,
            ..Default::default()
        };
        let d = delta_ec(50.0, &c, 0.95).unwrap();
        assert!((d - 2.0 * (1.0 - 0.95)).abs() < 1e-9, "noiseless limit {d}");
        let d0 = delta_ec(0.0, &c, 0.95).unwrap();
        assert!((d0 - 2.0).abs() < 1e-12, "no-signal limit {d0}");
    }

    #[test]
    fn delta_ec_matches_monte_carlo() {
        let c = ChannelParams {
            distance_km: 35.0, // T = 0.2
            loss_db_per_km: 0.2,
            excess_noise_xi: 0.01,
            extra_attenuation_db: 0.0,
        };
        let alpha = 0.8;
        let beta_rec = 0.95;
        let analytic = delta_ec(alpha, &c, beta_rec).unwrap();

        // plug-in estimate of H(Z) - beta I(X;Z) from sampled outcomes
        let n_per_x = 2_500_000usize;
        let mut joint = [[0u64; 4]; 4];
        for x in 0..4u8 {
            let samples = crate::channel::heterodyne_sample(
                f64::from(x) * FRAC_PI_2,
                alpha,
                &c,
                RngSeed(500 + u64::from(x)),
                n_per_x,
            )
            .unwrap();
            for s in samples {
                let z = quadrant_of(&s);
                joint[usize::from(x)][z] += 1;
            }
        }
        let total = (4 * n_per_x) as f64;
        let mut h_z = 0.0;
        let mut h_z_given_x = 0.0;
        for z in 0..4 {
            let pz: f64 = (0..4).map(|x| joint[x][z] as f64).sum::<f64>() / total;
            if pz > 0.0 {
                h_z -= pz * pz.log2();
            }
        }
        for row in &joint {
            let nx: f64 = row.iter().map(|&v| v as f64).sum();
            for &v in row {
                if v > 0 {
                    let p = v as f64 / nx;
                    h_z_given_x -= 0.25 * p * p.log2();
                }
            }
        }
        let mc = h_z - beta_rec * (h_z - h_z_given_x);
        assert!(
            (mc - analytic).abs() < 1e-3,
            "analytic {analytic} vs monte carlo {mc}"
        );
    }

    fn quadrant_of(s: &ComplexOutcome) -> usize {
        let angle = s.im.atan2(s.re) + FRAC_PI_2 / 2.0;
        let wrapped = angle.rem_euclid(std::f64::consts::TAU);
        ((wrapped / FRAC_PI_2) as usize).min(3)
    }

    #[test]
    fn keyrate_point_deterministic_and_positive_at_short_distance() {
        let s = PointSettings {
            max_iter: 40,
            tol: 1e-4,
            ..Default::default()
        };
        let p1 = keyrate_point(0.0, 0.8, &VoaSetting::Ideal, &s).unwrap();
        let p2 = keyrate_point(0.0, 0.8, &VoaSetting::Ideal, &s).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.key_rate > 0.0, "rate {}", p1.key_rate);
        assert!(p1.lower_bound <= p1.primal + 1e-6);
    }

    #[test]
    fn region_sqrt_blocks_are_hermitian() {
        let c = loss_only(7.0);
        let setup = build_protocol_state_setup(0.8, &c, 8).unwrap();
        for s in &setup.region_sqrt {
            assert!(hermiticity_error(s) < 1e-10);
        }
    }

    #[test]
    fn source_epsilon_scenarios() {
        let s = PointSettings::default();
        assert_eq!(s.source_epsilon(&VoaSetting::Ideal).unwrap(), 0.0);
        let eps70 = s.source_epsilon(&VoaSetting::Db(70.0)).unwrap();
        let eps30 = s.source_epsilon(&VoaSetting::Db(30.0)).unwrap();
        assert!(eps70 < eps30);
        assert!((eps70 - 2e-7).abs() / 2e-7 < 0.1, "eps70 = {eps70}");
    }
}
