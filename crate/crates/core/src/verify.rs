//! Independent checks of the production solvers.
//!
//! Nothing in here calls the forward or adjoint fixed-point solvers on its own
//! minimization path: [`brute_force_state`] minimizes the convex energy whose
//! stationary points are the discrete states, with a dense Newton method.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::doping::DopingProfile;
use crate::error::{Error, Result};
use crate::fem::{max_abs, AssembledForms};
use crate::objective::{riesz_gradient, ReducedProblem};
use crate::parallel::{self, Execution};
use crate::state::{StateSolution, MAX_POTENTIAL};

/// Largest mesh accepted by [`brute_force_state`].
pub const BRUTE_FORCE_MAX_NODES: usize = 7;
/// L∞ agreement required between production states and the brute-force minimizer.
pub const STATE_ORACLE_TOL: f64 = 1e-6;
/// Relative agreement required between adjoint and finite-difference derivatives.
pub const GRADIENT_ORACLE_TOL: f64 = 1e-4;
/// Relative agreement required by the nodal quadratic-formula check.
pub const QUADRATIC_ORACLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct OracleCase {
    pub label: String,
    pub expected: f64,
    pub actual: f64,
    pub abs_err: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub threshold: f64,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub pass: bool,
    pub details: Vec<OracleCase>,
}

impl OracleReport {
    /// Builds the report; `pass` compares `max_rel_err` (or `max_abs_err` when
    /// `absolute`) with `threshold`.
    fn new(name: &str, threshold: f64, absolute: bool, details: Vec<OracleCase>) -> Self {
        let max_abs_err = details.iter().map(|c| c.abs_err).fold(0.0, f64::max);
        let max_rel_err = details.iter().map(|c| c.rel_err).fold(0.0, f64::max);
        let measured = if absolute { max_abs_err } else { max_rel_err };
        let finite = details.iter().all(|c| c.abs_err.is_finite());
        Self {
            name: name.to_string(),
            threshold,
            max_abs_err,
            max_rel_err,
            pass: finite && measured <= threshold,
            details,
        }
    }
}

fn case(label: String, expected: f64, actual: f64) -> OracleCase {
    let abs_err = (actual - expected).abs();
    let scale = expected.abs().max(actual.abs());
    OracleCase {
        label,
        expected,
        actual,
        abs_err,
        rel_err: if scale > 0.0 { abs_err / scale } else { 0.0 },
    }
}

/// `½λ²VᵀSV + N ln(∫e^{−V}/|Ω|) + P ln(∫e^{V}/|Ω|) + ∫CV`.
///
/// Its gradient on zero-mean fields is the discrete state residual, so the
/// discrete state is its unique minimizer. Vanishes at `V = 0`.
pub fn energy_functional(
    forms: &AssembledForms,
    dp: &DopingProfile,
    v: &[f64],
    lambda2: f64,
) -> Result<f64> {
    forms.mesh.check(v)?;
    let m = max_abs(v);
    if m > MAX_POTENTIAL {
        return Err(Error::PotentialOverflow { max_abs: m });
    }
    let omega = forms.mesh.measure();
    let mut int_em = 0.0;
    let mut int_ep = 0.0;
    let mut int_cv = 0.0;
    for i in 0..v.len() {
        let w = forms.weights[i];
        int_em += w * (-v[i]).exp();
        int_ep += w * v[i].exp();
        int_cv += w * dp.c[i] * v[i];
    }
    let e = 0.5 * lambda2 * forms.stiffness.quad_form(v)
        + dp.totals.n_total * (int_em / omega).ln()
        + dp.totals.p_total * (int_ep / omega).ln()
        + int_cv;
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::NonFinite("energy functional"))
    }
}

#[derive(Debug, Clone)]
pub struct BruteForceState {
    pub v: Vec<f64>,
    pub iterations: usize,
    /// `W⁻¹`-weighted norm of the projected energy gradient at `v`.
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Minimizes [`energy_functional`] over zero-mean nodal vectors by a dense
/// damped Newton method with the exact Hessian.
pub fn brute_force_state(
    forms: &AssembledForms,
    dp: &DopingProfile,
    lambda2: f64,
) -> Result<BruteForceState> {
    let len = forms.len();
    if len > BRUTE_FORCE_MAX_NODES {
        return Err(Error::InvalidMesh(format!(
            "brute-force minimization is limited to {BRUTE_FORCE_MAX_NODES} nodes, got {len}"
        )));
    }
    forms.mesh.check(&dp.c)?;
    let w = &forms.weights;
    let (big_n, big_p) = (dp.totals.n_total, dp.totals.p_total);
    let s = forms.stiffness.to_dense();

    // energy gradient and Hessian at v
    let derivatives = |v: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let em: Vec<f64> = v.iter().map(|x| (-x).exp()).collect();
        let ep: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        let im: f64 = (0..len).map(|i| w[i] * em[i]).sum();
        let ip: f64 = (0..len).map(|i| w[i] * ep[i]).sum();
        let n: Vec<f64> = em.iter().map(|e| big_n * e / im).collect();
        let p: Vec<f64> = ep.iter().map(|e| big_p * e / ip).collect();
        let sv = &s * DVector::from_column_slice(v);
        let grad = DVector::from_fn(len, |i, _| {
            lambda2 * sv[i] + w[i] * (-n[i] + p[i] + dp.c[i])
        });
        let hess = DMatrix::from_fn(len, len, |i, j| {
            let diag = if i == j { w[i] * (n[i] + p[i]) } else { 0.0 };
            lambda2 * s[(i, j)] + diag
                - w[i] * n[i] * w[j] * n[j] / big_n
                - w[i] * p[i] * w[j] * p[j] / big_p
        });
        (grad, hess)
    };
    // gradient restricted to zero-mean directions, in the W⁻¹ norm
    let projected_norm = |g: &DVector<f64>| -> f64 {
        let total: f64 = g.iter().sum();
        let omega: f64 = w.iter().sum();
        (0..len)
            .map(|i| (g[i] - total * w[i] / omega).powi(2) / w[i])
            .sum::<f64>()
            .sqrt()
    };

    let mut v = vec![0.0; len];
    let mut energy = energy_functional(forms, dp, &v, lambda2)?;
    let (mut grad, mut hess) = derivatives(&v);
    let mut gnorm = projected_norm(&grad);
    let scale = (big_n + big_p) / forms.mesh.measure().sqrt();
    for it in 0..500 {
        if gnorm <= 1e-14 * scale {
            return Ok(BruteForceState {
                v,
                iterations: it,
                gradient_norm: gnorm,
                converged: true,
            });
        }
        // [H w; wᵀ 0] [d; μ] = [−∇E; 0]
        let mut k = DMatrix::zeros(len + 1, len + 1);
        k.view_mut((0, 0), (len, len)).copy_from(&hess);
        for i in 0..len {
            k[(i, len)] = w[i];
            k[(len, i)] = w[i];
        }
        let mut rhs = DVector::zeros(len + 1);
        for i in 0..len {
            rhs[i] = -grad[i];
        }
        let sol = k
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("brute-force Newton system".into()))?;
        let dir: Vec<f64> = (0..len).map(|i| sol[i]).collect();

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let trial: Vec<f64> = v.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            if let Ok(e) = energy_functional(forms, dp, &trial, lambda2) {
                let (g, h) = derivatives(&trial);
                let gn = projected_norm(&g);
                // near the minimum energy differences drown in roundoff; a
                // smaller gradient is then the better acceptance signal
                if e < energy || (e <= energy + 1e-15 * energy.abs().max(1.0) && gn < gnorm) {
                    accepted = Some((trial, e, g, h, gn));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((trial, e, g, h, gn)) => {
                v = trial;
                energy = e;
                grad = g;
                hess = h;
                gnorm = gn;
            }
            None => {
                return Ok(BruteForceState {
                    v,
                    iterations: it,
                    gradient_norm: gnorm,
                    converged: gnorm <= 1e-10 * scale,
                })
            }
        }
    }
    Ok(BruteForceState {
        v,
        iterations: 500,
        gradient_norm: gnorm,
        converged: gnorm <= 1e-10 * scale,
    })
}

/// Compares a production state with the brute-force minimizer in L∞.
pub fn check_state_against_brute_force(
    forms: &AssembledForms,
    dp: &DopingProfile,
    sol: &StateSolution,
) -> Result<OracleReport> {
    let oracle = brute_force_state(forms, dp, sol.lambda2)?;
    let details = oracle
        .v
        .iter()
        .zip(&sol.v)
        .enumerate()
        .map(|(i, (e, a))| case(format!("V[{i}]"), *e, *a))
        .collect();
    let mut report = OracleReport::new("brute-force state", STATE_ORACLE_TOL, true, details);
    report.pass &= oracle.converged;
    Ok(report)
}

/// `(e^{−V}, e^{V})` densities checked against the roots of
/// `g² + gC/β − γ⁴/β² = 0`, evaluated with the cancellation-free pairing of
/// the two roots.
pub fn quadratic_formula_check(sol: &StateSolution, dp: &DopingProfile) -> OracleReport {
    let beta = sol.beta;
    let g4 = sol.gamma2 * sol.gamma2;
    let details =
        dp.c.iter()
            .zip(&sol.p)
            .enumerate()
            .map(|(i, (&c, &p))| {
                let b = c / beta;
                let cc = -g4 / (beta * beta);
                // q = −½(b + sgn(b)√(b² − 4cc)); roots q and cc/q
                let q = -0.5 * (b + b.signum() * (b * b - 4.0 * cc).sqrt());
                let root = if q > 0.0 { q } else { cc / q };
                case(format!("p[{i}]"), beta * root, p)
            })
            .collect();
    OracleReport::new(
        "nodal quadratic formula",
        QUADRATIC_ORACLE_TOL,
        false,
        details,
    )
}

/// Central difference of `Ĵ` along `h`.
pub fn fd_directional(problem: &ReducedProblem, u: &[f64], h: &[f64], eps: f64) -> Result<f64> {
    let plus: Vec<f64> = u.iter().zip(h).map(|(a, b)| a + eps * b).collect();
    let minus: Vec<f64> = u.iter().zip(h).map(|(a, b)| a - eps * b).collect();
    let jp = problem.reduced_cost(&plus)?.total;
    let jm = problem.reduced_cost(&minus)?.total;
    Ok((jp - jm) / (2.0 * eps))
}

fn check_eps(eps: f64) -> Result<()> {
    if (1e-8..=1e-4).contains(&eps) {
        Ok(())
    } else {
        Err(Error::param(
            "eps",
            format!("must lie in [1e-8, 1e-4], got {eps}"),
        ))
    }
}

/// Riesz gradient assembled from central differences along the nodal
/// zero-mean directions `e_i − w_i/|Ω|`.
pub fn fd_gradient(
    problem: &ReducedProblem,
    u: &[f64],
    eps: f64,
    exec: Execution,
) -> Result<Vec<f64>> {
    check_eps(eps)?;
    problem.forms.mesh.check(u)?;
    let len = u.len();
    let omega = problem.forms.mesh.measure();
    let indices: Vec<usize> = (0..len).collect();
    let load = parallel::map(exec, &indices, |&i| {
        let h: Vec<f64> = (0..len)
            .map(|j| if i == j { 1.0 } else { 0.0 } - problem.forms.weights[i] / omega)
            .collect();
        fd_directional(problem, u, &h, eps)
    });
    let load: Vec<f64> = load.into_iter().collect::<Result<_>>()?;
    Ok(riesz_gradient(&problem.forms, &load)?.g)
}

/// Random zero-mean directions with entries drawn from `[−1, 1)`.
pub fn random_directions(forms: &AssembledForms, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut h: Vec<f64> = (0..forms.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            forms.subtract_mean(&mut h);
            h
        })
        .collect()
}

/// Adjoint directional derivatives `hᵀSg` against central differences.
pub fn gradcheck(
    problem: &ReducedProblem,
    u: &[f64],
    directions: &[Vec<f64>],
    eps: f64,
    exec: Execution,
) -> Result<OracleReport> {
    check_eps(eps)?;
    let eval = problem.evaluate(u)?;
    let (_, g) = problem.gradient(&eval)?;
    let fd = parallel::map(exec, directions, |h| fd_directional(problem, u, h, eps));
    let mut details = Vec::with_capacity(directions.len());
    for (k, (h, fd)) in directions.iter().zip(fd).enumerate() {
        let adjoint = problem.forms.stiffness.bilinear(h, &g.g);
        details.push(case(format!("direction {k}"), fd?, adjoint));
    }
    Ok(OracleReport::new(
        "adjoint gradient",
        GRADIENT_ORACLE_TOL,
        false,
        details,
    ))
}
