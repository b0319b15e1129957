//! Adjoint of the nonlocal Poisson problem.
//!
//! The adjoint `ξ` solves `−λ²Δξ + K[ξ] = K_n[n − n_d] − K_p[p − p_d]` with
//! zero mean, where `K = K_n + K_p` and `K_n[h] = n(h − (1/N)∫nh)`.
//!
//! For `λ > 0` the nonlocal part is moved into two scalars `ξ^α, ξ^β`, leaving
//! the sparse local problem
//! `−λ²Δξ + (n+p)ξ = n(n−n_d) − p(p−p_d) + nξ^α + pξ^β`. The substitution
//! iteration in `(ξ^α, ξ^β)` contracts, but with a factor approaching one as
//! `λ → 0`. Because `ξ` depends affinely on `(ξ^α, ξ^β)`, the fixed point can
//! also be found exactly from two extra solves; [`AdjointIteration::Accelerated`]
//! does that and then runs the substitution iteration to confirm it.
//!
//! For `λ = 0` the dense system `W(D − H)ξ = Wf` is solved directly.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem::{sub, AssembledForms};
use crate::state::StateSolution;

/// Desired carrier densities.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTargets {
    pub n_d: Vec<f64>,
    pub p_d: Vec<f64>,
}

impl TrackingTargets {
    pub fn new(forms: &AssembledForms, n_d: Vec<f64>, p_d: Vec<f64>) -> Result<Self> {
        forms.mesh.check(&n_d)?;
        forms.mesh.check(&p_d)?;
        if n_d.iter().chain(&p_d).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tracking targets"));
        }
        Ok(Self { n_d, p_d })
    }

    /// Targets equal to the densities of `sol`.
    pub fn from_state(sol: &StateSolution) -> Self {
        Self {
            n_d: sol.n.clone(),
            p_d: sol.p.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjointIteration {
    /// Exact fixed point in `(ξ^α, ξ^β)`, then substitution until the
    /// update test passes.
    #[default]
    Accelerated,
    /// Substitution from `ξ^α = ξ^β = 0`.
    Plain,
}

#[derive(Debug, Clone)]
pub struct AdjointOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub iteration: AdjointIteration,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100_000,
            iteration: AdjointIteration::Accelerated,
        }
    }
}

impl AdjointOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    /// Zero-mean adjoint potential.
    pub xi: Vec<f64>,
    pub xi_alpha: f64,
    pub xi_beta: f64,
    pub lambda2: f64,
    pub iterations: usize,
    /// Residual of the nonlocal equation, see [`adjoint_residual`].
    pub residual: f64,
    /// `‖ξ_k − ξ_{k−1}‖_{H¹}` per iteration.
    pub history: Vec<f64>,
    /// `N|ε^α_k|² + P|ε^β_k|²` with `ε_k` the change of the multipliers.
    pub multiplier_changes: Vec<f64>,
}

impl AdjointSolution {
    /// Ratios of successive entries of [`Self::history`].
    pub fn contraction_ratios(&self) -> Vec<f64> {
        self.history.windows(2).map(|w| w[1] / w[0]).collect()
    }
}

fn totals(forms: &AssembledForms, sol: &StateSolution) -> (f64, f64) {
    (forms.integral(&sol.n), forms.integral(&sol.p))
}

/// `n(h − (1/N)∫nh)`
pub fn apply_k_n(forms: &AssembledForms, sol: &StateSolution, h: &[f64]) -> Vec<f64> {
    let (big_n, _) = totals(forms, sol);
    let m = forms.integral_prod(&sol.n, h) / big_n;
    sol.n.iter().zip(h).map(|(n, h)| n * (h - m)).collect()
}

/// `p(h − (1/P)∫ph)`
pub fn apply_k_p(forms: &AssembledForms, sol: &StateSolution, h: &[f64]) -> Vec<f64> {
    let (_, big_p) = totals(forms, sol);
    let m = forms.integral_prod(&sol.p, h) / big_p;
    sol.p.iter().zip(h).map(|(p, h)| p * (h - m)).collect()
}

/// `K[h] = K_n[h] + K_p[h]`
pub fn apply_k(forms: &AssembledForms, sol: &StateSolution, h: &[f64]) -> Result<Vec<f64>> {
    forms.mesh.check(h)?;
    let kn = apply_k_n(forms, sol, h);
    let kp = apply_k_p(forms, sol, h);
    Ok(kn.iter().zip(&kp).map(|(a, b)| a + b).collect())
}

/// `f = K_n[n − n_d] − K_p[p − p_d]`; integrates to zero.
pub fn adjoint_rhs(
    forms: &AssembledForms,
    sol: &StateSolution,
    targets: &TrackingTargets,
) -> Result<Vec<f64>> {
    forms.mesh.check(&targets.n_d)?;
    forms.mesh.check(&targets.p_d)?;
    let kn = apply_k_n(forms, sol, &sub(&sol.n, &targets.n_d));
    let kp = apply_k_p(forms, sol, &sub(&sol.p, &targets.p_d));
    Ok(kn.iter().zip(&kp).map(|(a, b)| a - b).collect())
}

/// Matrix of `h ↦ W·K[h]`: `W(D − H)` with `D = diag(n + p)` and
/// `H_ij = n_i n_j w_j / N + p_i p_j w_j / P`. Symmetric, with constants in
/// its kernel.
pub fn kernel_matrix(forms: &AssembledForms, sol: &StateSolution) -> DMatrix<f64> {
    let (big_n, big_p) = totals(forms, sol);
    let (n, p, w) = (&sol.n, &sol.p, &forms.weights);
    let len = n.len();
    DMatrix::from_fn(len, len, |i, j| {
        let d = if i == j { n[i] + p[i] } else { 0.0 };
        let h = n[i] * n[j] * w[j] / big_n + p[i] * p[j] * w[j] / big_p;
        w[i] * (d - h)
    })
}

/// `(ξ^α, ξ^β)` as functions of `ξ`.
pub fn multipliers(
    forms: &AssembledForms,
    sol: &StateSolution,
    targets: &TrackingTargets,
    xi: &[f64],
) -> (f64, f64) {
    let (big_n, big_p) = totals(forms, sol);
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..xi.len() {
        let w = forms.weights[i];
        a += w * sol.n[i] * (xi[i] - (sol.n[i] - targets.n_d[i]));
        b += w * sol.p[i] * (xi[i] + (sol.p[i] - targets.p_d[i]));
    }
    (a / big_n, b / big_p)
}

/// Projected residual `λ²Sξ + W(K[ξ] − f)` in the `W⁻¹`-weighted norm.
pub fn adjoint_residual(
    forms: &AssembledForms,
    sol: &StateSolution,
    targets: &TrackingTargets,
    xi: &[f64],
) -> Result<f64> {
    let k = apply_k(forms, sol, xi)?;
    let f = adjoint_rhs(forms, sol, targets)?;
    let mut r = forms.stiffness.mul_vec(xi);
    for i in 0..r.len() {
        r[i] = sol.lambda2 * r[i] + forms.weights[i] * (k[i] - f[i]);
    }
    forms.project_load(&mut r);
    Ok(r.iter()
        .zip(&forms.weights)
        .map(|(r, w)| r * r / w)
        .sum::<f64>()
        .sqrt())
}

/// Fixed-point solver for `λ > 0` on the local reformulation.
pub fn solve_adjoint_lambda(
    forms: &AssembledForms,
    sol: &StateSolution,
    targets: &TrackingTargets,
    opts: &AdjointOptions,
) -> Result<AdjointSolution> {
    if !(sol.lambda2 > 0.0) {
        return Err(Error::param(
            "lambda2",
            "the local reformulation needs λ² > 0",
        ));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::param(
            "tol",
            "tolerance must be positive and max_iter ≥ 1",
        ));
    }
    forms.mesh.check(&sol.n)?;
    forms.mesh.check(&targets.n_d)?;
    forms.mesh.check(&targets.p_d)?;
    let (big_n, big_p) = totals(forms, sol);
    let len = sol.n.len();
    let (n, p, w) = (&sol.n, &sol.p, &forms.weights);
    let d: Vec<f64> = (0..len).map(|i| w[i] * (n[i] + p[i])).collect();
    let a = forms.stiffness.scaled_plus_diag(sol.lambda2, &d);
    let base: Vec<f64> = (0..len)
        .map(|i| w[i] * (n[i] * (n[i] - targets.n_d[i]) - p[i] * (p[i] - targets.p_d[i])))
        .collect();
    let y0 = forms.solve_bordered(&a, &base)?.x;
    let wn: Vec<f64> = (0..len).map(|i| w[i] * n[i]).collect();
    let wp: Vec<f64> = (0..len).map(|i| w[i] * p[i]).collect();
    let yn = forms.solve_bordered(&a, &wn)?.x;
    let yp = forms.solve_bordered(&a, &wp)?.x;
    // ξ(z) = y0 + ξ^α yn + ξ^β yp, solution operator of the local problem
    let combine = |za: f64, zb: f64| -> Vec<f64> {
        (0..len).map(|i| y0[i] + za * yn[i] + zb * yp[i]).collect()
    };

    let (mut za, mut zb) = match opts.iteration {
        AdjointIteration::Plain => (0.0, 0.0),
        AdjointIteration::Accelerated => {
            let (ca, cb) = multipliers(forms, sol, targets, &y0);
            let b11 = forms.integral_prod(n, &yn) / big_n;
            let b12 = forms.integral_prod(n, &yp) / big_n;
            let b21 = forms.integral_prod(p, &yn) / big_p;
            let b22 = forms.integral_prod(p, &yp) / big_p;
            let (m11, m12, m21, m22) = (1.0 - b11, -b12, -b21, 1.0 - b22);
            let det = m11 * m22 - m12 * m21;
            if det.abs() <= 1e-14 {
                (0.0, 0.0)
            } else {
                ((m22 * ca - m12 * cb) / det, (m11 * cb - m21 * ca) / det)
            }
        }
    };

    let mut xi_prev = vec![0.0; len];
    let mut history = Vec::new();
    let mut changes = Vec::new();
    for k in 1..=opts.max_iter {
        let mut xi = combine(za, zb);
        forms.subtract_mean(&mut xi);
        let (na, nb) = multipliers(forms, sol, targets, &xi);
        let (ea, eb) = (na - za, nb - zb);
        changes.push(big_n * ea * ea + big_p * eb * eb);
        za = na;
        zb = nb;
        let update = forms.h1_norm(&sub(&xi, &xi_prev));
        if !update.is_finite() {
            return Err(Error::NonFinite("adjoint iteration"));
        }
        let prev = history.last().copied();
        history.push(update);
        let floor = 1e-13 * forms.h1_norm(&xi).max(1e-300);
        let done = update <= opts.tol
            || (k > 2 && update <= floor && prev.is_some_and(|p| update >= 0.5 * p));
        if done {
            let residual = adjoint_residual(forms, sol, targets, &xi)?;
            return Ok(AdjointSolution {
                xi,
                xi_alpha: za,
                xi_beta: zb,
                lambda2: sol.lambda2,
                iterations: k,
                residual,
                history,
                multiplier_changes: changes,
            });
        }
        xi_prev = xi;
    }
    Err(Error::NotConverged {
        solver: "adjoint fixed point (λ > 0)",
        iterations: opts.max_iter,
        last: history.last().copied().unwrap_or(f64::NAN),
        history: history.windows(2).map(|w| w[1] / w[0]).collect(),
    })
}

/// Direct dense solve of the `λ = 0` system `K[ξ] = f`, `∫ξ = 0`.
pub fn solve_adjoint_zero(
    forms: &AssembledForms,
    sol: &StateSolution,
    targets: &TrackingTargets,
) -> Result<AdjointSolution> {
    let f = adjoint_rhs(forms, sol, targets)?;
    let mut a = kernel_matrix(forms, sol);
    if sol.lambda2 > 0.0 {
        // the same direct solve also works with the Laplacian added
        let s = forms.stiffness.to_dense();
        a += s * sol.lambda2;
    }
    let rhs: Vec<f64> = f.iter().zip(&forms.weights).map(|(f, w)| f * w).collect();
    let xi = forms.solve_bordered(&a, &rhs)?.x;
    let (xi_alpha, xi_beta) = multipliers(forms, sol, targets, &xi);
    let residual = adjoint_residual(forms, sol, targets, &xi)?;
    Ok(AdjointSolution {
        xi,
        xi_alpha,
        xi_beta,
        lambda2: sol.lambda2,
        iterations: 1,
        residual,
        history: Vec::new(),
        multiplier_changes: Vec::new(),
    })
}

/// Dispatches on the state's `λ²`.
pub fn solve_adjoint(
    forms: &AssembledForms,
    sol: &StateSolution,
    targets: &TrackingTargets,
    opts: &AdjointOptions,
) -> Result<AdjointSolution> {
    if sol.lambda2 == 0.0 {
        solve_adjoint_zero(forms, sol, targets)
    } else {
        solve_adjoint_lambda(forms, sol, targets, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doping::DopingProfile;
    use crate::fem::{assemble, max_abs, Mesh1D};
    use crate::state::{solve_state, StateOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(nodes: usize, lambda2: f64) -> (AssembledForms, StateSolution, TrackingTargets) {
        let mesh = Mesh1D::unit(nodes).unwrap();
        let forms = assemble(&mesh);
        let c = mesh.interpolate(|x| (0.5 - x).tanh() * 2.0 + 0.3 * x);
        let dp = DopingProfile::reference(&forms, c.clone(), 1e-6).unwrap();
        let sol = solve_state(&forms, &dp, lambda2, &StateOptions::default()).unwrap();
        let targets = TrackingTargets {
            n_d: c.iter().map(|v| 0.8 * v.max(0.0)).collect(),
            p_d: c.iter().map(|v| 1.2 * (-v).max(0.0)).collect(),
        };
        (forms, sol, targets)
    }

    #[test]
    fn constants_lie_in_the_kernel() {
        let (forms, sol, _) = setup(20, 1e-2);
        let k = apply_k(&forms, &sol, &[3.7; 20]).unwrap();
        assert!(max_abs(&k) < 1e-14 * 3.7 * max_abs(&sol.n).max(max_abs(&sol.p)));
    }

    #[test]
    fn kernel_matrix_is_symmetric_and_matches_apply_k() {
        let (forms, sol, _) = setup(20, 1e-2);
        let km = kernel_matrix(&forms, &sol);
        let scale = km.abs().max();
        assert!((&km - km.transpose()).abs().max() <= 1e-12 * scale);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = apply_k(&forms, &sol, &h).unwrap();
        let prod = &km * nalgebra::DVector::from_vec(h);
        for i in 0..20 {
            assert!((prod[i] - forms.weights[i] * k[i]).abs() <= 1e-14 * scale);
        }
    }

    #[test]
    fn trivial_adjoint_for_attained_targets() {
        for lambda2 in [1e-3, 0.0] {
            let (forms, sol, _) = setup(30, lambda2);
            let targets = TrackingTargets::from_state(&sol);
            let adj = solve_adjoint(&forms, &sol, &targets, &AdjointOptions::default()).unwrap();
            assert!(max_abs(&adj.xi) < 1e-14);
            assert!(adj.xi_alpha.abs() < 1e-14 && adj.xi_beta.abs() < 1e-14);
        }
    }

    #[test]
    fn accelerated_and_plain_agree_with_dense_solve() {
        let (forms, sol, targets) = setup(40, 1e-2);
        let fast =
            solve_adjoint_lambda(&forms, &sol, &targets, &AdjointOptions::with_tol(1e-12)).unwrap();
        let plain = solve_adjoint_lambda(
            &forms,
            &sol,
            &targets,
            &AdjointOptions {
                tol: 1e-12,
                iteration: AdjointIteration::Plain,
                ..AdjointOptions::default()
            },
        )
        .unwrap();
        let dense = solve_adjoint_zero(&forms, &sol, &targets).unwrap();
        assert!(fast.iterations <= 3, "{}", fast.iterations);
        assert!(plain.iterations > fast.iterations);
        let scale = max_abs(&dense.xi);
        assert!(max_abs(&sub(&fast.xi, &dense.xi)) < 1e-9 * scale);
        assert!(max_abs(&sub(&plain.xi, &dense.xi)) < 1e-8 * scale);
        assert!((fast.xi_alpha - dense.xi_alpha).abs() < 1e-9 * dense.xi_alpha.abs().max(1.0));
        assert!(fast.residual < 1e-10);
    }

    #[test]
    fn zero_debye_length_solution_satisfies_the_integral_equation() {
        let (forms, sol, targets) = setup(25, 0.0);
        let adj = solve_adjoint_zero(&forms, &sol, &targets).unwrap();
        assert!(forms.integral(&adj.xi).abs() < 1e-12 * max_abs(&adj.xi));
        assert!(adj.residual < 1e-10, "{}", adj.residual);
    }

    #[test]
    fn incompatible_dense_system_is_rejected() {
        let (forms, sol, _) = setup(12, 0.0);
        let a = kernel_matrix(&forms, &sol);
        let mut rhs = vec![0.0; 12];
        rhs[4] = 1e-3;
        assert!(matches!(
            forms.solve_bordered(&a, &rhs),
            Err(Error::Incompatible { .. })
        ));
    }
}
