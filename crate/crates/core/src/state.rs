//! Forward solvers for the equilibrium potential.
//!
//! For a Debye length `λ > 0` the nonlocal Poisson problem
//!
//! ```text
//! −λ²ΔV = n(V) − p(V) − C,   n = N e^{−V}/∫e^{−V},   p = P e^{V}/∫e^{V}
//! ```
//!
//! is solved by alternating a Newton solve of the local problem with frozen
//! normalizers `(α, β)` and an update of the normalizers. In the quasi-neutral
//! case `λ = 0` the local problem has the closed-form solution
//! `p = ½(−C + √(4γ⁴ + C²))`, `γ² = √(αβ)`.
//!
//! The literal normalizer update `α = N/∫e^{−V}` contracts at a rate
//! `1 − O(δ²)`, which for realistic intrinsic densities means millions of
//! sweeps. [`NormalizerUpdate::Newton`] (the default) replaces it by a Newton
//! step on the normalization conditions; the sensitivities come from the
//! linearized local problem, so every outer iteration costs two extra
//! tridiagonal solves.

use crate::doping::DopingProfile;
use crate::error::{Error, Result};
use crate::fem::{max_abs, sub, AssembledForms};

/// Largest potential magnitude that keeps `e^{±V}` representable.
pub const MAX_POTENTIAL: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizerUpdate {
    /// Newton step on `(ln α, ln β)` (resp. `ln γ⁴` when `λ = 0`).
    #[default]
    Newton,
    /// Plain substitution `α = N/∫e^{−V}`, `β = P/∫e^{V}`.
    Substitution,
}

#[derive(Debug, Clone)]
pub struct StateOptions {
    pub tol: f64,
    pub max_outer: usize,
    pub max_newton: usize,
    pub normalizer: NormalizerUpdate,
}

impl Default for StateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 10_000,
            max_newton: 200,
            normalizer: NormalizerUpdate::Newton,
        }
    }
}

impl StateOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if self.max_outer == 0 || self.max_newton == 0 {
            return Err(Error::param(
                "max_outer",
                "iteration caps must be at least 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    /// Zero-mean potential.
    pub v: Vec<f64>,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    /// `γ² = √(αβ)`
    pub gamma2: f64,
    pub lambda2: f64,
    pub iterations: usize,
    /// Projected weak residual, see [`state_residual`].
    pub residual: f64,
    /// Outer update norms `‖V_k − V_{k−1}‖`.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AuxSolution {
    pub v: Vec<f64>,
    pub multiplier: f64,
    pub iterations: usize,
    /// Residual norm before each Newton step and after the last one.
    pub residuals: Vec<f64>,
}

/// Projected residual of `λ²SV + W(−αe^{−V} + βe^{V} + C)` in the
/// `W⁻¹`-weighted norm.
fn aux_residual(
    forms: &AssembledForms,
    c: &[f64],
    alpha: f64,
    beta: f64,
    lambda2: f64,
    v: &[f64],
    out: &mut [f64],
) -> f64 {
    forms.stiffness.mul_vec_into(v, out);
    for i in 0..v.len() {
        out[i] = lambda2 * out[i]
            + forms.weights[i] * (-alpha * (-v[i]).exp() + beta * v[i].exp() + c[i]);
    }
    forms.project_load(out);
    out.iter()
        .zip(&forms.weights)
        .map(|(r, w)| r * r / w)
        .sum::<f64>()
        .sqrt()
}

/// Damped Newton for the local problem `−λ²ΔV − αe^{−V} + βe^{V} + C = 0`
/// with homogeneous Neumann conditions and `∫V = 0`.
#[allow(clippy::too_many_arguments)]
pub fn newton_aux_solve(
    forms: &AssembledForms,
    c: &[f64],
    alpha: f64,
    beta: f64,
    lambda2: f64,
    v0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<AuxSolution> {
    forms.mesh.check(c)?;
    forms.mesh.check(v0)?;
    if !(lambda2 > 0.0) {
        return Err(Error::param("lambda2", "the Newton solver needs λ² > 0"));
    }
    if !(alpha >= 0.0 && beta >= 0.0) || !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::param(
            "alpha/beta",
            "normalizers must be finite and nonnegative",
        ));
    }
    let n = c.len();
    let mut v = v0.to_vec();
    if max_abs(&v) > MAX_POTENTIAL {
        return Err(Error::PotentialOverflow {
            max_abs: max_abs(&v),
        });
    }
    let mut res = vec![0.0; n];
    let mut trial_res = vec![0.0; n];
    let mut rho = aux_residual(forms, c, alpha, beta, lambda2, &v, &mut res);
    let scale = forms
        .weights
        .iter()
        .zip(c)
        .map(|(w, ci)| w * (alpha + beta + ci.abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    let floor = 1e-13 * scale.max(1e-300);
    let mut residuals = vec![rho];
    let mut multiplier = 0.0;
    let mut jac_diag = vec![0.0; n];
    let mut trial = vec![0.0; n];
    for it in 0..max_iter {
        if rho <= tol || rho <= floor {
            return Ok(AuxSolution {
                v,
                multiplier,
                iterations: it,
                residuals,
            });
        }
        for i in 0..n {
            jac_diag[i] = forms.weights[i] * (alpha * (-v[i]).exp() + beta * v[i].exp());
        }
        let jac = forms.stiffness.scaled_plus_diag(lambda2, &jac_diag);
        let neg_res: Vec<f64> = res.iter().map(|r| -r).collect();
        let step = forms.solve_bordered(&jac, &neg_res)?;

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..n {
                trial[i] = v[i] + t * step.x[i];
            }
            if max_abs(&trial) <= MAX_POTENTIAL {
                let r = aux_residual(forms, c, alpha, beta, lambda2, &trial, &mut trial_res);
                if r <= (1.0 - 1e-4 * t) * rho {
                    rho = r;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if rho <= 1e3 * floor {
                break;
            }
            if max_abs(&trial) > MAX_POTENTIAL {
                return Err(Error::PotentialOverflow {
                    max_abs: max_abs(&trial),
                });
            }
            return Err(Error::NewtonStalled {
                iterations: it,
                residual: rho,
            });
        }
        std::mem::swap(&mut v, &mut trial);
        std::mem::swap(&mut res, &mut trial_res);
        multiplier = step.multiplier;
        residuals.push(rho);
    }
    if rho <= tol || rho <= 1e3 * floor {
        Ok(AuxSolution {
            v,
            multiplier,
            iterations: residuals.len() - 1,
            residuals,
        })
    } else {
        Err(Error::NewtonStalled {
            iterations: max_iter,
            residual: rho,
        })
    }
}

/// Forward solver for `λ > 0`: Newton on the local problem, then a normalizer
/// update, until `‖V_k − V_{k−1}‖_{H¹} ≤ tol`.
pub fn solve_state_lambda(
    forms: &AssembledForms,
    dp: &DopingProfile,
    lambda2: f64,
    opts: &StateOptions,
) -> Result<StateSolution> {
    opts.validate()?;
    if !(lambda2 > 0.0 && lambda2.is_finite()) {
        return Err(Error::param(
            "lambda2",
            "must be positive for the Poisson solver",
        ));
    }
    let c = &dp.c;
    forms.mesh.check(c)?;
    let (big_n, big_p) = (dp.totals.n_total, dp.totals.p_total);
    let omega = forms.mesh.measure();
    let nn = c.len();
    let inner_tol = (1e-2 * opts.tol).max(1e-14);

    let mut log_a = (big_n / omega).ln();
    let mut log_b = (big_p / omega).ln();
    let mut v = vec![0.0; nn];
    let mut history = Vec::new();
    let mut em = vec![0.0; nn];
    let mut ep = vec![0.0; nn];
    for k in 1..=opts.max_outer {
        let (alpha, beta) = (log_a.exp(), log_b.exp());
        let aux = newton_aux_solve(
            forms,
            c,
            alpha,
            beta,
            lambda2,
            &v,
            inner_tol,
            opts.max_newton,
        )?;
        let v_new = aux.v;
        for i in 0..nn {
            em[i] = (-v_new[i]).exp();
            ep[i] = v_new[i].exp();
        }
        let int_em = forms.integral(&em);
        let int_ep = forms.integral(&ep);
        let r_a = log_a + int_em.ln() - big_n.ln();
        let r_b = log_b + int_ep.ln() - big_p.ln();
        match opts.normalizer {
            NormalizerUpdate::Substitution => {
                log_a = big_n.ln() - int_em.ln();
                log_b = big_p.ln() - int_ep.ln();
            }
            NormalizerUpdate::Newton => {
                // dV/d(ln α) and dV/d(ln β) from the linearized local problem
                let dens_n: Vec<f64> = em.iter().map(|e| alpha * e).collect();
                let dens_p: Vec<f64> = ep.iter().map(|e| beta * e).collect();
                let d: Vec<f64> = (0..nn)
                    .map(|i| forms.weights[i] * (dens_n[i] + dens_p[i]))
                    .collect();
                let jac = forms.stiffness.scaled_plus_diag(lambda2, &d);
                let load_a: Vec<f64> = (0..nn).map(|i| forms.weights[i] * dens_n[i]).collect();
                let load_b: Vec<f64> = (0..nn).map(|i| -forms.weights[i] * dens_p[i]).collect();
                let ya = forms.solve_bordered(&jac, &load_a)?.x;
                let yb = forms.solve_bordered(&jac, &load_b)?.x;
                let j11 = 1.0 - forms.integral_prod(&em, &ya) / int_em;
                let j12 = -forms.integral_prod(&em, &yb) / int_em;
                let j21 = forms.integral_prod(&ep, &ya) / int_ep;
                let j22 = 1.0 + forms.integral_prod(&ep, &yb) / int_ep;
                let det = j11 * j22 - j12 * j21;
                let (mut sa, mut sb) = if det.abs() > 1e-300 {
                    (
                        (-r_a * j22 + r_b * j12) / det,
                        (r_a * j21 - r_b * j11) / det,
                    )
                } else {
                    (-r_a, -r_b)
                };
                let big = sa.abs().max(sb.abs());
                if big > 5.0 {
                    sa *= 5.0 / big;
                    sb *= 5.0 / big;
                }
                log_a += sa;
                log_b += sb;
            }
        }
        if !(log_a.is_finite() && log_b.is_finite()) {
            return Err(Error::NonFinite("normalizer update"));
        }
        let update = forms.h1_norm(&sub(&v_new, &v));
        let prev = history.last().copied();
        history.push(update);
        v = v_new;
        let normalized = r_a.abs().max(r_b.abs());
        let done = match opts.normalizer {
            NormalizerUpdate::Substitution => update <= opts.tol,
            NormalizerUpdate::Newton => {
                (update <= opts.tol && normalized <= opts.tol)
                    // roundoff floor: normalizers exact, updates no longer shrinking
                    || (normalized <= 1e-14 && prev.is_some_and(|p| update >= 0.5 * p))
            }
        };
        if done {
            return Ok(finish(forms, dp, lambda2, v, k, history));
        }
    }
    Err(Error::NotConverged {
        solver: "forward solver (λ > 0)",
        iterations: opts.max_outer,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// `½(−C + √(4γ⁴ + C²))`, evaluated without cancellation for `C ≫ γ²`.
pub fn hole_density_closed_form(c: f64, gamma4: f64) -> f64 {
    let r = (4.0 * gamma4 + c * c).sqrt();
    if c > 0.0 {
        2.0 * gamma4 / (c + r)
    } else {
        0.5 * (r - c)
    }
}

/// Forward solver for the quasi-neutral limit `λ = 0`: closed-form potential,
/// shift to zero mean, normalizer update, until `‖V_k − V_{k−1}‖₂ ≤ tol`.
pub fn solve_state_zero(
    forms: &AssembledForms,
    dp: &DopingProfile,
    opts: &StateOptions,
) -> Result<StateSolution> {
    opts.validate()?;
    let c = &dp.c;
    forms.mesh.check(c)?;
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("doping profile"));
    }
    let (big_n, big_p) = (dp.totals.n_total, dp.totals.p_total);
    let omega = forms.mesh.measure();
    let nn = c.len();
    // p − max(−C, 0) = 2γ⁴/(|C| + √(4γ⁴ + C²)) integrates to the excess
    // P − ∫max(−C, 0), which must be positive
    let neg: f64 = forms.integral(&c.iter().map(|v| (-v).max(0.0)).collect::<Vec<_>>());
    let excess = big_p - neg;
    if !(excess > 0.0) {
        return Err(Error::Inadmissible(format!(
            "P = {big_p} does not exceed the acceptor charge {neg}"
        )));
    }

    let mut alpha = big_n / omega;
    let mut beta = big_p / omega;
    let mut v = vec![0.0; nn];
    let mut v_new = vec![0.0; nn];
    let mut diff = vec![0.0; nn];
    let mut p_k = vec![0.0; nn];
    let mut history = Vec::new();
    let w = &forms.weights;
    for k in 1..=opts.max_outer {
        let gamma4 = alpha * beta;
        let mut excess_k = 0.0;
        let mut d_excess = 0.0;
        let mut int_p = 0.0;
        let mut int_inv_p = 0.0;
        let mut int_ln_p = 0.0;
        for i in 0..nn {
            let ci = c[i];
            let r = (4.0 * gamma4 + ci * ci).sqrt();
            // minority excess 2γ⁴/(|C| + r); p adds |C| where C < 0
            let q = 2.0 * gamma4 / (ci.abs() + r);
            let p = if ci > 0.0 { q } else { q - ci };
            let lp = p.ln();
            p_k[i] = p;
            v_new[i] = lp;
            excess_k += w[i] * q;
            d_excess += w[i] * gamma4 / r;
            int_p += w[i] * p;
            int_inv_p += w[i] / p;
            int_ln_p += w[i] * lp;
        }
        // V = ln(p/β) shifted to zero mean; β drops out of the shift
        let mean = int_ln_p / omega;
        let mut vmax: f64 = 0.0;
        for x in v_new.iter_mut() {
            *x -= mean;
            vmax = vmax.max(x.abs());
        }
        if !vmax.is_finite() {
            return Err(Error::NonFinite("closed-form potential"));
        }
        if vmax > MAX_POTENTIAL {
            return Err(Error::PotentialOverflow { max_abs: vmax });
        }
        // ∫e^{−V} and ∫e^{V} from the densities, without exponentials
        let int_em = mean.exp() * int_inv_p;
        let int_ep = (-mean).exp() * int_p;
        let a_sub = big_n / int_em;
        let b_sub = big_p / int_ep;
        let mismatch = excess_k.ln() - excess.ln();
        match opts.normalizer {
            NormalizerUpdate::Substitution => {
                alpha = a_sub;
                beta = b_sub;
            }
            NormalizerUpdate::Newton => {
                // Newton on ln(excess) as a function of ln γ⁴; the slope lies in [½, 1]
                let slope = d_excess / excess_k;
                let step = (-mismatch / slope).clamp(-20.0, 20.0);
                let log_g4 = gamma4.ln() + step;
                let ratio = (a_sub / b_sub).ln();
                alpha = (0.5 * (log_g4 + ratio)).exp();
                beta = (0.5 * (log_g4 - ratio)).exp();
            }
        }
        for i in 0..nn {
            diff[i] = v_new[i] - v[i];
        }
        let update = forms.l2_norm(&diff);
        let prev = history.last().copied();
        history.push(update);
        std::mem::swap(&mut v, &mut v_new);
        let done = match opts.normalizer {
            NormalizerUpdate::Substitution => update <= opts.tol,
            NormalizerUpdate::Newton => {
                (update <= opts.tol && mismatch.abs() <= opts.tol)
                    || (mismatch.abs() <= 1e-14 && prev.is_some_and(|p| update >= 0.5 * p))
            }
        };
        if done {
            return Ok(finish_zero(forms, dp, v, &p_k, k, history));
        }
    }
    Err(Error::NotConverged {
        solver: "forward solver (λ = 0)",
        iterations: opts.max_outer,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Dispatches on `λ²`: zero selects the quasi-neutral solver.
pub fn solve_state(
    forms: &AssembledForms,
    dp: &DopingProfile,
    lambda2: f64,
    opts: &StateOptions,
) -> Result<StateSolution> {
    if lambda2 == 0.0 {
        solve_state_zero(forms, dp, opts)
    } else {
        solve_state_lambda(forms, dp, lambda2, opts)
    }
}

fn finish(
    forms: &AssembledForms,
    dp: &DopingProfile,
    lambda2: f64,
    v: Vec<f64>,
    iterations: usize,
    history: Vec<f64>,
) -> StateSolution {
    let em: Vec<f64> = v.iter().map(|x| (-x).exp()).collect();
    let ep: Vec<f64> = v.iter().map(|x| x.exp()).collect();
    let alpha = dp.totals.n_total / forms.integral(&em);
    let beta = dp.totals.p_total / forms.integral(&ep);
    let mut sol = StateSolution {
        n: em.iter().map(|e| alpha * e).collect(),
        p: ep.iter().map(|e| beta * e).collect(),
        v,
        alpha,
        beta,
        gamma2: (alpha * beta).sqrt(),
        lambda2,
        iterations,
        residual: 0.0,
        history,
    };
    sol.residual = state_residual(forms, &sol, dp);
    sol
}

/// Final densities for `λ = 0` from the closed-form `p_k` behind `V`:
/// `e^{V} ∝ p_k`, so `p = P·p_k/∫p_k` and `n = N·p_k⁻¹/∫p_k⁻¹` need no
/// exponentials.
fn finish_zero(
    forms: &AssembledForms,
    dp: &DopingProfile,
    v: Vec<f64>,
    p_k: &[f64],
    iterations: usize,
    history: Vec<f64>,
) -> StateSolution {
    let (big_n, big_p) = (dp.totals.n_total, dp.totals.p_total);
    let omega = forms.mesh.measure();
    let mut int_p = 0.0;
    let mut int_inv_p = 0.0;
    let mut int_ln_p = 0.0;
    for i in 0..p_k.len() {
        let w = forms.weights[i];
        int_p += w * p_k[i];
        int_inv_p += w / p_k[i];
        int_ln_p += w * p_k[i].ln();
    }
    let mean = int_ln_p / omega;
    let alpha = big_n / (mean.exp() * int_inv_p);
    let beta = big_p / ((-mean).exp() * int_p);
    let mut sol = StateSolution {
        n: p_k.iter().map(|p| big_n / (p * int_inv_p)).collect(),
        p: p_k.iter().map(|p| big_p * p / int_p).collect(),
        v,
        alpha,
        beta,
        gamma2: (alpha * beta).sqrt(),
        lambda2: 0.0,
        iterations,
        residual: 0.0,
        history,
    };
    sol.residual = state_residual(forms, &sol, dp);
    sol
}

/// Norm of the discrete weak residual `λ²SV + W(−n + p + C)` projected onto
/// zero-mean test functions, measured in the `W⁻¹`-weighted norm.
pub fn state_residual(forms: &AssembledForms, sol: &StateSolution, dp: &DopingProfile) -> f64 {
    let mut r = forms.stiffness.mul_vec(&sol.v);
    for i in 0..r.len() {
        r[i] = sol.lambda2 * r[i] + forms.weights[i] * (-sol.n[i] + sol.p[i] + dp.c[i]);
    }
    forms.project_load(&mut r);
    r.iter()
        .zip(&forms.weights)
        .map(|(r, w)| r * r / w)
        .sum::<f64>()
        .sqrt()
}
