//! Tracking cost, reduced cost and reduced gradient.
//!
//! The control is `u = C − C_ref` with `∫u = 0`. The cost is
//!
//! ```text
//! J = ½‖n − n_d‖² + ½‖p − p_d‖² + (σ/2)‖∇u‖²
//! ```
//!
//! and its gradient is the representative `g` of `dĴ(u)` in the inner
//! product `(g, h)_Y = ∫∇g·∇h` on zero-mean functions.

use crate::adjoint::{solve_adjoint, AdjointOptions, AdjointSolution, TrackingTargets};
use crate::doping::{ChargeTotals, DopingProfile};
use crate::error::{Error, Result};
use crate::fem::AssembledForms;
use crate::state::{solve_state, StateOptions, StateSolution};

/// How the charge totals `N, P` react to a change of the doping profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TotalsMode {
    /// `N = δ² + ∫C⁺`, `P = δ² − ∫C⁻` for the current `C`.
    #[default]
    Recompute,
    /// `N, P` stay at the values of `C_ref`.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct GradientField {
    /// Zero-mean Riesz representative.
    pub g: Vec<f64>,
    /// `√(gᵀSg)`
    pub norm_y: f64,
}

/// Cost components with lumped quadrature for the tracking terms.
pub fn evaluate_cost(
    forms: &AssembledForms,
    sol: &StateSolution,
    dp: &DopingProfile,
    targets: &TrackingTargets,
    sigma: f64,
) -> Result<CostBreakdown> {
    forms.mesh.check(&sol.n)?;
    forms.mesh.check(&targets.n_d)?;
    forms.mesh.check(&targets.p_d)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", "must be finite and nonnegative"));
    }
    let mut j1 = 0.0;
    let mut j2 = 0.0;
    for i in 0..sol.n.len() {
        let w = forms.weights[i];
        j1 += w * (sol.n[i] - targets.n_d[i]).powi(2);
        j2 += w * (sol.p[i] - targets.p_d[i]).powi(2);
    }
    let j1 = 0.5 * j1;
    let j2 = 0.5 * j2;
    let j3 = 0.5 * sigma * forms.stiffness.quad_form(&dp.control());
    Ok(CostBreakdown {
        j1,
        j2,
        j3,
        total: j1 + j2 + j3,
    })
}

/// Riesz representative: solves `Sg = r` for zero-mean `g` after projecting
/// `r` onto loads with `1ᵀr = 0`.
pub fn riesz_gradient(forms: &AssembledForms, load: &[f64]) -> Result<GradientField> {
    forms.mesh.check(load)?;
    let mut r = load.to_vec();
    forms.project_load(&mut r);
    let g = forms.solve_bordered(&forms.stiffness, &r)?.x;
    let norm_y = forms.h1_seminorm(&g);
    Ok(GradientField { g, norm_y })
}

/// State, adjoint and solver settings shared by every evaluation of `Ĵ`.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub forms: AssembledForms,
    pub c_ref: Vec<f64>,
    pub targets: TrackingTargets,
    pub sigma: f64,
    pub lambda2: f64,
    pub delta2: f64,
    pub totals: TotalsMode,
    pub state_opts: StateOptions,
    pub adjoint_opts: AdjointOptions,
    ref_totals: ChargeTotals,
}

/// Everything known after a forward solve at some control.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub profile: DopingProfile,
    pub state: StateSolution,
    pub cost: CostBreakdown,
}

impl ReducedProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        forms: AssembledForms,
        c_ref: Vec<f64>,
        targets: TrackingTargets,
        sigma: f64,
        lambda2: f64,
        delta2: f64,
        totals: TotalsMode,
        tol: f64,
    ) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", "must be positive"));
        }
        if !(lambda2 >= 0.0 && lambda2.is_finite()) {
            return Err(Error::param("lambda2", "must be finite and nonnegative"));
        }
        forms.mesh.check(&c_ref)?;
        forms.mesh.check(&targets.n_d)?;
        forms.mesh.check(&targets.p_d)?;
        let ref_totals = ChargeTotals::from_profile(&forms, &c_ref, delta2)?;
        Ok(Self {
            forms,
            c_ref,
            targets,
            sigma,
            lambda2,
            delta2,
            totals,
            state_opts: StateOptions::with_tol(tol),
            adjoint_opts: AdjointOptions::with_tol(tol),
            ref_totals,
        })
    }

    pub fn with_lambda2(&self, lambda2: f64) -> Self {
        Self {
            lambda2,
            ..self.clone()
        }
    }

    pub fn with_tol(&self, tol: f64) -> Self {
        let mut out = self.clone();
        out.state_opts.tol = tol;
        out.adjoint_opts.tol = tol;
        out
    }

    pub fn reference_totals(&self) -> ChargeTotals {
        self.ref_totals
    }

    /// `C = C_ref + u` with totals per [`TotalsMode`].
    pub fn profile(&self, u: &[f64]) -> Result<DopingProfile> {
        self.forms.mesh.check(u)?;
        let c: Vec<f64> = self.c_ref.iter().zip(u).map(|(a, b)| a + b).collect();
        match self.totals {
            TotalsMode::Recompute => {
                DopingProfile::new(&self.forms, c, self.c_ref.clone(), self.delta2)
            }
            TotalsMode::Frozen => {
                DopingProfile::with_totals(&self.forms, c, self.c_ref.clone(), self.ref_totals)
            }
        }
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Evaluation> {
        let profile = self.profile(u)?;
        let state = solve_state(&self.forms, &profile, self.lambda2, &self.state_opts)?;
        let cost = evaluate_cost(&self.forms, &state, &profile, &self.targets, self.sigma)?;
        Ok(Evaluation {
            profile,
            state,
            cost,
        })
    }

    /// `Ĵ(u)` with its components.
    pub fn reduced_cost(&self, u: &[f64]) -> Result<CostBreakdown> {
        Ok(self.evaluate(u)?.cost)
    }

    pub fn adjoint(&self, eval: &Evaluation) -> Result<AdjointSolution> {
        solve_adjoint(&self.forms, &eval.state, &self.targets, &self.adjoint_opts)
    }

    /// Load vector `r` with `dĴ(u)[h] = hᵀr` for zero-mean `h`:
    /// `r = σSu + Wξ`, plus the sensitivity of the totals to `C` when they are
    /// recomputed.
    pub fn derivative_load(&self, eval: &Evaluation, adj: &AdjointSolution) -> Vec<f64> {
        let u = eval.profile.control();
        let mut r = self.forms.stiffness.mul_vec(&u);
        for (i, ri) in r.iter_mut().enumerate() {
            let w = self.forms.weights[i];
            *ri = self.sigma * *ri + w * adj.xi[i];
            if self.totals == TotalsMode::Recompute {
                // ∂N/∂C_i = w_i[C_i > 0], ∂P/∂C_i = −w_i[C_i < 0]
                let c = eval.profile.c[i];
                if c > 0.0 {
                    *ri -= adj.xi_alpha * w;
                } else if c < 0.0 {
                    *ri -= adj.xi_beta * w;
                }
            }
        }
        self.forms.project_load(&mut r);
        r
    }

    /// Adjoint solve followed by the Riesz representation.
    pub fn gradient(&self, eval: &Evaluation) -> Result<(AdjointSolution, GradientField)> {
        let adj = self.adjoint(eval)?;
        let g = riesz_gradient(&self.forms, &self.derivative_load(eval, &adj))?;
        Ok((adj, g))
    }
}
