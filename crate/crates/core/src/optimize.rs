//! Steepest descent in the `H¹`-seminorm geometry with an Armijo rule.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::objective::{CostBreakdown, Evaluation, GradientField, ReducedProblem};

/// Direction of the update and of the sufficient-decrease test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignConvention {
    /// `u ← u − ωg`, accept once `Ĵ(u − ωg) ≤ Ĵ(u) − γω‖g‖²`.
    #[default]
    Descent,
    /// `u ← u + ωg`, halve while `Ĵ(u + ωg) ≥ Ĵ(u) + γω‖g‖²`. Since `g`
    /// represents the derivative this moves uphill, and the search ends with
    /// [`Error::NoDescentStep`].
    Literal,
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub sigma: f64,
    pub gamma: f64,
    pub omega0: f64,
    /// Stop once `‖g_k‖/‖g_0‖` drops to this value.
    pub tol_opt: f64,
    /// Stop once `‖g_k‖` drops to this value.
    pub tol_abs: f64,
    /// Tolerance of the state and adjoint solvers.
    pub tol_inner: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub lambda2: f64,
    pub signs: SignConvention,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            gamma: 1e-4,
            omega0: 50.0,
            tol_opt: 5e-2,
            tol_abs: 5e-5,
            tol_inner: 1e-8,
            max_iter: 500,
            max_halvings: 60,
            lambda2: 0.0,
            signs: SignConvention::Descent,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("omega0", self.omega0),
            ("tol_opt", self.tol_opt),
            ("tol_abs", self.tol_abs),
            ("tol_inner", self.tol_inner),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(
                    name,
                    format!("must be positive and finite, got {v}"),
                ));
            }
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::param("lambda2", "must be finite and nonnegative"));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", "must be at least 1"));
        }
        if self.max_halvings == 0 {
            return Err(Error::param("max_halvings", "must be at least 1"));
        }
        Ok(())
    }
}

/// Accepted trial of the line search.
#[derive(Debug, Clone)]
pub struct ArmijoStep<T> {
    pub omega: f64,
    pub u_next: Vec<f64>,
    pub value: T,
    pub halvings: usize,
}

/// Armijo search along `∓g` starting at `ω₀`.
///
/// `objective` returns the cost to compare together with any data the caller
/// wants back for the accepted point. A trial whose evaluation fails (for
/// instance an inadmissible doping profile) counts as rejected.
pub fn armijo_search<T>(
    u: &[f64],
    j_u: f64,
    g: &[f64],
    g_norm2: f64,
    cfg: &OptimizerConfig,
    mut objective: impl FnMut(&[f64]) -> Result<(f64, T)>,
) -> Result<ArmijoStep<T>> {
    if !(g_norm2 > 0.0) {
        return Err(Error::param(
            "gradient",
            "line search needs a nonzero gradient",
        ));
    }
    let sign = match cfg.signs {
        SignConvention::Descent => -1.0,
        SignConvention::Literal => 1.0,
    };
    let mut omega = cfg.omega0;
    for halvings in 0..=cfg.max_halvings {
        let trial: Vec<f64> = u.iter().zip(g).map(|(a, b)| a + sign * omega * b).collect();
        if let Ok((j, value)) = objective(&trial) {
            let accept = match cfg.signs {
                SignConvention::Descent => j <= j_u - cfg.gamma * omega * g_norm2,
                SignConvention::Literal => j < j_u + cfg.gamma * omega * g_norm2,
            };
            if accept && j.is_finite() {
                return Ok(ArmijoStep {
                    omega,
                    u_next: trial,
                    value,
                    halvings,
                });
            }
        }
        omega *= 0.5;
    }
    Err(Error::NoDescentStep {
        halvings: cfg.max_halvings,
    })
}

/// Armijo step for the reduced problem.
pub fn armijo_step(
    problem: &ReducedProblem,
    u: &[f64],
    cost_u: &CostBreakdown,
    g: &GradientField,
    cfg: &OptimizerConfig,
) -> Result<ArmijoStep<Evaluation>> {
    armijo_search(u, cost_u.total, &g.g, g.norm_y * g.norm_y, cfg, |trial| {
        let eval = problem.evaluate(trial)?;
        Ok((eval.cost.total, eval))
    })
}

#[derive(Debug, Clone)]
pub struct IterateRecord {
    pub u: Vec<f64>,
    pub cost: CostBreakdown,
    pub grad_norm: f64,
    /// Step accepted from this iterate; zero for the last one.
    pub omega: f64,
    pub halvings: usize,
}

#[derive(Debug, Clone)]
pub struct FinalState {
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    pub n: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    RelativeGradient,
    AbsoluteGradient,
    /// The initial gradient vanished.
    Stationary,
    MaxIterations,
}

/// Seconds spent in each phase.
#[derive(Debug, Clone, Copy, Default)]
pub struct WallTimes {
    pub state: f64,
    pub adjoint: f64,
    pub gradient: f64,
    pub line_search: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct OptRun {
    pub lambda2: f64,
    pub iterates: Vec<IterateRecord>,
    pub final_state: Option<FinalState>,
    pub converged: bool,
    pub stop: Option<StopReason>,
    pub wall_times: WallTimes,
}

impl OptRun {
    /// Number of accepted descent steps.
    pub fn steps(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    pub fn costs(&self) -> Vec<CostBreakdown> {
        self.iterates.iter().map(|r| r.cost).collect()
    }

    pub fn final_cost(&self) -> Option<CostBreakdown> {
        self.iterates.last().map(|r| r.cost)
    }
}

/// Failure of [`optimize`] together with the trajectory up to that point.
#[derive(Debug, thiserror::Error)]
#[error("optimization failed after {} iterates: {source}", partial.iterates.len())]
pub struct OptimizeError {
    #[source]
    pub source: Error,
    pub partial: Box<OptRun>,
}

fn final_state(eval: &Evaluation) -> FinalState {
    FinalState {
        c: eval.profile.c.clone(),
        v: eval.state.v.clone(),
        n: eval.state.n.clone(),
        p: eval.state.p.clone(),
    }
}

/// Steepest descent from `u₀ = 0`, i.e. from `C = C_ref`.
///
/// `problem.lambda2`, `problem.sigma` and the solver tolerances are taken from
/// `cfg`.
pub fn optimize(
    problem: &ReducedProblem,
    cfg: &OptimizerConfig,
) -> std::result::Result<OptRun, OptimizeError> {
    let start = Instant::now();
    let mut run = OptRun {
        lambda2: cfg.lambda2,
        iterates: Vec::new(),
        final_state: None,
        converged: false,
        stop: None,
        wall_times: WallTimes::default(),
    };
    let fail = |source: Error, mut run: OptRun, start: Instant| {
        run.wall_times.total = start.elapsed().as_secs_f64();
        OptimizeError {
            source,
            partial: Box::new(run),
        }
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, run, start));
    }
    let mut pb = problem.with_lambda2(cfg.lambda2).with_tol(cfg.tol_inner);
    pb.sigma = cfg.sigma;

    let mut u = vec![0.0; pb.c_ref.len()];
    let t = Instant::now();
    let mut eval = match pb.evaluate(&u) {
        Ok(e) => e,
        Err(e) => return Err(fail(e, run, start)),
    };
    run.wall_times.state += t.elapsed().as_secs_f64();
    let mut g0 = None;

    for k in 0..=cfg.max_iter {
        let t = Instant::now();
        let adj = match pb.adjoint(&eval) {
            Ok(a) => a,
            Err(e) => return Err(fail(e, run, start)),
        };
        run.wall_times.adjoint += t.elapsed().as_secs_f64();
        let t = Instant::now();
        let g = match crate::objective::riesz_gradient(&pb.forms, &pb.derivative_load(&eval, &adj))
        {
            Ok(g) => g,
            Err(e) => return Err(fail(e, run, start)),
        };
        run.wall_times.gradient += t.elapsed().as_secs_f64();
        let g0 = *g0.get_or_insert(g.norm_y);

        let stop = if g0 == 0.0 {
            Some(StopReason::Stationary)
        } else if g.norm_y / g0 <= cfg.tol_opt {
            Some(StopReason::RelativeGradient)
        } else if g.norm_y <= cfg.tol_abs {
            Some(StopReason::AbsoluteGradient)
        } else if k == cfg.max_iter {
            Some(StopReason::MaxIterations)
        } else {
            None
        };
        if let Some(reason) = stop {
            run.iterates.push(IterateRecord {
                u: u.clone(),
                cost: eval.cost,
                grad_norm: g.norm_y,
                omega: 0.0,
                halvings: 0,
            });
            run.final_state = Some(final_state(&eval));
            run.converged = reason != StopReason::MaxIterations;
            run.stop = Some(reason);
            break;
        }

        let t = Instant::now();
        let step = armijo_step(&pb, &u, &eval.cost, &g, cfg);
        run.wall_times.line_search += t.elapsed().as_secs_f64();
        let step = match step {
            Ok(s) => s,
            Err(e) => {
                run.iterates.push(IterateRecord {
                    u: u.clone(),
                    cost: eval.cost,
                    grad_norm: g.norm_y,
                    omega: 0.0,
                    halvings: cfg.max_halvings,
                });
                run.final_state = Some(final_state(&eval));
                return Err(fail(e, run, start));
            }
        };
        run.iterates.push(IterateRecord {
            u: std::mem::take(&mut u),
            cost: eval.cost,
            grad_norm: g.norm_y,
            omega: step.omega,
            halvings: step.halvings,
        });
        u = step.u_next;
        // keep ∫u = 0 exact against roundoff drift
        pb.forms.subtract_mean(&mut u);
        eval = step.value;
    }
    run.wall_times.total = start.elapsed().as_secs_f64();
    Ok(run)
}
