mod config;

use std::fs;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use quasineutral::experiments::{emit_figures, fmt_f64, write_sweep_outputs};
use quasineutral::verify::{gradcheck, random_directions};
use quasineutral::{
    optimize, run_sweep, solve_adjoint, solve_state, Execution, ExperimentSpec, ReducedProblem,
};

use config::{Cli, Command, ConfigError, RunConfig};

#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] quasineutral::Error),
    #[error(transparent)]
    Optimize(#[from] quasineutral::OptimizeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// A verification ran to completion but did not pass.
    #[error("{0}")]
    Check(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match RunConfig::from_cli(&cli)
        .map_err(RunError::from)
        .and_then(|cfg| run(&cfg))
    {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(e)) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cfg: &RunConfig) -> Result<(), RunError> {
    let spec = cfg.spec()?;
    match cfg.command {
        Command::Solve => solve(cfg, &spec),
        Command::Adjoint => adjoint(cfg, &spec),
        Command::Optimize => run_optimize(cfg, &spec),
        Command::Sweep => sweep(&spec),
        Command::Gradcheck => run_gradcheck(cfg, &spec),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn write_columns(
    dir: &Path,
    name: &str,
    header: &[&str],
    columns: &[&[f64]],
) -> Result<(), RunError> {
    fs::create_dir_all(dir)?;
    let mut wtr = csv::Writer::from_path(dir.join(name))?;
    wtr.write_record(header)?;
    for i in 0..columns[0].len() {
        wtr.write_record(columns.iter().map(|c| fmt_f64(c[i])))?;
    }
    wtr.flush()?;
    Ok(())
}

fn solve(cfg: &RunConfig, spec: &ExperimentSpec) -> Result<(), RunError> {
    let pb = spec.problem(cfg.lambda2)?;
    let dp = pb.profile(&vec![0.0; spec.mesh.len()])?;
    let sol = solve_state(&pb.forms, &dp, cfg.lambda2, &pb.state_opts)?;
    println!(
        "state solve, lambda2 = {:e}, {} nodes",
        cfg.lambda2,
        spec.mesh.len()
    );
    println!("  iterations      {}", sol.iterations);
    println!("  residual        {:.3e}", sol.residual);
    println!("  max |V|         {:.6e}", max_abs(&sol.v));
    println!("  alpha, beta     {:.6e}, {:.6e}", sol.alpha, sol.beta);
    println!("  gamma^2         {:.6e}", sol.gamma2);
    println!(
        "  N, P            {:.6e}, {:.6e}",
        dp.totals.n_total, dp.totals.p_total
    );
    if let Some(dir) = &cfg.out {
        let x = spec.mesh.nodes();
        write_columns(
            dir,
            "state.csv",
            &["x", "C", "V", "n", "p"],
            &[&x, &dp.c, &sol.v, &sol.n, &sol.p],
        )?;
    }
    Ok(())
}

fn adjoint(cfg: &RunConfig, spec: &ExperimentSpec) -> Result<(), RunError> {
    let pb = spec.problem(cfg.lambda2)?;
    let eval = pb.evaluate(&vec![0.0; spec.mesh.len()])?;
    let adj = solve_adjoint(&pb.forms, &eval.state, &pb.targets, &pb.adjoint_opts)?;
    let (_, g) = pb.gradient(&eval)?;
    println!(
        "adjoint solve, lambda2 = {:e}, {} nodes",
        cfg.lambda2,
        spec.mesh.len()
    );
    println!(
        "  cost J          {:.6e} (J1 {:.3e}, J2 {:.3e}, J3 {:.3e})",
        eval.cost.total, eval.cost.j1, eval.cost.j2, eval.cost.j3
    );
    println!("  iterations      {}", adj.iterations);
    println!("  residual        {:.3e}", adj.residual);
    println!("  xi_alpha        {:.6e}", adj.xi_alpha);
    println!("  xi_beta         {:.6e}", adj.xi_beta);
    println!("  max |xi|        {:.6e}", max_abs(&adj.xi));
    println!("  gradient norm   {:.6e}", g.norm_y);
    if let Some(dir) = &cfg.out {
        let x = spec.mesh.nodes();
        write_columns(
            dir,
            "adjoint.csv",
            &["x", "V", "xi", "gradient"],
            &[&x, &eval.state.v, &adj.xi, &g.g],
        )?;
    }
    Ok(())
}

fn run_optimize(cfg: &RunConfig, spec: &ExperimentSpec) -> Result<(), RunError> {
    let pb = spec.problem(cfg.lambda2)?;
    let result = optimize(&pb, &cfg.optimizer);
    let run = match &result {
        Ok(run) => run,
        Err(e) => &*e.partial,
    };
    println!(
        "optimization, lambda2 = {:e}, {} nodes",
        cfg.lambda2,
        spec.mesh.len()
    );
    println!(
        "{:>5} {:>14} {:>14} {:>14} {:>10}",
        "iter", "J", "|g|", "omega", "halvings"
    );
    for (k, rec) in run.iterates.iter().enumerate() {
        println!(
            "{k:>5} {:>14.6e} {:>14.6e} {:>14.6e} {:>10}",
            rec.cost.total, rec.grad_norm, rec.omega, rec.halvings
        );
    }
    if let Some(stop) = run.stop {
        println!(
            "stopped: {stop:?} after {} steps in {:.3} s",
            run.steps(),
            run.wall_times.total
        );
    }
    if let Some(dir) = &cfg.out {
        emit_figures(&spec.mesh, std::slice::from_ref(run), dir)?;
    }
    result?;
    Ok(())
}

fn sweep(spec: &ExperimentSpec) -> Result<(), RunError> {
    let result = run_sweep(spec, Execution::default())?;
    println!(
        "{:>10} {:>12} {:>12} {:>12} {:>12} {:>12} {:>6}",
        "lambda2", "t_state", "t_adjoint", "dist_C", "dist_V", "J", "iters"
    );
    for r in &result.rows {
        println!(
            "{:>10.1e} {:>12.3e} {:>12.3e} {:>12.4e} {:>12.4e} {:>12.4e} {:>6}{}",
            r.lambda2,
            r.t_state,
            r.t_adjoint,
            r.dist_c,
            r.dist_v,
            r.j_final,
            r.iters,
            r.error
                .as_deref()
                .map(|e| format!("  failed: {e}"))
                .unwrap_or_default()
        );
    }
    if let Some(dir) = &spec.output_dir {
        for path in write_sweep_outputs(spec, &result, dir)? {
            println!("wrote {}", path.display());
        }
    }
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(RunError::Check(format!(
            "{failed} of {} sweep runs failed",
            result.rows.len()
        )));
    }
    Ok(())
}

/// `0.02·cos(2πt)` in scaled coordinates, minus its mean. With recomputed
/// totals `Ĵ` has a kink wherever `C` vanishes on a set of positive measure,
/// which `C_ref` itself may do; a smooth perturbation moves off those sets.
fn gradcheck_point(pb: &ReducedProblem) -> Vec<f64> {
    let mesh = &pb.forms.mesh;
    let (a, len) = (mesh.a(), mesh.measure());
    let mut u = mesh.interpolate(|x| 0.02 * (2.0 * std::f64::consts::PI * (x - a) / len).cos());
    pb.forms.subtract_mean(&mut u);
    u
}

fn run_gradcheck(cfg: &RunConfig, spec: &ExperimentSpec) -> Result<(), RunError> {
    let pb = spec.problem(cfg.lambda2)?;
    let u = gradcheck_point(&pb);
    let dirs = random_directions(&pb.forms, cfg.directions, cfg.seed);
    let report = gradcheck(&pb, &u, &dirs, cfg.eps, Execution::default())?;
    println!(
        "gradient check, lambda2 = {:e}, {} nodes, seed {}",
        cfg.lambda2,
        spec.mesh.len(),
        cfg.seed
    );
    for case in &report.details {
        println!(
            "  {:<14} fd {:>14.6e}  adjoint {:>14.6e}  rel err {:.2e}",
            case.label, case.expected, case.actual, case.rel_err
        );
    }
    println!(
        "max relative error {:.3e} (threshold {:.0e})",
        report.max_rel_err, report.threshold
    );
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        let mut wtr = csv::Writer::from_path(dir.join("gradcheck.csv"))?;
        wtr.write_record(["direction", "finite_difference", "adjoint", "rel_err"])?;
        for (k, case) in report.details.iter().enumerate() {
            wtr.write_record([
                k.to_string(),
                fmt_f64(case.expected),
                fmt_f64(case.actual),
                fmt_f64(case.rel_err),
            ])?;
        }
        wtr.flush()?;
    }
    if report.pass {
        Ok(())
    } else {
        Err(RunError::Check(format!(
            "gradient check failed: max relative error {:.3e} exceeds {:.0e}",
            report.max_rel_err, report.threshold
        )))
    }
}
