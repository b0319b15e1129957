mod common;

use quasineutral::experiments::{read_figure_csv, read_sweep_csv, write_sweep_outputs};
use quasineutral::optimize::StopReason;
use quasineutral::verify::fd_gradient;
use quasineutral::{optimize, run_sweep, Execution, ExperimentSpec, OptimizerConfig};

use common::canonical_problem;

#[test]
fn fd_gradient_matches_adjoint_gradient_nodally() {
    for lambda2 in [1e-3, 0.0] {
        let pb = canonical_problem(24, lambda2, 1e-12);
        let mut u = pb.forms.mesh.interpolate(|x| 0.03 * (3.0 * x).sin());
        pb.forms.subtract_mean(&mut u);
        let eval = pb.evaluate(&u).unwrap();
        let (_, g) = pb.gradient(&eval).unwrap();
        let fd = fd_gradient(&pb, &u, 1e-6, Execution::default()).unwrap();
        let diff: Vec<f64> = g.g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let rel = pb.forms.h1_norm(&diff) / pb.forms.h1_norm(&g.g);
        assert!(rel < 1e-4, "λ² = {lambda2}: relative H¹ error {rel:e}");
    }
}

#[test]
fn optimization_decreases_cost_and_keeps_the_mean() {
    for lambda2 in [1e-4, 0.0] {
        let pb = canonical_problem(60, lambda2, 1e-8);
        let cfg = OptimizerConfig {
            lambda2,
            ..OptimizerConfig::default()
        };
        let run = optimize(&pb, &cfg).unwrap();
        assert!(run.converged);
        assert!(matches!(
            run.stop,
            Some(StopReason::RelativeGradient | StopReason::AbsoluteGradient)
        ));
        for pair in run.iterates.windows(2) {
            let armijo = pair[0].cost.total - cfg.gamma * pair[0].omega * pair[0].grad_norm.powi(2);
            assert!(pair[1].cost.total <= armijo, "Armijo condition violated");
        }
        let last = run.iterates.last().unwrap();
        assert!(pb.forms.mean(&last.u).abs() < 1e-12);
        assert!(
            last.grad_norm <= cfg.tol_opt * run.iterates[0].grad_norm
                || last.grad_norm <= cfg.tol_abs
        );
        let fin = run.final_state.unwrap();
        let c_int: f64 = pb.forms.integrate(&fin.c).unwrap();
        let c_ref_int: f64 = pb.forms.integrate(&pb.c_ref).unwrap();
        assert!((c_int - c_ref_int).abs() < 1e-12);
    }
}

#[test]
fn sequential_and_parallel_sweeps_agree() {
    let mut spec = ExperimentSpec::canonical(40).unwrap();
    spec.lambda2_list = vec![1e-3, 1e-5, 0.0];
    let seq = run_sweep(&spec, Execution::Sequential).unwrap();
    let par = run_sweep(&spec, Execution::default()).unwrap();
    for (a, b) in seq.rows.iter().zip(&par.rows) {
        assert_eq!(a.lambda2, b.lambda2);
        assert_eq!(a.dist_c, b.dist_c);
        assert_eq!(a.dist_v, b.dist_v);
        assert_eq!(a.j_final, b.j_final);
        assert_eq!(a.iters, b.iters);
    }
    assert_eq!(seq.rows.last().unwrap().dist_c, 0.0);
}

#[test]
fn sweep_outputs_round_trip() {
    let mut spec = ExperimentSpec::canonical(30).unwrap();
    spec.lambda2_list = vec![1e-4, 0.0];
    let result = run_sweep(&spec, Execution::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = write_sweep_outputs(&spec, &result, dir.path()).unwrap();
    assert_eq!(written.len(), 9);
    assert!(!dir.path().join("sweep_errors.txt").exists());
    assert_eq!(
        read_sweep_csv(&dir.path().join("sweep.csv")).unwrap(),
        result.rows
    );
    let c = read_figure_csv(&dir.path().join("fig_profiles_C.csv")).unwrap();
    assert_eq!(c.len(), 2 * 30);
    let j = read_figure_csv(&dir.path().join("fig_cost_J.csv")).unwrap();
    let runs: usize = result
        .runs
        .iter()
        .map(|r| r.as_ref().unwrap().iterates.len())
        .sum();
    assert_eq!(j.len(), runs);
    // no partial files left behind
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(!name.to_string_lossy().ends_with(".partial"));
    }
}
