use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use quasineutral::verify::fd_gradient;
use quasineutral::{run_sweep, Execution, ExperimentSpec};

fn modes() -> Vec<Execution> {
    let mut out = vec![Execution::Sequential];
    if Execution::default().is_parallel() {
        out.push(Execution::Parallel);
    }
    out
}

fn sweep(c: &mut Criterion) {
    let spec = ExperimentSpec::canonical(200).unwrap();
    let mut group = c.benchmark_group("lambda_sweep_200");
    group.sample_size(10);
    for exec in modes() {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| b.iter(|| run_sweep(black_box(&spec), exec).unwrap()),
        );
    }
    group.finish();
}

fn finite_difference_gradient(c: &mut Criterion) {
    let spec = ExperimentSpec::canonical(100).unwrap();
    let pb = spec.problem(1e-4).unwrap();
    let u = vec![0.0; spec.mesh.len()];
    let mut group = c.benchmark_group("fd_gradient_100");
    group.sample_size(10);
    for exec in modes() {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| b.iter(|| fd_gradient(&pb, black_box(&u), 1e-6, exec).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, sweep, finite_difference_gradient);
criterion_main!(benches);
