#![allow(dead_code)]

use quasineutral::experiments::{canonical_profile, ExperimentSpec};
use quasineutral::{
    assemble, AssembledForms, DopingProfile, Mesh1D, ReducedProblem, TotalsMode, TrackingTargets,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub label: String,
    pub forms: AssembledForms,
    pub dp: DopingProfile,
}

/// Tiny meshes with sign-changing doping, including the hand-picked
/// `(0, .3, 0, −.3, 0)` case.
pub fn tiny_corpus() -> Vec<Instance> {
    let mut out = Vec::new();
    let forms = assemble(&Mesh1D::unit(5).unwrap());
    let dp = DopingProfile::reference(&forms, vec![0.0, 0.3, 0.0, -0.3, 0.0], 1e-6).unwrap();
    out.push(Instance {
        label: "5 nodes, (0, .3, 0, -.3, 0)".into(),
        forms,
        dp,
    });
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let deltas = [1e-6, 1e-4, 1e-2];
    for k in 0..12 {
        let nodes = 5 + k % 3;
        let delta2 = deltas[k % deltas.len()];
        let mesh = if k % 4 == 3 {
            Mesh1D::new(-1.0, 2.0, nodes).unwrap()
        } else {
            Mesh1D::unit(nodes).unwrap()
        };
        let forms = assemble(&mesh);
        let mut c: Vec<f64> = (0..nodes).map(|_| rng.random_range(-1.5..1.5)).collect();
        // force both signs
        c[0] = c[0].abs() + 0.05;
        c[nodes - 1] = -(c[nodes - 1].abs() + 0.05);
        let dp = DopingProfile::reference(&forms, c, delta2).unwrap();
        out.push(Instance {
            label: format!(
                "{nodes} nodes on [{}, {}], δ² = {delta2:e}, seed case {k}",
                mesh.a(),
                mesh.b()
            ),
            forms,
            dp,
        });
    }
    out
}

/// Canonical problem on `nodes` points of `[0, 1]` with `δ = 10⁻³`.
pub fn canonical_problem(nodes: usize, lambda2: f64, tol: f64) -> ReducedProblem {
    let mesh = Mesh1D::unit(nodes).unwrap();
    let forms = assemble(&mesh);
    let prob = canonical_profile(&mesh);
    let targets = TrackingTargets::new(&forms, prob.n_d, prob.p_d).unwrap();
    ReducedProblem::new(
        forms,
        prob.c_ref,
        targets,
        1e-4,
        lambda2,
        1e-6,
        TotalsMode::Recompute,
        tol,
    )
    .unwrap()
}

pub fn canonical_spec() -> ExperimentSpec {
    ExperimentSpec::canonical(200).unwrap()
}

pub fn random_zero_mean(forms: &AssembledForms, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut h: Vec<f64> = (0..forms.len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    forms.subtract_mean(&mut h);
    h
}
