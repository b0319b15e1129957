//! The λ-sweep study: optimal doping profiles for decreasing Debye length,
//! their distance to the quasi-neutral optimum, solver timings, and CSV output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::adjoint::{solve_adjoint, TrackingTargets};
use crate::doping::DopingProfile;
use crate::error::{Error, Result};
use crate::fem::{assemble, sub, AssembledForms, Mesh1D};
use crate::objective::{ReducedProblem, TotalsMode};
use crate::optimize::{optimize, OptRun, OptimizerConfig};
use crate::parallel::{self, Execution};
use crate::state::solve_state;

/// Shape of the built-in reference doping, in coordinates scaled to `[0, 1]`:
/// a plateau `A⁺` on the left that ramps down to zero over `pos_ramp`, an
/// undoped gap, and a ramp from zero to the plateau `−A⁻` over `neg_ramp`.
/// Ramps are cubic smoothsteps, so the profile is C¹.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileShape {
    pub amp_pos: f64,
    pub amp_neg: f64,
    pub pos_ramp: (f64, f64),
    pub neg_ramp: (f64, f64),
}

impl Default for ProfileShape {
    fn default() -> Self {
        Self {
            amp_pos: 1.0,
            amp_neg: 0.5,
            pos_ramp: (0.1, 0.45),
            neg_ramp: (0.55, 0.9),
        }
    }
}

fn smoothstep((a, b): (f64, f64), t: f64) -> f64 {
    let s = ((t - a) / (b - a)).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl ProfileShape {
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            amp_pos: factor * self.amp_pos,
            amp_neg: factor * self.amp_neg,
            ..self
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.amp_pos * (1.0 - smoothstep(self.pos_ramp, t))
            - self.amp_neg * smoothstep(self.neg_ramp, t)
    }
}

/// Reference doping with electron target `0.8·C_ref⁺` and hole target
/// `1.2·|C_ref⁻|`.
#[derive(Debug, Clone)]
pub struct CanonicalProblem {
    pub c_ref: Vec<f64>,
    pub n_d: Vec<f64>,
    pub p_d: Vec<f64>,
}

pub fn canonical_profile(mesh: &Mesh1D) -> CanonicalProblem {
    profile_with_shape(mesh, &ProfileShape::default())
}

pub fn profile_with_shape(mesh: &Mesh1D, shape: &ProfileShape) -> CanonicalProblem {
    let c_ref = mesh.interpolate(|x| shape.eval((x - mesh.a()) / mesh.measure()));
    let (n_d, p_d) = tracking_targets(&c_ref);
    CanonicalProblem { c_ref, n_d, p_d }
}

/// `(0.8·C_ref⁺, 1.2·|C_ref⁻|)`
pub fn tracking_targets(c_ref: &[f64]) -> (Vec<f64>, Vec<f64>) {
    (
        c_ref.iter().map(|c| 0.8 * c.max(0.0)).collect(),
        c_ref.iter().map(|c| 1.2 * (-c).max(0.0)).collect(),
    )
}

/// Default λ² values: `10⁻³, …, 10⁻⁹` and the quasi-neutral limit.
pub fn default_lambda2_list() -> Vec<f64> {
    vec![1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 0.0]
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub mesh: Mesh1D,
    pub c_ref: Vec<f64>,
    pub n_d: Vec<f64>,
    pub p_d: Vec<f64>,
    pub delta2: f64,
    pub totals: TotalsMode,
    pub lambda2_list: Vec<f64>,
    pub cfg: OptimizerConfig,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    /// Canonical problem on `[0, 1]` with intrinsic density `δ = 10⁻³`.
    pub fn canonical(n_nodes: usize) -> Result<Self> {
        let mesh = Mesh1D::unit(n_nodes)?;
        let prob = canonical_profile(&mesh);
        Ok(Self {
            mesh,
            c_ref: prob.c_ref,
            n_d: prob.n_d,
            p_d: prob.p_d,
            delta2: 1e-6,
            totals: TotalsMode::Recompute,
            lambda2_list: default_lambda2_list(),
            cfg: OptimizerConfig::default(),
            output_dir: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.lambda2_list;
        if l.is_empty() {
            return Err(Error::param("lambda2_list", "must not be empty"));
        }
        if l.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param(
                "lambda2_list",
                "entries must be finite and nonnegative",
            ));
        }
        if l.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::param("lambda2_list", "must be strictly decreasing"));
        }
        if *l.last().unwrap() != 0.0 {
            return Err(Error::param(
                "lambda2_list",
                "must end with 0 (the reference run)",
            ));
        }
        self.mesh.check(&self.c_ref)?;
        self.mesh.check(&self.n_d)?;
        self.mesh.check(&self.p_d)?;
        self.cfg.validate()
    }

    pub fn problem(&self, lambda2: f64) -> Result<ReducedProblem> {
        let forms = assemble(&self.mesh);
        let targets = TrackingTargets::new(&forms, self.n_d.clone(), self.p_d.clone())?;
        ReducedProblem::new(
            forms,
            self.c_ref.clone(),
            targets,
            self.cfg.sigma,
            lambda2,
            self.delta2,
            self.totals,
            self.cfg.tol_inner,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda2: f64,
    /// Median seconds of a forward solve at the optimal profile.
    pub t_state: f64,
    /// Median seconds of an adjoint solve at the optimal profile.
    pub t_adjoint: f64,
    /// `‖C*_λ − C*_0‖₂`
    pub dist_c: f64,
    /// `‖V*_λ − V*_0‖₂`
    pub dist_v: f64,
    pub j_final: f64,
    pub iters: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Completed runs in sweep order; failed runs carry their message.
    pub runs: Vec<std::result::Result<OptRun, String>>,
}

/// Median wall time of `reps` calls after one untimed warm-up call.
pub fn median_time(reps: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(reps.max(1));
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        f()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn time_solvers(
    spec: &ExperimentSpec,
    forms: &AssembledForms,
    run: &OptRun,
    lambda2: f64,
) -> Result<(f64, f64)> {
    let fin = run
        .final_state
        .as_ref()
        .ok_or_else(|| Error::param("run", "has no final state"))?;
    let pb = spec.problem(lambda2)?;
    let dp = pb.profile(&sub(&fin.c, &spec.c_ref))?;
    let sol = solve_state(forms, &dp, lambda2, &pb.state_opts)?;
    let t_state = median_time(3, || {
        solve_state(forms, &dp, lambda2, &pb.state_opts).map(|_| ())
    })?;
    let t_adjoint = median_time(3, || {
        solve_adjoint(forms, &sol, &pb.targets, &pb.adjoint_opts).map(|_| ())
    })?;
    Ok((t_state, t_adjoint))
}

/// Optimizes for every λ² of the spec and compares with the `λ = 0` optimum.
/// Runs that fail are recorded in their row and do not stop the sweep.
pub fn run_sweep(spec: &ExperimentSpec, exec: Execution) -> Result<SweepResult> {
    spec.validate()?;
    let forms = assemble(&spec.mesh);
    let outcomes = parallel::map(
        exec,
        &spec.lambda2_list,
        |&lambda2| -> std::result::Result<(OptRun, f64, f64), String> {
            let pb = spec.problem(lambda2).map_err(|e| e.to_string())?;
            let cfg = OptimizerConfig {
                lambda2,
                ..spec.cfg.clone()
            };
            let run = optimize(&pb, &cfg).map_err(|e| e.to_string())?;
            let (ts, ta) = time_solvers(spec, &forms, &run, lambda2).map_err(|e| e.to_string())?;
            Ok((run, ts, ta))
        },
    );

    let reference = match outcomes.last() {
        Some(Ok((run, _, _))) => run.final_state.clone(),
        _ => None,
    };
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut runs = Vec::with_capacity(outcomes.len());
    for (&lambda2, outcome) in spec.lambda2_list.iter().zip(outcomes) {
        match outcome {
            Ok((run, t_state, t_adjoint)) => {
                let fin = run
                    .final_state
                    .as_ref()
                    .expect("converged runs carry a final state");
                let (dist_c, dist_v) = match &reference {
                    Some(r) => (
                        forms.l2_norm(&sub(&fin.c, &r.c)),
                        forms.l2_norm(&sub(&fin.v, &r.v)),
                    ),
                    None => (f64::NAN, f64::NAN),
                };
                rows.push(SweepRow {
                    lambda2,
                    t_state,
                    t_adjoint,
                    dist_c,
                    dist_v,
                    j_final: run.final_cost().map_or(f64::NAN, |c| c.total),
                    iters: run.steps(),
                    error: None,
                });
                runs.push(Ok(run));
            }
            Err(msg) => {
                rows.push(SweepRow {
                    lambda2,
                    t_state: f64::NAN,
                    t_adjoint: f64::NAN,
                    dist_c: f64::NAN,
                    dist_v: f64::NAN,
                    j_final: f64::NAN,
                    iters: 0,
                    error: Some(msg.clone()),
                });
                runs.push(Err(msg));
            }
        }
    }
    Ok(SweepResult { rows, runs })
}

/// Seventeen significant digits: parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub const SWEEP_HEADER: [&str; 7] = [
    "lambda2",
    "t_state_s",
    "t_adjoint_s",
    "dist_C_L2",
    "dist_V_L2",
    "J_final",
    "iters",
];

/// Writes through `<path>.partial` and renames once complete, so a failure
/// never leaves a truncated file under the final name.
fn write_atomically(
    path: &Path,
    f: impl FnOnce(&mut csv::Writer<fs::File>) -> Result<()>,
) -> Result<()> {
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    let mut wtr = csv::Writer::from_path(&partial)?;
    f(&mut wtr)?;
    wtr.flush()?;
    drop(wtr);
    fs::rename(&partial, path)?;
    Ok(())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    write_atomically(path, |wtr| {
        wtr.write_record(SWEEP_HEADER)?;
        for r in rows {
            wtr.write_record([
                fmt_f64(r.lambda2),
                fmt_f64(r.t_state),
                fmt_f64(r.t_adjoint),
                fmt_f64(r.dist_c),
                fmt_f64(r.dist_v),
                fmt_f64(r.j_final),
                r.iters.to_string(),
            ])?;
        }
        Ok(())
    })
}

fn parse_f64(field: Option<&str>, what: &str) -> Result<f64> {
    field
        .and_then(|s| s.trim().parse::<f64>().ok())
        .ok_or_else(|| {
            Error::Io(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("bad {what} field"),
            ))
        })
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        rows.push(SweepRow {
            lambda2: parse_f64(rec.get(0), "lambda2")?,
            t_state: parse_f64(rec.get(1), "t_state_s")?,
            t_adjoint: parse_f64(rec.get(2), "t_adjoint_s")?,
            dist_c: parse_f64(rec.get(3), "dist_C_L2")?,
            dist_v: parse_f64(rec.get(4), "dist_V_L2")?,
            j_final: parse_f64(rec.get(5), "J_final")?,
            iters: parse_f64(rec.get(6), "iters")? as usize,
            error: None,
        });
    }
    Ok(rows)
}

/// One `(x or iteration, value, lambda2)` row of a figure file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigurePoint {
    pub abscissa: f64,
    pub value: f64,
    pub lambda2: f64,
}

fn write_figure(path: &Path, first: &str, points: &[FigurePoint]) -> Result<()> {
    write_atomically(path, |wtr| {
        wtr.write_record([first, "value", "lambda2"])?;
        for p in points {
            let a = if first == "iteration" {
                (p.abscissa as usize).to_string()
            } else {
                fmt_f64(p.abscissa)
            };
            wtr.write_record([a, fmt_f64(p.value), fmt_f64(p.lambda2)])?;
        }
        Ok(())
    })
}

pub fn read_figure_csv(path: &Path) -> Result<Vec<FigurePoint>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push(FigurePoint {
            abscissa: parse_f64(rec.get(0), "abscissa")?,
            value: parse_f64(rec.get(1), "value")?,
            lambda2: parse_f64(rec.get(2), "lambda2")?,
        });
    }
    Ok(out)
}

type ProfileField = fn(&crate::optimize::FinalState) -> &Vec<f64>;
type CostField = fn(&crate::objective::CostBreakdown) -> f64;

/// Writes `fig_profiles_{C,V,n,p}.csv` and `fig_cost_{J,J1,J2,J3}.csv` and
/// returns the paths written.
pub fn emit_figures(mesh: &Mesh1D, runs: &[OptRun], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let x = mesh.nodes();
    let mut written = Vec::new();
    let profiles: [(&str, ProfileField); 4] = [
        ("C", |f| &f.c),
        ("V", |f| &f.v),
        ("n", |f| &f.n),
        ("p", |f| &f.p),
    ];
    for (name, field) in profiles {
        let mut points = Vec::new();
        for run in runs {
            if let Some(fin) = &run.final_state {
                for (xi, v) in x.iter().zip(field(fin)) {
                    points.push(FigurePoint {
                        abscissa: *xi,
                        value: *v,
                        lambda2: run.lambda2,
                    });
                }
            }
        }
        let path = dir.join(format!("fig_profiles_{name}.csv"));
        write_figure(&path, "x", &points)?;
        written.push(path);
    }
    let costs: [(&str, CostField); 4] = [
        ("J", |c| c.total),
        ("J1", |c| c.j1),
        ("J2", |c| c.j2),
        ("J3", |c| c.j3),
    ];
    for (name, field) in costs {
        let mut points = Vec::new();
        for run in runs {
            for (k, rec) in run.iterates.iter().enumerate() {
                points.push(FigurePoint {
                    abscissa: k as f64,
                    value: field(&rec.cost),
                    lambda2: run.lambda2,
                });
            }
        }
        let path = dir.join(format!("fig_cost_{name}.csv"));
        write_figure(&path, "iteration", &points)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `sweep.csv` and the figure files for a finished sweep.
pub fn write_sweep_outputs(
    spec: &ExperimentSpec,
    result: &SweepResult,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let runs: Vec<OptRun> = result
        .runs
        .iter()
        .filter_map(|r| r.as_ref().ok().cloned())
        .collect();
    let mut written = emit_figures(&spec.mesh, &runs, dir)?;
    let path = dir.join("sweep.csv");
    write_sweep_csv(&result.rows, &path)?;
    written.push(path);
    let failures: Vec<String> = result
        .rows
        .iter()
        .filter_map(|r| {
            r.error
                .as_ref()
                .map(|e| format!("lambda2 = {}: {e}", fmt_f64(r.lambda2)))
        })
        .collect();
    if !failures.is_empty() {
        let path = dir.join("sweep_errors.txt");
        let mut f = fs::File::create(&path)?;
        for line in failures {
            writeln!(f, "{line}")?;
        }
        written.push(path);
    }
    Ok(written)
}

/// Doping profile of the canonical problem with totals from `C_ref`.
pub fn reference_doping(spec: &ExperimentSpec) -> Result<DopingProfile> {
    let forms = assemble(&spec.mesh);
    DopingProfile::reference(&forms, spec.c_ref.clone(), spec.delta2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doping::ChargeTotals;

    #[test]
    fn canonical_profile_is_asymmetric_and_admissible() {
        let mesh = Mesh1D::unit(200).unwrap();
        let forms = assemble(&mesh);
        let prob = canonical_profile(&mesh);
        assert!(prob.c_ref.iter().any(|c| *c > 0.0) && prob.c_ref.iter().any(|c| *c < 0.0));
        // a smoothstep ramp carries half its plateau value on average:
        // ∫C_ref = (A⁺ − A⁻)(0.1 + 0.35/2) = 0.1375
        assert!((forms.integral(&prob.c_ref) - 0.1375).abs() < 1e-4);
        let t = ChargeTotals::from_profile(&forms, &prob.c_ref, 1e-6).unwrap();
        assert!((t.n_total - 0.275).abs() < 1e-4 && (t.p_total - 0.1375).abs() < 1e-4);
        assert_eq!(prob.c_ref[0], 1.0);
        assert_eq!(prob.c_ref[199], -0.5);
        assert_eq!(prob.c_ref[100], 0.0);
        assert!(prob.n_d.iter().chain(&prob.p_d).all(|v| *v >= 0.0));
    }

    #[test]
    fn zero_scaled_profile_gives_zero_targets() {
        let mesh = Mesh1D::unit(20).unwrap();
        let prob = profile_with_shape(&mesh, &ProfileShape::default().scaled(0.0));
        assert!(prob
            .n_d
            .iter()
            .chain(&prob.p_d)
            .chain(&prob.c_ref)
            .all(|v| *v == 0.0));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ExperimentSpec::canonical(21).unwrap();
        assert!(spec.validate().is_ok());
        spec.lambda2_list = vec![1e-3, 1e-4];
        assert!(spec.validate().is_err());
        spec.lambda2_list = vec![1e-4, 1e-3, 0.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SweepRow {
                lambda2: 1e-3,
                t_state: 0.123_456_789_012_345_68,
                t_adjoint: 1.0 / 3.0,
                dist_c: std::f64::consts::PI * 1e-5,
                dist_v: 2.0f64.sqrt(),
                j_final: 0.1 + 0.2,
                iters: 17,
                error: None,
            },
            SweepRow {
                lambda2: 0.0,
                t_state: 5e-324,
                t_adjoint: 1.7976931348623157e308,
                dist_c: 0.0,
                dist_v: 0.0,
                j_final: 1e-300,
                iters: 0,
                error: None,
            },
        ];
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&rows, &path).unwrap();
        assert_eq!(read_sweep_csv(&path).unwrap(), rows);
        assert!(!dir.path().join("sweep.csv.partial").exists());
    }

    #[test]
    fn empty_runs_give_header_only_figures() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh1D::unit(5).unwrap();
        let files = emit_figures(&mesh, &[], dir.path()).unwrap();
        assert_eq!(files.len(), 8);
        for f in files {
            let text = fs::read_to_string(&f).unwrap();
            assert_eq!(text.lines().count(), 1, "{}", f.display());
            assert!(read_figure_csv(&f).unwrap().is_empty());
        }
    }
}
