//! Run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use quasineutral::experiments::{canonical_profile, default_lambda2_list, tracking_targets};
use quasineutral::optimize::SignConvention;
use quasineutral::{ExperimentSpec, Mesh1D, OptimizerConfig, TotalsMode};
use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "quasineutral",
    version,
    about = "Optimal doping profiles for semiconductor equilibrium and its quasi-neutral limit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the state equation at the reference doping.
    Solve,
    /// Solve the state and adjoint equations at the reference doping.
    Adjoint,
    /// Run steepest descent from the reference doping.
    Optimize,
    /// Optimize for every λ² of the sweep and compare with λ = 0.
    Sweep,
    /// Compare the adjoint gradient with central finite differences.
    Gradcheck,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// Squared scaled Debye length; 0 selects the quasi-neutral solvers.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda2: Option<f64>,
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    /// Domain endpoints as `a,b`.
    #[arg(long, global = true, allow_hyphen_values = true, value_parser = parse_domain)]
    pub domain: Option<(f64, f64)>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub sigma: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub omega0: Option<f64>,
    /// Armijo constant.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// State and adjoint solver tolerance.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol_opt: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub tol_abs: Option<f64>,
    /// Intrinsic density δ (the totals use δ²).
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Directory for CSV output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the update and Armijo test with the signs exactly as printed.
    #[arg(long, global = true)]
    pub paper_signs: bool,
    /// Keep the totals N, P fixed at their values for C_ref.
    #[arg(long, global = true)]
    pub freeze_totals: bool,
    /// Seed for the random directions of `gradcheck`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `constant:<v>`, `builtin:canonical` or `csv:<path>`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub doping: Option<String>,
    /// Number of random directions for `gradcheck`.
    #[arg(long, global = true)]
    pub directions: Option<usize>,
}

fn parse_domain(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let a: f64 = a
        .trim()
        .parse()
        .map_err(|e| format!("bad left endpoint: {e}"))?;
    let b: f64 = b
        .trim()
        .parse()
        .map_err(|e| format!("bad right endpoint: {e}"))?;
    Ok((a, b))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    mesh: MeshSection,
    #[serde(default)]
    problem: ProblemSection,
    #[serde(default)]
    optimizer: OptimizerSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    gradcheck: GradcheckSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshSection {
    nodes: Option<usize>,
    domain: Option<[f64; 2]>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemSection {
    delta: Option<f64>,
    doping: Option<String>,
    lambda2: Option<f64>,
    freeze_totals: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerSection {
    sigma: Option<f64>,
    gamma: Option<f64>,
    omega0: Option<f64>,
    tol: Option<f64>,
    tol_opt: Option<f64>,
    tol_abs: Option<f64>,
    max_iter: Option<usize>,
    max_halvings: Option<usize>,
    paper_signs: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    lambda2: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradcheckSection {
    seed: Option<u64>,
    directions: Option<usize>,
    eps: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DopingSource {
    Constant(f64),
    Canonical,
    Csv(PathBuf),
}

impl DopingSource {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match kind {
            "constant" => arg
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .map(DopingSource::Constant)
                .ok_or_else(|| invalid("doping", format!("`{arg}` is not a finite number"))),
            "builtin" if arg == "canonical" => Ok(DopingSource::Canonical),
            "builtin" => Err(invalid(
                "doping",
                format!("unknown builtin profile `{arg}`"),
            )),
            "csv" if !arg.is_empty() => Ok(DopingSource::Csv(PathBuf::from(arg))),
            _ => Err(invalid(
                "doping",
                format!("expected constant:<v>, builtin:canonical or csv:<path>, got `{s}`"),
            )),
        }
    }

    /// Nodal values on `mesh`.
    pub fn sample(&self, mesh: &Mesh1D) -> Result<Vec<f64>, ConfigError> {
        match self {
            DopingSource::Constant(v) => Ok(vec![*v; mesh.len()]),
            DopingSource::Canonical => Ok(canonical_profile(mesh).c_ref),
            DopingSource::Csv(path) => {
                let (xs, ys) = read_profile_csv(path)?;
                mesh.nodes()
                    .into_iter()
                    .map(|x| {
                        interpolate(&xs, &ys, x).ok_or_else(|| {
                            invalid(
                                "doping",
                                format!("{} does not cover x = {x}", path.display()),
                            )
                        })
                    })
                    .collect()
            }
        }
    }
}

/// Reads `x,value` rows, skipping a header line if present.
fn read_profile_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>), ConfigError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| invalid("doping", format!("{}: {e}", path.display())))?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| invalid("doping", format!("{}: {e}", path.display())))?;
        let parsed = (
            rec.get(0).map(str::parse::<f64>),
            rec.get(1).map(str::parse::<f64>),
        );
        match parsed {
            (Some(Ok(x)), Some(Ok(y))) if x.is_finite() && y.is_finite() => {
                xs.push(x);
                ys.push(y);
            }
            _ if line == 0 => continue,
            _ => {
                return Err(invalid(
                    "doping",
                    format!("{} line {}: expected two numbers", path.display(), line + 1),
                ))
            }
        }
    }
    if xs.len() < 2 || xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(
            "doping",
            format!(
                "{} needs at least two rows with increasing x",
                path.display()
            ),
        ));
    }
    Ok((xs, ys))
}

fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> Option<f64> {
    let slack = 1e-12 * (xs[xs.len() - 1] - xs[0]);
    if x < xs[0] - slack || x > xs[xs.len() - 1] + slack {
        return None;
    }
    let k = xs.partition_point(|&t| t <= x).clamp(1, xs.len() - 1);
    let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
    Some(ys[k - 1] + t * (ys[k] - ys[k - 1]))
}

/// Fully merged and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub nodes: usize,
    pub domain: (f64, f64),
    pub delta: f64,
    pub doping: DopingSource,
    pub lambda2: f64,
    pub sweep_lambda2: Vec<f64>,
    pub totals: TotalsMode,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub directions: usize,
    pub eps: f64,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        Self {
            command,
            nodes: 200,
            domain: (0.0, 1.0),
            delta: 1e-3,
            doping: DopingSource::Canonical,
            lambda2: 0.0,
            sweep_lambda2: default_lambda2_list(),
            totals: TotalsMode::Recompute,
            optimizer: OptimizerConfig::default(),
            seed: 7,
            directions: 6,
            eps: 1e-6,
            out: None,
        }
    }

    pub fn from_cli(cli: &Cli) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults(cli.command);
        if let Some(path) = &cli.flags.config {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            let file: FileConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            cfg.apply_file(file)?;
        }
        cfg.apply_flags(&cli.flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, f: FileConfig) -> Result<(), ConfigError> {
        let o = &mut self.optimizer;
        set(&mut self.nodes, f.mesh.nodes);
        set(&mut self.domain, f.mesh.domain.map(|[a, b]| (a, b)));
        set(&mut self.delta, f.problem.delta);
        if let Some(d) = f.problem.doping {
            self.doping = DopingSource::parse(&d)?;
        }
        set(&mut self.lambda2, f.problem.lambda2);
        if let Some(frozen) = f.problem.freeze_totals {
            self.totals = if frozen {
                TotalsMode::Frozen
            } else {
                TotalsMode::Recompute
            };
        }
        set(&mut o.sigma, f.optimizer.sigma);
        set(&mut o.gamma, f.optimizer.gamma);
        set(&mut o.omega0, f.optimizer.omega0);
        set(&mut o.tol_inner, f.optimizer.tol);
        set(&mut o.tol_opt, f.optimizer.tol_opt);
        set(&mut o.tol_abs, f.optimizer.tol_abs);
        set(&mut o.max_iter, f.optimizer.max_iter);
        set(&mut o.max_halvings, f.optimizer.max_halvings);
        if let Some(literal) = f.optimizer.paper_signs {
            o.signs = if literal {
                SignConvention::Literal
            } else {
                SignConvention::Descent
            };
        }
        set(&mut self.sweep_lambda2, f.sweep.lambda2);
        set(&mut self.seed, f.gradcheck.seed);
        set(&mut self.directions, f.gradcheck.directions);
        set(&mut self.eps, f.gradcheck.eps);
        if f.output.dir.is_some() {
            self.out = f.output.dir;
        }
        Ok(())
    }

    fn apply_flags(&mut self, f: &Flags) -> Result<(), ConfigError> {
        let o = &mut self.optimizer;
        set(&mut self.lambda2, f.lambda2);
        set(&mut self.nodes, f.nodes);
        set(&mut self.domain, f.domain);
        set(&mut o.sigma, f.sigma);
        set(&mut o.omega0, f.omega0);
        set(&mut o.gamma, f.gamma);
        set(&mut o.tol_inner, f.tol);
        set(&mut o.tol_opt, f.tol_opt);
        set(&mut o.tol_abs, f.tol_abs);
        set(&mut self.delta, f.delta);
        set(&mut o.max_iter, f.max_iter);
        if f.paper_signs {
            o.signs = SignConvention::Literal;
        }
        if f.freeze_totals {
            self.totals = TotalsMode::Frozen;
        }
        set(&mut self.seed, f.seed);
        set(&mut self.directions, f.directions);
        if let Some(d) = &f.doping {
            self.doping = DopingSource::parse(d)?;
        }
        if f.out.is_some() {
            self.out = f.out.clone();
        }
        Ok(())
    }

    fn validate(&mut self) -> Result<(), ConfigError> {
        if self.nodes < 3 {
            return Err(invalid(
                "nodes",
                format!("need at least 3 nodes, got {}", self.nodes),
            ));
        }
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(invalid("domain", format!("need finite a < b, got {a},{b}")));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid(
                "delta",
                format!("must be positive, got {}", self.delta),
            ));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(invalid(
                "lambda2",
                format!("must be nonnegative, got {}", self.lambda2),
            ));
        }
        if self.directions == 0 {
            return Err(invalid("directions", "must be at least 1"));
        }
        if !(1e-8..=1e-4).contains(&self.eps) {
            return Err(invalid(
                "eps",
                format!("must lie in [1e-8, 1e-4], got {}", self.eps),
            ));
        }
        self.optimizer.lambda2 = self.lambda2;
        self.optimizer.validate().map_err(core_to_config)
    }

    /// The experiment described by this configuration.
    pub fn spec(&self) -> Result<ExperimentSpec, ConfigError> {
        let mesh = Mesh1D::new(self.domain.0, self.domain.1, self.nodes)
            .map_err(|e| invalid("nodes", e.to_string()))?;
        let c_ref = self.doping.sample(&mesh)?;
        let (n_d, p_d) = tracking_targets(&c_ref);
        let spec = ExperimentSpec {
            mesh,
            c_ref,
            n_d,
            p_d,
            delta2: self.delta * self.delta,
            totals: self.totals,
            lambda2_list: self.sweep_lambda2.clone(),
            cfg: self.optimizer.clone(),
            output_dir: self.out.clone(),
        };
        spec.validate().map_err(core_to_config)?;
        Ok(spec)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn core_to_config(e: quasineutral::Error) -> ConfigError {
    match e {
        quasineutral::Error::InvalidParameter { name, reason } => invalid(name, reason),
        other => invalid("problem", other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn parse(args: &[&str]) -> Result<RunConfig, ConfigError> {
        let cli = Cli::try_parse_from(std::iter::once("quasineutral").chain(args.iter().copied()))
            .unwrap();
        RunConfig::from_cli(&cli)
    }

    fn key_of(e: ConfigError) -> String {
        match e {
            ConfigError::Invalid { key, .. } => key,
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn defaults_follow_the_parameter_table() {
        let cfg = parse(&["optimize"]).unwrap();
        let o = &cfg.optimizer;
        assert_eq!((o.sigma, o.omega0, o.gamma), (1e-4, 50.0, 1e-4));
        assert_eq!((o.tol_inner, o.tol_opt, o.tol_abs), (1e-8, 5e-2, 5e-5));
        assert_eq!((cfg.delta, cfg.nodes, cfg.domain), (1e-3, 200, (0.0, 1.0)));
        assert_eq!(cfg.doping, DopingSource::Canonical);
        assert_eq!(cfg.totals, TotalsMode::Recompute);
        assert_eq!(o.signs, SignConvention::Descent);
        let spec = cfg.spec().unwrap();
        assert_eq!(spec.delta2, 1e-6);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            "[mesh]\nnodes = 50\ndomain = [-1.0, 2.0]\n[optimizer]\nsigma = 1e-3\nomega0 = 10.0\n[problem]\nfreeze_totals = true"
        )
        .unwrap();
        let path = file.path().to_str().unwrap();
        let cfg = parse(&[
            "solve",
            "--config",
            path,
            "--omega0",
            "20",
            "--lambda2",
            "1e-5",
        ])
        .unwrap();
        assert_eq!(cfg.nodes, 50);
        assert_eq!(cfg.domain, (-1.0, 2.0));
        assert_eq!(cfg.optimizer.sigma, 1e-3);
        assert_eq!(cfg.optimizer.omega0, 20.0);
        assert_eq!(cfg.optimizer.lambda2, 1e-5);
        assert_eq!(cfg.totals, TotalsMode::Frozen);
        assert_eq!(cfg.optimizer.gamma, 1e-4);
    }

    #[test]
    fn unknown_file_keys_are_rejected_by_name() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "[optimizer]\nsigmaa = 1.0").unwrap();
        let err = parse(&["solve", "--config", file.path().to_str().unwrap()]).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { .. }));
        assert!(err.to_string().contains("sigmaa"), "{err}");
    }

    #[test]
    fn out_of_range_values_name_their_key() {
        assert_eq!(
            key_of(parse(&["solve", "--nodes", "2"]).unwrap_err()),
            "nodes"
        );
        assert_eq!(
            key_of(parse(&["solve", "--domain", "1,0"]).unwrap_err()),
            "domain"
        );
        assert_eq!(
            key_of(parse(&["solve", "--lambda2", "-1"]).unwrap_err()),
            "lambda2"
        );
        assert_eq!(
            key_of(parse(&["solve", "--sigma", "0"]).unwrap_err()),
            "sigma"
        );
        assert_eq!(
            key_of(parse(&["solve", "--delta", "-1e-3"]).unwrap_err()),
            "delta"
        );
        assert_eq!(
            key_of(parse(&["solve", "--max-iter", "0"]).unwrap_err()),
            "max_iter"
        );
        assert_eq!(
            key_of(parse(&["solve", "--doping", "linear:2"]).unwrap_err()),
            "doping"
        );
    }

    #[test]
    fn bad_sweep_list_is_a_config_error() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "[sweep]\nlambda2 = [1e-3, 1e-2, 0.0]").unwrap();
        let cfg = parse(&["sweep", "--config", file.path().to_str().unwrap()]).unwrap();
        assert_eq!(key_of(cfg.spec().unwrap_err()), "lambda2_list");
    }

    #[test]
    fn doping_sources() {
        let mesh = Mesh1D::unit(5).unwrap();
        assert_eq!(
            DopingSource::parse("constant:-0.3")
                .unwrap()
                .sample(&mesh)
                .unwrap(),
            vec![-0.3; 5]
        );
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "x,value\n0,1\n0.5,0\n1,-1").unwrap();
        let src = DopingSource::parse(&format!("csv:{}", file.path().display())).unwrap();
        let c = src.sample(&mesh).unwrap();
        for (got, want) in c.iter().zip([1.0, 0.5, 0.0, -0.5, -1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let wide = Mesh1D::new(0.0, 2.0, 5).unwrap();
        assert!(src.sample(&wide).is_err());
    }
}
