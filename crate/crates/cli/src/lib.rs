//! Run configuration and subcommand implementations behind the `ergodev` binary.
//!
//! A run is described by a flat `key = value` file. Command-line flags fill the
//! same [`RunConfig`] and take precedence over file entries.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use ergodev::asclt::asclt_tail;
use ergodev::bounds::{
    coboundary_log_bound, comparison_curves, confidence_interval, coverage_radius, gaussian_log_bound,
    BoundParams, CoboundaryForm, IntervalMode,
};
use ergodev::figure::{fmt_num, generate_figure, FigureConfig, FigureId, PUBLISHED_ALPHA, VERSION};
use ergodev::model::{
    registry_get, InnovationKind, ModelSetup, Observable, Point, RegistryModel, RegistryParams, REGISTRY,
};
use ergodev::montecarlo::estimate_reference;
use ergodev::poisson::{confluence_alpha, ConfluenceOptions};
use ergodev::scheme::{run_trajectory, TrajectoryConfig};
use ergodev::steps::StepSequence;
use ergodev::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 for configuration problems, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Core(Error::Config(_)) | Self::Core(Error::Domain(_)) => 2,
            Self::Core(Error::Simulation { .. }) | Self::Core(Error::Data(_)) | Self::Io(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Figure,
    Bounds,
    Interval,
    Confluence,
    Asclt,
}

impl Command {
    pub const ALL: [Command; 6] =
        [Self::Simulate, Self::Figure, Self::Bounds, Self::Interval, Self::Confluence, Self::Asclt];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Figure => "figure",
            Self::Bounds => "bounds",
            Self::Interval => "interval",
            Self::Confluence => "confluence",
            Self::Asclt => "asclt",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| usage(format!("unknown command '{s}'")))
    }
}

/// Deviation statistic requested for a figure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Unbiased,
    Biased,
    BiasedFull,
    Slutsky,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [Self::Unbiased, Self::Biased, Self::BiasedFull, Self::Slutsky];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Unbiased => "unbiased",
            Self::Biased => "biased",
            Self::BiasedFull => "biased-full",
            Self::Slutsky => "slutsky",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| usage(format!("unknown statistic '{s}'; expected unbiased, biased, biased-full or slutsky")))
    }
}

/// Lipschitz sources offered by the `asclt` command.
pub const ASCLT_SOURCES: [&str; 4] = ["sinx", "cosx", "tanhx", "absx"];

fn asclt_source(name: &str) -> CliResult<Observable<1>> {
    let f: Observable<1> = match name {
        "sinx" => Arc::new(|x: &Point<1>| x[0].sin()),
        "cosx" => Arc::new(|x: &Point<1>| x[0].cos()),
        "tanhx" => Arc::new(|x: &Point<1>| x[0].tanh()),
        "absx" => Arc::new(|x: &Point<1>| x[0].abs()),
        other => return Err(usage(format!("unknown source '{other}'; expected one of {}", ASCLT_SOURCES.join(", ")))),
    };
    Ok(f)
}

/// Every setting a run can carry. Unset fields fall back to per-command defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub figure: Option<FigureId>,
    pub model: Option<String>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub variant: Option<bool>,
    pub sign_start: Option<bool>,
    pub innovation: Option<InnovationKind>,
    pub theta: Option<Vec<f64>>,
    pub gamma0: Option<f64>,
    pub n: Option<u64>,
    pub mc: Option<u64>,
    pub a_min: Option<f64>,
    pub a_max: Option<f64>,
    pub a_count: Option<usize>,
    pub seed: Option<u64>,
    pub statistic: Option<Statistic>,
    pub quadrature_nodes: Option<usize>,
    pub calibration_n: Option<u64>,
    pub calibration_theta: Option<f64>,
    pub calibration_replicates: Option<u64>,
    pub alpha: Option<f64>,
    pub recompute_alpha: Option<bool>,
    pub nu_ref: Option<f64>,
    pub coverage: Option<f64>,
    pub source: Option<String>,
    pub theorem_literal: Option<bool>,
    pub carre: Option<bool>,
    pub box_radius: Option<f64>,
    pub resolution: Option<usize>,
    pub directions: Option<usize>,
    pub output: Option<PathBuf>,
}

pub const CONFIG_KEYS: [&str; 32] = [
    "command",
    "figure",
    "model",
    "epsilon",
    "beta",
    "variant",
    "sign_start",
    "innovation",
    "theta",
    "gamma0",
    "n",
    "mc",
    "a_min",
    "a_max",
    "a_count",
    "seed",
    "statistic",
    "quadrature_nodes",
    "calibration_n",
    "calibration_theta",
    "calibration_replicates",
    "alpha",
    "recompute_alpha",
    "nu_ref",
    "coverage",
    "source",
    "theorem_literal",
    "carre",
    "box_radius",
    "resolution",
    "directions",
    "output",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|_| usage(format!("invalid value '{v}' for '{key}'")))
}

fn parse_bool(key: &str, v: &str) -> CliResult<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(usage(format!("invalid boolean '{v}' for '{key}'"))),
    }
}

fn parse_list(key: &str, v: &str) -> CliResult<Vec<f64>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let v = value.trim();
        match key {
            "command" => self.command = Some(Command::parse(v)?),
            "figure" => self.figure = Some(FigureId::parse(v)?),
            "model" => self.model = Some(v.to_string()),
            "epsilon" => self.epsilon = Some(parse_num(key, v)?),
            "beta" => self.beta = Some(parse_num(key, v)?),
            "variant" => self.variant = Some(parse_bool(key, v)?),
            "sign_start" => self.sign_start = Some(parse_bool(key, v)?),
            "innovation" => self.innovation = Some(InnovationKind::parse(v)?),
            "theta" => self.theta = Some(parse_list(key, v)?),
            "gamma0" => self.gamma0 = Some(parse_num(key, v)?),
            "n" => self.n = Some(parse_num(key, v)?),
            "mc" => self.mc = Some(parse_num(key, v)?),
            "a_min" => self.a_min = Some(parse_num(key, v)?),
            "a_max" => self.a_max = Some(parse_num(key, v)?),
            "a_count" => self.a_count = Some(parse_num(key, v)?),
            "seed" => self.seed = Some(parse_num(key, v)?),
            "statistic" => self.statistic = Some(Statistic::parse(v)?),
            "quadrature_nodes" => self.quadrature_nodes = Some(parse_num(key, v)?),
            "calibration_n" => self.calibration_n = Some(parse_num(key, v)?),
            "calibration_theta" => self.calibration_theta = Some(parse_num(key, v)?),
            "calibration_replicates" => self.calibration_replicates = Some(parse_num(key, v)?),
            "alpha" => self.alpha = Some(parse_num(key, v)?),
            "recompute_alpha" => self.recompute_alpha = Some(parse_bool(key, v)?),
            "nu_ref" => self.nu_ref = Some(parse_num(key, v)?),
            "coverage" => self.coverage = Some(parse_num(key, v)?),
            "source" => self.source = Some(v.to_string()),
            "theorem_literal" => self.theorem_literal = Some(parse_bool(key, v)?),
            "carre" => self.carre = Some(parse_bool(key, v)?),
            "box_radius" => self.box_radius = Some(parse_num(key, v)?),
            "resolution" => self.resolution = Some(parse_num(key, v)?),
            "directions" => self.directions = Some(parse_num(key, v)?),
            "output" => self.output = Some(PathBuf::from(v)),
            other => return Err(usage(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Parses the `key = value` format; `#` starts a comment line.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("line {}: expected 'key = value', got '{line}'", i + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| usage(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    /// Set entries as `(key, value)` pairs in [`CONFIG_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let f = |v: f64| format!("{v}");
        macro_rules! put {
            ($key:literal, $field:expr, $fmt:expr) => {
                if let Some(v) = &$field {
                    out.push(($key, $fmt(v)));
                }
            };
        }
        put!("command", self.command, |c: &Command| c.as_str().to_string());
        put!("figure", self.figure, |c: &FigureId| c.as_str().to_string());
        put!("model", self.model, |s: &String| s.clone());
        put!("epsilon", self.epsilon, |v: &f64| f(*v));
        put!("beta", self.beta, |v: &f64| f(*v));
        put!("variant", self.variant, |v: &bool| v.to_string());
        put!("sign_start", self.sign_start, |v: &bool| v.to_string());
        put!("innovation", self.innovation, |v: &InnovationKind| v.to_string());
        put!("theta", self.theta, |v: &Vec<f64>| v.iter().map(|x| f(*x)).collect::<Vec<_>>().join(","));
        put!("gamma0", self.gamma0, |v: &f64| f(*v));
        put!("n", self.n, |v: &u64| v.to_string());
        put!("mc", self.mc, |v: &u64| v.to_string());
        put!("a_min", self.a_min, |v: &f64| f(*v));
        put!("a_max", self.a_max, |v: &f64| f(*v));
        put!("a_count", self.a_count, |v: &usize| v.to_string());
        put!("seed", self.seed, |v: &u64| v.to_string());
        put!("statistic", self.statistic, |v: &Statistic| v.as_str().to_string());
        put!("quadrature_nodes", self.quadrature_nodes, |v: &usize| v.to_string());
        put!("calibration_n", self.calibration_n, |v: &u64| v.to_string());
        put!("calibration_theta", self.calibration_theta, |v: &f64| f(*v));
        put!("calibration_replicates", self.calibration_replicates, |v: &u64| v.to_string());
        put!("alpha", self.alpha, |v: &f64| f(*v));
        put!("recompute_alpha", self.recompute_alpha, |v: &bool| v.to_string());
        put!("nu_ref", self.nu_ref, |v: &f64| f(*v));
        put!("coverage", self.coverage, |v: &f64| f(*v));
        put!("source", self.source, |s: &String| s.clone());
        put!("theorem_literal", self.theorem_literal, |v: &bool| v.to_string());
        put!("carre", self.carre, |v: &bool| v.to_string());
        put!("box_radius", self.box_radius, |v: &f64| f(*v));
        put!("resolution", self.resolution, |v: &usize| v.to_string());
        put!("directions", self.directions, |v: &usize| v.to_string());
        put!("output", self.output, |p: &PathBuf| p.display().to_string());
        out
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Fields set in `over` replace those in `self`.
    pub fn merge(mut self, over: RunConfig) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if over.$field.is_some() { self.$field = over.$field; })*
            };
        }
        take!(
            command, figure, model, epsilon, beta, variant, sign_start, innovation, theta, gamma0, n, mc, a_min,
            a_max, a_count, seed, statistic, quadrature_nodes, calibration_n, calibration_theta,
            calibration_replicates, alpha, recompute_alpha, nu_ref, coverage, source, theorem_literal, carre,
            box_radius, resolution, directions, output
        );
        self
    }

    fn registry_params(&self) -> RegistryParams {
        let d = RegistryParams::default();
        RegistryParams {
            epsilon: self.epsilon.unwrap_or(d.epsilon),
            beta: self.beta.unwrap_or(d.beta),
            variant: self.variant.unwrap_or(d.variant),
            sign_start: self.sign_start.or(d.sign_start),
        }
    }

    fn single_theta(&self, default: f64) -> CliResult<f64> {
        match self.theta.as_deref() {
            None => Ok(default),
            Some([t]) => Ok(*t),
            Some(_) => Err(usage("this command takes a single theta")),
        }
    }

    fn grid(&self, min: f64, max: f64, count: usize) -> CliResult<Vec<f64>> {
        let (lo, hi, k) = (self.a_min.unwrap_or(min), self.a_max.unwrap_or(max), self.a_count.unwrap_or(count));
        if k < 2 || !(hi > lo) || lo < 0.0 {
            return Err(usage(format!("a-grid needs 0 <= a_min < a_max and a_count >= 2, got [{lo}, {hi}] x {k}")));
        }
        let h = (hi - lo) / (k - 1) as f64;
        Ok((0..k).map(|i| lo + h * i as f64).collect())
    }

    fn model_or(&self, default: &str) -> String {
        self.model.clone().unwrap_or_else(|| default.to_string())
    }

    fn load_model(&self, default: &str) -> CliResult<RegistryModel> {
        let mut m = registry_get(&self.model_or(default), &self.registry_params())?;
        if let Some(kind) = self.innovation {
            match &mut m {
                RegistryModel::OneD(s) => s.innovation = kind,
                RegistryModel::TwoD(s) => s.innovation = kind,
            }
        }
        Ok(m)
    }
}

/// Output of one command: `#` metadata lines followed by a CSV body.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str(&self.header.join(","));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

fn base_metadata(cmd: Command, cfg: &RunConfig) -> Vec<(String, String)> {
    let mut m = vec![("version".to_string(), VERSION.to_string()), ("command".into(), cmd.as_str().into())];
    for (k, v) in cfg.entries() {
        if k != "command" && k != "output" {
            m.push((k.to_string(), v));
        }
    }
    m
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Runs the configured command and returns its CSV text.
pub fn execute(cfg: &RunConfig) -> CliResult<String> {
    let cmd = cfg.command.ok_or_else(|| usage("no command given"))?;
    match cmd {
        Command::Figure => cmd_figure(cfg),
        Command::Simulate => cmd_simulate(cfg).map(|r| r.to_csv()),
        Command::Bounds => cmd_bounds(cfg).map(|r| r.to_csv()),
        Command::Interval => cmd_interval(cfg).map(|r| r.to_csv()),
        Command::Confluence => cmd_confluence(cfg).map(|r| r.to_csv()),
        Command::Asclt => cmd_asclt(cfg).map(|r| r.to_csv()),
    }
}

fn simulate_rows<const D: usize>(
    setup: &ModelSetup<D>,
    cfg: &RunConfig,
    meta: &mut Vec<(String, String)>,
) -> CliResult<(Vec<String>, Vec<Vec<String>>)> {
    let theta = cfg.single_theta(0.5)?;
    let gamma0 = cfg.gamma0.unwrap_or(setup.gamma0);
    let steps = StepSequence::new(theta, gamma0)?;
    let n = cfg.n.unwrap_or(1000);
    let count = cfg.mc.unwrap_or(1);
    let seed = cfg.seed.unwrap_or(0);
    if count == 0 {
        return Err(usage("mc must be at least 1"));
    }
    meta.extend([
        ("resolved_model".to_string(), setup.name.clone()),
        ("resolved_theta".into(), fmt_num(theta)),
        ("resolved_gamma0".into(), fmt_num(gamma0)),
        ("resolved_n".into(), n.to_string()),
        ("resolved_seed".into(), seed.to_string()),
        ("trajectories".into(), count.to_string()),
        ("innovation".into(), setup.innovation.to_string()),
        ("initial".into(), setup.initial.describe()),
        ("source".into(), setup.source_label.clone()),
    ]);
    for (k, v) in &setup.params {
        meta.push((format!("model.{k}"), v.clone()));
    }
    let observables: Vec<Observable<D>> = setup.source.clone().into_iter().collect();
    let tc = TrajectoryConfig {
        diffusion: setup.diffusion.as_ref(),
        phi: setup.phi.as_deref(),
        steps: &steps,
        innovation: setup.innovation,
        initial: &setup.initial,
        observables: &observables,
        bias: None,
    };
    let mut cols = vec!["trajectory", "n", "gamma_n", "nu_f", "nu_generator", "scaled_generator", "nu_sigma2", "nu_carre"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for i in 0..D {
        cols.push(format!("x_final_{}", i + 1));
    }
    let mut rows = Vec::new();
    for i in 0..count {
        let s = run_trajectory(&tc, n, seed, i)?;
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_else(|| "nan".into());
        let mut r = vec![
            i.to_string(),
            s.n.to_string(),
            fmt_num(s.gamma_n),
            opt(s.nu.first().copied()),
            opt(s.nu_generator),
            opt(s.scaled_generator()),
            fmt_num(s.nu_sigma2),
            opt(s.nu_carre),
        ];
        r.extend(s.final_x.iter().map(|v| fmt_num(*v)));
        rows.push(r);
    }
    Ok((cols, rows))
}

pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Report> {
    let mut metadata = base_metadata(Command::Simulate, cfg);
    let (header, rows) = match cfg.load_model("ou1d")? {
        RegistryModel::OneD(s) => simulate_rows(&s, cfg, &mut metadata)?,
        RegistryModel::TwoD(s) => simulate_rows(&s, cfg, &mut metadata)?,
    };
    Ok(Report { metadata, header, rows })
}

/// Figure settings after applying every override in `cfg`.
pub fn figure_config(cfg: &RunConfig) -> CliResult<FigureConfig> {
    let id = cfg.figure.ok_or_else(|| usage("figure command needs a figure id (fig1, fig2, fig3 or fig4)"))?;
    if let Some(m) = &cfg.model {
        if m != id.model_name() {
            return Err(usage(format!("{id} is defined for model '{}', not '{m}'", id.model_name())));
        }
    }
    if cfg.innovation.is_some() {
        return Err(usage("figures use the innovation law registered with their model"));
    }
    let mut f = FigureConfig::with_model(id, cfg.registry_params());
    if let Some(t) = &cfg.theta {
        f.thetas = t.clone();
        if id == FigureId::Fig4 && cfg.calibration_theta.is_none() {
            f.calibration_theta = t[0];
        }
    }
    f.n = cfg.n.unwrap_or(f.n);
    f.mc = cfg.mc.unwrap_or(f.mc);
    f.a_min = cfg.a_min.unwrap_or(f.a_min);
    f.a_max = cfg.a_max.unwrap_or(f.a_max);
    f.a_count = cfg.a_count.unwrap_or(f.a_count);
    f.seed = cfg.seed.unwrap_or(f.seed);
    f.gamma0 = cfg.gamma0.or(f.gamma0);
    f.calibration_n = cfg.calibration_n.unwrap_or(f.calibration_n);
    f.calibration_theta = cfg.calibration_theta.unwrap_or(f.calibration_theta);
    f.calibration_replicates = cfg.calibration_replicates.unwrap_or(f.calibration_replicates);
    f.quadrature_nodes = cfg.quadrature_nodes.unwrap_or(f.quadrature_nodes);
    f.carre = cfg.carre.unwrap_or(f.carre);
    f.alpha = cfg.alpha.unwrap_or(f.alpha);
    f.recompute_alpha = cfg.recompute_alpha.unwrap_or(f.recompute_alpha);
    f.nu_ref = cfg.nu_ref.or(f.nu_ref);
    match (cfg.statistic, id) {
        (None, _) => {}
        (Some(Statistic::Slutsky), FigureId::Fig4) => {}
        (Some(Statistic::Slutsky), _) | (Some(_), FigureId::Fig4) => {
            return Err(usage(format!("statistic not available for {id}")));
        }
        (Some(s), _) => {
            f.biased = s != Statistic::Unbiased;
            f.full_bias = s == Statistic::BiasedFull;
        }
    }
    Ok(f)
}

pub fn cmd_figure(cfg: &RunConfig) -> CliResult<String> {
    Ok(generate_figure(&figure_config(cfg)?)?.to_csv())
}

pub fn cmd_bounds(cfg: &RunConfig) -> CliResult<Report> {
    let mut metadata = base_metadata(Command::Bounds, cfg);
    let setup = match cfg.load_model("hypo1d-cos")? {
        RegistryModel::OneD(s) => s,
        RegistryModel::TwoD(s) => {
            return Err(usage(format!("bounds needs a model with a test function; '{}' has none", s.name)))
        }
    };
    let phi = setup
        .phi
        .as_deref()
        .ok_or_else(|| usage(format!("bounds needs a model with a test function; '{}' has none", setup.name)))?;
    let theta = cfg.single_theta(0.5)?;
    let gamma0 = cfg.gamma0.unwrap_or(setup.gamma0);
    let n = cfg.n.unwrap_or(50_000);
    let seed = cfg.seed.unwrap_or(0);
    let reference = estimate_reference(
        &setup,
        None,
        gamma0,
        cfg.calibration_n.unwrap_or(10_000),
        cfg.calibration_theta.unwrap_or(1.0 / 3.0 + 1e-3),
        seed,
        cfg.calibration_replicates.unwrap_or(100),
    )?;
    let semi = phi.seminorms();
    let params = BoundParams {
        sigma_sup: setup.diffusion.sigma_sup(),
        grad_sup: semi.grad_sup,
        phi_lip: semi.lip1,
        theta_lip: semi.lip1,
        nu_sigma2: reference.nu_sigma2,
        nu_carre: reference.nu_carre.unwrap_or(f64::NAN),
        gamma_n: StepSequence::new(theta, gamma0)?.gamma_sum(n, 1.0),
        ..Default::default()
    };
    let grid = cfg.grid(0.0, 3.0, 31)?;
    let carre = cfg.carre.unwrap_or(true);
    let form = if cfg.theorem_literal.unwrap_or(false) { CoboundaryForm::TheoremLiteral } else { CoboundaryForm::Proof };
    metadata.extend([
        ("resolved_model".to_string(), setup.name.clone()),
        ("resolved_theta".into(), fmt_num(theta)),
        ("resolved_n".into(), n.to_string()),
        ("gamma_n".into(), fmt_num(params.gamma_n)),
        ("sigma_sup".into(), fmt_num(params.sigma_sup)),
        ("grad_sup".into(), fmt_num(params.grad_sup)),
        ("phi_lip".into(), fmt_num(params.phi_lip)),
        ("theta_lip".into(), format!("{} (taken equal to phi_lip)", fmt_num(params.theta_lip))),
        ("nu_sigma2".into(), fmt_num(params.nu_sigma2)),
        ("nu_carre".into(), fmt_num(params.nu_carre)),
        ("coboundary_form".into(), format!("{form:?}").to_lowercase()),
        ("proof_sequences".into(), "c_n = C_n = 1, e_n = 0 (limits)".into()),
    ]);
    let curves = comparison_curves(&grid, &params, carre);
    let mut cols = vec!["a".to_string(), "gaussian".into(), "coboundary".into()];
    cols.extend(curves[0].named().iter().map(|(k, _)| k.to_string()));
    let rows = grid
        .iter()
        .zip(&curves)
        .map(|(&a, c)| {
            let mut r = vec![
                fmt_num(a),
                fmt_num(gaussian_log_bound(a, &params, true)),
                fmt_num(coboundary_log_bound(a, &params, form)),
            ];
            r.extend(c.named().iter().map(|(_, v)| fmt_num(*v)));
            r
        })
        .collect();
    Ok(Report { metadata, header: cols, rows })
}

fn interval_for<const D: usize>(
    setup: &ModelSetup<D>,
    cfg: &RunConfig,
    meta: &mut Vec<(String, String)>,
) -> CliResult<Vec<Vec<String>>> {
    let source = setup
        .source
        .clone()
        .ok_or_else(|| usage(format!("model '{}' has no source function", setup.name)))?;
    if !setup.source_lip.is_finite() {
        return Err(usage(format!("source of '{}' is not globally Lipschitz", setup.name)));
    }
    let (alpha, alpha_source) = match (cfg.alpha, cfg.recompute_alpha.unwrap_or(false)) {
        (Some(a), false) => (a, "user".to_string()),
        (None, false) if setup.name == "confluent2d" => (PUBLISHED_ALPHA, "published".into()),
        _ => (confluence_alpha(setup.diffusion.as_ref(), &ConfluenceOptions::default())?.alpha, "recomputed".into()),
    };
    let theta = cfg.single_theta(0.6)?;
    let gamma0 = cfg.gamma0.unwrap_or(setup.gamma0);
    let steps = StepSequence::new(theta, gamma0)?;
    let n = cfg.n.unwrap_or(500_000);
    let seed = cfg.seed.unwrap_or(0);
    let coverage = cfg.coverage.unwrap_or(0.95);
    let a = coverage_radius(coverage)?;
    let obs = [source];
    let tc = TrajectoryConfig {
        diffusion: setup.diffusion.as_ref(),
        phi: None,
        steps: &steps,
        innovation: setup.innovation,
        initial: &setup.initial,
        observables: &obs,
        bias: None,
    };
    let s = run_trajectory(&tc, n, seed, 0)?;
    let params = BoundParams {
        sigma_sup: setup.diffusion.sigma_sup(),
        alpha,
        f_lip: setup.source_lip,
        gamma_n: s.gamma_n,
        ..Default::default()
    };
    meta.extend([
        ("resolved_model".to_string(), setup.name.clone()),
        ("resolved_theta".into(), fmt_num(theta)),
        ("resolved_n".into(), n.to_string()),
        ("resolved_seed".into(), seed.to_string()),
        ("gamma0".into(), fmt_num(gamma0)),
        ("gamma_n".into(), fmt_num(s.gamma_n)),
        ("source".into(), setup.source_label.clone()),
        ("f_lip".into(), fmt_num(setup.source_lip)),
        ("alpha".into(), fmt_num(alpha)),
        ("alpha_source".into(), alpha_source),
        ("sigma_sup".into(), fmt_num(params.sigma_sup)),
        ("radius".into(), fmt_num(a)),
        ("nu_n_f".into(), fmt_num(s.nu[0])),
        ("nu_n_sigma2".into(), fmt_num(s.nu_sigma2)),
    ]);
    let mut rows = Vec::new();
    for (label, mode) in [("plain", IntervalMode::Plain), ("slutsky", IntervalMode::Slutsky)] {
        let ci = confidence_interval(s.nu[0], a, &params, mode, Some(s.nu_sigma2))?;
        rows.push(vec![
            label.to_string(),
            fmt_num(ci.lower),
            fmt_num(ci.upper),
            fmt_num(ci.half_width),
            fmt_num(ci.coverage),
        ]);
    }
    Ok(rows)
}

pub fn cmd_interval(cfg: &RunConfig) -> CliResult<Report> {
    let mut metadata = base_metadata(Command::Interval, cfg);
    let rows = match cfg.load_model("confluent2d")? {
        RegistryModel::OneD(s) => interval_for(&s, cfg, &mut metadata)?,
        RegistryModel::TwoD(s) => interval_for(&s, cfg, &mut metadata)?,
    };
    Ok(Report { metadata, header: header(&["mode", "lower", "upper", "half_width", "coverage"]), rows })
}

pub fn cmd_confluence(cfg: &RunConfig) -> CliResult<Report> {
    let mut metadata = base_metadata(Command::Confluence, cfg);
    let d = ConfluenceOptions::default();
    let opts = ConfluenceOptions {
        lower: cfg.box_radius.map(|r| -r).unwrap_or(d.lower),
        upper: cfg.box_radius.unwrap_or(d.upper),
        resolution: cfg.resolution.unwrap_or(d.resolution),
        xi_samples: cfg.directions.unwrap_or(d.xi_samples),
        ..d
    };
    let est = match cfg.load_model("confluent2d")? {
        RegistryModel::OneD(s) => confluence_alpha(s.diffusion.as_ref(), &opts)?,
        RegistryModel::TwoD(s) => confluence_alpha(s.diffusion.as_ref(), &opts)?,
    };
    metadata.extend([
        ("box".to_string(), format!("[{}, {}]", fmt_num(est.lower), fmt_num(est.upper))),
        ("resolution".into(), est.resolution.to_string()),
        ("directions".into(), est.xi_samples.to_string()),
        ("p_values".into(), opts.p_values.iter().map(|p| fmt_num(*p)).collect::<Vec<_>>().join(";")),
        ("published_alpha".into(), fmt_num(PUBLISHED_ALPHA)),
    ]);
    let join = |v: &[f64]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(";");
    let rows = vec![vec![
        fmt_num(est.alpha),
        fmt_num(est.p_exponent),
        join(&est.witness_x),
        join(&est.witness_xi),
    ]];
    Ok(Report { metadata, header: header(&["alpha", "p", "witness_x", "witness_xi"]), rows })
}

pub fn cmd_asclt(cfg: &RunConfig) -> CliResult<Report> {
    let mut metadata = base_metadata(Command::Asclt, cfg);
    let name = cfg.source.clone().unwrap_or_else(|| "sinx".into());
    let f = asclt_source(&name)?;
    let innov = cfg.innovation.unwrap_or(InnovationKind::Gaussian);
    let n = cfg.n.unwrap_or(100_000);
    let runs = cfg.mc.unwrap_or(1_000);
    let seed = cfg.seed.unwrap_or(0);
    if runs == 0 {
        return Err(usage("mc must be at least 1"));
    }
    let grid = cfg.grid(0.0, 4.0, 41)?;
    let rows = asclt_tail::<1>(innov, n, runs, seed, f, 1.0, &grid)?;
    metadata.extend([
        ("resolved_source".to_string(), name),
        ("f_lip".into(), "1".into()),
        ("innovation".into(), innov.to_string()),
        ("resolved_n".into(), n.to_string()),
        ("runs".into(), runs.to_string()),
        ("resolved_seed".into(), seed.to_string()),
        ("coupling_constant".into(), fmt_num(ergodev::asclt::COUPLING_CONSTANT)),
        ("proof_sequences".into(), "c_n = C_n = 1 (limits)".into()),
    ]);
    let rows = rows
        .iter()
        .map(|r| {
            vec![
                fmt_num(r.a),
                r.hits.to_string(),
                fmt_num(r.log_tail),
                fmt_num(r.ci_lo),
                fmt_num(r.ci_hi),
                fmt_num(r.bound),
            ]
        })
        .collect();
    Ok(Report { metadata, header: header(&["a", "hits", "log_tail", "ci_lo", "ci_hi", "bound"]), rows })
}

/// Names accepted by `--model`.
pub fn registry_listing() -> String {
    REGISTRY.join(", ")
}
