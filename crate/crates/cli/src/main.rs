use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ergodev_cli::{execute, registry_listing, CliError, CliResult, Command, RunConfig};

/// Decreasing-step ergodic simulations, deviation bounds and confidence intervals.
#[derive(Parser, Debug)]
#[command(name = "ergodev", version)]
struct Cli {
    /// flat `key = value` file; flags override its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// worker threads (defaults to all cores)
    #[arg(long, global = true, env = "ERGODEV_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Run trajectories of a registry model and report empirical averages
    Simulate(Flags),
    /// Monte Carlo deviation curves with their theoretical comparison curves
    Figure {
        /// fig1, fig2, fig3 or fig4
        id: Option<String>,
        #[command(flatten)]
        flags: Flags,
    },
    /// Theoretical deviation bounds on an a-grid
    Bounds(Flags),
    /// Plain and Slutsky confidence intervals for an ergodic average
    Interval(Flags),
    /// Grid estimate of the confluence constant
    Confluence(Flags),
    /// Tails of the log-weighted occupation measure of normalized sums
    Asclt(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    /// registry model name
    #[arg(long, long_help = format!("registry model name: {}", registry_listing()))]
    model: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// alternative diffusion or source of the chosen model
    #[arg(long)]
    variant: bool,
    /// start from ±1 (`true`) or the origin (`false`)
    #[arg(long)]
    sign_start: Option<bool>,
    /// gaussian or rademacher
    #[arg(long)]
    innovation: Option<String>,
    /// one value or a comma-separated list
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long)]
    gamma0: Option<f64>,
    #[arg(long)]
    n: Option<u64>,
    /// Monte Carlo sample size
    #[arg(long)]
    mc: Option<u64>,
    #[arg(long)]
    a_min: Option<f64>,
    #[arg(long)]
    a_max: Option<f64>,
    #[arg(long)]
    a_count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// unbiased, biased, biased-full or slutsky
    #[arg(long)]
    statistic: Option<String>,
    #[arg(long)]
    quadrature_nodes: Option<usize>,
    #[arg(long)]
    calibration_n: Option<u64>,
    #[arg(long)]
    calibration_theta: Option<f64>,
    #[arg(long)]
    calibration_replicates: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    recompute_alpha: bool,
    #[arg(long)]
    nu_ref: Option<f64>,
    #[arg(long)]
    coverage: Option<f64>,
    /// source function for `asclt`: sinx, cosx, tanhx or absx
    #[arg(long = "f")]
    source: Option<String>,
    /// use the stated form of the coboundary exponent
    #[arg(long)]
    theorem_literal: bool,
    /// carré du champ substitution curve
    #[arg(long)]
    carre: Option<bool>,
    /// half side of the confluence search box
    #[arg(long)]
    box_radius: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    directions: Option<usize>,
    /// write CSV here instead of stdout
    #[arg(long, short)]
    output: Option<PathBuf>,
}

impl Flags {
    fn into_config(self, command: Command, figure: Option<String>) -> CliResult<RunConfig> {
        let mut c = RunConfig::default();
        c.set("command", command.as_str())?;
        let mut put = |k: &str, v: Option<String>| -> CliResult<()> {
            match v {
                Some(v) => c.set(k, &v),
                None => Ok(()),
            }
        };
        let s = |v: Option<f64>| v.map(|x| x.to_string());
        let u = |v: Option<u64>| v.map(|x| x.to_string());
        let z = |v: Option<usize>| v.map(|x| x.to_string());
        let b = |v: bool| v.then(|| "true".to_string());
        put("figure", figure)?;
        put("model", self.model)?;
        put("epsilon", s(self.epsilon))?;
        put("beta", s(self.beta))?;
        put("variant", b(self.variant))?;
        put("sign_start", self.sign_start.map(|v| v.to_string()))?;
        put("innovation", self.innovation)?;
        put("theta", self.theta)?;
        put("gamma0", s(self.gamma0))?;
        put("n", u(self.n))?;
        put("mc", u(self.mc))?;
        put("a_min", s(self.a_min))?;
        put("a_max", s(self.a_max))?;
        put("a_count", z(self.a_count))?;
        put("seed", u(self.seed))?;
        put("statistic", self.statistic)?;
        put("quadrature_nodes", z(self.quadrature_nodes))?;
        put("calibration_n", u(self.calibration_n))?;
        put("calibration_theta", s(self.calibration_theta))?;
        put("calibration_replicates", u(self.calibration_replicates))?;
        put("alpha", s(self.alpha))?;
        put("recompute_alpha", b(self.recompute_alpha))?;
        put("nu_ref", s(self.nu_ref))?;
        put("coverage", s(self.coverage))?;
        put("source", self.source)?;
        put("theorem_literal", b(self.theorem_literal))?;
        put("carre", self.carre.map(|v| v.to_string()))?;
        put("box_radius", s(self.box_radius))?;
        put("resolution", z(self.resolution))?;
        put("directions", z(self.directions))?;
        put("output", self.output.map(|p| p.display().to_string()))?;
        Ok(c)
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let (command, figure, flags) = match cli.command {
        Sub::Simulate(f) => (Command::Simulate, None, f),
        Sub::Figure { id, flags } => (Command::Figure, id, flags),
        Sub::Bounds(f) => (Command::Bounds, None, f),
        Sub::Interval(f) => (Command::Interval, None, f),
        Sub::Confluence(f) => (Command::Confluence, None, f),
        Sub::Asclt(f) => (Command::Asclt, None, f),
    };
    let from_flags = flags.into_config(command, figure)?;
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::parse(&text)?.merge(from_flags)
        }
        None => from_flags,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CliError::Io(e.to_string()))?;
    let csv = pool.install(|| execute(&cfg))?;
    match &cfg.output {
        Some(path) => std::fs::write(path, csv).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
