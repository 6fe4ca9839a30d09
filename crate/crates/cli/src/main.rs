use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use meritflow::flow::{FlowParams, InitKind, StopReason};
use meritflow::harness::{
    self, ExperimentConfig, FlowKind, InitChoice, InstanceSource, ReplicateOutcome, RunReport, RunSpec,
};
use meritflow::operator::{generate_instance, DEFAULT_XI};
use meritflow::sdp::{solve_sdp, AdmmParams, SdpSolution};
use meritflow::stationarity::{classify, dual_certificate, factor_certificate, ClassifyTolerances, DEFAULT_CERTIFICATE_TOL};
use meritflow::{fmt::to_json_string, Error, Factor, Instance, MeritParams};

/// Merit-function gradient flow for low-rank factorized SDPs.
///
/// Set MERITFLOW_VERBOSITY=0 to silence progress lines, 2 for per-run detail.
#[derive(Parser)]
#[command(name = "meritflow", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a seeded Gaussian instance.
    Gen {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = DEFAULT_XI)]
        xi: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the merit flow on an instance file.
    Solve(FlowArgs),
    /// Run gradient descent on the feasibility gap.
    Implicit(FlowArgs),
    /// Solve the convex relaxation.
    Sdp {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 50_000)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Classify a factor as FOSP / SOSP / global minimizer.
    Classify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        factor: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        gamma: f64,
        #[arg(long, default_value_t = meritflow::merit::DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long, default_value_t = 1e-7)]
        tol_grad: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol_feas_rel: f64,
        #[arg(long, default_value_t = 1e-8)]
        tol_eig: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Check the KKT conditions at a factor (multipliers from the factor) or an SDP solution.
    Certify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, conflicts_with = "solution", required_unless_present = "solution")]
        factor: Option<PathBuf>,
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long, default_value_t = meritflow::merit::DEFAULT_RIDGE)]
        ridge: f64,
        #[arg(long, default_value_t = DEFAULT_CERTIFICATE_TOL)]
        tol: f64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a preset end to end.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long, value_enum, default_value_t = InitArg::Gaussian)]
    init: InitArg,
    /// Seed of the Gaussian initializer.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args, Clone)]
struct ParamArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol_grad: Option<f64>,
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long)]
    record_every: Option<usize>,
}

impl ParamArgs {
    fn apply(&self, mut p: FlowParams) -> FlowParams {
        p.gamma = self.gamma.unwrap_or(p.gamma);
        p.eta = self.eta.unwrap_or(p.eta);
        p.max_iter = self.max_iter.unwrap_or(p.max_iter);
        p.tol_grad = self.tol_grad.unwrap_or(p.tol_grad);
        p.ridge = self.ridge.unwrap_or(p.ridge);
        p.record_every = self.record_every.unwrap_or(p.record_every);
        p
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Deterministic01,
    PartialOracle,
    Gaussian,
}

impl From<InitArg> for InitKind {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Deterministic01 => InitKind::Deterministic01,
            InitArg::PartialOracle => InitKind::PartialOracle,
            InitArg::Gaussian => InitKind::Gaussian,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Sec11,
    Fig1Under,
    Fig1Over,
    Fig2,
    /// Fig. 2 recipe with m = 200.
    Fig2M200,
    Custom,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(value_enum)]
    preset: PresetArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    /// Instance file instead of a generated instance (its d and m are used).
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, required_if_eq("preset", "custom"))]
    d: Option<usize>,
    #[arg(long, required_if_eq("preset", "custom"))]
    m: Option<usize>,
    #[arg(long, required_if_eq("preset", "custom"))]
    p: Option<usize>,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(short, long)]
    output: PathBuf,
}

/// Failure with its exit code: 1 for usage and input errors, 2 for numerical ones.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let numerical = err.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(
                    Error::Diverged { .. }
                        | Error::RankDeficientConstraints { .. }
                        | Error::NotPsd { .. }
                        | Error::ProjectionFailed { .. }
                )
            )
        });
        Failure { code: if numerical { 2 } else { 1 }, err }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn verbosity() -> u8 {
    std::env::var("MERITFLOW_VERBOSITY").ok().and_then(|v| v.parse().ok()).unwrap_or(1)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_json_string(value)?).with_context(|| format!("writing {}", path.display()))
}

fn read_instance(path: &Path) -> anyhow::Result<Instance> {
    Instance::read_json(path).with_context(|| format!("reading instance {}", path.display()))
}

fn run_flow(args: &FlowArgs, flow: FlowKind) -> Result<u8, Failure> {
    let inst = read_instance(&args.instance)?;
    let defaults = FlowParams { gamma: 100.0, ..FlowParams::default() };
    let params = args.params.apply(defaults);
    let mut config = ExperimentConfig::custom(inst.d(), inst.m(), inst.p(), params, args.seed);
    config.label = "run".into();
    config.implicit = params;
    config.instance = InstanceSource::File(args.instance.clone());
    config.runs = vec![RunSpec { flow, init: InitChoice::Kind(args.init.into()) }];
    config.output_dir = args.output.clone();
    let outcome = harness::run_replicate(&config, args.seed)?;
    Ok(summarize(&[outcome], false))
}

fn summarize(outcomes: &[ReplicateOutcome], horizon_ok: bool) -> u8 {
    let v = verbosity();
    let mut code = 0;
    for o in outcomes {
        if v >= 1 {
            println!("seed {}: sdp value {:.10e} (converged {})", o.seed, o.sdp.value, o.sdp.converged);
        }
        for r in &o.reports {
            if v >= 1 {
                print_report(r);
            }
            let failed = match r.stop_reason {
                StopReason::Diverged => true,
                StopReason::MaxIterations => !horizon_ok,
                StopReason::GradientTolerance => false,
            };
            if failed {
                code = 2;
            }
        }
        if !o.sdp.converged {
            code = 2;
        }
    }
    code
}

fn print_report(r: &RunReport) {
    let a = &r.assessment;
    println!(
        "  {} / {}: {:?} after {} iters, target {:.8e}, feas_gap {:.2e}, verdict {:?}{}",
        r.flow.slug(),
        r.init.slug(),
        r.stop_reason,
        r.iterations,
        a.stationarity.target,
        a.stationarity.feas_residual,
        a.stationarity.verdict,
        a.relative_target_gap.map(|g| format!(", gap to sdp {g:.2e}")).unwrap_or_default(),
    );
    if verbosity() >= 2 {
        println!(
            "    certificate min_eig {:.3e}, complementarity {:.3e}, certified {}",
            a.certificate.min_eig_certificate, a.certificate.complementarity, a.certificate.certified
        );
    }
}

fn experiment(args: &ExperimentArgs) -> Result<u8, Failure> {
    let mut config = match args.preset {
        PresetArg::Sec11 => ExperimentConfig::sec11(args.seed),
        PresetArg::Fig1Under => ExperimentConfig::fig1_under(args.seed),
        PresetArg::Fig1Over => ExperimentConfig::fig1_over(args.seed),
        PresetArg::Fig2 => ExperimentConfig::fig2(args.seed),
        PresetArg::Fig2M200 => ExperimentConfig::fig2_well_posed(args.seed),
        PresetArg::Custom => {
            let (d, m, p) = (args.d.unwrap_or(0), args.m.unwrap_or(0), args.p.unwrap_or(0));
            ExperimentConfig::custom(d, m, p, FlowParams::default(), args.seed)
        }
    };
    config.merit = args.params.apply(config.merit);
    config.implicit = args.params.apply(config.implicit);
    if let Some(path) = &args.instance {
        let inst = read_instance(path)?;
        (config.d, config.m) = (inst.d(), inst.m());
        config.p = args.p.unwrap_or(inst.p());
        config.instance = InstanceSource::File(path.clone());
    }
    config.replicates = args.replicates;
    config.output_dir = args.output.clone();
    let outcomes = harness::run_experiment(&config)?;
    Ok(summarize(&outcomes, true))
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.cmd {
        Command::Gen { d, m, p, xi, seed, output } => {
            let inst = generate_instance(d, m, p, xi, seed)?;
            if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).context("creating output directory")?;
            }
            inst.write_json(&output)?;
            Ok(0)
        }
        Command::Solve(args) => run_flow(&args, FlowKind::Merit),
        Command::Implicit(args) => run_flow(&args, FlowKind::Implicit),
        Command::Sdp { instance, rho, max_iter, tol, output } => {
            let inst = read_instance(&instance)?;
            let params = AdmmParams { rho, max_iter, tol_abs: tol, tol_rel: tol, ..AdmmParams::default() };
            let sol = solve_sdp(&inst, &params)?;
            write_json(&output, &sol)?;
            if verbosity() >= 1 {
                println!("sdp value {:.10e}, {} iterations, converged {}", sol.value, sol.iterations, sol.converged);
            }
            Ok(if sol.converged { 0 } else { 2 })
        }
        Command::Classify { instance, factor, gamma, ridge, tol_grad, tol_feas_rel, tol_eig, output } => {
            let inst = read_instance(&instance)?;
            let u = Factor::read_json(&factor).with_context(|| format!("reading factor {}", factor.display()))?;
            let tols = ClassifyTolerances { tol_grad, tol_feas_rel, tol_eig, ..ClassifyTolerances::default() };
            let report = classify(&inst, &u, &MeritParams { gamma, ridge }, &tols)?;
            write_json(&output, &report)?;
            if verbosity() >= 1 {
                println!("verdict {:?}", report.verdict);
            }
            Ok(0)
        }
        Command::Certify { instance, factor, solution, ridge, tol, output } => {
            let inst = read_instance(&instance)?;
            let report = match (factor, solution) {
                (Some(f), _) => {
                    let u = Factor::read_json(&f).with_context(|| format!("reading factor {}", f.display()))?;
                    factor_certificate(&inst, &u, ridge, tol)?
                }
                (None, Some(s)) => {
                    let sol = SdpSolution::read_json(&s).with_context(|| format!("reading solution {}", s.display()))?;
                    dual_certificate(&inst, &sol.x, &sol.dual_eq, tol)?
                }
                (None, None) => unreachable!("clap requires one of --factor and --solution"),
            };
            write_json(&output, &report)?;
            if verbosity() >= 1 {
                println!("certified {}", report.certified);
            }
            Ok(0)
        }
        Command::Experiment(args) => experiment(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, err }) => {
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}
