use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use spectral_pomdp::bounds::BoundConstants;
use spectral_pomdp::decomposition::PowerIterationConfig;
use spectral_pomdp::generate::{generate_instance, GeneratorSpec, PolicySpec};
use spectral_pomdp::io::{load_json, load_trajectory, save_trajectory};
use spectral_pomdp::linalg::kth_singular_value;
use spectral_pomdp::oracle::oracle_bundle;
use spectral_pomdp::pipeline::{estimate_exact, estimate_from_trajectory, EstimateConfig, EstimateReport};
use spectral_pomdp::pomdp::{simulate, InitialState};
use spectral_pomdp::recovery::{evaluate_errors, separability};
use spectral_pomdp::sweep::{run_sweep, SweepConfig};
use spectral_pomdp::views::ViewEncoding;
use spectral_pomdp::{Error, MemorylessPolicy, PomdpModel};

const EXIT_USAGE: u8 = 1;
const EXIT_ESTIMATION: u8 = 2;
const EXIT_IO: u8 = 3;

/// Spectral estimation of POMDP parameters from a single trajectory
#[derive(Parser, Debug)]
#[command(name = "spomdp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random well-conditioned model and policy
    Gen(GenArgs),
    /// Simulate a trajectory under a memoryless policy
    Simulate(SimulateArgs),
    /// Estimate the model from a trajectory (or from exact moments)
    Estimate(EstimateArgs),
    /// Compare an estimate report against the true model
    Evaluate(EvaluateArgs),
    /// Run a convergence sweep over trajectory lengths and seeds
    Sweep(SweepArgs),
    /// Emit exact views, covariances, moments and gaps of a known model
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long)]
    states: usize,
    #[arg(long)]
    observations: usize,
    #[arg(long)]
    actions: usize,
    #[arg(long)]
    rewards: usize,
    /// Minimum column separability d_O of the observation matrix
    #[arg(long, default_value_t = 0.5)]
    separability_floor: f64,
    /// Minimum smallest singular value of the observation matrix
    #[arg(long, default_value_t = 0.1)]
    sigma_floor: f64,
    /// Dirichlet concentration of every density fiber
    #[arg(long, default_value_t = 1.0)]
    concentration: f64,
    #[arg(long, default_value_t = 10_000)]
    max_attempts: usize,
    /// Smallest policy probability; omit for the uniform policy
    #[arg(long)]
    pi_min: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    model_out: PathBuf,
    #[arg(long)]
    policy_out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Initial {
    Uniform,
    Stationary,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Trajectory length N
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Initial::Uniform)]
    initial: Initial,
    /// Record the hidden state of every step
    #[arg(long)]
    log_hidden: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    /// Number of hidden states X
    #[arg(long)]
    states: usize,
    /// Seed of the power-iteration restarts
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 50)]
    restarts: usize,
    #[arg(long, default_value_t = 100)]
    sweeps: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long)]
    theta_override: Option<f64>,
    #[arg(long = "G-override")]
    g_override: Option<f64>,
    /// Scale of the mixing branch of the sample-size condition
    #[arg(long = "Theta", default_value_t = 1.0)]
    big_theta: f64,
    /// C_O,C_R,C_T
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [1.0, 1.0, 1.0])]
    constants: Vec<f64>,
    /// Fail actions whose N(l) is below the sample-size condition
    #[arg(long)]
    enforce_sample_size: bool,
}

impl PipelineArgs {
    fn config(&self) -> EstimateConfig {
        EstimateConfig {
            power: PowerIterationConfig { restarts: self.restarts, sweeps: self.sweeps, tol: self.tol, seed: self.seed },
            delta: self.delta,
            constants: BoundConstants { c_o: self.constants[0], c_r: self.constants[1], c_t: self.constants[2] },
            big_theta: self.big_theta,
            g_override: self.g_override,
            theta_override: self.theta_override,
            enforce_sample_size: self.enforce_sample_size,
            ..EstimateConfig::new(self.states)
        }
    }
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, required_unless_present = "exact_mode")]
    trajectory: Option<PathBuf>,
    /// True model: supplies mixing constants and reward values, and the moments in exact mode
    #[arg(long, required_if_eq("exact_mode", "true"))]
    model: Option<PathBuf>,
    /// Use exact moments of --model instead of a trajectory
    #[arg(long)]
    exact_mode: bool,
    /// Reward alphabet size R; taken from --model, else inferred from the trajectory
    #[arg(long)]
    rewards: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Estimate report produced by `estimate`
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// CSV of per-(state, action) errors; stdout if omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    /// Trajectory lengths, strictly increasing
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long, value_enum, default_value_t = Initial::Uniform)]
    initial: Initial,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// CSV output; stdout if omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON summary with slopes and failures
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_IO,
            _ => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    load_json(path).map_err(|e| match e {
        Error::Io(io) => io_failure(path, io),
        other => Failure { code: EXIT_USAGE, message: format!("{}: {other}", path.display()) },
    })
}

fn emit_text(text: &str, out: Option<&Path>) -> CmdResult {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| io_failure(Path::new("<stdout>"), e)),
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure { code: EXIT_USAGE, message: e.to_string() })?;
    text.push('\n');
    emit_text(&text, out)
}

fn load_pair(model: &Path, policy: &Path) -> Result<(PomdpModel, MemorylessPolicy), Failure> {
    let model: PomdpModel = read_json(model)?;
    let policy: MemorylessPolicy = read_json(policy)?;
    model.ensure_valid()?;
    policy.check_compatible(&model)?;
    Ok((model, policy))
}

fn initial_state(i: Initial) -> InitialState {
    match i {
        Initial::Uniform => InitialState::Uniform,
        Initial::Stationary => InitialState::Stationary,
    }
}

fn cmd_gen(args: GenArgs) -> CmdResult {
    let spec = GeneratorSpec {
        separability_floor: args.separability_floor,
        sigma_floor: args.sigma_floor,
        concentration: args.concentration,
        max_attempts: args.max_attempts,
        ..GeneratorSpec::new(args.states, args.observations, args.actions, args.rewards)
    };
    let policy = match args.pi_min {
        Some(pi_min) => PolicySpec::Random { pi_min },
        None => PolicySpec::Uniform,
    };
    let inst = generate_instance(&spec, &policy, args.seed)?;
    spectral_pomdp::io::save_json(&inst.model, &args.model_out)?;
    spectral_pomdp::io::save_json(&inst.policy, &args.policy_out)?;

    let o = inst.model.observation();
    eprintln!("accepted after {} draw(s)", inst.attempts);
    if o.ncols() >= 2 {
        eprintln!("d_O = {}", separability(o)?);
    }
    eprintln!("sigma_min(O) = {}", kth_singular_value(o, o.ncols()));
    let bundle = oracle_bundle(&inst.model, &inst.policy)?;
    for a in &bundle.actions {
        eprintln!(
            "action {}: P(a) = {:.4}, sigma_X(K13) = {:.4e}, omega_min = {:.4}, lambda = {:.4e}",
            a.action, a.probability, a.gaps.sigma_k13, a.gaps.omega_min, a.lambda
        );
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let (model, policy) = load_pair(&args.model, &args.policy)?;
    let traj = simulate(&model, &policy, args.steps, args.seed, &initial_state(args.initial), args.log_hidden)?;
    save_trajectory(&traj, &args.out).map_err(|e| match e {
        Error::Io(io) => io_failure(&args.out, io),
        other => other.into(),
    })
}

fn summarize_report(report: &EstimateReport) {
    for a in &report.actions {
        match (&a.error, a.samples) {
            (Some(err), _) => eprintln!("action {}: FAILED: {err}", a.action),
            (None, Some(n)) => eprintln!("action {}: N(l) = {n}, lambda = {:?}", a.action, a.lambda),
            (None, None) => eprintln!("action {}: exact, lambda = {:?}", a.action, a.lambda),
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(est) = &report.estimate {
        eprintln!("reference action {}, permutations {:?}", est.reference_action, est.permutations);
    }
}

fn cmd_estimate(args: EstimateArgs) -> CmdResult {
    let policy: MemorylessPolicy = read_json(&args.policy)?;
    let truth: Option<PomdpModel> = args.model.as_deref().map(read_json).transpose()?;
    if let Some(m) = &truth {
        m.ensure_valid()?;
        policy.check_compatible(m)?;
    }
    let cfg = args.pipeline.config();
    let report = if args.exact_mode {
        let model = truth.as_ref().expect("clap requires --model with --exact-mode");
        estimate_exact(model, &policy, &cfg)?
    } else {
        let path = args.trajectory.as_deref().expect("clap requires --trajectory");
        let traj = load_trajectory(path).map_err(|e| match e {
            Error::Io(io) => io_failure(path, io),
            other => Failure { code: EXIT_USAGE, message: format!("{}: {other}", path.display()) },
        })?;
        let rewards = match (args.rewards, &truth) {
            (Some(r), _) => r,
            (None, Some(m)) => m.rewards(),
            (None, None) => traj.steps.iter().map(|s| s.r + 1).max().unwrap_or(1),
        };
        let enc = ViewEncoding::new(policy.observations(), policy.actions(), rewards);
        estimate_from_trajectory(&traj, &policy, enc, &cfg, truth.as_ref())?
    };
    summarize_report(&report);
    emit_json(&report, args.out.as_deref())?;
    if report.success {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_ESTIMATION,
            message: format!("estimation failed for action(s) {:?}", report.failed_actions()),
        })
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> CmdResult {
    let report: EstimateReport = read_json(&args.estimate)?;
    let truth: PomdpModel = read_json(&args.model)?;
    let Some(estimate) = report.estimate.as_ref() else {
        return Err(Failure { code: EXIT_ESTIMATION, message: "report contains no estimate".into() });
    };
    let errors = evaluate_errors(estimate, &truth)?;
    eprintln!("permutation {:?}", errors.permutation);
    eprintln!("max err_O = {}, max err_R = {}, max err_T = {}", errors.max_o, errors.max_r, errors.max_t);
    emit_text(&errors.to_csv(), args.out.as_deref())
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let (model, policy) = load_pair(&args.model, &args.policy)?;
    let cfg = SweepConfig {
        grid: args.grid,
        seeds: args.seeds,
        estimate: args.pipeline.config(),
        initial: initial_state(args.initial),
        workers: args.workers,
    };
    let result = run_sweep(&model, &policy, &cfg)?;
    let s = &result.summary;
    eprintln!("slopes: err_O {:.4}, err_R {:.4}, err_T {:.4}", s.slope_o, s.slope_r, s.slope_t);
    if let Some(note) = &s.note {
        eprintln!("note: {note}");
    }
    for f in &result.failures {
        eprintln!("cell N = {}, seed = {} failed: {}", f.n, f.seed, f.reason);
    }
    emit_text(&result.to_csv(), args.out.as_deref())?;
    if let Some(path) = &args.summary {
        #[derive(Serialize)]
        struct SummaryDoc<'a> {
            config: &'a SweepConfig,
            summary: &'a spectral_pomdp::sweep::SweepSummary,
            cells: &'a [spectral_pomdp::sweep::SweepCell],
            failures: &'a [spectral_pomdp::sweep::SweepFailure],
        }
        emit_json(&SummaryDoc { config: &cfg, summary: s, cells: &result.cells, failures: &result.failures }, Some(path))?;
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> CmdResult {
    let (model, policy) = load_pair(&args.model, &args.policy)?;
    emit_json(&oracle_bundle(&model, &policy)?, args.out.as_deref())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
