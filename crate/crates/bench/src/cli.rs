//! Command-line surface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use umdo_core::problem::{DEFAULT_COUPLING_STRENGTH, DEFAULT_TUNING_SAMPLES};
use umdo_core::{generate, ProblemConfig, QpStatus, SampleRefresh, UncertaintyModel};

use crate::json::to_json_bytes;
use crate::problem_file::rows;
use crate::report::status_name;
use crate::runner::{run_benchmark, run_timed, BenchmarkSpec, EstimatorChoice, Scenario, StatisticChoice};
use crate::{BenchError, ProblemBundle, Result};

#[derive(Debug, Parser)]
#[command(name = "umdo-bench", version, about = "Scalable robust MDO benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a problem, tune its threshold and write it to a file.
    Generate(GenerateArgs),
    /// Re-tune the feasibility threshold of a problem file.
    Tune(TuneArgs),
    /// Solve the equivalent quadratic program and print the solution.
    SolveRef(SolveRefArgs),
    /// Run one MDF optimisation and print the result.
    SolveMdf(SolveMdfArgs),
    /// Compare estimators against the reference over repetitions.
    Benchmark(BenchmarkArgs),
    /// Write the equivalent quadratic program as JSON.
    ExportQp(ExportQpArgs),
}

fn open_unit(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not in (0, 1)"))
    }
}

fn non_negative(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be finite and >= 0"))
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    pub disciplines: usize,
    /// Shared design dimension.
    #[arg(long, default_value_t = 1)]
    pub shared: usize,
    /// Local design dimension per discipline, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "2,2")]
    pub local: Vec<usize>,
    /// Coupling dimension per discipline, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,3")]
    pub coupling: Vec<usize>,
    /// Fraction of the design box that should satisfy the constraints.
    #[arg(long = "alpha-t", default_value_t = 0.5, value_parser = open_unit)]
    pub alpha_t: f64,
    /// Bound on the off-diagonal row sums of the coupling matrix.
    #[arg(long, default_value_t = DEFAULT_COUPLING_STRENGTH, value_parser = open_unit)]
    pub strength: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise standard deviation stored in the file.
    #[arg(long, default_value_t = 0.01, value_parser = non_negative)]
    pub sigma: f64,
    #[arg(long, default_value_t = DEFAULT_TUNING_SAMPLES)]
    pub tuning_samples: usize,
    /// Seed of the threshold sample; defaults to `seed + 1`.
    #[arg(long)]
    pub tuning_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    pub problem: PathBuf,
    /// New feasibility level; keeps the file's level when absent.
    #[arg(long = "alpha-t", value_parser = open_unit)]
    pub alpha_t: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_TUNING_SAMPLES)]
    pub samples: usize,
    /// Defaults to the problem seed plus one.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; the input is rewritten when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StatisticArg {
    None,
    Margin,
    Probability,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_enum, default_value_t = StatisticArg::Margin)]
    pub statistic: StatisticArg,
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    /// Tolerated violation probability.
    #[arg(long, default_value_t = 0.05, value_parser = open_unit)]
    pub epsilon: f64,
    /// Isotropic noise standard deviation; the file's covariance when absent.
    #[arg(long, value_parser = non_negative)]
    pub sigma: Option<f64>,
}

impl ScenarioArgs {
    fn scenario(&self) -> Scenario {
        let statistic = match self.statistic {
            StatisticArg::None => StatisticChoice::None,
            StatisticArg::Margin => StatisticChoice::Margin { kappa: self.kappa },
            StatisticArg::Probability => StatisticChoice::Probability { epsilon: self.epsilon },
        };
        Scenario { statistic, sigma: self.sigma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefreshArg {
    /// Same draws at every evaluation.
    Common,
    /// Fresh draws at every evaluation.
    PerEvaluation,
}

impl From<RefreshArg> for SampleRefresh {
    fn from(r: RefreshArg) -> Self {
        match r {
            RefreshArg::Common => SampleRefresh::Common,
            RefreshArg::PerEvaluation => SampleRefresh::PerEvaluation,
        }
    }
}

#[derive(Debug, Args)]
pub struct SolveRefArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
pub struct SolveMdfArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// `mc:<M>`, `taylor` or `exact`.
    #[arg(long, default_value = "taylor")]
    pub estimator: EstimatorChoice,
    /// Monte-Carlo sampling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RefreshArg::Common)]
    pub refresh: RefreshArg,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Comma-separated estimators, e.g. `mc:200,taylor`.
    #[arg(long, value_delimiter = ',', default_value = "mc:200,taylor")]
    pub estimators: Vec<EstimatorChoice>,
    #[arg(long, default_value_t = 20)]
    pub repetitions: usize,
    /// Repetition `r` samples with seed `seed + r`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RefreshArg::Common)]
    pub refresh: RefreshArg,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: PathBuf,
    /// CSV path; the JSON path with a `.csv` extension when absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportQpArgs {
    pub problem: PathBuf,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn read_problem(path: &Path) -> Result<ProblemBundle> {
    let bytes = fs::read(path).map_err(BenchError::io(path))?;
    ProblemBundle::from_bytes(&bytes)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(BenchError::io(path))
}

fn print(out: &mut dyn Write, bytes: &[u8]) -> Result<()> {
    out.write_all(bytes).map_err(BenchError::io("standard output"))
}

/// Runs a parsed command, writing its report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a, out),
        Command::Tune(a) => cmd_tune(a, out),
        Command::SolveRef(a) => cmd_solve_ref(a, out),
        Command::SolveMdf(a) => cmd_solve_mdf(a, out),
        Command::Benchmark(a) => cmd_benchmark(a, out),
        Command::ExportQp(a) => cmd_export_qp(a, out),
    }
}

/// Configuration mistakes in user flags are usage errors.
fn usage_on_config(e: umdo_core::Error) -> BenchError {
    match e {
        umdo_core::Error::InvalidConfig(m) | umdo_core::Error::InvalidArgument(m) => BenchError::Usage(m),
        other => BenchError::Core(other),
    }
}

fn cmd_generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let config = ProblemConfig {
        n_disciplines: a.disciplines,
        d_shared: a.shared,
        d_local: a.local,
        p_coupling: a.coupling,
        coupling_strength: a.strength,
        feasibility_level: a.alpha_t,
        seed: a.seed,
    };
    let mut problem = generate(&config).map_err(usage_on_config)?;
    let tuning_seed = a.tuning_seed.unwrap_or(a.seed.wrapping_add(1));
    problem.tune_feasibility(a.tuning_samples, tuning_seed).map_err(usage_on_config)?;
    let noise = UncertaintyModel::isotropic(&config.p_coupling, a.sigma).map_err(usage_on_config)?;
    let bundle = ProblemBundle { problem, noise };
    let bytes = bundle.to_bytes()?;
    write_file(&a.out, &bytes)?;
    print(out, format!("{}\n", crate::digest(&bytes)).as_bytes())
}

fn cmd_tune(a: TuneArgs, out: &mut dyn Write) -> Result<()> {
    let mut bundle = read_problem(&a.problem)?;
    if let Some(level) = a.alpha_t {
        bundle.problem.config.feasibility_level = level;
    }
    let seed = a.seed.unwrap_or(bundle.problem.config.seed.wrapping_add(1));
    let t = bundle.problem.tune_feasibility(a.samples, seed).map_err(usage_on_config)?;
    let bytes = bundle.to_bytes()?;
    write_file(a.out.as_deref().unwrap_or(&a.problem), &bytes)?;
    print(out, format!("t = {t:.17e}\n{}\n", crate::digest(&bytes)).as_bytes())
}

#[derive(Serialize)]
struct SolutionJson<'a> {
    status: &'a str,
    x_star: Vec<f64>,
    f_star: f64,
    g_star: Vec<f64>,
    kkt_residual: f64,
    iterations: usize,
}

fn cmd_solve_ref(a: SolveRefArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_problem(&a.problem)?;
    let sol = a.scenario.scenario().solve_reference(&bundle)?;
    let json = SolutionJson {
        status: status_name(sol.status),
        x_star: sol.x_star.iter().copied().collect(),
        f_star: sol.f_star,
        g_star: sol.g_star.iter().copied().collect(),
        kkt_residual: sol.kkt_residual,
        iterations: sol.iterations,
    };
    print(out, &to_json_bytes(&json)?)?;
    match sol.status {
        QpStatus::Optimal => Ok(()),
        QpStatus::Infeasible => Err(BenchError::InfeasibleReference),
        QpStatus::MaxIter => {
            Err(BenchError::Core(umdo_core::Error::Numerical("reference QP hit its iteration cap".into())))
        }
    }
}

#[derive(Serialize)]
struct MdfJson {
    estimator: String,
    seed: Option<u64>,
    x_opt: Vec<f64>,
    f_opt: f64,
    g_opt: Vec<f64>,
    n_discipline_evals: usize,
    n_optimizer_iters: usize,
    n_evaluations: usize,
    n_mda_unconverged: usize,
    converged: bool,
    stop: String,
    wall_time_s: f64,
}

fn cmd_solve_mdf(a: SolveMdfArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_problem(&a.problem)?;
    let scenario = a.scenario.scenario();
    let optimizer = umdo_core::OptimizerSettings { max_iter: a.max_iter, ..Default::default() };
    let estimator = a.estimator.with_seed(a.seed, a.refresh.into());
    let (run, wall) = run_timed(&bundle, &scenario, estimator, umdo_core::MdaSettings::default(), &optimizer).map_err(
        |e| match e {
            BenchError::Core(c) => usage_on_config(c),
            other => other,
        },
    )?;
    let json = MdfJson {
        estimator: a.estimator.to_string(),
        seed: a.estimator.is_stochastic().then_some(a.seed),
        x_opt: run.x_opt.iter().copied().collect(),
        f_opt: run.f_opt,
        g_opt: run.g_opt.iter().copied().collect(),
        n_discipline_evals: run.n_discipline_evals,
        n_optimizer_iters: run.n_optimizer_iters,
        n_evaluations: run.n_evaluations,
        n_mda_unconverged: run.n_mda_unconverged,
        converged: run.converged,
        stop: format!("{:?}", run.stop),
        wall_time_s: wall,
    };
    print(out, &to_json_bytes(&json)?)
}

fn cmd_benchmark(a: BenchmarkArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_problem(&a.problem)?;
    let mut spec = BenchmarkSpec::new(a.estimators, a.repetitions, a.scenario.scenario());
    spec.base_seed = a.seed;
    spec.refresh = a.refresh.into();
    spec.optimizer.max_iter = a.max_iter;
    let report = run_benchmark(&bundle, &spec)?;
    write_file(&a.out, &report.to_json()?)?;
    let csv_path = a.csv.unwrap_or_else(|| a.out.with_extension("csv"));
    let file = fs::File::create(&csv_path).map_err(BenchError::io(&csv_path))?;
    report.write_csv(file)?;
    print(out, report.summary().as_bytes())
}

#[derive(Serialize)]
struct QpJson {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    c: Vec<f64>,
    d0: f64,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

fn cmd_export_qp(a: ExportQpArgs, out: &mut dyn Write) -> Result<()> {
    let bundle = read_problem(&a.problem)?;
    let qp = a.scenario.scenario().reference_qp(&bundle)?;
    let json = to_json_bytes(&QpJson {
        q: rows(&qp.q),
        c: qp.c.iter().copied().collect(),
        d0: qp.d0,
        a: rows(&qp.a),
        b: qp.b.iter().copied().collect(),
        lower: qp.lower.iter().copied().collect(),
        upper: qp.upper.iter().copied().collect(),
    })?;
    match a.out {
        Some(path) => write_file(&path, &json),
        None => print(out, &json),
    }
}
