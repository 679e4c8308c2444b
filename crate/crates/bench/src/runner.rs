//! Scenarios, reference solutions and the parallel benchmark loop.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use umdo_core::{
    assemble, percent_errors, reduce_deterministic, reduce_margin, reduce_probability, run_mdf, solve_qp,
    ConstraintStatistic, Estimator, IpmSettings, MdaSettings, OptimizerSettings, ProbabilityModel, QpData, QpSolution,
    QpStatus, RunResult, SampleRefresh, StatisticSpec, UncertaintyModel,
};

use crate::report::{BenchmarkReport, RunRecord};
use crate::{BenchError, ProblemBundle, Result};

/// Environment variable capping the worker pool size.
pub const THREADS_ENV: &str = "UMDO_BENCH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StatisticChoice {
    /// Deterministic problem; the noise model is ignored.
    None,
    Margin {
        kappa: f64,
    },
    Probability {
        epsilon: f64,
    },
}

/// What is being optimised: the constraint statistic and the noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub statistic: StatisticChoice,
    /// Isotropic standard deviation overriding the file's covariance blocks.
    pub sigma: Option<f64>,
}

impl Scenario {
    pub fn noise(&self, bundle: &ProblemBundle) -> Result<UncertaintyModel> {
        let p = &bundle.problem.config.p_coupling;
        Ok(match (self.statistic, self.sigma) {
            (StatisticChoice::None, _) => UncertaintyModel::none(p),
            (_, Some(sigma)) => UncertaintyModel::isotropic(p, sigma)?,
            (_, None) => bundle.noise.clone(),
        })
    }

    pub fn spec(&self) -> StatisticSpec {
        let constraint = match self.statistic {
            StatisticChoice::None => ConstraintStatistic::Expectation,
            StatisticChoice::Margin { kappa } => ConstraintStatistic::Margin { kappa },
            StatisticChoice::Probability { epsilon } => ConstraintStatistic::Probability { epsilon },
        };
        StatisticSpec { constraint }
    }

    /// The equivalent quadratic program.
    pub fn reference_qp(&self, bundle: &ProblemBundle) -> Result<QpData> {
        let system = assemble(&bundle.problem);
        let t = bundle.problem.t;
        let sigma = self.noise(bundle)?.covariance();
        Ok(match self.statistic {
            StatisticChoice::None => reduce_deterministic(&system, t)?,
            StatisticChoice::Margin { kappa } => reduce_margin(&system, t, &sigma, kappa)?,
            StatisticChoice::Probability { epsilon } => {
                reduce_probability(&system, t, &sigma, epsilon, ProbabilityModel::Gaussian)?
            }
        })
    }

    pub fn solve_reference(&self, bundle: &ProblemBundle) -> Result<QpSolution> {
        Ok(solve_qp(&self.reference_qp(bundle)?, &IpmSettings::default())?)
    }
}

/// Estimator as named on the command line: `mc:<samples>`, `taylor` or `exact`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    MonteCarlo { samples: usize },
    Taylor,
    Exact,
}

impl EstimatorChoice {
    pub fn is_stochastic(&self) -> bool {
        matches!(self, EstimatorChoice::MonteCarlo { .. })
    }

    pub fn with_seed(&self, seed: u64, refresh: SampleRefresh) -> Estimator {
        match *self {
            EstimatorChoice::MonteCarlo { samples } => Estimator::MonteCarlo { samples, seed, refresh },
            EstimatorChoice::Taylor => Estimator::Taylor,
            EstimatorChoice::Exact => Estimator::Exact,
        }
    }
}

impl fmt::Display for EstimatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorChoice::MonteCarlo { samples } => write!(f, "mc:{samples}"),
            EstimatorChoice::Taylor => f.write_str("taylor"),
            EstimatorChoice::Exact => f.write_str("exact"),
        }
    }
}

impl FromStr for EstimatorChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "taylor" | "tp" => Ok(EstimatorChoice::Taylor),
            "exact" => Ok(EstimatorChoice::Exact),
            other => {
                let samples = other
                    .strip_prefix("mc:")
                    .ok_or_else(|| format!("unknown estimator `{s}` (expected mc:<M>, taylor or exact)"))?;
                match samples.parse::<usize>() {
                    Ok(m) if m >= 2 => Ok(EstimatorChoice::MonteCarlo { samples: m }),
                    _ => Err(format!("sample size in `{s}` must be an integer >= 2")),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub estimators: Vec<EstimatorChoice>,
    /// Repetitions of each stochastic estimator; deterministic ones run once.
    pub repetitions: usize,
    pub scenario: Scenario,
    /// Repetition `r` samples with seed `base_seed + r`.
    pub base_seed: u64,
    pub refresh: SampleRefresh,
    pub optimizer: OptimizerSettings,
    pub mda: MdaSettings,
    /// Worker cap; falls back to the environment, then to rayon's default.
    pub threads: Option<usize>,
}

impl BenchmarkSpec {
    pub fn new(estimators: Vec<EstimatorChoice>, repetitions: usize, scenario: Scenario) -> Self {
        Self {
            estimators,
            repetitions,
            scenario,
            base_seed: 0,
            refresh: SampleRefresh::Common,
            optimizer: OptimizerSettings::default(),
            mda: MdaSettings::default(),
            threads: None,
        }
    }

    fn jobs(&self) -> Vec<(EstimatorChoice, usize, Option<u64>)> {
        let mut jobs = Vec::new();
        for &est in &self.estimators {
            if est.is_stochastic() {
                for rep in 0..self.repetitions {
                    jobs.push((est, rep, Some(self.base_seed.wrapping_add(rep as u64))));
                }
            } else {
                jobs.push((est, 0, None));
            }
        }
        jobs
    }
}

/// Reads [`THREADS_ENV`]; unset or empty means no cap.
pub fn thread_cap_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(BenchError::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Timed MDF run.
pub fn run_timed(
    bundle: &ProblemBundle,
    scenario: &Scenario,
    estimator: Estimator,
    mda: MdaSettings,
    optimizer: &OptimizerSettings,
) -> Result<(RunResult, f64)> {
    let noise = scenario.noise(bundle)?;
    let start = Instant::now();
    let run = run_mdf(&bundle.problem, &noise, scenario.spec(), estimator, mda, optimizer)?;
    Ok((run, start.elapsed().as_secs_f64()))
}

/// Runs every estimator and repetition against the QP reference.
///
/// Failed runs are recorded in the report rather than aborting the benchmark.
pub fn run_benchmark(bundle: &ProblemBundle, spec: &BenchmarkSpec) -> Result<BenchmarkReport> {
    if spec.estimators.is_empty() {
        return Err(BenchError::Usage("at least one estimator is required".into()));
    }
    if spec.repetitions == 0 {
        return Err(BenchError::Usage("repetitions must be at least 1".into()));
    }
    let reference = spec.scenario.solve_reference(bundle)?;
    match reference.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(BenchError::InfeasibleReference),
        QpStatus::MaxIter => {
            return Err(BenchError::Core(umdo_core::Error::Numerical("reference QP hit its iteration cap".into())))
        }
    }

    let threads = match spec.threads {
        Some(n) => Some(n),
        None => thread_cap_from_env()?,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| BenchError::Usage(format!("cannot start worker pool: {e}")))?;

    let jobs = spec.jobs();
    let records: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(est, rep, seed)| {
                let estimator = est.with_seed(seed.unwrap_or(0), spec.refresh);
                let outcome = run_timed(bundle, &spec.scenario, estimator, spec.mda, &spec.optimizer)
                    .and_then(|(run, wall)| Ok((percent_errors(&run, &reference)?, run, wall)));
                RunRecord::new(est, rep, seed, outcome)
            })
            .collect()
    });

    BenchmarkReport::assemble(bundle, spec, &reference, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimator_names_round_trip() {
        for s in ["mc:200", "taylor", "exact"] {
            assert_eq!(s.parse::<EstimatorChoice>().unwrap().to_string(), s);
        }
        assert_eq!("TP".parse::<EstimatorChoice>().unwrap(), EstimatorChoice::Taylor);
        assert!("mc:1".parse::<EstimatorChoice>().is_err());
        assert!("mc:x".parse::<EstimatorChoice>().is_err());
        assert!("pce".parse::<EstimatorChoice>().is_err());
    }

    #[test]
    fn deterministic_estimators_run_once() {
        let spec = BenchmarkSpec::new(
            vec![EstimatorChoice::MonteCarlo { samples: 10 }, EstimatorChoice::Taylor],
            3,
            Scenario { statistic: StatisticChoice::Margin { kappa: 2.0 }, sigma: Some(0.01) },
        );
        let jobs = spec.jobs();
        assert_eq!(jobs.len(), 4);
        assert_eq!(jobs[2].2, Some(2));
        assert_eq!(jobs[3], (EstimatorChoice::Taylor, 0, None));
    }
}
