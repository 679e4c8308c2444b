//! The robust problem in multidisciplinary feasible form: every objective and
//! constraint evaluation runs the coupling solver through an estimator, and a
//! derivative-free optimiser drives the design.

pub mod cobyla;

use alloc::format;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::mda::{solve_mda, LinearCoupling, MdaSettings};
use crate::problem::{assemble, BlockSystem, ScalableProblem, UncertaintyModel};
use crate::qp::QpSolution;
use crate::qp::QpStatus;
use crate::rng::{prng, Prng};
use crate::stats::normal_quantile;
use crate::uq::{
    exact_stats_with, mc_estimate_with_rng, taylor_estimate, ConstraintStatistic, EstimatorKind, GaussianSampler,
    StatisticSpec,
};

pub use cobyla::{minimize, OptimizerResult, OptimizerSettings, StopReason};

/// How Monte-Carlo draws relate across objective evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRefresh {
    /// Fresh draws at every evaluation, continuing one stream seeded once per run.
    PerEvaluation,
    /// The same draws at every evaluation (common random numbers).
    Common,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    MonteCarlo { samples: usize, seed: u64, refresh: SampleRefresh },
    Taylor,
    Exact,
}

impl Estimator {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Estimator::MonteCarlo { .. } => EstimatorKind::MonteCarlo,
            Estimator::Taylor => EstimatorKind::Taylor,
            Estimator::Exact => EstimatorKind::Exact,
        }
    }
}

/// Objective and constraint statistics of the robust problem as functions of
/// the design, with evaluation counters.
#[derive(Debug, Clone)]
pub struct RobustFunctions {
    system: BlockSystem,
    coupling: LinearCoupling,
    t: f64,
    sigma: DMatrix<f64>,
    sampler: GaussianSampler,
    spec: StatisticSpec,
    estimator: Estimator,
    mda: MdaSettings,
    rng: Prng,
    /// Sum over all coupling solves of the passes over the disciplines; each
    /// pass evaluates every discipline once.
    pub n_discipline_evals: usize,
    /// Calls of [`RobustFunctions::evaluate`].
    pub n_evaluations: usize,
    /// Coupling solves that stopped before reaching the tolerance.
    pub n_mda_unconverged: usize,
}

/// Builds the robust objective and constraints of `problem` under `noise`.
///
/// The constraint vector is `t 1 - Y` composed with the statistic of
/// `spec`. Probability statistics are only available with the exact
/// estimator.
pub fn make_robust_functions(
    problem: &ScalableProblem,
    noise: &UncertaintyModel,
    spec: StatisticSpec,
    estimator: Estimator,
    mda: MdaSettings,
) -> Result<RobustFunctions> {
    problem.validate()?;
    spec.validate()?;
    mda.validate()?;
    noise.validate(&problem.config.p_coupling)?;
    match (estimator, spec.constraint) {
        (Estimator::MonteCarlo { samples, .. }, _) if samples < 2 => {
            return Err(Error::InvalidArgument(format!("Monte-Carlo needs at least 2 samples, got {samples}")))
        }
        (Estimator::MonteCarlo { .. } | Estimator::Taylor, ConstraintStatistic::Probability { .. }) => {
            return Err(Error::Unsupported(
                "probability constraints are only evaluated with the exact estimator".into(),
            ))
        }
        _ => {}
    }
    let system = assemble(problem);
    let coupling = LinearCoupling::new(&system)?;
    let seed = match estimator {
        Estimator::MonteCarlo { seed, .. } => seed,
        _ => 0,
    };
    Ok(RobustFunctions {
        coupling,
        t: problem.t,
        sigma: noise.covariance(),
        sampler: GaussianSampler::new(noise)?,
        spec,
        estimator,
        mda,
        rng: prng(seed),
        system,
        n_discipline_evals: 0,
        n_evaluations: 0,
        n_mda_unconverged: 0,
    })
}

impl RobustFunctions {
    pub fn design_dim(&self) -> usize {
        self.system.design_dim()
    }

    pub fn system(&self) -> &BlockSystem {
        &self.system
    }

    /// Objective statistic and composed constraint statistics at `x`.
    pub fn evaluate(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        check_len("design vector", self.design_dim(), x.len())?;
        self.n_evaluations += 1;
        match self.estimator {
            Estimator::MonteCarlo { samples, seed, refresh } => {
                if refresh == SampleRefresh::Common {
                    self.rng = prng(seed);
                }
                self.evaluate_mc(x, samples)
            }
            Estimator::Taylor => self.evaluate_taylor(x),
            Estimator::Exact => self.evaluate_exact(x),
        }
    }

    fn objective_sample(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.system.q_x0 * x)) + y.dot(y)
    }

    fn evaluate_mc(&mut self, x: &DVector<f64>, samples: usize) -> Result<(f64, DVector<f64>)> {
        let p = self.system.coupling_dim();
        let (system, mda, t) = (&self.system, &self.mda, self.t);
        let mut warm: Option<DVector<f64>> = None;
        let mut sweeps = 0;
        let mut unconverged = 0;
        let est = mc_estimate_with_rng(
            |x, u| {
                let r = solve_mda(system, x, u, mda, warm.as_ref()).ok()?;
                sweeps += r.sweeps;
                if !r.converged {
                    unconverged += 1;
                    return None;
                }
                let mut out = DVector::zeros(p + 1);
                out[0] = x.dot(&(&system.q_x0 * x)) + r.y.dot(&r.y);
                out.rows_mut(1, p).copy_from(&r.y.map(|v| t - v));
                warm = Some(r.y);
                Some(out)
            },
            x,
            &self.sampler,
            samples,
            &mut self.rng,
        )?;
        self.n_discipline_evals += sweeps;
        self.n_mda_unconverged += unconverged;
        let cons = compose(est.mean.rows(1, p).into_owned(), est.std.rows(1, p).into_owned(), self.spec.constraint)?;
        Ok((est.mean[0], cons))
    }

    fn evaluate_taylor(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let p = self.system.coupling_dim();
        let r = solve_mda(&self.system, x, &DVector::zeros(p), &self.mda, None)?;
        // One coupling solve plus one linearisation of every discipline.
        self.n_discipline_evals += r.sweeps + 1;
        if !r.converged {
            self.n_mda_unconverged += 1;
        }
        let t = self.t;
        let y = r.y;
        let minus_p = -&self.coupling.p;
        let g = taylor_estimate(|_, _| Ok(y.map(|v| t - v)), |_, _| Ok(minus_p), x, &self.sigma)?;
        let f = self.objective_sample(x, &y);
        Ok((f, compose(g.mean, g.std, self.spec.constraint)?))
    }

    fn evaluate_exact(&mut self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let ex = exact_stats_with(&self.coupling, &self.system.q_x0, self.t, &self.sigma, x)?;
        let cons = compose(ex.constraints.mean, ex.constraints.std, self.spec.constraint)?;
        Ok((ex.objective.mean[0], cons))
    }

    /// First-order Taylor estimate of the objective mean and standard
    /// deviation at `x`: the objective gradient with respect to the noise is
    /// `2 P'y`.
    pub fn taylor_objective(&self, x: &DVector<f64>) -> Result<(f64, f64)> {
        let y = self.coupling.couplings(x, &DVector::zeros(self.system.coupling_dim()));
        let est = taylor_estimate(
            |x, _| Ok(DVector::from_element(1, self.objective_sample(x, &y))),
            |_, _| {
                let grad = self.coupling.p.transpose() * &y * 2.0;
                Ok(DMatrix::from_row_slice(1, grad.len(), grad.as_slice()))
            },
            x,
            &self.sigma,
        )?;
        Ok((est.mean[0], est.std[0]))
    }
}

/// Expectation or margin composition; for Gaussian probability constraints
/// the `1 - epsilon` quantile `mean + std Phi^-1(1 - epsilon)`.
fn compose(mean: DVector<f64>, std: DVector<f64>, stat: ConstraintStatistic) -> Result<DVector<f64>> {
    Ok(match stat {
        ConstraintStatistic::Expectation => mean,
        ConstraintStatistic::Margin { kappa } => mean + std * kappa,
        ConstraintStatistic::Probability { epsilon } => {
            let z = -normal_quantile(epsilon)?;
            mean + std * z
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub x_opt: DVector<f64>,
    pub f_opt: f64,
    pub g_opt: DVector<f64>,
    pub n_discipline_evals: usize,
    pub n_optimizer_iters: usize,
    pub n_evaluations: usize,
    pub n_mda_unconverged: usize,
    /// A point feasible within the constraint tolerance was found.
    pub converged: bool,
    pub stop: StopReason,
    pub estimator: EstimatorKind,
}

/// Optimises the robust problem through the MDF path.
pub fn run_mdf(
    problem: &ScalableProblem,
    noise: &UncertaintyModel,
    spec: StatisticSpec,
    estimator: Estimator,
    mda: MdaSettings,
    settings: &OptimizerSettings,
) -> Result<RunResult> {
    let mut functions = make_robust_functions(problem, noise, spec, estimator, mda)?;
    optimize(&mut functions, settings)
}

/// Runs the optimiser on prepared robust functions.
pub fn optimize(functions: &mut RobustFunctions, settings: &OptimizerSettings) -> Result<RunResult> {
    let dim = functions.design_dim();
    let res = minimize(|x| functions.evaluate(x), dim, settings)?;
    Ok(RunResult {
        x_opt: res.x,
        f_opt: res.f,
        g_opt: res.g,
        n_discipline_evals: functions.n_discipline_evals,
        n_optimizer_iters: res.iterations,
        n_evaluations: res.evaluations,
        n_mda_unconverged: functions.n_mda_unconverged,
        converged: res.feasible,
        stop: res.stop,
        estimator: functions.estimator.kind(),
    })
}

/// Relative errors in percent: `100 ||est - ref|| / ||ref||` for the design,
/// the objective and the constraint vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PercentErrors {
    pub dx: f64,
    pub df: f64,
    pub dg: f64,
}

pub fn percent_errors(run: &RunResult, reference: &QpSolution) -> Result<PercentErrors> {
    if reference.status != QpStatus::Optimal {
        return Err(Error::InvalidArgument("reference solution is not optimal".into()));
    }
    check_len("design vector", reference.x_star.len(), run.x_opt.len())?;
    check_len("constraint vector", reference.g_star.len(), run.g_opt.len())?;
    let rel = |num: f64, den: f64, what: &'static str| {
        if den == 0.0 {
            Err(Error::UndefinedMetric(what))
        } else {
            Ok(100.0 * num / den)
        }
    };
    Ok(PercentErrors {
        dx: rel((&run.x_opt - &reference.x_star).norm(), reference.x_star.norm(), "design")?,
        df: rel((run.f_opt - reference.f_star).abs(), reference.f_star.abs(), "objective")?,
        dg: rel((&run.g_opt - &reference.g_star).norm(), reference.g_star.norm(), "constraints")?,
    })
}
