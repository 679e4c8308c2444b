//! Statistics of the objective and constraints under the coupling noise:
//! Monte-Carlo sampling, first-order Taylor propagation, and the closed forms
//! available because the problem is linear in the noise.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::mda::LinearCoupling;
use crate::problem::{BlockSystem, NoiseKind, UncertaintyModel};
use crate::qp::{noise_energy, noise_std};
use crate::rng::{prng, standard_normal, Prng};
use crate::stats::RunningMoments;

/// Statistic applied to the random constraint vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintStatistic {
    Expectation,
    /// `E[g] + kappa std[g] <= 0`.
    Margin {
        kappa: f64,
    },
    /// `Prob[g >= 0] <= epsilon`, componentwise.
    Probability {
        epsilon: f64,
    },
}

/// Statistics defining the robust problem. The objective statistic is always
/// the expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticSpec {
    pub constraint: ConstraintStatistic,
}

impl StatisticSpec {
    pub fn margin(kappa: f64) -> Self {
        Self { constraint: ConstraintStatistic::Margin { kappa } }
    }

    pub fn validate(&self) -> Result<()> {
        match self.constraint {
            ConstraintStatistic::Expectation => Ok(()),
            ConstraintStatistic::Margin { kappa } if kappa.is_finite() => Ok(()),
            ConstraintStatistic::Margin { kappa } => {
                Err(Error::InvalidArgument(format!("margin factor must be finite, got {kappa}")))
            }
            ConstraintStatistic::Probability { epsilon } if epsilon > 0.0 && epsilon < 1.0 => Ok(()),
            ConstraintStatistic::Probability { epsilon } => {
                Err(Error::InvalidArgument(format!("probability level must lie in (0, 1), got {epsilon}")))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    MonteCarlo,
    Taylor,
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatEstimate {
    pub mean: DVector<f64>,
    /// Componentwise standard deviation.
    pub std: DVector<f64>,
    /// The composed statistic; the mean until [`StatEstimate::compose`] is applied.
    pub value: DVector<f64>,
    /// Evaluations of the sampled function (MC) or of the model (Taylor, exact).
    pub n_evals: usize,
    /// MC samples whose evaluation failed and were excluded.
    pub n_failed: usize,
    pub estimator: EstimatorKind,
}

impl StatEstimate {
    /// Sets `value` to the expectation or margin composition of `mean` and
    /// `std`. Probability statistics are not composed from moments.
    pub fn compose(mut self, stat: ConstraintStatistic) -> Result<Self> {
        self.value = match stat {
            ConstraintStatistic::Expectation => self.mean.clone(),
            ConstraintStatistic::Margin { kappa } => &self.mean + &self.std * kappa,
            ConstraintStatistic::Probability { .. } => {
                return Err(Error::Unsupported(
                    "probability statistics are not composed from mean and standard deviation".into(),
                ))
            }
        };
        Ok(self)
    }
}

/// Draws the centred noise vector block by block.
///
/// Each covariance block is factored once, by Cholesky when it is positive
/// definite and through its eigendecomposition otherwise, so singular but
/// positive semi-definite blocks are supported.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factors: Vec<DMatrix<f64>>,
    dim: usize,
}

impl GaussianSampler {
    pub fn new(model: &UncertaintyModel) -> Result<Self> {
        let dims: Vec<usize> = model.sigma_blocks.iter().map(|b| b.nrows()).collect();
        model.validate(&dims)?;
        let factors = match model.kind {
            NoiseKind::None => model.sigma_blocks.iter().map(|b| DMatrix::zeros(b.nrows(), b.nrows())).collect(),
            NoiseKind::Gaussian => model.sigma_blocks.iter().map(square_root).collect(),
        };
        Ok(Self { factors, dim: model.dim() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, rng: &mut Prng) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        let mut at = 0;
        for l in &self.factors {
            let n = l.nrows();
            let z = DVector::from_fn(n, |_, _| standard_normal(rng));
            out.rows_mut(at, n).copy_from(&(l * z));
            at += n;
        }
        out
    }
}

fn square_root(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = sigma.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let root = eig.eigenvalues.map(|v| libm::sqrt(v.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&root)
}

/// Monte-Carlo mean and unbiased standard deviation of `f(x, U)` over `m`
/// draws from a stream seeded with `seed`.
pub fn mc_estimate<F>(f: F, x: &DVector<f64>, sampler: &GaussianSampler, m: usize, seed: u64) -> Result<StatEstimate>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Option<DVector<f64>>,
{
    mc_estimate_with_rng(f, x, sampler, m, &mut prng(seed))
}

/// [`mc_estimate`] drawing from a caller-owned stream.
///
/// Samples for which `f` returns `None` are excluded and counted in
/// `n_failed`; the estimate fails only when fewer than two samples succeed.
pub fn mc_estimate_with_rng<F>(
    mut f: F,
    x: &DVector<f64>,
    sampler: &GaussianSampler,
    m: usize,
    rng: &mut Prng,
) -> Result<StatEstimate>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Option<DVector<f64>>,
{
    if m < 2 {
        return Err(Error::InvalidArgument(format!("Monte-Carlo needs at least 2 samples, got {m}")));
    }
    let mut moments: Option<RunningMoments> = None;
    let mut n_failed = 0;
    for _ in 0..m {
        let u = sampler.sample(rng);
        match f(x, &u) {
            Some(v) => moments.get_or_insert_with(|| RunningMoments::new(v.len())).push(&v),
            None => n_failed += 1,
        }
    }
    let moments = match moments {
        Some(mo) if mo.count() >= 2 => mo,
        _ => {
            return Err(Error::Numerical(format!(
                "only {} of {m} Monte-Carlo samples could be evaluated",
                m - n_failed
            )))
        }
    };
    let mean = moments.mean().clone();
    Ok(StatEstimate {
        value: mean.clone(),
        mean,
        std: moments.std(),
        n_evals: m,
        n_failed,
        estimator: EstimatorKind::MonteCarlo,
    })
}

/// Componentwise frequency of `f(x, U) >= 0` over `m` draws, and the number of
/// failed evaluations.
pub fn mc_estimate_probability<F>(
    mut f: F,
    x: &DVector<f64>,
    sampler: &GaussianSampler,
    m: usize,
    seed: u64,
) -> Result<(DVector<f64>, usize)>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> Option<DVector<f64>>,
{
    if m == 0 {
        return Err(Error::InvalidArgument("Monte-Carlo needs at least 1 sample".into()));
    }
    let mut rng = prng(seed);
    let mut hits: Option<DVector<f64>> = None;
    let mut ok = 0usize;
    for _ in 0..m {
        let u = sampler.sample(&mut rng);
        if let Some(v) = f(x, &u) {
            let h = hits.get_or_insert_with(|| DVector::zeros(v.len()));
            for (hi, vi) in h.iter_mut().zip(v.iter()) {
                if *vi >= 0.0 {
                    *hi += 1.0;
                }
            }
            ok += 1;
        }
    }
    match hits {
        Some(h) => Ok((h / ok as f64, m - ok)),
        None => Err(Error::Numerical("no Monte-Carlo sample could be evaluated".into())),
    }
}

/// First-order Taylor estimate around the noise mean `u = 0`: mean
/// `f(x, 0)` and covariance `J Sigma J'` with `J = df/du (x, 0)`.
pub fn taylor_estimate<F, J>(f_value: F, f_jac_u: J, x: &DVector<f64>, sigma: &DMatrix<f64>) -> Result<StatEstimate>
where
    F: FnOnce(&DVector<f64>, &DVector<f64>) -> Result<DVector<f64>>,
    J: FnOnce(&DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>>,
{
    let u0 = DVector::zeros(sigma.nrows());
    let mean = f_value(x, &u0)?;
    let jac = f_jac_u(x, &u0)?;
    check_len("Taylor Jacobian rows", mean.len(), jac.nrows())?;
    check_len("Taylor Jacobian columns", sigma.nrows(), jac.ncols())?;
    let std = noise_std(&jac, sigma)?;
    Ok(StatEstimate { value: mean.clone(), mean, std, n_evals: 1, n_failed: 0, estimator: EstimatorKind::Taylor })
}

/// Exact objective and constraint statistics at one design point.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactStats {
    /// One-component estimate of `x0'x0 + Y'Y`; its standard deviation
    /// assumes Gaussian noise.
    pub objective: StatEstimate,
    /// Estimate of `t - Y`.
    pub constraints: StatEstimate,
}

/// Closed-form statistics of the objective and constraints at `x`.
///
/// With `Y = m + P U`, `m = alpha + beta x` and `S = P Sigma P'`:
/// `E[f] = x0'x0 + m'm + trace(S)`, `Var[f] = 2 trace(S^2) + 4 m'Sm` for
/// Gaussian noise, `E[g] = t - m` and `std[g] = sqrt(diag(S))`.
pub fn exact_stats(system: &BlockSystem, t: f64, sigma: &DMatrix<f64>, x: &DVector<f64>) -> Result<ExactStats> {
    exact_stats_with(&LinearCoupling::new(system)?, &system.q_x0, t, sigma, x)
}

/// [`exact_stats`] from precomputed sensitivities.
pub fn exact_stats_with(
    coupling: &LinearCoupling,
    q_x0: &DMatrix<f64>,
    t: f64,
    sigma: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<ExactStats> {
    check_len("design vector", coupling.beta.ncols(), x.len())?;
    check_len("covariance", coupling.p.nrows(), sigma.nrows())?;
    let m = &coupling.alpha + &coupling.beta * x;
    let s = &coupling.p * sigma * coupling.p.transpose();
    let f_mean = x.dot(&(q_x0 * x)) + m.dot(&m) + noise_energy(&coupling.p, sigma);
    let f_var = 2.0 * s.component_mul(&s.transpose()).sum() + 4.0 * m.dot(&(&s * &m));
    let g_mean = m.map(|v| t - v);
    let g_std = noise_std(&coupling.p, sigma)?;
    let one = |v: f64| DVector::from_element(1, v);
    Ok(ExactStats {
        objective: StatEstimate {
            mean: one(f_mean),
            std: one(libm::sqrt(f_var.max(0.0))),
            value: one(f_mean),
            n_evals: 1,
            n_failed: 0,
            estimator: EstimatorKind::Exact,
        },
        constraints: StatEstimate {
            value: g_mean.clone(),
            mean: g_mean,
            std: g_std,
            n_evals: 1,
            n_failed: 0,
            estimator: EstimatorKind::Exact,
        },
    })
}
