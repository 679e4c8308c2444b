//! Benchmark reports: per-run records, per-estimator aggregates, JSON and CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};
use umdo_core::{MdaMethod, PercentErrors, QpSolution, QpStatus, RunResult, SampleRefresh};

use crate::json::{format_f64, to_json_bytes};
use crate::runner::{BenchmarkSpec, EstimatorChoice, StatisticChoice};
use crate::{ProblemBundle, Result};

pub const CSV_HEADER: [&str; 7] = ["estimator", "rep", "dx_pct", "df_pct", "dg_pct", "n_evals", "wall_s"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub tool_version: String,
    pub problem_digest: String,
    pub config: ConfigEcho,
    pub reference: ReferenceSummary,
    pub rows: Vec<EstimatorRow>,
    pub runs: Vec<RunRecord>,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub n_disciplines: usize,
    pub d_shared: usize,
    pub d_local: Vec<usize>,
    pub p_coupling: Vec<usize>,
    pub coupling_strength: f64,
    pub feasibility_level: f64,
    pub t: f64,
    pub statistic: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epsilon: Option<f64>,
    /// `None` when the file's covariance blocks were used.
    pub sigma: Option<f64>,
    pub estimators: Vec<String>,
    pub repetitions: usize,
    pub refresh: String,
    pub optimizer_max_iter: usize,
    pub optimizer_x_tol: f64,
    pub optimizer_f_tol: f64,
    pub optimizer_g_tol: f64,
    pub initial_trust_radius: f64,
    pub final_trust_radius: f64,
    pub mda_method: String,
    pub mda_tol: f64,
    pub mda_max_iter: usize,
    pub mda_warm_start: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub problem: u64,
    pub base: u64,
    /// Sampling seed of every Monte-Carlo repetition, in order.
    pub repetitions: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSummary {
    pub status: String,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub g_star: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl From<&QpSolution> for ReferenceSummary {
    fn from(s: &QpSolution) -> Self {
        Self {
            status: status_name(s.status).into(),
            x_star: s.x_star.iter().copied().collect(),
            f_star: s.f_star,
            g_star: s.g_star.iter().copied().collect(),
            kkt_residual: s.kkt_residual,
            iterations: s.iterations,
        }
    }
}

pub fn status_name(status: QpStatus) -> &'static str {
    match status {
        QpStatus::Optimal => "optimal",
        QpStatus::Infeasible => "infeasible",
        QpStatus::MaxIter => "max_iter",
    }
}

/// Aggregates over the successful runs of one estimator. Standard deviations
/// appear only with at least two successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRow {
    pub estimator: String,
    pub repetitions: usize,
    pub n_failed: usize,
    pub mean_dx: Option<f64>,
    pub mean_df: Option<f64>,
    pub mean_dg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_dx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_dg: Option<f64>,
    pub mean_n_discipline_evals: Option<f64>,
    pub mean_wall_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub estimator: String,
    pub rep: usize,
    pub seed: Option<u64>,
    pub dx_pct: Option<f64>,
    pub df_pct: Option<f64>,
    pub dg_pct: Option<f64>,
    /// Discipline evaluations.
    pub n_evals: Option<usize>,
    pub wall_s: f64,
    pub n_optimizer_iters: Option<usize>,
    pub converged: Option<bool>,
    pub f_opt: Option<f64>,
    pub x_opt: Option<Vec<f64>>,
    pub g_opt: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl RunRecord {
    pub(crate) fn new(
        est: EstimatorChoice,
        rep: usize,
        seed: Option<u64>,
        outcome: Result<(PercentErrors, RunResult, f64)>,
    ) -> Self {
        let mut rec = RunRecord {
            estimator: est.to_string(),
            rep,
            seed,
            dx_pct: None,
            df_pct: None,
            dg_pct: None,
            n_evals: None,
            wall_s: 0.0,
            n_optimizer_iters: None,
            converged: None,
            f_opt: None,
            x_opt: None,
            g_opt: None,
            error: None,
        };
        match outcome {
            Ok((e, run, wall)) => {
                rec.dx_pct = Some(e.dx);
                rec.df_pct = Some(e.df);
                rec.dg_pct = Some(e.dg);
                rec.n_evals = Some(run.n_discipline_evals);
                rec.wall_s = wall;
                rec.n_optimizer_iters = Some(run.n_optimizer_iters);
                rec.converged = Some(run.converged);
                rec.f_opt = Some(run.f_opt);
                rec.x_opt = Some(run.x_opt.iter().copied().collect());
                rec.g_opt = Some(run.g_opt.iter().copied().collect());
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    }

    fn ok(&self) -> bool {
        self.error.is_none()
    }
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some(var.sqrt()))
}

impl EstimatorRow {
    fn aggregate(estimator: String, runs: &[&RunRecord]) -> Self {
        let ok: Vec<&&RunRecord> = runs.iter().filter(|r| r.ok()).collect();
        let col = |f: fn(&RunRecord) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
        let (mean_dx, std_dx) = mean_std(&col(|r| r.dx_pct));
        let (mean_df, std_df) = mean_std(&col(|r| r.df_pct));
        let (mean_dg, std_dg) = mean_std(&col(|r| r.dg_pct));
        let (mean_evals, _) = mean_std(&col(|r| r.n_evals.map(|n| n as f64)));
        let wall: Vec<f64> = runs.iter().map(|r| r.wall_s).collect();
        Self {
            estimator,
            repetitions: runs.len(),
            n_failed: runs.len() - ok.len(),
            mean_dx,
            mean_df,
            mean_dg,
            std_dx,
            std_df,
            std_dg,
            mean_n_discipline_evals: mean_evals,
            mean_wall_s: mean_std(&wall).0.unwrap_or(0.0),
        }
    }
}

impl BenchmarkReport {
    pub(crate) fn assemble(
        bundle: &ProblemBundle,
        spec: &BenchmarkSpec,
        reference: &QpSolution,
        runs: Vec<RunRecord>,
    ) -> Result<Self> {
        let cfg = &bundle.problem.config;
        let (statistic, kappa, epsilon) = match spec.scenario.statistic {
            StatisticChoice::None => ("none", None, None),
            StatisticChoice::Margin { kappa } => ("margin", Some(kappa), None),
            StatisticChoice::Probability { epsilon } => ("probability", None, Some(epsilon)),
        };
        let names: Vec<String> = spec.estimators.iter().map(ToString::to_string).collect();
        let mut rows = Vec::new();
        for name in &names {
            if rows.iter().any(|r: &EstimatorRow| &r.estimator == name) {
                continue;
            }
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| &r.estimator == name).collect();
            rows.push(EstimatorRow::aggregate(name.clone(), &mine));
        }
        let reps = if spec.estimators.iter().any(EstimatorChoice::is_stochastic) { spec.repetitions } else { 0 };
        let opt = &spec.optimizer;
        Ok(Self {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            problem_digest: bundle.digest()?,
            config: ConfigEcho {
                n_disciplines: cfg.n_disciplines,
                d_shared: cfg.d_shared,
                d_local: cfg.d_local.clone(),
                p_coupling: cfg.p_coupling.clone(),
                coupling_strength: cfg.coupling_strength,
                feasibility_level: cfg.feasibility_level,
                t: bundle.problem.t,
                statistic: statistic.into(),
                kappa,
                epsilon,
                sigma: spec.scenario.sigma,
                estimators: names,
                repetitions: spec.repetitions,
                refresh: match spec.refresh {
                    SampleRefresh::Common => "common",
                    SampleRefresh::PerEvaluation => "per-evaluation",
                }
                .into(),
                optimizer_max_iter: opt.max_iter,
                optimizer_x_tol: opt.x_tol,
                optimizer_f_tol: opt.f_tol,
                optimizer_g_tol: opt.g_tol,
                initial_trust_radius: opt.initial_trust_radius,
                final_trust_radius: opt.final_trust_radius,
                mda_method: match spec.mda.method {
                    MdaMethod::Jacobi => "jacobi",
                    MdaMethod::GaussSeidel => "gauss_seidel",
                    MdaMethod::Direct => "direct",
                }
                .into(),
                mda_tol: spec.mda.tol,
                mda_max_iter: spec.mda.max_iter,
                mda_warm_start: spec.mda.warm_start,
            },
            reference: reference.into(),
            rows,
            runs,
            seeds: Seeds {
                problem: cfg.seed,
                base: spec.base_seed,
                repetitions: (0..reps as u64).map(|r| spec.base_seed.wrapping_add(r)).collect(),
            },
        })
    }

    pub fn row(&self, estimator: &str) -> Option<&EstimatorRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        to_json_bytes(self)
    }

    /// One line per run with the columns of [`CSV_HEADER`]; failed runs leave
    /// the metric cells empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        let cell = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        for r in &self.runs {
            w.write_record([
                r.estimator.clone(),
                r.rep.to_string(),
                cell(r.dx_pct),
                cell(r.df_pct),
                cell(r.dg_pct),
                r.n_evals.map(|n| n.to_string()).unwrap_or_default(),
                format_f64(r.wall_s),
            ])?;
        }
        w.flush().map_err(crate::BenchError::io("csv output"))?;
        Ok(())
    }

    /// Human-readable summary table.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:<10} {:>5} {:>22} {:>22} {:>22} {:>12}\n",
            "estimator", "runs", "dx % (std)", "df % (std)", "dg % (std)", "evals"
        );
        let fmt = |m: Option<f64>, sd: Option<f64>| match (m, sd) {
            (Some(m), Some(sd)) => format!("{m:.4} ({sd:.4})"),
            (Some(m), None) => format!("{m:.4}"),
            _ => "-".into(),
        };
        for r in &self.rows {
            s += &format!(
                "{:<10} {:>5} {:>22} {:>22} {:>22} {:>12}\n",
                r.estimator,
                r.repetitions - r.n_failed,
                fmt(r.mean_dx, r.std_dx),
                fmt(r.mean_df, r.std_df),
                fmt(r.mean_dg, r.std_dg),
                r.mean_n_discipline_evals.map_or("-".into(), |v| format!("{v:.0}")),
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(dx: f64) -> RunRecord {
        RunRecord {
            estimator: "mc:10".into(),
            rep: 0,
            seed: Some(0),
            dx_pct: Some(dx),
            df_pct: Some(2.0 * dx),
            dg_pct: Some(3.0 * dx),
            n_evals: Some(100),
            wall_s: 0.5,
            n_optimizer_iters: Some(10),
            converged: Some(true),
            f_opt: Some(1.0),
            x_opt: Some(vec![0.5]),
            g_opt: Some(vec![-1.0]),
            error: None,
        }
    }

    #[test]
    fn aggregates_use_sample_std() {
        let runs = [record(1.0), record(3.0)];
        let row = EstimatorRow::aggregate("mc:10".into(), &runs.iter().collect::<Vec<_>>());
        assert_eq!(row.mean_dx, Some(2.0));
        assert_eq!(row.std_dx, Some(2f64.sqrt()));
        assert_eq!(row.mean_dg, Some(6.0));
        assert_eq!(row.n_failed, 0);
    }

    #[test]
    fn single_run_has_no_std() {
        let runs = [record(1.0)];
        let row = EstimatorRow::aggregate("mc:10".into(), &runs.iter().collect::<Vec<_>>());
        assert_eq!(row.std_dx, None);
        let text = String::from_utf8(to_json_bytes(&row).unwrap()).unwrap();
        assert!(!text.contains("std_"), "{text}");
    }

    #[test]
    fn failures_are_counted_not_averaged() {
        let mut bad = record(100.0);
        bad.error = Some("boom".into());
        bad.dx_pct = None;
        let runs = [record(1.0), bad];
        let row = EstimatorRow::aggregate("mc:10".into(), &runs.iter().collect::<Vec<_>>());
        assert_eq!(row.n_failed, 1);
        assert_eq!(row.mean_dx, Some(1.0));
        assert_eq!(row.std_dx, None);
    }
}
