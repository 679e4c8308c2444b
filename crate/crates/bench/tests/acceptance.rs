//! Acceptance checks on the two-discipline reference problem.
//!
//! Each check prints one `PASS` or `FAIL` line with the measured values; the
//! process exits with status 1 when any check fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use umdo_bench::{run_benchmark, BenchmarkSpec, EstimatorChoice, ProblemBundle, Scenario, StatisticChoice};
use umdo_core::rng::{prng, uniform, Prng};
use umdo_core::stats::normal_cdf;
use umdo_core::*;

const SIGMA: f64 = 0.01;
const KAPPA: f64 = 2.0;

struct Check {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Check);

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

fn tuned(seed: u64) -> ScalableProblem {
    let mut pb = generate(&ProblemConfig::reference(seed)).unwrap();
    pb.tune_feasibility(10_000, seed + 1).unwrap();
    pb
}

fn noise(sigma: f64) -> UncertaintyModel {
    UncertaintyModel::isotropic(&[3, 3], sigma).unwrap()
}

fn random_point(rng: &mut Prng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| uniform(rng))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn reduction_equivalence() -> Check {
    let direct = MdaSettings { method: MdaMethod::Direct, ..MdaSettings::default() };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let pb = tuned(seed);
        let system = assemble(&pb);
        let qp = reduce_deterministic(&system, pb.t).unwrap();
        let mut rng = prng(7000 + seed);
        let zero = DVector::zeros(system.coupling_dim());
        for _ in 0..20 {
            let x = random_point(&mut rng, system.design_dim());
            let y = solve_mda(&system, &x, &zero, &direct, None).unwrap().y;
            let f = x.dot(&(&system.q_x0 * &x)) + y.dot(&y);
            let g = y.map(|v| pb.t - v);
            worst = worst.max(rel(qp.objective(&x), f));
            for (a, b) in qp.constraints(&x).iter().zip(g.iter()) {
                worst = worst.max(rel(*a, *b));
            }
        }
    }
    check(worst <= 1e-10, format!("max relative mismatch {worst:.2e} (tol 1e-10)"))
}

fn positive_definiteness() -> Check {
    let mut min_lambda = f64::INFINITY;
    let mut all = true;
    for seed in 0..100 {
        let pb = generate(&ProblemConfig::reference(seed)).unwrap();
        let (pd, lambda) = check_positive_definite(&reduce_deterministic(&assemble(&pb), pb.t).unwrap());
        all &= pd;
        min_lambda = min_lambda.min(lambda);
    }
    // Three local variables but one coupling output per discipline.
    let cfg = ProblemConfig { d_local: vec![3, 3], p_coupling: vec![1, 1], ..ProblemConfig::reference(5) };
    let pb = generate(&cfg).unwrap();
    let qp = reduce_deterministic(&assemble(&pb), pb.t).unwrap();
    let (pd, lambda) = check_positive_definite(&qp);
    let near_zero = lambda.abs() <= 1e-10 * qp.q.trace();
    check(
        all && !pd && near_zero,
        format!("100/100 definite: {all}, smallest eigenvalue {min_lambda:.3e}; violating config lambda_min {lambda:.2e}, flagged: {}", !pd),
    )
}

fn feasibility_tuning() -> Check {
    let pb = tuned(42);
    let coupling = LinearCoupling::new(&assemble(&pb)).unwrap();
    let zero = DVector::zeros(6);
    let mut rng = prng(99_991);
    let n = 10_000;
    let hits = (0..n).filter(|_| coupling.couplings(&random_point(&mut rng, 5), &zero).min() >= pb.t).count();
    let frac = hits as f64 / n as f64;
    check((frac - 0.5).abs() <= 0.02, format!("fresh feasible fraction {frac:.4} (target 0.5 +- 0.02)"))
}

fn margin_and_probability() -> Check {
    let sigma = noise(SIGMA).covariance();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let pb = tuned(seed);
        let system = assemble(&pb);
        for kappa in [0.5, 1.0, 2.0, 3.0] {
            let m = reduce_margin(&system, pb.t, &sigma, kappa).unwrap();
            let p = reduce_probability(&system, pb.t, &sigma, normal_cdf(-kappa), ProbabilityModel::Gaussian).unwrap();
            let diffs = [
                (&m.q - &p.q).amax(),
                (&m.c - &p.c).amax(),
                (m.d0 - p.d0).abs(),
                (&m.a - &p.a).amax(),
                (&m.b - &p.b).amax(),
            ];
            worst = diffs.iter().fold(worst, |w, d| w.max(*d));
        }
    }

    let pb = tuned(42);
    let system = assemble(&pb);
    let coupling = LinearCoupling::new(&system).unwrap();
    let qp = reduce_margin(&system, pb.t, &sigma, KAPPA).unwrap();
    let x = DVector::from_element(5, 0.5);
    let bound = qp.constraints(&x);
    let m = 100_000;
    let sampler = GaussianSampler::new(&noise(SIGMA)).unwrap();
    let est = mc_estimate(|x, u| Some(coupling.couplings(x, u).map(|y| pb.t - y)), &x, &sampler, m, 2024).unwrap();
    let mut worst_z = 0.0f64;
    for i in 0..bound.len() {
        let mc = est.mean[i] + KAPPA * est.std[i];
        let se = est.std[i] * (1.0 / m as f64 + KAPPA * KAPPA / (2.0 * m as f64)).sqrt();
        worst_z = worst_z.max((mc - bound[i]).abs() / se);
    }
    check(
        worst <= 1e-12 && worst_z <= 3.0,
        format!(
            "probability vs margin max diff {worst:.2e} (tol 1e-12); margin vs M=1e5 MC worst {worst_z:.2} SE (tol 3)"
        ),
    )
}

fn exact_pipeline() -> Check {
    let pb = tuned(42);
    let qp = reduce_margin(&assemble(&pb), pb.t, &noise(SIGMA).covariance(), KAPPA).unwrap();
    let reference = solve_qp(&qp, &IpmSettings::default()).unwrap();
    let run = run_mdf(
        &pb,
        &noise(SIGMA),
        StatisticSpec::margin(KAPPA),
        Estimator::Exact,
        MdaSettings::default(),
        &OptimizerSettings::default(),
    )
    .unwrap();
    let e = percent_errors(&run, &reference).unwrap();
    check(
        e.dx <= 0.1 && e.df <= 0.1,
        format!("dx {:.4}% df {:.4}% dg {:.4}% in {} iterations (tol 0.1%)", e.dx, e.df, e.dg, run.n_optimizer_iters),
    )
}

fn comparative_pattern() -> Check {
    let bundle = ProblemBundle { problem: tuned(42), noise: noise(SIGMA) };
    let scenario = Scenario { statistic: StatisticChoice::Margin { kappa: KAPPA }, sigma: Some(SIGMA) };
    let mut spec =
        BenchmarkSpec::new(vec![EstimatorChoice::MonteCarlo { samples: 200 }, EstimatorChoice::Taylor], 20, scenario);
    spec.base_seed = 1000;
    let report = run_benchmark(&bundle, &spec).unwrap();
    let mc = report.row("mc:200").unwrap();
    let tp = report.row("taylor").unwrap();
    let [tdx, tdf, tdg] = [tp.mean_dx, tp.mean_df, tp.mean_dg].map(|v| v.unwrap_or(f64::INFINITY));
    let [mdx, mdf, mdg] = [mc.mean_dx, mc.mean_df, mc.mean_dg].map(|v| v.unwrap_or(f64::INFINITY));
    let stds = [mc.std_dx, mc.std_df, mc.std_dg];

    let mut failed = Vec::new();
    for (ok, what) in [
        (tdx <= 0.5, "TP dx <= 0.5%"),
        (tdf <= 0.1, "TP df <= 0.1%"),
        (tdg <= 0.5, "TP dg <= 0.5%"),
        (mdx <= 2.0 && mdf <= 2.0 && mdg <= 2.0, "MC means <= 2%"),
        (stds.iter().all(|s| s.is_some_and(|s| s > 0.0)), "MC std nonzero"),
        (tdx < mdx, "TP dx < MC dx"),
        (tdf < mdf, "TP df < MC df"),
        (mc.n_failed == 0 && tp.n_failed == 0, "no failed runs"),
    ] {
        if !ok {
            failed.push(what);
        }
    }
    let std = |s: Option<f64>| s.map_or("-".to_string(), |s| format!("{s:.3}"));
    let mut detail = format!(
        "TP {tdx:.3}/{tdf:.3}/{tdg:.3}, MC {mdx:.3}/{mdf:.3}/{mdg:.3} (std {}/{}/{}) % dx/df/dg",
        std(stds[0]),
        std(stds[1]),
        std(stds[2])
    );
    if !failed.is_empty() {
        detail.push_str(&format!("; violated: {}", failed.join(", ")));
    }
    check(failed.is_empty(), detail)
}

fn monte_carlo_rate() -> Check {
    let pb = tuned(42);
    let system = assemble(&pb);
    let coupling = LinearCoupling::new(&system).unwrap();
    let x = DVector::from_element(5, 0.5);
    let model = noise(SIGMA);
    let exact = exact_stats(&system, pb.t, &model.covariance(), &x).unwrap().objective.mean[0];
    let sampler = GaussianSampler::new(&model).unwrap();
    let objective = |x: &DVector<f64>, u: &DVector<f64>| {
        let y = coupling.couplings(x, u);
        Some(DVector::from_element(1, x[0] * x[0] + y.dot(&y)))
    };
    let reps = 40u64;
    let sizes = [100usize, 1_000, 10_000, 100_000];
    let points: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&m| {
            let mse = (0..reps)
                .map(|r| (mc_estimate(objective, &x, &sampler, m, 50_000 + r).unwrap().mean[0] - exact).powi(2))
                .sum::<f64>()
                / reps as f64;
            ((m as f64).log10(), mse.sqrt().log10())
        })
        .collect();
    let n = points.len() as f64;
    let (mx, my) = (points.iter().map(|p| p.0).sum::<f64>() / n, points.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = points.iter().map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / points.iter().map(|(a, _)| (a - mx).powi(2)).sum::<f64>();
    let rmse: Vec<String> = points.iter().map(|p| format!("{:.2e}", 10f64.powf(p.1))).collect();
    check(
        (slope + 0.5).abs() <= 0.15,
        format!("log-log slope {slope:.3} (target -0.5 +- 0.15), RMS errors {}", rmse.join(" ")),
    )
}

fn mda_correctness() -> Check {
    let tight = MdaSettings { tol: 1e-10, max_iter: 500, warm_start: false, ..MdaSettings::default() };
    let direct = MdaSettings { method: MdaMethod::Direct, ..tight };
    let budget = MdaSettings::default();
    let sampler = GaussianSampler::new(&noise(SIGMA)).unwrap();
    let (mut worst_diff, mut worst_decay, mut max_iters, mut unconverged) = (0.0f64, 0.0f64, 0usize, 0usize);
    for seed in 0..100 {
        let pb = generate(&ProblemConfig::reference(seed)).unwrap();
        let system = assemble(&pb);
        let strength = pb.config.coupling_strength;
        let root_p = (system.coupling_dim() as f64).sqrt();
        let mut rng = prng(31_000 + seed);
        for _ in 0..5 {
            let x = random_point(&mut rng, 5);
            let u = sampler.sample(&mut rng);
            let mut trace = Vec::new();
            let jac = mda::solve_mda_traced(&system, &x, &u, &tight, None, &mut trace).unwrap();
            let exact = solve_mda(&system, &x, &u, &direct, None).unwrap();
            worst_diff = worst_diff.max((&jac.y - &exact.y).amax());
            for (k, r) in trace.iter().enumerate() {
                let bound = root_p * strength.powi(k as i32) * trace[0];
                worst_decay = worst_decay.max(r / bound);
            }
            let run = solve_mda(&system, &x, &u, &budget, None).unwrap();
            max_iters = max_iters.max(run.iterations);
            unconverged += usize::from(!run.converged);
        }
    }
    check(
        worst_diff <= 1e-8 && worst_decay <= 1.0 && unconverged == 0 && max_iters <= 30,
        format!(
            "Jacobi vs direct {worst_diff:.2e} (tol 1e-8); residual / geometric bound max {worst_decay:.3}; at tol 1e-4 max {max_iters} iterations, {unconverged} unconverged"
        ),
    )
}

fn main() -> ExitCode {
    let checks: [Criterion; 8] = [
        ("reduction equivalence", reduction_equivalence),
        ("positive definiteness", positive_definiteness),
        ("feasibility tuning", feasibility_tuning),
        ("margin and probability reductions", margin_and_probability),
        ("exact pipeline agreement", exact_pipeline),
        ("estimator comparison pattern", comparative_pattern),
        ("Monte-Carlo rate", monte_carlo_rate),
        ("MDA correctness", mda_correctness),
    ];
    let mut failures = 0;
    for (i, (name, run)) in checks.iter().enumerate() {
        let start = Instant::now();
        let c = run();
        failures += usize::from(!c.pass);
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        println!("criterion {} {verdict} {name}: {} [{:.1}s]", i + 1, c.detail, start.elapsed().as_secs_f64());
    }
    println!("{} of {} criteria passed", checks.len() - failures, checks.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
