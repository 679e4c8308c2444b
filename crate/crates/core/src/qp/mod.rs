//! Quadratic reductions of the deterministic and robust problems, and the
//! interior-point reference solver.
//!
//! With `y = alpha + beta x + P u`, the objective `x0'x0 + y'y` and the
//! constraints `t - y <= 0` are quadratic and affine in `x`:
//!
//! ```text
//!     f(x) = 1/2 x'Qx + c'x + d0,   Q = 2 (Q_x0 + beta'beta),  c = 2 beta'alpha,  d0 = alpha'alpha
//!     g(x) = A x - b,               A = -beta,                 b = alpha - t 1
//! ```
//!
//! Under centred noise of covariance `Sigma` the objective expectation gains
//! `trace(P'P Sigma)`, and the margin and probability constraints shift `b` by
//! a multiple of `sqrt(diag(P Sigma P'))` or by a quantile of `P U`.

pub mod ipm;

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::mda::LinearCoupling;
use crate::problem::BlockSystem;
use crate::stats::{normal_quantile, quantile_sorted};

pub use ipm::IpmSettings;

/// `min 1/2 x'Qx + c'x + d0  s.t.  A x <= b,  lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d0: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpData {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.d0
    }

    /// `A x - b`.
    pub fn constraints(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x - &self.b
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        check_len("QP matrix rows", n, self.q.nrows())?;
        check_len("QP matrix columns", n, self.q.ncols())?;
        check_len("constraint matrix columns", n, self.a.ncols())?;
        check_len("constraint bounds", self.a.nrows(), self.b.len())?;
        check_len("lower bounds", n, self.lower.len())?;
        check_len("upper bounds", n, self.upper.len())?;
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidArgument("lower bound exceeds upper bound".into()));
        }
        Ok(())
    }
}

/// Distribution used for the probability reduction.
#[derive(Debug, Clone, Copy)]
pub enum ProbabilityModel<'a> {
    /// Gaussian noise with the given covariance.
    Gaussian,
    /// Empirical quantiles of `P U` over a sample of noise vectors.
    Empirical(&'a [DVector<f64>]),
}

fn deterministic_from(coupling: &LinearCoupling, q_x0: &DMatrix<f64>, t: f64) -> QpData {
    let beta = &coupling.beta;
    let alpha = &coupling.alpha;
    let d = beta.ncols();
    let mut q = (q_x0 + beta.transpose() * beta) * 2.0;
    q = (&q + q.transpose()) * 0.5;
    QpData {
        q,
        c: beta.transpose() * alpha * 2.0,
        d0: alpha.dot(alpha),
        a: -beta,
        b: alpha.map(|v| v - t),
        lower: DVector::zeros(d),
        upper: DVector::from_element(d, 1.0),
    }
}

/// QP of the deterministic problem with threshold `t`, on the unit box.
pub fn reduce_deterministic(system: &BlockSystem, t: f64) -> Result<QpData> {
    let coupling = LinearCoupling::new(system)?;
    Ok(deterministic_from(&coupling, &system.q_x0, t))
}

/// Componentwise standard deviation `sqrt(diag(P Sigma P'))` of `P U`.
pub fn noise_std(p: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_len("covariance", p.ncols(), sigma.nrows())?;
    let ps = p * sigma;
    let mut out = DVector::zeros(p.nrows());
    for i in 0..p.nrows() {
        let var = ps.row(i).dot(&p.row(i));
        if var < -1e-12 {
            return Err(Error::Numerical(format!("negative variance {var:e} on component {i}")));
        }
        out[i] = libm::sqrt(var.max(0.0));
    }
    Ok(out)
}

/// `trace(P'P Sigma) = E[U'P'PU]`.
pub fn noise_energy(p: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
    (p.transpose() * p).component_mul(&sigma.transpose()).sum()
}

/// QP for the expected objective and the margin constraints
/// `E[g] + kappa std[g] <= 0`.
pub fn reduce_margin(system: &BlockSystem, t: f64, sigma: &DMatrix<f64>, kappa: f64) -> Result<QpData> {
    if !kappa.is_finite() {
        return Err(Error::InvalidArgument(format!("margin factor must be finite, got {kappa}")));
    }
    check_square(sigma, system.coupling_dim())?;
    let coupling = LinearCoupling::new(system)?;
    let mut qp = deterministic_from(&coupling, &system.q_x0, t);
    let std = noise_std(&coupling.p, sigma)?;
    qp.b -= std * kappa;
    qp.d0 += noise_energy(&coupling.p, sigma);
    Ok(qp)
}

/// QP for the expected objective and the componentwise chance constraints
/// `Prob[g_i(x, U) >= 0] <= epsilon`, i.e. `A x <= b + q_eps` with `q_eps`
/// the `epsilon`-quantile of `P U`.
pub fn reduce_probability(
    system: &BlockSystem,
    t: f64,
    sigma: &DMatrix<f64>,
    epsilon: f64,
    model: ProbabilityModel<'_>,
) -> Result<QpData> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!("probability level must lie in (0, 1), got {epsilon}")));
    }
    let p_dim = system.coupling_dim();
    check_square(sigma, p_dim)?;
    let coupling = LinearCoupling::new(system)?;
    let mut qp = deterministic_from(&coupling, &system.q_x0, t);
    let q_eps = match model {
        ProbabilityModel::Gaussian => noise_std(&coupling.p, sigma)? * normal_quantile(epsilon)?,
        ProbabilityModel::Empirical(sample) => {
            if sample.is_empty() {
                return Err(Error::InvalidArgument("empirical noise sample is empty".into()));
            }
            let mut columns: Vec<Vec<f64>> = (0..p_dim).map(|_| Vec::with_capacity(sample.len())).collect();
            for u in sample {
                check_len("noise sample", p_dim, u.len())?;
                let pu = &coupling.p * u;
                for (col, v) in columns.iter_mut().zip(pu.iter()) {
                    col.push(*v);
                }
            }
            let mut q = DVector::zeros(p_dim);
            for (i, col) in columns.iter_mut().enumerate() {
                col.sort_by(f64::total_cmp);
                q[i] = quantile_sorted(col, epsilon)?;
            }
            q
        }
    };
    qp.b += q_eps;
    qp.d0 += noise_energy(&coupling.p, sigma);
    Ok(qp)
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    check_len("covariance rows", n, m.nrows())?;
    check_len("covariance columns", n, m.ncols())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x_star: DVector<f64>,
    /// Objective including the constant `d0`.
    pub f_star: f64,
    /// `A x_star - b`.
    pub g_star: DVector<f64>,
    pub kkt_residual: f64,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Solves `qp` from the centre of its box.
pub fn solve_qp(qp: &QpData, settings: &IpmSettings) -> Result<QpSolution> {
    let x0 = (&qp.lower + &qp.upper) * 0.5;
    solve_qp_from(qp, &x0, settings)
}

/// Solves `qp` with the primal iterate started at `x0`.
///
/// The box is folded into the inequality system. Fails with
/// [`Error::NotConvex`] when `Q` has an eigenvalue below `-1e-10` relative to
/// its scale.
pub fn solve_qp_from(qp: &QpData, x0: &DVector<f64>, settings: &IpmSettings) -> Result<QpSolution> {
    qp.validate()?;
    check_len("starting point", qp.dim(), x0.len())?;
    let (_, lambda_min) = check_positive_definite(qp);
    let scale = qp.q.amax().max(1.0);
    if lambda_min < -1e-10 * scale {
        return Err(Error::NotConvex { lambda_min });
    }

    let n = qp.dim();
    let m = qp.a.nrows();
    let mut g = DMatrix::zeros(m + 2 * n, n);
    let mut h = DVector::zeros(m + 2 * n);
    g.rows_mut(0, m).copy_from(&qp.a);
    h.rows_mut(0, m).copy_from(&qp.b);
    for i in 0..n {
        g[(m + i, i)] = -1.0;
        h[m + i] = -qp.lower[i];
        g[(m + n + i, i)] = 1.0;
        h[m + n + i] = qp.upper[i];
    }
    let out = ipm::solve(&qp.q, &qp.c, &g, &h, Some(x0), settings)?;
    let status = match out.status {
        ipm::IpmStatus::Optimal => QpStatus::Optimal,
        ipm::IpmStatus::Infeasible => QpStatus::Infeasible,
        ipm::IpmStatus::MaxIter => QpStatus::MaxIter,
    };
    Ok(QpSolution {
        f_star: qp.objective(&out.x),
        g_star: qp.constraints(&out.x),
        x_star: out.x,
        kkt_residual: out.kkt_residual,
        status,
        iterations: out.iterations,
    })
}

/// Smallest eigenvalue of `Q` and whether it exceeds `1e-12 trace(Q) / d`.
pub fn check_positive_definite(qp: &QpData) -> (bool, f64) {
    let n = qp.q.nrows();
    if n == 0 {
        return (false, 0.0);
    }
    let sym = (&qp.q + qp.q.transpose()) * 0.5;
    let lambda_min = SymmetricEigen::new(sym).eigenvalues.min();
    let threshold = 1e-12 * qp.q.trace() / n as f64;
    (lambda_min > threshold, lambda_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mda::{solve_mda, MdaMethod, MdaSettings};
    use crate::problem::{assemble, generate, ProblemConfig};
    use crate::rng::{prng, standard_normal, uniform};
    use crate::stats::normal_cdf;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn one_dim(q: f64, c: f64, a: Option<(f64, f64)>) -> QpData {
        let (a, b) = match a {
            Some((a, b)) => (DMatrix::from_element(1, 1, a), DVector::from_element(1, b)),
            None => (DMatrix::zeros(0, 1), DVector::zeros(0)),
        };
        QpData {
            q: DMatrix::from_element(1, 1, q),
            c: DVector::from_element(1, c),
            d0: 0.0,
            a,
            b,
            lower: DVector::zeros(1),
            upper: DVector::from_element(1, 1.0),
        }
    }

    fn tuned_system(seed: u64) -> (BlockSystem, f64) {
        let mut pb = generate(&ProblemConfig::reference(seed)).unwrap();
        let t = pb.tune_feasibility(10_000, seed.wrapping_add(1)).unwrap();
        (assemble(&pb), t)
    }

    fn decoupled() -> BlockSystem {
        let mut pb = generate(&ProblemConfig::reference(7)).unwrap();
        for b in &mut pb.c_blocks {
            b.matrix.fill(0.0);
        }
        for m in pb.d_shared.iter_mut().chain(pb.d_local.iter_mut()) {
            m.fill(0.0);
        }
        assemble(&pb)
    }

    /// Minimises the QP over its box by projected gradient on an augmented
    /// Lagrangian of the linear constraints.
    fn augmented_lagrangian_oracle(qp: &QpData) -> DVector<f64> {
        let n = qp.dim();
        let lipschitz = SymmetricEigen::new(qp.q.clone()).eigenvalues.max();
        let rho = 10.0 * lipschitz.max(1.0);
        let a_norm2 = SymmetricEigen::new(qp.a.transpose() * &qp.a).eigenvalues.max().max(0.0);
        let step = 1.0 / (lipschitz + rho * a_norm2);
        let mut x = DVector::from_element(n, 0.5);
        let mut lam = DVector::zeros(qp.b.len());
        for _ in 0..200 {
            for _ in 0..5_000 {
                let viol = (qp.constraints(&x) * rho + &lam).map(|v| v.max(0.0));
                let grad = &qp.q * &x + &qp.c + qp.a.transpose() * viol;
                let next = (&x - grad * step).zip_zip_map(&qp.lower, &qp.upper, |v, l, u| v.clamp(l, u));
                let moved = (&next - &x).amax();
                x = next;
                if moved < 1e-15 {
                    break;
                }
            }
            lam = (qp.constraints(&x) * rho + &lam).map(|v| v.max(0.0));
        }
        x
    }

    #[test]
    fn one_dimensional_minimum() {
        let mut qp = one_dim(2.0, -1.0, None);
        qp.d0 = 3.0;
        let sol = solve_qp(&qp, &IpmSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x_star[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(sol.f_star, 2.75, epsilon = 1e-8);
    }

    #[test]
    fn one_dimensional_active_constraint() {
        let qp = one_dim(2.0, 0.0, Some((-1.0, -0.5)));
        let sol = solve_qp(&qp, &IpmSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.x_star[0], 0.5, epsilon = 1e-8);
    }

    #[test]
    fn non_convex_rejected() {
        let qp = one_dim(-1.0, 0.0, None);
        assert!(matches!(solve_qp(&qp, &IpmSettings::default()), Err(Error::NotConvex { .. })));
    }

    #[test]
    fn positive_definite_check() {
        let mut qp = one_dim(2.0, 0.0, None);
        qp.q = DMatrix::identity(3, 3) * 2.0;
        let (pd, lmin) = check_positive_definite(&qp);
        assert!(pd);
        assert_relative_eq!(lmin, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn decoupled_reduction() {
        let s = decoupled();
        let qp = reduce_deterministic(&s, 0.2).unwrap();
        assert_eq!(qp.q, &s.q_x0 * 2.0);
        assert_eq!(qp.c, DVector::zeros(5));
        assert_relative_eq!(qp.d0, s.a.dot(&s.a), epsilon = 1e-15);
        assert!(qp.a.iter().all(|&v| v == 0.0));
        assert_eq!(qp.b, s.a.map(|v| v - 0.2));
    }

    #[test]
    fn reference_solution_matches_oracle() {
        let (s, t) = tuned_system(42);
        let qp = reduce_deterministic(&s, t).unwrap();
        let sol = solve_qp(&qp, &IpmSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.kkt_residual <= 1e-8);
        assert!(sol.g_star.iter().all(|&g| g <= 1e-8));
        let x_oracle = augmented_lagrangian_oracle(&qp);
        assert!((qp.objective(&x_oracle) - sol.f_star).abs() <= 1e-6 * sol.f_star.abs().max(1.0));
    }

    #[test]
    fn margin_reduction_shapes() {
        let (s, t) = tuned_system(3);
        let det = reduce_deterministic(&s, t).unwrap();
        let zero = reduce_margin(&s, t, &DMatrix::zeros(6, 6), 2.0).unwrap();
        assert_eq!(det, zero);

        let dec = decoupled();
        let sigma = DMatrix::identity(6, 6) * 1e-4;
        let qp = reduce_margin(&dec, 0.1, &sigma, 2.0).unwrap();
        let base = reduce_deterministic(&dec, 0.1).unwrap();
        assert_relative_eq!(qp.b, base.b.add_scalar(-0.02), epsilon = 1e-15);
        assert_relative_eq!(qp.d0, base.d0 + 6e-4, epsilon = 1e-15);
    }

    #[test]
    fn probability_reduction_special_levels() {
        let dec = decoupled();
        let sigma = DMatrix::identity(6, 6) * 1e-4;
        let base = reduce_deterministic(&dec, 0.1).unwrap();
        let half = reduce_probability(&dec, 0.1, &sigma, 0.5, ProbabilityModel::Gaussian).unwrap();
        assert_relative_eq!(half.b, base.b, epsilon = 1e-15);
        let two_sigma =
            reduce_probability(&dec, 0.1, &sigma, 0.022_750_131_948_179_2, ProbabilityModel::Gaussian).unwrap();
        assert_relative_eq!(two_sigma.b, base.b.add_scalar(-0.02), epsilon = 1e-12);
        assert!(reduce_probability(&dec, 0.1, &sigma, 1.0, ProbabilityModel::Gaussian).is_err());
        assert!(reduce_probability(&dec, 0.1, &sigma, 0.0, ProbabilityModel::Gaussian).is_err());
    }

    #[test]
    fn empirical_quantile_matches_gaussian() {
        let (s, t) = tuned_system(11);
        let sigma_v = 0.01;
        let sigma = DMatrix::identity(6, 6) * (sigma_v * sigma_v);
        let mut rng = prng(5);
        let sample: Vec<DVector<f64>> =
            (0..100_000).map(|_| DVector::from_fn(6, |_, _| sigma_v * standard_normal(&mut rng))).collect();
        let base = reduce_deterministic(&s, t).unwrap();
        let gauss = reduce_probability(&s, t, &sigma, 0.1, ProbabilityModel::Gaussian).unwrap();
        let emp = reduce_probability(&s, t, &sigma, 0.1, ProbabilityModel::Empirical(&sample)).unwrap();
        for i in 0..6 {
            let qg = gauss.b[i] - base.b[i];
            let qe = emp.b[i] - base.b[i];
            assert!((qe - qg).abs() <= 0.02 * qg.abs(), "component {i}: {qe} vs {qg}");
        }
    }

    #[test]
    fn large_margin_is_infeasible() {
        let (s, t) = tuned_system(42);
        let sigma = DMatrix::identity(6, 6) * 1e-4;
        let qp = reduce_margin(&s, t, &sigma, 1e4).unwrap();
        // A = C^-1 D is entrywise non-negative, so A x <= b has a solution
        // in the box iff b >= 0.
        assert!(qp.a.iter().all(|&v| v >= -1e-15));
        assert!(qp.b.iter().any(|&v| v < 0.0));
        let sol = solve_qp(&qp, &IpmSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn reduction_matches_mda_at_random_points() {
        let (s, t) = tuned_system(17);
        let qp = reduce_deterministic(&s, t).unwrap();
        let settings = MdaSettings { method: MdaMethod::Direct, ..MdaSettings::default() };
        let mut rng = prng(2);
        let u = DVector::zeros(6);
        for _ in 0..20 {
            let x = DVector::from_fn(5, |_, _| uniform(&mut rng));
            let y = solve_mda(&s, &x, &u, &settings, None).unwrap().y;
            let f = x[0] * x[0] + y.dot(&y);
            assert!((qp.objective(&x) - f).abs() <= 1e-10 * f.abs());
            let g = qp.constraints(&x);
            for j in 0..6 {
                let expected = t - y[j];
                assert!((g[j] - expected).abs() <= 1e-10 * (t.abs() + y[j].abs()));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn probability_consistent_with_margin(seed in 0u64..1_000, kappa in 0.0f64..4.0, sigma in 1e-3f64..0.1) {
            let s = assemble(&generate(&ProblemConfig::reference(seed)).unwrap());
            let cov = DMatrix::identity(6, 6) * (sigma * sigma);
            let m = reduce_margin(&s, 0.0, &cov, kappa).unwrap();
            let p = reduce_probability(&s, 0.0, &cov, normal_cdf(-kappa), ProbabilityModel::Gaussian).unwrap();
            for i in 0..6 {
                prop_assert!((m.b[i] - p.b[i]).abs() <= 1e-12 * m.b[i].abs().max(1.0));
            }
        }

        #[test]
        fn margin_is_monotone(seed in 0u64..1_000, k1 in 0.0f64..3.0, dk in 0.01f64..3.0) {
            let mut pb = generate(&ProblemConfig::reference(seed)).unwrap();
            pb.tune_feasibility(2_000, seed).unwrap();
            let s = assemble(&pb);
            let cov = DMatrix::identity(6, 6) * 1e-4;
            let qp1 = reduce_margin(&s, pb.t, &cov, k1).unwrap();
            let qp2 = reduce_margin(&s, pb.t, &cov, k1 + dk).unwrap();
            // Nested feasible sets: identical A, smaller b.
            prop_assert!(qp2.b.iter().zip(qp1.b.iter()).all(|(b2, b1)| b2 <= b1));
            let s1 = solve_qp(&qp1, &IpmSettings::default()).unwrap();
            let s2 = solve_qp(&qp2, &IpmSettings::default()).unwrap();
            if s2.status == QpStatus::Optimal {
                prop_assert_eq!(s1.status, QpStatus::Optimal);
                prop_assert!(s2.f_star >= s1.f_star - 1e-8);
            }
        }

        #[test]
        fn solutions_are_kkt_points_and_unique(seed in 0u64..1_000, start in prop::collection::vec(0.05f64..0.95, 5)) {
            let (s, t) = tuned_system(seed);
            let qp = reduce_margin(&s, t, &(DMatrix::identity(6, 6) * 1e-4), 2.0).unwrap();
            let settings = IpmSettings::default();
            let a = solve_qp(&qp, &settings).unwrap();
            prop_assume!(a.status == QpStatus::Optimal);
            prop_assert!(a.kkt_residual <= settings.tol);
            prop_assert!(a.g_star.iter().all(|&g| g <= settings.tol));
            prop_assert!(a.x_star.iter().all(|&v| (-settings.tol..=1.0 + settings.tol).contains(&v)));
            let b = solve_qp_from(&qp, &DVector::from_vec(start), &settings).unwrap();
            prop_assert_eq!(b.status, QpStatus::Optimal);
            prop_assert!((&a.x_star - &b.x_star).amax() <= 10.0 * settings.tol, "{} {} {}", (&a.x_star - &b.x_star).amax(), a.kkt_residual, b.kkt_residual);
        }
    }
}
