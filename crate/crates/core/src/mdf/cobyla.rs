//! Derivative-free constrained optimisation by linear approximation on the
//! unit box.
//!
//! A simplex of `n + 1` evaluated points defines linear interpolation models
//! of every constraint. The objective model adds a convex curvature term
//! fitted by weighted least squares over all evaluated points, which keeps
//! progress going along curved valleys where a purely linear model stalls.
//! Each iteration minimises the objective model subject to the linearised
//! constraints inside a trust region of radius `delta` intersected with the
//! box, solved by the interior-point method. Iterates are ranked by the merit
//! `f + mu max(0, max_i c_i)`; `mu` only grows. `delta` follows the usual
//! ratio test and never drops below the resolution `rho`, which is halved
//! when steps stop paying off on a well-shaped simplex, down to
//! `final_trust_radius`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::qp::ipm::{self, IpmSettings, IpmStatus};

const MAX_TRUST_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    /// Budget of iterations, each evaluating one point after the initial simplex.
    pub max_iter: usize,
    /// Stop when an improving step moves `x` by less than `x_tol ||x||`.
    pub x_tol: f64,
    /// Stop when an improving step changes `f` by less than `f_tol |f|`.
    pub f_tol: f64,
    /// A point is feasible when every constraint is at most `g_tol`.
    pub g_tol: f64,
    pub initial_trust_radius: f64,
    pub final_trust_radius: f64,
    /// Starting point; the centre of the box when `None`.
    pub x0: Option<DVector<f64>>,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iter: 100,
            x_tol: 1e-8,
            f_tol: 1e-8,
            g_tol: 1e-4,
            initial_trust_radius: 0.25,
            final_trust_radius: 1e-7,
            x0: None,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.x_tol > 0.0 && self.f_tol > 0.0 && self.g_tol > 0.0) {
            return bad("optimizer tolerances must be positive");
        }
        if !(self.final_trust_radius > 0.0 && self.final_trust_radius < self.initial_trust_radius) {
            return bad("trust radii must satisfy 0 < final < initial");
        }
        if self.initial_trust_radius > 0.5 {
            return bad("initial trust radius must not exceed half the box width");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if let Some(x0) = &self.x0 {
            check_len("starting point", dim, x0.len())?;
            if x0.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return bad("starting point must lie in the unit box");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    TrustRadius,
    XTol,
    FTol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerResult {
    pub x: DVector<f64>,
    pub f: f64,
    pub g: DVector<f64>,
    /// Whether `x` satisfies every constraint within `g_tol`.
    pub feasible: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    pub final_trust_radius: f64,
}

#[derive(Debug, Clone)]
struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    violation: f64,
}

impl Point {
    fn merit(&self, mu: f64) -> f64 {
        self.f + mu * self.violation
    }
}

struct Best {
    feasible: Option<Point>,
    least_infeasible: Option<Point>,
}

impl Best {
    fn offer(&mut self, p: &Point, g_tol: f64) {
        if p.violation <= g_tol {
            if self.feasible.as_ref().is_none_or(|b| p.f < b.f) {
                self.feasible = Some(p.clone());
            }
        } else if self.least_infeasible.as_ref().is_none_or(|b| p.violation < b.violation) {
            self.least_infeasible = Some(p.clone());
        }
    }
}

/// Minimises `f` subject to `c(x) <= 0` on the unit box, where
/// `eval(x) = (f(x), c(x))`.
pub fn minimize<E>(mut eval: E, dim: usize, settings: &OptimizerSettings) -> Result<OptimizerResult>
where
    E: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    settings.validate(dim)?;
    if dim == 0 {
        return Err(Error::InvalidArgument("optimisation needs at least one variable".into()));
    }
    let n = dim;
    let mut evaluations = 0usize;
    let mut best = Best { feasible: None, least_infeasible: None };
    let mut n_cons = None;
    let mut history: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut evaluate = |x: DVector<f64>, best: &mut Best, history: &mut Vec<(DVector<f64>, f64)>| -> Result<Point> {
        let (f, g) = eval(&x)?;
        match n_cons {
            None => n_cons = Some(g.len()),
            Some(m) => check_len("constraint vector", m, g.len())?,
        }
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("objective or constraint is not finite".into()));
        }
        evaluations += 1;
        let violation = g.iter().fold(0.0f64, |m, &v| m.max(v));
        let p = Point { x, f, g, violation };
        best.offer(&p, settings.g_tol);
        history.push((p.x.clone(), f));
        Ok(p)
    };

    let mut rho = settings.initial_trust_radius;
    let mut delta = rho;
    let x0 = settings.x0.clone().unwrap_or_else(|| DVector::from_element(n, 0.5));
    let mut simplex: Vec<Point> = Vec::with_capacity(n + 1);
    simplex.push(evaluate(x0.clone(), &mut best, &mut history)?);
    for j in 0..n {
        let mut x = x0.clone();
        x[j] += if x[j] + rho <= 1.0 { rho } else { -rho };
        simplex.push(evaluate(x, &mut best, &mut history)?);
    }

    let mut mu = 0.0f64;
    let mut iterations = 0usize;
    let mut stop = StopReason::MaxIter;
    let mut repair = false;
    let mut hess = DMatrix::zeros(n, n);
    let lp = IpmSettings { tol: 1e-10, max_iter: 200 };

    while iterations < settings.max_iter {
        // Best vertex first.
        let kbest = argmin(simplex.iter().map(|p| p.merit(mu)));
        simplex.swap(0, kbest);

        let Some(geo) = Geometry::new(&simplex) else {
            let j = 1 + argmin(simplex[1..].iter().map(|p| (&p.x - &simplex[0].x).norm()));
            let x = geometry_point(&simplex, None, j, delta, mu);
            simplex[j] = evaluate(x, &mut best, &mut history)?;
            iterations += 1;
            continue;
        };
        if repair {
            repair = false;
            let j = geo.worst_vertex(delta);
            let x = geometry_point(&simplex, Some(&geo), j, delta, mu);
            simplex[j] = evaluate(x, &mut best, &mut history)?;
            iterations += 1;
            continue;
        }

        let base = &simplex[0];
        let grad_f;
        (grad_f, hess) = fit_quadratic(&history, &base.x, base.f, delta, &hess);
        let m = base.g.len();
        let grad_c: Vec<DVector<f64>> = (0..m).map(|i| geo.gradient(simplex.iter().map(|p| p.g[i]))).collect();
        let step = trust_region_step(&base.x, base, &grad_f, &hess, &grad_c, delta, &lp)?;
        let dnorm = step.norm();

        if dnorm < 0.5 * rho {
            if !geo.acceptable(delta) {
                repair = true;
                continue;
            }
            if rho <= settings.final_trust_radius {
                stop = StopReason::TrustRadius;
                break;
            }
            rho = (0.5 * rho).max(settings.final_trust_radius);
            delta = (0.5 * delta).max(rho);
            continue;
        }

        // Predicted reductions of the objective and of the violation.
        let pred_f = -grad_f.dot(&step) - 0.5 * step.dot(&(&hess * &step));
        let lin_violation = (0..m).fold(0.0f64, |acc, i| acc.max(base.g[i] + grad_c[i].dot(&step)));
        let pred_v = base.violation - lin_violation;
        if pred_v > 0.0 && pred_f < 0.0 {
            mu = mu.max(-2.0 * pred_f / pred_v);
        }
        let pred = pred_f + mu * pred_v;

        let old_merit = base.merit(mu);
        let (old_f, old_x) = (base.f, base.x.clone());
        let trial = evaluate(&base.x + &step, &mut best, &mut history)?;
        iterations += 1;
        let ratio = if pred > 0.0 { (old_merit - trial.merit(mu)) / pred } else { -1.0 };
        let improved = trial.merit(mu) < old_merit;
        let tol_stop = if !improved {
            None
        } else if (trial.f - old_f).abs() <= settings.f_tol * old_f.abs() {
            Some(StopReason::FTol)
        } else if (&trial.x - &old_x).norm() <= settings.x_tol * old_x.norm() {
            Some(StopReason::XTol)
        } else {
            None
        };
        replace_vertex(&mut simplex, &geo, trial, improved, delta);
        if let Some(reason) = tol_stop {
            stop = reason;
            break;
        }

        let was_at_rho = delta <= rho;
        delta = if ratio <= 0.1 {
            0.5 * dnorm
        } else if ratio <= 0.7 {
            (0.5 * delta).max(dnorm)
        } else {
            (0.5 * delta).max(2.0 * dnorm)
        }
        .min(MAX_TRUST_RADIUS);
        if delta <= 1.5 * rho {
            delta = rho;
        }
        if ratio <= 0.1 {
            if !Geometry::new(&simplex).is_some_and(|g| g.acceptable(delta)) {
                repair = true;
            } else if was_at_rho {
                if rho <= settings.final_trust_radius {
                    stop = StopReason::TrustRadius;
                    break;
                }
                rho = (0.5 * rho).max(settings.final_trust_radius);
                delta = rho;
            }
        }
    }

    let chosen = match (best.feasible, best.least_infeasible) {
        (Some(p), _) => (p, true),
        (None, Some(p)) => (p, false),
        (None, None) => unreachable!("at least one point is evaluated"),
    };
    Ok(OptimizerResult {
        x: chosen.0.x,
        f: chosen.0.f,
        g: chosen.0.g,
        feasible: chosen.1,
        iterations,
        evaluations,
        stop,
        final_trust_radius: rho,
    })
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Edge matrix `D` (rows `x_j - x_0`) of the simplex and its inverse.
struct Geometry {
    /// Column `j - 1` is orthogonal to every edge but the `j`-th.
    inv: DMatrix<f64>,
    edges: DMatrix<f64>,
}

impl Geometry {
    fn new(simplex: &[Point]) -> Option<Self> {
        let n = simplex.len() - 1;
        let edges = DMatrix::from_fn(n, n, |j, k| simplex[j + 1].x[k] - simplex[0].x[k]);
        let inv = edges.clone().try_inverse()?;
        if !inv.iter().all(|v| v.is_finite()) {
            return None;
        }
        Some(Self { inv, edges })
    }

    fn edge_length(&self, j: usize) -> f64 {
        self.edges.row(j - 1).norm()
    }

    /// Distance from vertex `j` to the opposite face through `x_0`.
    fn height(&self, j: usize) -> f64 {
        1.0 / self.inv.column(j - 1).norm()
    }

    fn acceptable(&self, rho: f64) -> bool {
        let n = self.edges.nrows();
        (1..=n).all(|j| self.edge_length(j) <= 2.1 * rho && self.height(j) >= 0.25 * rho)
    }

    /// The farthest vertex beyond `2.1 rho`, else the flattest one.
    fn worst_vertex(&self, rho: f64) -> usize {
        let n = self.edges.nrows();
        let far = 1 + argmin((1..=n).map(|j| -self.edge_length(j)));
        if self.edge_length(far) > 2.1 * rho {
            return far;
        }
        1 + argmin((1..=n).map(|j| self.height(j)))
    }

    /// Gradient of the linear interpolant of `values` (vertex order).
    fn gradient(&self, values: impl Iterator<Item = f64>) -> DVector<f64> {
        let v: Vec<f64> = values.collect();
        let diffs = DVector::from_fn(v.len() - 1, |j, _| v[j + 1] - v[0]);
        &self.inv * diffs
    }
}

/// A replacement for vertex `j` at distance about `rho` from `x_0` that
/// restores the simplex volume, kept inside the box.
fn geometry_point(simplex: &[Point], geo: Option<&Geometry>, j: usize, rho: f64, mu: f64) -> DVector<f64> {
    let x0 = &simplex[0].x;
    let n = x0.len();
    let dir = match geo {
        Some(g) => {
            let w = g.inv.column(j - 1).into_owned();
            w / g.inv.column(j - 1).norm()
        }
        None => {
            // Degenerate simplex: use the coordinate axis least covered by
            // the other edges.
            let mut coverage = DVector::zeros(n);
            for (k, p) in simplex.iter().enumerate().skip(1) {
                if k != j {
                    coverage += (&p.x - x0).map(f64::abs);
                }
            }
            let axis = argmin(coverage.iter().copied());
            let mut e = DVector::zeros(n);
            e[axis] = 1.0;
            e
        }
    };
    let candidates = [1.0, -1.0].map(|s| (x0 + &dir * (s * rho)).map(|v| v.clamp(0.0, 1.0)));
    let volume = |y: &DVector<f64>| {
        let d = y - x0;
        match geo {
            Some(g) => g.inv.column(j - 1).dot(&d).abs(),
            None => d.dot(&dir).abs(),
        }
    };
    let (v0, v1) = (volume(&candidates[0]), volume(&candidates[1]));
    // Prefer the side the merit models favour when both keep the volume.
    if let Some(g) = geo.filter(|_| (v0 - v1).abs() <= 1e-12 * v0.max(v1)) {
        let grad = g.gradient(simplex.iter().map(|p| p.merit(mu)));
        let [a, b] = candidates;
        return if grad.dot(&(&a - x0)) <= grad.dot(&(&b - x0)) { a } else { b };
    }
    let [a, b] = candidates;
    if v0 >= v1 {
        a
    } else {
        b
    }
}

/// Inserts `trial` into the simplex, dropping the vertex whose replacement
/// keeps the largest volume, weighted towards far vertices. A non-improving
/// trial only enters when it enlarges the simplex or replaces a far vertex.
fn replace_vertex(simplex: &mut [Point], geo: &Geometry, trial: Point, improved: bool, rho: f64) {
    let d = &trial.x - &simplex[0].x;
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in simplex.iter().enumerate().skip(1) {
        let ratio = geo.inv.column(j - 1).dot(&d).abs();
        let dist = (&v.x - &trial.x).norm().max(geo.edge_length(j));
        let score = ratio * ((dist / rho) * (dist / rho)).max(1.0);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((j, score));
        }
    }
    let Some((j, score)) = best else { return };
    if improved || score > 1.0 {
        if improved && geo.inv.column(j - 1).dot(&d).abs() < 1e-12 {
            // Replacing j would collapse the simplex; replace the base instead.
            simplex[0] = trial;
            return;
        }
        simplex[j] = trial;
    }
}

/// Step within `||d||_inf <= rho` and the box: minimise the objective model
/// subject to the linearised constraints, or, when they cannot all be met,
/// minimise the largest linearised violation.
fn trust_region_step(
    x: &DVector<f64>,
    base: &Point,
    grad_f: &DVector<f64>,
    hess: &DMatrix<f64>,
    grad_c: &[DVector<f64>],
    rho: f64,
    lp: &IpmSettings,
) -> Result<DVector<f64>> {
    let n = x.len();
    // Work in the scaled step s = d / rho in [-1, 1]^n.
    let lo = DVector::from_fn(n, |i, _| (-x[i] / rho).max(-1.0));
    let hi = DVector::from_fn(n, |i, _| ((1.0 - x[i]) / rho).min(1.0));
    let m = grad_c.len();

    let mut target = 0.0;
    if base.violation > 0.0 {
        // min v  s.t.  c_i + rho grad_i's <= v,  v >= 0,  lo <= s <= hi
        let mut g = DMatrix::zeros(m + 1 + 2 * n, n + 1);
        let mut h = DVector::zeros(m + 1 + 2 * n);
        for i in 0..m {
            let scale = row_scale(&grad_c[i], rho);
            for k in 0..n {
                g[(i, k)] = rho * grad_c[i][k] / scale;
            }
            g[(i, n)] = -1.0 / scale;
            h[i] = -base.g[i] / scale;
        }
        g[(m, n)] = -1.0;
        box_rows(&mut g, &mut h, m + 1, &lo, &hi);
        let mut cost = DVector::zeros(n + 1);
        cost[n] = 1.0;
        let out = ipm::solve(&DMatrix::zeros(n + 1, n + 1), &cost, &g, &h, None, lp)?;
        let s1 = out.x.rows(0, n).into_owned();
        let v = out.x[n];
        let reach = (0..m).fold(0.0f64, |acc, i| acc.max(base.g[i] + rho * grad_c[i].dot(&s1)));
        if out.status != IpmStatus::Optimal || reach > 1e-12 * (1.0 + base.violation) {
            return Ok(clamp_step(s1, &lo, &hi) * rho);
        }
        target = v.max(0.0);
    }

    // min grad_f's + s'(H + tau I)s / 2  s.t.  c_i + rho grad_i's <= target,
    // lo <= s <= hi, with the smallest tau keeping ||s||_2 <= 1. At tau = 1
    // the step is no longer than the projected steepest-descent step.
    let mut g = DMatrix::zeros(m + 2 * n, n);
    let mut h = DVector::zeros(m + 2 * n);
    for i in 0..m {
        let scale = row_scale(&grad_c[i], rho);
        for k in 0..n {
            g[(i, k)] = rho * grad_c[i][k] / scale;
        }
        h[i] = (target - base.g[i]) / scale;
    }
    box_rows(&mut g, &mut h, m, &lo, &hi);
    let gnorm = grad_f.norm();
    if gnorm == 0.0 {
        return Ok(DVector::zeros(n));
    }
    let cost = grad_f / gnorm;
    let curvature = hess * (rho / gnorm);
    let solve = |tau: f64| -> Result<DVector<f64>> {
        let q = &curvature + DMatrix::from_diagonal_element(n, n, tau);
        let out = ipm::solve(&q, &cost, &g, &h, None, lp)?;
        Ok(clamp_step(out.x, &lo, &hi))
    };
    let s = solve(0.0)?;
    if s.norm() <= 1.0 {
        return Ok(s * rho);
    }
    let (mut tau_lo, mut tau_hi) = (0.0, 1.0);
    let mut best = solve(tau_hi)?;
    for _ in 0..8 {
        let len = best.norm();
        if len >= 0.9 {
            break;
        }
        let tau = 0.5 * (tau_lo + tau_hi);
        let s = solve(tau)?;
        if s.norm() <= 1.0 {
            tau_hi = tau;
            best = s;
        } else {
            tau_lo = tau;
        }
    }
    Ok(best * rho)
}

/// Weighted least-squares quadratic model of the objective around `x`,
/// anchored at `f(x)`. Curvature is pulled towards `prior`, so with few
/// points the fit is the least change from the previous model.
fn fit_quadratic(
    history: &[(DVector<f64>, f64)],
    x: &DVector<f64>,
    fx: f64,
    delta: f64,
    prior: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len();
    let nq = n * (n + 1) / 2;
    let np = n + nq;
    let mut near: Vec<(f64, &DVector<f64>, f64)> =
        history.iter().map(|(y, f)| ((y - x).norm(), y, *f)).filter(|(d, _, _)| *d > 0.0).collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    near.truncate(3 * np);

    // Scaled unknowns: delta * grad and delta^2 * hess.
    let mut a = DMatrix::zeros(near.len() + nq, np);
    let mut b = DVector::zeros(near.len() + nq);
    for (r, (dist, y, f)) in near.iter().enumerate() {
        let w = libm::sqrt(1.0 / (1.0 + dist / delta));
        let d = (*y - x) / delta;
        for k in 0..n {
            a[(r, k)] = w * d[k];
        }
        let mut c = n;
        for k in 0..n {
            for l in k..n {
                a[(r, c)] = w * if k == l { 0.5 * d[k] * d[k] } else { d[k] * d[l] };
                c += 1;
            }
        }
        b[r] = w * (f - fx);
    }
    let mut c = n;
    let row0 = near.len();
    let scale = 1e-3;
    for k in 0..n {
        for l in k..n {
            a[(row0 + c - n, c)] = scale;
            b[row0 + c - n] = scale * prior[(k, l)] * delta * delta;
            c += 1;
        }
    }
    let theta = match a.svd(true, true).solve(&b, 1e-12) {
        Ok(t) => t,
        Err(_) => return (DVector::zeros(n), prior.clone()),
    };
    let grad = DVector::from_fn(n, |k, _| theta[k] / delta);
    let mut hess = DMatrix::zeros(n, n);
    let mut c = n;
    for k in 0..n {
        for l in k..n {
            let v = theta[c] / (delta * delta);
            hess[(k, l)] = v;
            hess[(l, k)] = v;
            c += 1;
        }
    }
    // Keep the model convex so the step problem stays a convex QP.
    let eig = hess.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let hess = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (grad, hess)
}

fn row_scale(grad: &DVector<f64>, rho: f64) -> f64 {
    (rho * grad.amax()).clamp(1e-12, 1e12)
}

fn box_rows(g: &mut DMatrix<f64>, h: &mut DVector<f64>, at: usize, lo: &DVector<f64>, hi: &DVector<f64>) {
    let n = lo.len();
    for k in 0..n {
        g[(at + k, k)] = -1.0;
        h[at + k] = -lo[k];
        g[(at + n + k, k)] = 1.0;
        h[at + n + k] = hi[k];
    }
}

fn clamp_step(s: DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    s.zip_zip_map(lo, hi, |v, l, u| v.clamp(l, u))
}
