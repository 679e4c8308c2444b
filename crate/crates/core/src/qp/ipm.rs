//! Mehrotra predictor-corrector primal-dual interior-point method for
//!
//! ```text
//!     min  1/2 x'Qx + c'x   s.t.  G x <= h
//! ```
//!
//! with `Q` positive semi-definite. Also used with `Q = 0` for linear
//! programs whose feasible set is bounded.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmSettings {
    /// Tolerance on the scaled KKT residual (primal, dual and complementarity).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct IpmOutcome {
    pub x: DVector<f64>,
    /// Multipliers of `G x <= h`.
    pub z: DVector<f64>,
    /// Slacks `h - G x` as tracked by the method.
    pub s: DVector<f64>,
    pub status: IpmStatus,
    /// Scaled KKT residual of the returned iterate.
    pub kkt_residual: f64,
    pub iterations: usize,
}

struct Residuals {
    dual: DVector<f64>,
    primal: DVector<f64>,
    mu: f64,
    kkt: f64,
}

/// Solves the inequality-constrained QP. `x0` seeds the primal iterate; the
/// slacks and multipliers are initialised to keep the start interior.
pub fn solve(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    x0: Option<&DVector<f64>>,
    settings: &IpmSettings,
) -> Result<IpmOutcome> {
    let n = c.len();
    let m = h.len();
    if q.shape() != (n, n) || g.shape() != (m, n) {
        return Err(Error::DimensionMismatch { what: "inequality system", expected: n, found: g.ncols() });
    }
    let scale_c = 1.0 + c.amax();
    let scale_h = 1.0 + h.amax();

    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut s = (h - g * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(m, 1.0);

    let residuals = |x: &DVector<f64>, s: &DVector<f64>, z: &DVector<f64>| {
        let dual = q * x + c + g.transpose() * z;
        let primal = g * x + s - h;
        let mu = if m == 0 { 0.0 } else { s.dot(z) / m as f64 };
        let kkt = (dual.amax() / scale_c).max(primal.amax() / scale_h).max(mu);
        Residuals { dual, primal, mu, kkt }
    };

    let mut best = (f64::INFINITY, x.clone(), z.clone(), s.clone());
    for iter in 0..settings.max_iter {
        let r = residuals(&x, &s, &z);
        if r.kkt < best.0 {
            best = (r.kkt, x.clone(), z.clone(), s.clone());
        }
        if r.kkt <= settings.tol {
            let mut out = IpmOutcome { x, z, s, status: IpmStatus::Optimal, kkt_residual: r.kkt, iterations: iter };
            if let Some((x, z, s)) = polish(q, c, g, h, &out) {
                let kkt = residuals(&x, &s, &z).kkt;
                if kkt <= out.kkt_residual {
                    out = IpmOutcome { x, z, s, kkt_residual: kkt, ..out };
                }
            }
            return Ok(out);
        }
        if infeasibility_certificate(g, h, &z, settings.tol) {
            return Ok(IpmOutcome { x, z, s, status: IpmStatus::Infeasible, kkt_residual: r.kkt, iterations: iter });
        }

        let w = s.zip_map(&z, |si, zi| zi / si);
        let mut k = q.clone();
        let gw = DMatrix::from_fn(m, n, |i, j| g[(i, j)] * w[i]);
        k.gemm_tr(1.0, g, &gw, 1.0);
        let factor = Newton::new(k)?;

        // Predictor.
        let rc_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = factor.direction(g, &s, &w, &r, &rc_aff)?;
        let alpha_p = max_step(&s, &ds_a).min(1.0);
        let alpha_d = max_step(&z, &dz_a).min(1.0);
        let mu_aff = if m == 0 { 0.0 } else { (&s + alpha_p * &ds_a).dot(&(&z + alpha_d * &dz_a)) / m as f64 };
        let sigma = if r.mu > 0.0 { libm::pow(mu_aff / r.mu, 3.0).min(1.0) } else { 0.0 };

        // Corrector with centring.
        let rc = DVector::from_fn(m, |i, _| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * r.mu);
        let (dx, ds, dz) = factor.direction(g, &s, &w, &r, &rc)?;
        let alpha_p = (0.99 * max_step(&s, &ds)).min(1.0);
        let alpha_d = (0.99 * max_step(&z, &dz)).min(1.0);
        x += alpha_p * dx;
        s += alpha_p * ds;
        z += alpha_d * dz;

        if !(x.iter().chain(s.iter()).chain(z.iter()).all(|v| v.is_finite())) {
            break;
        }
    }
    let r = residuals(&x, &s, &z);
    let (kkt, x, z, s) = if r.kkt.is_finite() && r.kkt <= best.0 { (r.kkt, x, z, s) } else { best };
    let status =
        if infeasibility_certificate(g, h, &z, settings.tol) { IpmStatus::Infeasible } else { IpmStatus::MaxIter };
    Ok(IpmOutcome { x, z, s, status, kkt_residual: kkt, iterations: settings.max_iter })
}

/// Solves the equality-constrained QP on the constraints the interior point
/// identifies as active (`s_i < z_i`). Returns `None` when the result is not
/// primal and dual feasible.
fn polish(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    out: &IpmOutcome,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>)> {
    let n = c.len();
    let active: alloc::vec::Vec<usize> = (0..h.len()).filter(|&i| out.s[i] < out.z[i]).collect();
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    let mut rhs = DVector::zeros(n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(q);
    rhs.rows_mut(0, n).copy_from(&(-c));
    for (r, &i) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = g[(i, j)];
            kkt[(j, n + r)] = g[(i, j)];
        }
        rhs[n + r] = h[i];
    }
    let sol = kkt.lu().solve(&rhs)?;
    let x = sol.rows(0, n).into_owned();
    let mut z = DVector::zeros(h.len());
    for (r, &i) in active.iter().enumerate() {
        z[i] = sol[n + r];
    }
    let slack = h - g * &x;
    let scale = 1.0 + h.amax();
    if z.iter().any(|&v| v < 0.0) || slack.iter().any(|&v| v < -1e-14 * scale) {
        return None;
    }
    Some((x, z, slack.map(|v| v.max(0.0))))
}

/// Farkas certificate `z >= 0, G'z = 0, h'z < 0`, tested after normalising
/// by `-h'z`.
fn infeasibility_certificate(g: &DMatrix<f64>, h: &DVector<f64>, z: &DVector<f64>, tol: f64) -> bool {
    let hz = h.dot(z);
    if !(hz < 0.0) {
        return false;
    }
    let gz = g.transpose() * z;
    gz.amax() <= tol * (1.0 + g.amax()) * (-hz)
}

/// Largest step `a` keeping `v + a dv >= 0` (infinite if `dv >= 0`).
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter().zip(dv.iter()).filter(|(_, &d)| d < 0.0).map(|(&vi, &d)| -vi / d).fold(f64::INFINITY, f64::min)
}

enum Newton {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl Newton {
    fn new(mut k: DMatrix<f64>) -> Result<Self> {
        if let Some(ch) = k.clone().cholesky() {
            return Ok(Newton::Cholesky(ch));
        }
        let reg = 1e-13 * (1.0 + k.diagonal().amax());
        for i in 0..k.nrows() {
            k[(i, i)] += reg;
        }
        match k.clone().cholesky() {
            Some(ch) => Ok(Newton::Cholesky(ch)),
            None => Ok(Newton::Lu(k.lu())),
        }
    }

    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Newton::Cholesky(ch) => Ok(ch.solve(rhs)),
            Newton::Lu(lu) => {
                lu.solve(rhs).ok_or_else(|| Error::Numerical("singular interior-point Newton system".into()))
            }
        }
    }

    /// Newton direction that removes the residuals `r` and the complementarity
    /// residual `rc`.
    fn direction(
        &self,
        g: &DMatrix<f64>,
        s: &DVector<f64>,
        w: &DVector<f64>,
        r: &Residuals,
        rc: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let rc_over_s = rc.component_div(s);
        let wrp = w.component_mul(&r.primal);
        let rhs = -&r.dual - g.transpose() * (&wrp - &rc_over_s);
        let dx = self.solve(&rhs)?;
        let gdx = g * &dx;
        let dz = w.component_mul(&(&gdx + &r.primal)) - rc_over_s;
        let ds = -&r.primal - gdx;
        Ok((dx, ds, dz))
    }
}
