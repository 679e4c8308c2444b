//! Multidisciplinary analysis: solving the coupling equations
//! `y = h(x, y) + u`, where `h(x, y) = a - D x + (I - C) y`.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::problem::BlockSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdaMethod {
    Jacobi,
    GaussSeidel,
    /// LU solve with the factorisation cached on the system.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdaSettings {
    pub method: MdaMethod,
    /// Tolerance on the Euclidean norm of `y - h(x, y) - u`.
    pub tol: f64,
    pub max_iter: usize,
    /// Start from the caller's previous solution when one is supplied.
    pub warm_start: bool,
}

impl Default for MdaSettings {
    fn default() -> Self {
        Self { method: MdaMethod::Jacobi, tol: 1e-4, max_iter: 30, warm_start: true }
    }
}

impl MdaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("MDA tolerance must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("MDA max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdaResult {
    pub y: DVector<f64>,
    /// Fixed-point updates performed (1 for the direct method).
    pub iterations: usize,
    /// `|| y - h(x, y) - u ||_2` at the returned `y`.
    pub residual: f64,
    pub converged: bool,
    /// Full passes over the disciplines, each calling every discipline once.
    pub sweeps: usize,
    /// Set when `x` lies outside the unit box.
    pub out_of_box: bool,
}

/// Solves the coupling equations at design `x` and noise `u`.
///
/// Fixed-point methods start from `y0` when `settings.warm_start` is set and
/// `y0` is given, and from zero otherwise. They stop as soon as the residual
/// of the current iterate is within `tol`, or after `max_iter` updates with
/// `converged = false`.
pub fn solve_mda(
    system: &BlockSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    settings: &MdaSettings,
    y0: Option<&DVector<f64>>,
) -> Result<MdaResult> {
    solve_mda_impl(system, x, u, settings, y0, None)
}

/// Like [`solve_mda`], also recording the residual of every iterate.
pub fn solve_mda_traced(
    system: &BlockSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    settings: &MdaSettings,
    y0: Option<&DVector<f64>>,
    trace: &mut Vec<f64>,
) -> Result<MdaResult> {
    solve_mda_impl(system, x, u, settings, y0, Some(trace))
}

fn solve_mda_impl(
    system: &BlockSystem,
    x: &DVector<f64>,
    u: &DVector<f64>,
    settings: &MdaSettings,
    y0: Option<&DVector<f64>>,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<MdaResult> {
    settings.validate()?;
    let p = system.coupling_dim();
    check_len("design vector", system.design_dim(), x.len())?;
    check_len("noise vector", p, u.len())?;
    if let Some(y0) = y0 {
        check_len("warm-start vector", p, y0.len())?;
    }
    let out_of_box = x.iter().any(|v| !(0.0..=1.0).contains(v));

    // rhs = a - D x + u, so h(y) + u = rhs + y - C y.
    let rhs = &system.a - &system.d * x + u;
    let residual_of = |y: &DVector<f64>| (&system.c * y - &rhs).norm();

    if settings.method == MdaMethod::Direct {
        let y = system.solve_coupling(&rhs)?;
        let residual = residual_of(&y);
        if let Some(t) = trace.as_deref_mut() {
            t.push(residual);
        }
        return Ok(MdaResult {
            y,
            iterations: 1,
            residual,
            converged: residual <= settings.tol,
            sweeps: 1,
            out_of_box,
        });
    }

    let mut y = match (settings.warm_start, y0) {
        (true, Some(y0)) => y0.clone(),
        _ => DVector::zeros(p),
    };
    let mut iterations = 0;
    let mut sweeps = 0;
    let mut residual = residual_of(&y);
    loop {
        if let Some(t) = trace.as_deref_mut() {
            t.push(residual);
        }
        if residual <= settings.tol || iterations == settings.max_iter {
            break;
        }
        match settings.method {
            MdaMethod::Jacobi => {
                y = &rhs + &y - &system.c * &y;
            }
            MdaMethod::GaussSeidel => gauss_seidel_sweep(system, &rhs, &mut y),
            MdaMethod::Direct => unreachable!(),
        }
        iterations += 1;
        sweeps += 1;
        residual = residual_of(&y);
    }
    // The Jacobi residual check evaluates h at the returned iterate.
    if settings.method == MdaMethod::Jacobi {
        sweeps += 1;
    }
    Ok(MdaResult { y, iterations, residual, converged: residual <= settings.tol, sweeps, out_of_box })
}

/// One block Gauss-Seidel sweep: discipline `i` is evaluated with the
/// freshest outputs of disciplines `1..i-1`.
fn gauss_seidel_sweep(system: &BlockSystem, rhs: &DVector<f64>, y: &mut DVector<f64>) {
    let offsets = &system.coupling_offsets;
    for i in 0..system.n_disciplines() {
        let (r0, r1) = (offsets[i], offsets[i + 1]);
        for r in r0..r1 {
            // C has unit diagonal blocks; only the off-diagonal blocks couple.
            let mut v = rhs[r];
            for k in (0..r0).chain(r1..y.len()) {
                v -= system.c[(r, k)] * y[k];
            }
            y[r] = v;
        }
    }
}

/// Exact linear sensitivities of the coupling solution:
/// `y(x, u) = alpha + beta x + P u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCoupling {
    /// `C^-1 a`
    pub alpha: DVector<f64>,
    /// `-C^-1 D`
    pub beta: DMatrix<f64>,
    /// `C^-1`
    pub p: DMatrix<f64>,
}

impl LinearCoupling {
    pub fn new(system: &BlockSystem) -> Result<Self> {
        let n = system.coupling_dim();
        Ok(Self {
            alpha: system.solve_coupling(&system.a)?,
            beta: -system.solve_coupling_matrix(&system.d)?,
            p: system.solve_coupling_matrix(&DMatrix::identity(n, n))?,
        })
    }

    pub fn couplings(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.alpha + &self.beta * x + &self.p * u
    }
}

/// Returns `(alpha, beta, P)` for `system`.
pub fn coupling_jacobian(system: &BlockSystem) -> Result<LinearCoupling> {
    LinearCoupling::new(system)
}
