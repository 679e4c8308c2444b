//! The scalable coupled problem: configuration, seeded generation, block
//! assembly and tuning of the feasibility threshold.
//!
//! Discipline `i` computes its coupling output from the shared design
//! variables `x0`, its local design variables `xi` and the other disciplines'
//! couplings:
//!
//! ```text
//!     y_i = a_i - D_i0 x0 - D_ii x_i + sum_{j != i} C_ij y_j (+ u_i)
//! ```
//!
//! The system problem minimises `x0'x0 + sum_i y_i'y_i` subject to `y >= t`
//! componentwise on the unit design box.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen, LU};

use crate::error::{Error, Result};
use crate::mda::LinearCoupling;
use crate::rng::{prng, uniform};
use crate::stats::quantile_sorted;

/// Default bound on the off-diagonal row sums of the coupling matrix.
pub const DEFAULT_COUPLING_STRENGTH: f64 = 0.5;
/// Default fraction of the design box satisfying the constraints.
pub const DEFAULT_FEASIBILITY_LEVEL: f64 = 0.5;
/// Default number of uniform design samples used to tune the threshold.
pub const DEFAULT_TUNING_SAMPLES: usize = 10_000;
/// Default cap on the number of entries of any assembled matrix.
pub const DEFAULT_MAX_ENTRIES: usize = 1 << 24;

/// User-chosen dimensions and generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub n_disciplines: usize,
    /// Dimension of the shared design variables `x0`.
    pub d_shared: usize,
    /// Local design dimension of each discipline.
    pub d_local: Vec<usize>,
    /// Coupling (output) dimension of each discipline.
    pub p_coupling: Vec<usize>,
    /// Upper bound on every off-diagonal row sum of the coupling matrix, in (0, 1).
    pub coupling_strength: f64,
    /// Target fraction of the design box satisfying the constraints, in (0, 1).
    pub feasibility_level: f64,
    pub seed: u64,
}

impl ProblemConfig {
    /// Two disciplines sharing one design variable, each with two local design
    /// variables and three coupling outputs.
    pub fn reference(seed: u64) -> Self {
        Self {
            n_disciplines: 2,
            d_shared: 1,
            d_local: alloc::vec![2, 2],
            p_coupling: alloc::vec![3, 3],
            coupling_strength: DEFAULT_COUPLING_STRENGTH,
            feasibility_level: DEFAULT_FEASIBILITY_LEVEL,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.n_disciplines == 0 {
            return bad("at least one discipline is required".into());
        }
        if self.d_local.len() != self.n_disciplines {
            return bad(format!("expected {} local design dimensions, got {}", self.n_disciplines, self.d_local.len()));
        }
        if self.p_coupling.len() != self.n_disciplines {
            return bad(format!("expected {} coupling dimensions, got {}", self.n_disciplines, self.p_coupling.len()));
        }
        if self.d_shared == 0 {
            return bad("shared design dimension must be at least 1".into());
        }
        if let Some(i) = self.d_local.iter().position(|&d| d == 0) {
            return bad(format!("local design dimension of discipline {} is zero", i + 1));
        }
        if let Some(i) = self.p_coupling.iter().position(|&p| p == 0) {
            return bad(format!("coupling dimension of discipline {} is zero", i + 1));
        }
        if !(self.coupling_strength > 0.0 && self.coupling_strength < 1.0) {
            return bad(format!("coupling strength must lie in (0, 1), got {}", self.coupling_strength));
        }
        if !(self.feasibility_level > 0.0 && self.feasibility_level < 1.0) {
            return bad(format!("feasibility level must lie in (0, 1), got {}", self.feasibility_level));
        }
        Ok(())
    }

    /// Total design dimension `d = d0 + sum d_i`.
    pub fn design_dim(&self) -> usize {
        self.d_shared + self.d_local.iter().sum::<usize>()
    }

    /// Total coupling dimension `p = sum p_i`.
    pub fn coupling_dim(&self) -> usize {
        self.p_coupling.iter().sum()
    }

    /// Whether every discipline has `p_i >= d_i` and `p >= d`, the dimension
    /// condition under which the reduced quadratic form is positive definite
    /// almost surely.
    pub fn is_well_posed(&self) -> bool {
        self.d_local.iter().zip(&self.p_coupling).all(|(d, p)| p >= d) && self.coupling_dim() >= self.design_dim()
    }

    /// Row offsets of each discipline's coupling block (length `N + 1`).
    pub fn coupling_offsets(&self) -> Vec<usize> {
        offsets(&self.p_coupling, 0)
    }

    /// Column offsets of each discipline's local design block (length
    /// `N + 1`); the shared block occupies `0..d_shared`.
    pub fn local_design_offsets(&self) -> Vec<usize> {
        offsets(&self.d_local, self.d_shared)
    }
}

fn offsets(sizes: &[usize], start: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(sizes.len() + 1);
    let mut acc = start;
    out.push(acc);
    for s in sizes {
        acc += s;
        out.push(acc);
    }
    out
}

/// Off-diagonal coupling block `C_ij` (zero-based discipline indices).
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub i: usize,
    pub j: usize,
    pub matrix: DMatrix<f64>,
}

/// A generated problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalableProblem {
    pub config: ProblemConfig,
    /// Stacked constants `a_i`, length `p`.
    pub a: DVector<f64>,
    /// `D_i0`, one `p_i x d0` matrix per discipline.
    pub d_shared: Vec<DMatrix<f64>>,
    /// `D_ii`, one `p_i x d_i` matrix per discipline.
    pub d_local: Vec<DMatrix<f64>>,
    /// `C_ij` for every ordered pair `i != j`, row-major in `(i, j)`.
    pub c_blocks: Vec<CouplingBlock>,
    /// Feasibility threshold; zero until tuned.
    pub t: f64,
}

/// Generates a problem with the default capacity cap.
pub fn generate(config: &ProblemConfig) -> Result<ScalableProblem> {
    generate_with_capacity(config, DEFAULT_MAX_ENTRIES)
}

/// Generates a problem from `config`.
///
/// Fill order from a single stream seeded with `config.seed`: `a` block by
/// block, then `D_i0` for `i = 1..N`, then `D_ii` for `i = 1..N`, then `C_ij`
/// in row-major `(i, j)` order skipping `i == j`; each matrix is filled
/// row-major with `U[0, 1)` draws. Afterwards every row `r` of the assembled
/// off-diagonal part is multiplied by `strength / max(1, rowsum_r)`, which
/// keeps the coupling matrix strictly diagonally dominant.
pub fn generate_with_capacity(config: &ProblemConfig, max_entries: usize) -> Result<ScalableProblem> {
    config.validate()?;
    let p = config.coupling_dim();
    let d = config.design_dim();
    for entries in [p.checked_mul(d), p.checked_mul(p)] {
        match entries {
            Some(e) if e <= max_entries => {}
            Some(e) => return Err(Error::Capacity { entries: e, cap: max_entries }),
            None => return Err(Error::Capacity { entries: usize::MAX, cap: max_entries }),
        }
    }

    let mut rng = prng(config.seed);
    let mut fill = |rows: usize, cols: usize| {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = uniform(&mut rng);
            }
        }
        m
    };

    let a = {
        let mut v = DVector::zeros(p);
        let mut row = 0;
        for &pi in &config.p_coupling {
            let block = fill(pi, 1);
            v.rows_mut(row, pi).copy_from(&block.column(0));
            row += pi;
        }
        v
    };
    let d_shared: Vec<_> = config.p_coupling.iter().map(|&pi| fill(pi, config.d_shared)).collect();
    let d_local: Vec<_> = config.p_coupling.iter().zip(&config.d_local).map(|(&pi, &di)| fill(pi, di)).collect();
    let n = config.n_disciplines;
    let mut c_blocks = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let matrix = fill(config.p_coupling[i], config.p_coupling[j]);
                c_blocks.push(CouplingBlock { i, j, matrix });
            }
        }
    }

    // Row rescaling of the off-diagonal part.
    for i in 0..n {
        for r in 0..config.p_coupling[i] {
            let row_sum: f64 = c_blocks.iter().filter(|b| b.i == i).map(|b| b.matrix.row(r).sum()).sum();
            let scale = config.coupling_strength / row_sum.max(1.0);
            for block in c_blocks.iter_mut().filter(|b| b.i == i) {
                block.matrix.row_mut(r).scale_mut(scale);
            }
        }
    }

    Ok(ScalableProblem { config: config.clone(), a, d_shared, d_local, c_blocks, t: 0.0 })
}

impl ScalableProblem {
    /// Checks the shapes of every block against the configuration.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let n = cfg.n_disciplines;
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.a.len() != cfg.coupling_dim() {
            return bad(format!("a has length {}, expected {}", self.a.len(), cfg.coupling_dim()));
        }
        if self.d_shared.len() != n || self.d_local.len() != n {
            return bad(format!("expected {n} shared and local design blocks"));
        }
        for i in 0..n {
            let pi = cfg.p_coupling[i];
            if self.d_shared[i].shape() != (pi, cfg.d_shared) {
                return bad(format!("D_shared[{i}] has shape {:?}", self.d_shared[i].shape()));
            }
            if self.d_local[i].shape() != (pi, cfg.d_local[i]) {
                return bad(format!("D_local[{i}] has shape {:?}", self.d_local[i].shape()));
            }
        }
        if self.c_blocks.len() != n * (n - 1) {
            return bad(format!("expected {} coupling blocks, got {}", n * (n - 1), self.c_blocks.len()));
        }
        for b in &self.c_blocks {
            if b.i >= n || b.j >= n || b.i == b.j {
                return bad(format!("invalid coupling block index ({}, {})", b.i, b.j));
            }
            if b.matrix.shape() != (cfg.p_coupling[b.i], cfg.p_coupling[b.j]) {
                return bad(format!("C[{}][{}] has shape {:?}", b.i, b.j, b.matrix.shape()));
            }
        }
        if !self.t.is_finite() {
            return bad("threshold t is not finite".into());
        }
        Ok(())
    }

    pub fn coupling_block(&self, i: usize, j: usize) -> Option<&DMatrix<f64>> {
        self.c_blocks.iter().find(|b| b.i == i && b.j == j).map(|b| &b.matrix)
    }

    /// Tunes `t` so that a fraction `feasibility_level` of the design box
    /// satisfies `min_j y_j(x) >= t` with `u = 0`, stores it and returns it.
    ///
    /// `t` is the empirical `1 - feasibility_level` quantile of `min_j y_j(X)`
    /// over `n_samples` uniform designs drawn from a stream seeded with
    /// `quantile_seed`.
    pub fn tune_feasibility(&mut self, n_samples: usize, quantile_seed: u64) -> Result<f64> {
        if n_samples < 2 {
            return Err(Error::InvalidArgument(format!(
                "feasibility tuning needs at least 2 samples, got {n_samples}"
            )));
        }
        let system = assemble(self);
        let coupling = LinearCoupling::new(&system)?;
        let d = system.design_dim();
        let mut rng = prng(quantile_seed);
        let mut x = DVector::zeros(d);
        let mut mins: Vec<f64> = (0..n_samples)
            .map(|_| {
                for xi in x.iter_mut() {
                    *xi = uniform(&mut rng);
                }
                let y = &coupling.alpha + &coupling.beta * &x;
                y.min()
            })
            .collect();
        mins.sort_by(f64::total_cmp);
        let t = quantile_sorted(&mins, 1.0 - self.config.feasibility_level)?;
        self.t = t;
        Ok(t)
    }
}

/// Assembled block form `C y = a - D x (+ u)` of the coupling equations.
#[derive(Debug, Clone)]
pub struct BlockSystem {
    /// `p x p`, identity diagonal blocks and `-C_ij` off the diagonal.
    pub c: DMatrix<f64>,
    /// `p x d`, shared column block dense, local column blocks block-diagonal.
    pub d: DMatrix<f64>,
    pub a: DVector<f64>,
    /// `d x d`, identity on the first `d0` diagonal entries.
    pub q_x0: DMatrix<f64>,
    /// Row offsets of the discipline blocks of `y` (length `N + 1`).
    pub coupling_offsets: Vec<usize>,
    pub d_shared: usize,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    singular: bool,
}

/// Assembles the block matrices of `problem`. The LU factorisation of the
/// coupling matrix is computed once here and reused by every direct solve.
pub fn assemble(problem: &ScalableProblem) -> BlockSystem {
    let cfg = &problem.config;
    let p = cfg.coupling_dim();
    let d = cfg.design_dim();
    let rows = cfg.coupling_offsets();
    let cols = cfg.local_design_offsets();

    let mut c = DMatrix::identity(p, p);
    for b in &problem.c_blocks {
        let (pi, pj) = b.matrix.shape();
        c.view_mut((rows[b.i], rows[b.j]), (pi, pj)).copy_from(&(-&b.matrix));
    }

    let mut dm = DMatrix::zeros(p, d);
    for i in 0..cfg.n_disciplines {
        let pi = cfg.p_coupling[i];
        dm.view_mut((rows[i], 0), (pi, cfg.d_shared)).copy_from(&problem.d_shared[i]);
        dm.view_mut((rows[i], cols[i]), (pi, cfg.d_local[i])).copy_from(&problem.d_local[i]);
    }

    let mut q_x0 = DMatrix::zeros(d, d);
    for k in 0..cfg.d_shared {
        q_x0[(k, k)] = 1.0;
    }

    BlockSystem::from_parts(c, dm, problem.a.clone(), q_x0, rows, cfg.d_shared)
}

impl BlockSystem {
    /// Builds a system from explicit matrices, e.g. for hand-made cases.
    pub fn from_parts(
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        a: DVector<f64>,
        q_x0: DMatrix<f64>,
        coupling_offsets: Vec<usize>,
        d_shared: usize,
    ) -> Self {
        let lu = c.clone().lu();
        let singular = is_numerically_singular(&lu);
        Self { c, d, a, q_x0, coupling_offsets, d_shared, lu, singular }
    }

    pub fn coupling_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn design_dim(&self) -> usize {
        self.d.ncols()
    }

    pub fn n_disciplines(&self) -> usize {
        self.coupling_offsets.len() - 1
    }

    /// Solves `C z = rhs` with the cached factorisation.
    pub fn solve_coupling(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        if self.singular {
            return Err(Error::Singular);
        }
        self.lu.solve(rhs).ok_or(Error::Singular)
    }

    /// Solves `C Z = rhs` column by column.
    pub fn solve_coupling_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if self.singular {
            return Err(Error::Singular);
        }
        self.lu.solve(rhs).ok_or(Error::Singular)
    }

    /// Whether every row of `C` is strictly diagonally dominant.
    pub fn is_diagonally_dominant(&self) -> bool {
        (0..self.c.nrows()).all(|r| {
            let off: f64 = (0..self.c.ncols()).filter(|&k| k != r).map(|k| self.c[(r, k)].abs()).sum();
            self.c[(r, r)].abs() > off
        })
    }
}

fn is_numerically_singular(lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> bool {
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    !(max > 0.0) || min <= 1e-14 * max
}

/// Distribution family of the discipline noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    Gaussian,
    None,
}

/// Centred noise `U = (U_1, ..., U_N)` added to the coupling equations, with
/// independent blocks of covariance `Sigma_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyModel {
    pub kind: NoiseKind,
    pub sigma_blocks: Vec<DMatrix<f64>>,
}

impl UncertaintyModel {
    /// Independent Gaussian noise with standard deviation `sigma` on every
    /// coupling component.
    pub fn isotropic(p_coupling: &[usize], sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise standard deviation must be >= 0, got {sigma}")));
        }
        let var = sigma * sigma;
        Ok(Self {
            kind: NoiseKind::Gaussian,
            sigma_blocks: p_coupling.iter().map(|&p| DMatrix::identity(p, p) * var).collect(),
        })
    }

    /// No noise: zero covariance blocks.
    pub fn none(p_coupling: &[usize]) -> Self {
        Self { kind: NoiseKind::None, sigma_blocks: p_coupling.iter().map(|&p| DMatrix::zeros(p, p)).collect() }
    }

    pub fn dim(&self) -> usize {
        self.sigma_blocks.iter().map(|b| b.nrows()).sum()
    }

    /// Block-diagonal covariance of the whole noise vector.
    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.dim();
        let mut out = DMatrix::zeros(p, p);
        let mut at = 0;
        for b in &self.sigma_blocks {
            let n = b.nrows();
            out.view_mut((at, at), (n, n)).copy_from(b);
            at += n;
        }
        out
    }

    /// Checks block shapes against `p_coupling`, symmetry and positive
    /// semi-definiteness of every block.
    pub fn validate(&self, p_coupling: &[usize]) -> Result<()> {
        check_len_blocks(self.sigma_blocks.len(), p_coupling.len())?;
        for (i, (b, &p)) in self.sigma_blocks.iter().zip(p_coupling).enumerate() {
            if b.shape() != (p, p) {
                return Err(Error::InvalidArgument(format!(
                    "covariance block {i} has shape {:?}, expected ({p}, {p})",
                    b.shape()
                )));
            }
            let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            for r in 0..p {
                for c in 0..r {
                    if (b[(r, c)] - b[(c, r)]).abs() > 1e-12 * scale {
                        return Err(Error::InvalidArgument(format!("covariance block {i} is not symmetric")));
                    }
                }
            }
            if p > 0 {
                let lambda_min = SymmetricEigen::new(b.clone()).eigenvalues.min();
                if lambda_min < -1e-12 * scale {
                    return Err(Error::InvalidArgument(format!(
                        "covariance block {i} is not positive semi-definite (eigenvalue {lambda_min:e})"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_len_blocks(found: usize, expected: usize) -> Result<()> {
    crate::error::check_len("covariance blocks", expected, found)
}
