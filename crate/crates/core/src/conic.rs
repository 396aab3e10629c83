//! A small operator-splitting (ADMM) solver for conic programs
//!
//! ```text
//! minimize cᵀx   subject to   A x + s = b,   s ∈ K
//! ```
//!
//! where `K` is a product of zero cones, nonnegative orthants and real
//! symmetric PSD cones. PSD blocks use the scaled lower-triangular `svec`
//! layout (column-major, off-diagonals times √2) so that
//! `⟨svec X, svec Y⟩ = Tr(XY)`. Hermitian PSD constraints are expressed through
//! [`embed_hermitian`], which maps an `n × n` Hermitian matrix to the real
//! symmetric `2n × 2n` matrix `[[Re, -Im], [Im, Re]]`.
//!
//! Each iteration solves one linear system with the fixed matrix
//! `σI + ρAᵀA` (dense Cholesky for small problems, preconditioned conjugate
//! gradients otherwise) and projects onto the cone block by block.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};
use crate::linalg::CMat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    Zero(usize),
    NonNeg(usize),
    /// Symmetric PSD matrices of the given order, `d(d+1)/2` rows.
    Psd(usize),
    /// Hermitian PSD matrices of order `n` stored through their real
    /// embedding: the `svec` of a `2n × 2n` block, `n(2n+1)` rows.
    HermitianPsd(usize),
}

impl Cone {
    pub fn rows(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::NonNeg(n) => n,
            Cone::Psd(d) => d * (d + 1) / 2,
            Cone::HermitianPsd(n) => n * (2 * n + 1),
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicate entries are summed; explicit zeros are dropped.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= nrows || *c >= ncols) {
            return Err(invalid(format!("entry ({r}, {c}) outside {nrows}×{ncols}")));
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut vals: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = Self { nrows, ncols, row_ptr, col_idx, vals };
        m.drop_zeros();
        Ok(m)
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let trips: Vec<_> = (0..a.nrows())
            .flat_map(|r| (0..a.ncols()).map(move |c| (r, c)))
            .filter(|&(r, c)| a[(r, c)] != 0.0)
            .map(|(r, c)| (r, c, a[(r, c)]))
            .collect();
        Self::from_triplets(a.nrows(), a.ncols(), &trips).expect("indices in range")
    }

    fn drop_zeros(&mut self) {
        let mut row_ptr = vec![0; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.vals.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..self.nrows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[idx] != 0.0 {
                    col_idx.push(self.col_idx[idx]);
                    vals.push(self.vals[idx]);
                }
            }
            row_ptr[r + 1] = vals.len();
        }
        self.row_ptr = row_ptr;
        self.col_idx = col_idx;
        self.vals = vals;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |i| (r, self.col_idx[i], self.vals[i]))
        })
    }

    /// `out = A x`.
    pub fn mul_into(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[i] * x[self.col_idx[i]];
            }
            *o = acc;
        }
    }

    /// `out = Aᵀ y`.
    pub fn tmul_into(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[self.col_idx[i]] += self.vals[i] * yr;
            }
        }
    }

    fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.ncols, self.ncols);
        for r in 0..self.nrows {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            for i in span.clone() {
                for j in span.clone() {
                    g[(self.col_idx[i], self.col_idx[j])] += self.vals[i] * self.vals[j];
                }
            }
        }
        g
    }

    fn column_sq_norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (i, &c) in self.col_idx.iter().enumerate() {
            out[c] += self.vals[i] * self.vals[i];
        }
        out
    }
}

/// `minimize cᵀx` s.t. `A x + s = b`, `s ∈ cones`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub c: Vec<f64>,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn validate(&self) -> Result<()> {
        let rows: usize = self.cones.iter().map(Cone::rows).sum();
        if self.a.ncols() != self.c.len() {
            return Err(invalid(format!(
                "A has {} columns but c has {} entries",
                self.a.ncols(),
                self.c.len()
            )));
        }
        if self.a.nrows() != self.b.len() || rows != self.b.len() {
            return Err(invalid(format!(
                "A has {} rows, b {} entries, cones {} rows",
                self.a.nrows(),
                self.b.len(),
                rows
            )));
        }
        Ok(())
    }

    /// Writes the problem in a CBF-like text format:
    ///
    /// ```text
    /// VER 3 / OBJSENSE MIN / VAR n 1 F n / CON m <blocks>
    /// OBJACOORD, ACOORD, BCOORD  (constraint form  A' x + b' ∈ K)
    /// ```
    ///
    /// with `A' = -A`, `b' = b`. Cone names: `L=` zero, `L+` nonnegative and
    /// `SVECPSD d` for a PSD block of order `d` in scaled `svec` layout.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# irs-maxmin conic problem")?;
        writeln!(w, "VER\n3\n")?;
        writeln!(w, "OBJSENSE\nMIN\n")?;
        writeln!(w, "VAR\n{} 1\nF {}\n", self.c.len(), self.c.len())?;
        writeln!(w, "CON\n{} {}", self.b.len(), self.cones.len())?;
        for cone in &self.cones {
            match *cone {
                Cone::Zero(n) => writeln!(w, "L= {n}")?,
                Cone::NonNeg(n) => writeln!(w, "L+ {n}")?,
                Cone::Psd(d) => writeln!(w, "SVECPSD {d} {}", cone.rows())?,
                Cone::HermitianPsd(n) => writeln!(w, "SVECHPSD {n} {}", cone.rows())?,
            }
        }
        let obj: Vec<_> = self.c.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
        writeln!(w, "\nOBJACOORD\n{}", obj.len())?;
        for (j, v) in obj {
            writeln!(w, "{j} {v:e}")?;
        }
        writeln!(w, "\nACOORD\n{}", self.a.nnz())?;
        for (r, c, v) in self.a.triplets() {
            writeln!(w, "{r} {c} {:e}", -v)?;
        }
        let b: Vec<_> = self.b.iter().enumerate().filter(|(_, v)| **v != 0.0).collect();
        writeln!(w, "\nBCOORD\n{}", b.len())?;
        for (i, v) in b {
            writeln!(w, "{i} {v:e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIters,
    /// Halted by the caller's monitor.
    Stopped,
}

/// Current iterate handed to a monitor.
#[derive(Debug, Clone, Copy)]
pub struct Iterate<'a> {
    pub x: &'a [f64],
    pub s: &'a [f64],
    pub y: &'a [f64],
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    /// Multiplier in the polar cone; `-y` is the usual dual in `K*`.
    pub y: Vec<f64>,
    pub status: Status,
    /// `‖Ax + s − b‖∞ / (1 + max(‖Ax‖∞, ‖s‖∞, ‖b‖∞))`.
    pub primal_residual: f64,
    /// `‖c − Aᵀy‖∞ / (1 + max(‖Aᵀy‖∞, ‖c‖∞))`.
    pub dual_residual: f64,
    /// `|cᵀx − bᵀy| / (1 + |cᵀx| + |bᵀy|)`.
    pub gap: f64,
    pub objective: f64,
    pub iterations: usize,
}

/// Initial iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub y: Vec<f64>,
}

impl From<&ConicSolution> for WarmStart {
    fn from(sol: &ConicSolution) -> Self {
        Self {
            x: sol.x.clone(),
            s: sol.s.clone(),
            y: sol.y.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub tol: f64,
    pub max_iters: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in `(0, 2)`.
    pub alpha: f64,
    pub adaptive_rho: bool,
    /// Residuals are evaluated every this many iterations.
    pub check_every: usize,
    /// Use a diagonal-plus-low-rank solve when most rows hold one nonzero.
    pub low_rank: bool,
    /// Otherwise, problems with more variables use conjugate gradients.
    pub direct_max_vars: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 50_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.5,
            adaptive_rho: true,
            check_every: 10,
            low_rank: true,
            direct_max_vars: 1500,
        }
    }
}

impl Settings {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self { tol, max_iters, ..Self::default() }
    }
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped).
pub fn project_psd(x: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (x + x.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let neg = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    let n = sym.nrows();
    if neg == 0 {
        return sym;
    }
    if neg == n {
        return DMatrix::zeros(n, n);
    }
    let mut out = DMatrix::zeros(n, n);
    // Rebuild from whichever eigenvalue set is smaller.
    if neg <= n - neg {
        out.copy_from(&sym);
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l < 0.0 {
                let v = eig.eigenvectors.column(i);
                out.ger(-l, &v, &v, 1.0);
            }
        }
    } else {
        for (i, &l) in eig.eigenvalues.iter().enumerate() {
            if l > 0.0 {
                let v = eig.eigenvectors.column(i);
                out.ger(l, &v, &v, 1.0);
            }
        }
    }
    out
}

/// Nearest Hermitian PSD matrix in Frobenius norm.
pub fn project_hermitian_psd(h: &CMat) -> CMat {
    let herm = (h + h.adjoint()) * num_complex::Complex64::from(0.5);
    let eig = herm.clone().symmetric_eigen();
    let n = herm.nrows();
    let neg = eig.eigenvalues.iter().filter(|&&l| l < 0.0).count();
    if neg == 0 {
        return herm;
    }
    if neg == n {
        return CMat::zeros(n, n);
    }
    let mut out = CMat::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > 0.0 {
            let v = eig.eigenvectors.column(i);
            out += &v * v.adjoint() * num_complex::Complex64::from(l);
        }
    }
    out
}

/// Scaled lower-triangular vectorization.
pub fn svec(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        out.push(x[(j, j)]);
        for i in (j + 1)..n {
            out.push(x[(i, j)] * std::f64::consts::SQRT_2);
        }
    }
    out
}

/// Inverse of [`svec`].
pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        x[(j, j)] = v[idx];
        idx += 1;
        for i in (j + 1)..n {
            let val = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
            x[(i, j)] = val;
            x[(j, i)] = val;
            idx += 1;
        }
    }
    x
}

/// Position of entry `(i, j)`, `i ≥ j`, in the `svec` of an order-`n` matrix.
pub fn svec_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i >= j && i < n);
    // Columns before j hold n + (n-1) + ... + (n-j+1) entries.
    j * n - j * j.saturating_sub(1) / 2 + (i - j)
}

/// `[[Re, -Im], [Im, Re]]`.
pub fn embed_hermitian(h: &CMat) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = h[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Inverse of [`embed_hermitian`], averaging the duplicated blocks.
pub fn extract_hermitian(x: &DMatrix<f64>) -> CMat {
    let n = x.nrows() / 2;
    CMat::from_fn(n, n, |r, c| {
        let re = 0.5 * (x[(r, c)] + x[(r + n, c + n)]);
        let im = 0.5 * (x[(r + n, c)] - x[(r, c + n)]);
        num_complex::Complex64::new(re, im)
    })
}

fn project_cone(cones: &[Cone], v: &mut [f64]) {
    let mut off = 0;
    for cone in cones {
        let rows = cone.rows();
        let block = &mut v[off..off + rows];
        match *cone {
            Cone::Zero(_) => block.iter_mut().for_each(|x| *x = 0.0),
            Cone::NonNeg(_) => block.iter_mut().for_each(|x| *x = x.max(0.0)),
            Cone::Psd(d) => {
                let p = project_psd(&smat(block, d));
                block.copy_from_slice(&svec(&p));
            }
            Cone::HermitianPsd(n) => {
                let h = extract_hermitian(&smat(block, 2 * n));
                block.copy_from_slice(&svec(&embed_hermitian(&project_hermitian_psd(&h))));
            }
        }
        off += rows;
    }
}

/// Structure of `AᵀA` exploited by the linear solves.
enum Gram {
    Dense(DMatrix<f64>),
    /// `AᵀA = diag(d) + UᵀU` with `U` the rows holding several nonzeros.
    LowRank { d: Vec<f64>, u: DMatrix<f64> },
    MatrixFree,
}

impl Gram {
    fn analyze(a: &SparseMatrix, settings: &Settings) -> Self {
        let n = a.ncols();
        if settings.low_rank {
            let dense_rows: Vec<usize> = (0..a.nrows()).filter(|&r| a.row_ptr[r + 1] - a.row_ptr[r] > 1).collect();
            if 2 * dense_rows.len() <= n {
                let mut d = vec![0.0; n];
                let mut u = DMatrix::zeros(dense_rows.len(), n);
                let mut next = 0;
                for r in 0..a.nrows() {
                    let span = a.row_ptr[r]..a.row_ptr[r + 1];
                    if next < dense_rows.len() && dense_rows[next] == r {
                        for i in span {
                            u[(next, a.col_idx[i])] = a.vals[i];
                        }
                        next += 1;
                    } else {
                        for i in span {
                            d[a.col_idx[i]] += a.vals[i] * a.vals[i];
                        }
                    }
                }
                return Gram::LowRank { d, u };
            }
        }
        if n <= settings.direct_max_vars {
            Gram::Dense(a.gram())
        } else {
            Gram::MatrixFree
        }
    }
}

enum LinearSolver {
    Direct(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// Woodbury form of `(Λ + ρUᵀU)⁻¹` with `Λ = σI + ρ diag(d)`.
    LowRank {
        lam_inv: Vec<f64>,
        small: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    },
    Indirect { precond: Vec<f64> },
}

fn not_pd() -> crate::Error {
    crate::Error::Solver("KKT matrix is not positive definite".into())
}

impl LinearSolver {
    fn new(a: &SparseMatrix, gram: &Gram, sigma: f64, rho: f64) -> Result<Self> {
        match gram {
            Gram::Dense(g) => {
                let mut k = g * rho;
                for i in 0..k.nrows() {
                    k[(i, i)] += sigma;
                }
                k.cholesky().map(LinearSolver::Direct).ok_or_else(not_pd)
            }
            Gram::LowRank { d, u } => {
                let lam_inv: Vec<f64> = d.iter().map(|d| 1.0 / (sigma + rho * d)).collect();
                let small = if u.nrows() == 0 {
                    None
                } else {
                    // S = I/ρ + U Λ⁻¹ Uᵀ
                    let mut scaled = u.clone();
                    for (j, mut col) in scaled.column_iter_mut().enumerate() {
                        col *= lam_inv[j];
                    }
                    let mut s = &scaled * u.transpose();
                    for i in 0..s.nrows() {
                        s[(i, i)] += 1.0 / rho;
                    }
                    Some(s.cholesky().ok_or_else(not_pd)?)
                };
                Ok(LinearSolver::LowRank { lam_inv, small })
            }
            Gram::MatrixFree => Ok(LinearSolver::Indirect {
                precond: a.column_sq_norms().iter().map(|d| 1.0 / (sigma + rho * d)).collect(),
            }),
        }
    }

    /// Solves `(σI + ρAᵀA) x = rhs`, with `x` holding the initial guess.
    #[allow(clippy::too_many_arguments)]
    fn solve(&self, a: &SparseMatrix, gram: &Gram, sigma: f64, rho: f64, rhs: &[f64], x: &mut [f64], work: &mut Work) {
        match self {
            LinearSolver::Direct(chol) => {
                let mut v = DVector::from_column_slice(rhs);
                chol.solve_mut(&mut v);
                x.copy_from_slice(v.as_slice());
            }
            LinearSolver::LowRank { lam_inv, small } => {
                for i in 0..x.len() {
                    x[i] = lam_inv[i] * rhs[i];
                }
                if let (Some(chol), Gram::LowRank { u, .. }) = (small, gram) {
                    let z = DVector::from_column_slice(x);
                    let mut w = u * &z;
                    chol.solve_mut(&mut w);
                    let corr = u.tr_mul(&w);
                    for i in 0..x.len() {
                        x[i] -= lam_inv[i] * corr[i];
                    }
                }
            }
            LinearSolver::Indirect { precond } => pcg(a, sigma, rho, precond, rhs, x, work),
        }
    }
}

struct Work {
    m: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
}

fn apply_kkt(a: &SparseMatrix, sigma: f64, rho: f64, v: &[f64], out: &mut [f64], m: &mut [f64]) {
    a.mul_into(v, m);
    a.tmul_into(m, out);
    for (o, vi) in out.iter_mut().zip(v) {
        *o = sigma * vi + rho * *o;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn pcg(a: &SparseMatrix, sigma: f64, rho: f64, precond: &[f64], rhs: &[f64], x: &mut [f64], w: &mut Work) {
    let n = x.len();
    apply_kkt(a, sigma, rho, x, &mut w.r, &mut w.m);
    for i in 0..n {
        w.r[i] = rhs[i] - w.r[i];
    }
    let rhs_norm = dot(rhs, rhs).sqrt().max(1e-300);
    for i in 0..n {
        w.z[i] = precond[i] * w.r[i];
    }
    w.p.copy_from_slice(&w.z);
    let mut rz = dot(&w.r, &w.z);
    for _ in 0..(2 * n).max(50) {
        if dot(&w.r, &w.r).sqrt() <= 1e-12 * rhs_norm {
            break;
        }
        apply_kkt(a, sigma, rho, &w.p, &mut w.ap, &mut w.m);
        let step = rz / dot(&w.p, &w.ap);
        for i in 0..n {
            x[i] += step * w.p[i];
            w.r[i] -= step * w.ap[i];
            w.z[i] = precond[i] * w.r[i];
        }
        let rz_new = dot(&w.r, &w.z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            w.p[i] = w.z[i] + beta * w.p[i];
        }
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `problem` from the origin.
pub fn solve(problem: &ConicProblem, settings: &Settings) -> Result<ConicSolution> {
    solve_warm(problem, settings, None)
}

/// Solves `problem` starting from `warm` when given.
pub fn solve_warm(problem: &ConicProblem, settings: &Settings, warm: Option<&WarmStart>) -> Result<ConicSolution> {
    solve_monitored(problem, settings, warm, |_| false)
}

/// Like [`solve_warm`], calling `monitor` at every residual check. Returning
/// `true` stops the solver with [`Status::Stopped`].
pub fn solve_monitored<F>(
    problem: &ConicProblem,
    settings: &Settings,
    warm: Option<&WarmStart>,
    mut monitor: F,
) -> Result<ConicSolution>
where
    F: FnMut(Iterate<'_>) -> bool,
{
    problem.validate()?;
    if !(settings.alpha > 0.0 && settings.alpha < 2.0) || !(settings.rho > 0.0) || !(settings.sigma > 0.0) {
        return Err(invalid("solver needs 0 < alpha < 2 and positive rho, sigma"));
    }
    let a = &problem.a;
    let (m, n) = (a.nrows(), a.ncols());
    let (c, b) = (&problem.c[..], &problem.b[..]);

    let (mut x, mut s, mut y) = match warm {
        Some(w) if w.x.len() == n && w.s.len() == m && w.y.len() == m => (w.x.clone(), w.s.clone(), w.y.clone()),
        Some(_) => return Err(invalid("warm start has the wrong dimensions")),
        None => (vec![0.0; n], vec![0.0; m], vec![0.0; m]),
    };

    let gram = Gram::analyze(a, settings);
    let sigma = settings.sigma;
    let mut rho = settings.rho;
    let mut lin = LinearSolver::new(a, &gram, sigma, rho)?;

    let mut work = Work {
        m: vec![0.0; m],
        r: vec![0.0; n],
        z: vec![0.0; n],
        p: vec![0.0; n],
        ap: vec![0.0; n],
    };
    let mut rhs = vec![0.0; n];
    let mut xt = x.clone();
    let mut st = vec![0.0; m];
    let mut tmp_m = vec![0.0; m];
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    let mut y_prev = y.clone();
    let mut x_prev = x.clone();
    let alpha = settings.alpha;
    let tol = settings.tol;
    let tol_inf = tol.max(1e-8) * 10.0;
    let check_every = settings.check_every.max(1);

    let result = |x: &[f64], s: &[f64], y: &[f64], status: Status, iterations: usize| -> ConicSolution {
        let (pr, dr, gap, obj) = residuals(problem, x, s, y);
        ConicSolution {
            x: x.to_vec(),
            s: s.to_vec(),
            y: y.to_vec(),
            status,
            primal_residual: pr,
            dual_residual: dr,
            gap,
            objective: obj,
            iterations,
        }
    };

    for iter in 1..=settings.max_iters {
        // rhs = σx − c + Aᵀ(ρ(b − s) + y)
        for i in 0..m {
            tmp_m[i] = rho * (b[i] - s[i]) + y[i];
        }
        a.tmul_into(&tmp_m, &mut rhs);
        for i in 0..n {
            rhs[i] += sigma * x[i] - c[i];
        }
        lin.solve(a, &gram, sigma, rho, &rhs, &mut xt, &mut work);
        a.mul_into(&xt, &mut ax);
        for i in 0..m {
            st[i] = b[i] - ax[i];
        }

        let check = iter % check_every == 0 || iter == settings.max_iters;
        if check {
            x_prev.copy_from_slice(&x);
            y_prev.copy_from_slice(&y);
        }
        for i in 0..n {
            x[i] = alpha * xt[i] + (1.0 - alpha) * x[i];
        }
        // tmp_m = ŝ, s ← Π(ŝ + y/ρ), y ← y + ρ(ŝ − s)
        for i in 0..m {
            tmp_m[i] = alpha * st[i] + (1.0 - alpha) * s[i];
            s[i] = tmp_m[i] + y[i] / rho;
        }
        project_cone(&problem.cones, &mut s);
        for i in 0..m {
            y[i] += rho * (tmp_m[i] - s[i]);
        }

        if !check {
            continue;
        }
        let (pr, dr, gap, _) = residuals(problem, &x, &s, &y);
        if pr <= tol && dr <= tol && gap <= tol {
            return Ok(result(&x, &s, &y, Status::Optimal, iter));
        }
        if monitor(Iterate { x: &x, s: &s, y: &y, iteration: iter }) {
            return Ok(result(&x, &s, &y, Status::Stopped, iter));
        }

        // Infeasibility certificates from the iterate differences.
        let dy: Vec<f64> = y.iter().zip(&y_prev).map(|(a, b)| a - b).collect();
        let dy_norm = inf_norm(&dy);
        if dy_norm > 0.0 {
            a.tmul_into(&dy, &mut aty);
            let bdy = dot(b, &dy);
            if inf_norm(&aty) <= tol_inf * dy_norm && bdy > tol_inf * dy_norm {
                let mut proj = dy.clone();
                project_cone(&problem.cones, &mut proj);
                // dy must lie in the polar cone: its projection onto K vanishes.
                if inf_norm(&proj) <= tol_inf * dy_norm {
                    return Ok(result(&x, &s, &y, Status::Infeasible, iter));
                }
            }
        }
        let dx: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a - b).collect();
        let dx_norm = inf_norm(&dx);
        if dx_norm > 0.0 && dot(c, &dx) < -tol_inf * dx_norm {
            let mut neg_adx = vec![0.0; m];
            a.mul_into(&dx, &mut neg_adx);
            neg_adx.iter_mut().for_each(|v| *v = -*v);
            let mut proj = neg_adx.clone();
            project_cone(&problem.cones, &mut proj);
            let dist = neg_adx.iter().zip(&proj).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if dist <= tol_inf * dx_norm {
                return Ok(result(&x, &s, &y, Status::Unbounded, iter));
            }
        }

        if settings.adaptive_rho && iter % (check_every * 5) == 0 {
            let (pr_raw, pr_scale, dr_raw, dr_scale) = raw_residuals(problem, &x, &s, &y);
            let ratio = ((pr_raw / pr_scale.max(1e-30)) / (dr_raw / dr_scale.max(1e-30)).max(1e-30)).sqrt();
            let new_rho = (rho * ratio).clamp(1e-6, 1e6);
            if ratio.is_finite() && (new_rho > 5.0 * rho || new_rho < rho / 5.0) {
                rho = new_rho;
                lin = LinearSolver::new(a, &gram, sigma, rho)?;
            }
        }
    }
    Ok(result(&x, &s, &y, Status::MaxIters, settings.max_iters))
}

/// Unnormalized primal/dual residual norms and their scales.
fn raw_residuals(p: &ConicProblem, x: &[f64], s: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let (m, n) = (p.a.nrows(), p.a.ncols());
    let mut ax = vec![0.0; m];
    p.a.mul_into(x, &mut ax);
    let mut aty = vec![0.0; n];
    p.a.tmul_into(y, &mut aty);
    let rp = (0..m).map(|i| (ax[i] + s[i] - p.b[i]).abs()).fold(0.0, f64::max);
    let rd = (0..n).map(|i| (p.c[i] - aty[i]).abs()).fold(0.0, f64::max);
    let ps = inf_norm(&ax).max(inf_norm(s)).max(inf_norm(&p.b));
    let ds = inf_norm(&aty).max(inf_norm(&p.c));
    (rp, ps, rd, ds)
}

fn residuals(p: &ConicProblem, x: &[f64], s: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let (rp, ps, rd, ds) = raw_residuals(p, x, s, y);
    let pobj = dot(&p.c, x);
    let dobj = dot(&p.b, y);
    (
        rp / (1.0 + ps),
        rd / (1.0 + ds),
        (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs()),
        pobj,
    )
}
