//! Per-IRS phase update: semidefinite relaxation of the max-min SINR problem
//! in `θ_{l̄}`, bisection on the SINR target and Gaussian randomization back
//! to unit-modulus phases.
//!
//! With `θ̃ = [θ; 1]` and `B = [[qqᴴ, q̄q], [q̄*qᴴ, 0]]`,
//! `|qᴴθ + q̄|² = Tr(B θ̃θ̃ᴴ) + |q̄|²`. Replacing `θ̃θ̃ᴴ` by a unit-diagonal PSD
//! matrix `Ψ` turns each SINR target `γ_i ≥ δ` into a linear constraint in `Ψ`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::beamform::{per_user_sinr, PowerAllocation};
use crate::cascade::{CascadedChannels, PhaseConfig};
use crate::conic::{self, extract_hermitian, smat, svec, svec_index, Cone, ConicProblem, SparseMatrix, Status, WarmStart};
use crate::error::{invalid, Result};
use crate::linalg::{CMat, CVec, ONE, ZERO};
use crate::scene::complex_gaussian;
use crate::sinr::{min_sinr_reduced, reduced_coeffs, ReducedCoeffs};

/// `[[qqᴴ, q̄q], [q̄*qᴴ, 0]]`.
pub fn build_b(q: &CVec, qbar: Complex64) -> CMat {
    let m = q.len();
    let mut b = CMat::zeros(m + 1, m + 1);
    b.view_mut((0, 0), (m, m)).copy_from(&(q * q.adjoint()));
    for j in 0..m {
        b[(j, m)] = qbar * q[j];
        b[(m, j)] = qbar.conj() * q[j].conj();
    }
    b
}

/// `Re Tr(A B)` for square matrices of equal order.
pub fn trace_product(a: &CMat, b: &CMat) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for j in 0..n {
        for k in 0..n {
            acc += (a[(j, k)] * b[(k, j)]).re;
        }
    }
    acc
}

/// `θ̃θ̃ᴴ` with `θ̃ = [θ; 1]`.
pub fn lift(theta: &CVec) -> CMat {
    let m = theta.len();
    let mut t = CVec::from_element(m + 1, ONE);
    t.rows_mut(0, m).copy_from(theta);
    &t * t.adjoint()
}

/// The relaxed feasibility problem of one IRS at SINR target `delta`.
#[derive(Debug, Clone)]
pub struct SdrSubproblem {
    pub lbar: usize,
    /// `b[i][c]`: lifted matrix of `q[i][c]`, `q̄[i][c]`.
    pub b: Vec<Vec<CMat>>,
    pub qbar_sq: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub delta: f64,
    /// Largest modulus each `|qᴴθ + q̄|²` can reach over the unit-diagonal set.
    peak: Vec<Vec<f64>>,
    /// `(C_i, c0_i, scale_i)` at `delta`.
    rows: Vec<(CMat, f64, f64)>,
    /// `Σ_{c≠i} B_ic` and `Σ_{c≠i} |q̄_ic|² + σ²_i`.
    disturbance: Vec<(CMat, f64)>,
}

impl SdrSubproblem {
    pub fn new(coeffs: &ReducedCoeffs, delta: f64) -> Result<Self> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(invalid("SINR target must be finite and nonnegative"));
        }
        let kk = coeffs.num_users();
        let mut b = Vec::with_capacity(kk);
        let mut qbar_sq = Vec::with_capacity(kk);
        let mut peak = Vec::with_capacity(kk);
        for i in 0..kk {
            b.push((0..kk).map(|c| build_b(&coeffs.q[i][c], coeffs.qbar[i][c])).collect());
            qbar_sq.push((0..kk).map(|c| coeffs.qbar[i][c].norm_sqr()).collect());
            peak.push(
                (0..kk)
                    .map(|c| {
                        let s: f64 = coeffs.q[i][c].iter().map(|z| z.norm()).sum::<f64>() + coeffs.qbar[i][c].norm();
                        s * s
                    })
                    .collect(),
            );
        }
        let mut sub = Self {
            lbar: coeffs.lbar,
            b,
            qbar_sq,
            sigma2: coeffs.sigma2.clone(),
            delta,
            peak,
            rows: Vec::new(),
            disturbance: Vec::new(),
        };
        sub.disturbance = (0..kk)
            .map(|i| {
                let n = sub.b[i][i].nrows();
                let mut m = CMat::zeros(n, n);
                let mut c = sub.sigma2[i];
                for j in (0..kk).filter(|&j| j != i) {
                    m += &sub.b[i][j];
                    c += sub.qbar_sq[i][j];
                }
                (m, c)
            })
            .collect();
        sub.rows = (0..kk).map(|i| sub.build_row(i)).collect();
        Ok(sub)
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        let mut sub = Self {
            delta,
            rows: Vec::new(),
            ..self.clone()
        };
        sub.rows = (0..sub.num_users()).map(|i| sub.build_row(i)).collect();
        sub
    }

    fn build_row(&self, i: usize) -> (CMat, f64, f64) {
        let (cm, c0) = self.constraint_uncached(i);
        (cm, c0, self.scale_uncached(i))
    }

    pub fn num_users(&self) -> usize {
        self.sigma2.len()
    }

    /// Order of `Ψ`, i.e. `M_{l̄} + 1`.
    pub fn dim(&self) -> usize {
        self.b.first().map_or(1, |row| row[0].nrows())
    }

    /// Relaxed received power `Tr(B_ic Ψ) + |q̄_ic|²`.
    pub fn power(&self, psi: &CMat, i: usize, c: usize) -> f64 {
        trace_product(&self.b[i][c], psi) + self.qbar_sq[i][c]
    }

    fn signal_and_disturbance(&self, psi: &CMat, i: usize) -> (f64, f64) {
        let (bd, cd) = &self.disturbance[i];
        (self.power(psi, i, i), trace_product(bd, psi) + cd)
    }

    /// `min_i` of the relaxed SINR at `Ψ`: the largest target `Ψ` satisfies.
    pub fn sinr_bound(&self, psi: &CMat) -> f64 {
        (0..self.num_users())
            .map(|i| {
                let (num, den) = self.signal_and_disturbance(psi, i);
                if den > 0.0 {
                    num / den
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[cfg(test)]
    fn scale(&self, i: usize) -> f64 {
        self.rows[i].2
    }

    #[cfg(test)]
    fn constraint(&self, i: usize) -> (CMat, f64) {
        (self.rows[i].0.clone(), self.rows[i].1)
    }

    /// Normalizer of user `i`'s constraint row.
    fn scale_uncached(&self, i: usize) -> f64 {
        let interference: f64 = (0..self.num_users()).filter(|&c| c != i).map(|c| self.peak[i][c]).sum();
        let s = self.peak[i][i] + self.delta * (interference + self.sigma2[i]);
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// `C_i = B_ii − δ Σ_{c≠i} B_ic` and `c0_i = |q̄_ii|² − δ(Σ_{c≠i}|q̄_ic|² + σ²_i)`.
    fn constraint_uncached(&self, i: usize) -> (CMat, f64) {
        let mut cm = self.b[i][i].clone();
        let mut c0 = self.qbar_sq[i][i] - self.delta * self.sigma2[i];
        for c in (0..self.num_users()).filter(|&c| c != i) {
            cm -= &self.b[i][c] * Complex64::from(self.delta);
            c0 -= self.delta * self.qbar_sq[i][c];
        }
        (cm, c0)
    }

    /// Normalized minimum slack `min_i (Tr(C_iΨ) + c0_i) / scale_i`.
    pub fn min_slack(&self, psi: &CMat) -> f64 {
        self.rows
            .iter()
            .map(|(cm, c0, scale)| (trace_product(cm, psi) + c0) / scale)
            .fold(f64::INFINITY, f64::min)
    }

    /// Conic form: maximize `t` over the off-diagonal real and imaginary
    /// parts of `Ψ` (unit diagonal built in) subject to every normalized
    /// slack `≥ t` and `Ψ ⪰ 0` (embedded as a real PSD block).
    ///
    /// Variable order: for each pair `j < k` (row-major) `Re Ψ_jk` then
    /// `Im Ψ_jk`; `t` comes last. Rows: the `K` slack rows, then the PSD block.
    pub fn to_conic(&self) -> ConicProblem {
        let n = self.dim();
        let kk = self.num_users();
        let pairs = n * (n - 1) / 2;
        let nvars = 2 * pairs + 1;
        let t = nvars - 1;
        let sq2 = std::f64::consts::SQRT_2;
        let mut trips = Vec::new();
        let mut b = Vec::with_capacity(kk + 2 * n * (2 * n + 1) / 2);
        for (i, (cm, c0, s)) in self.rows.iter().enumerate() {
            let (c0, s) = (*c0, *s);
            let diag: f64 = (0..n).map(|j| cm[(j, j)].re).sum();
            b.push((diag + c0) / s);
            let mut p = 0;
            for j in 0..n {
                for k in (j + 1)..n {
                    let z = cm[(j, k)];
                    trips.push((i, 2 * p, -2.0 * z.re / s));
                    trips.push((i, 2 * p + 1, -2.0 * z.im / s));
                    p += 1;
                }
            }
            trips.push((i, t, 1.0));
        }
        let big = 2 * n;
        let mut p = 0;
        for j in 0..n {
            for k in (j + 1)..n {
                trips.push((kk + svec_index(big, k, j), 2 * p, -sq2));
                trips.push((kk + svec_index(big, k + n, j + n), 2 * p, -sq2));
                trips.push((kk + svec_index(big, j + n, k), 2 * p + 1, -sq2));
                trips.push((kk + svec_index(big, k + n, j), 2 * p + 1, sq2));
                p += 1;
            }
        }
        b.extend(svec(&DMatrix::identity(big, big)));
        let mut c = vec![0.0; nvars];
        c[t] = -1.0;
        ConicProblem {
            c,
            a: SparseMatrix::from_triplets(b.len(), nvars, &trips).expect("indices in range"),
            b,
            cones: vec![Cone::NonNeg(kk), Cone::HermitianPsd(n)],
        }
    }

    /// Unit-diagonal `Ψ` from the conic variable.
    pub fn psi_from_x(&self, x: &[f64]) -> CMat {
        let n = self.dim();
        let mut psi = CMat::identity(n, n);
        let mut p = 0;
        for j in 0..n {
            for k in (j + 1)..n {
                let z = Complex64::new(x[2 * p], x[2 * p + 1]);
                psi[(j, k)] = z;
                psi[(k, j)] = z.conj();
                p += 1;
            }
        }
        psi
    }

    /// Conic variable encoding `Ψ` with slack variable `t`.
    pub fn x_from_psi(&self, psi: &CMat, t: f64) -> Vec<f64> {
        let n = self.dim();
        let mut x = Vec::with_capacity(n * (n - 1) + 1);
        for j in 0..n {
            for k in (j + 1)..n {
                x.push(psi[(j, k)].re);
                x.push(psi[(j, k)].im);
            }
        }
        x.push(t);
        x
    }

    /// Upper bound on the optimal slack from a multiplier estimate. Any
    /// `λ ≥ 0` with `Σλ = 1` and any real diagonal `D` give
    /// `t* ≤ Σλ_i c0_i/s_i + Tr D + n·λ_max(Σλ_i C_i/s_i − D)`.
    fn slack_upper_bound(&self, y: &[f64]) -> Option<f64> {
        let kk = self.num_users();
        let n = self.dim();
        let lam: Vec<f64> = y[..kk].iter().map(|v| (-v).max(0.0)).collect();
        let total: f64 = lam.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut m = CMat::zeros(n, n);
        let mut constant = 0.0;
        for (i, li) in lam.iter().enumerate() {
            if *li == 0.0 {
                continue;
            }
            let (cm, c0, scale) = &self.rows[i];
            let w = li / total / scale;
            m += cm * Complex64::from(w);
            constant += w * c0;
        }
        let z = extract_hermitian(&smat(&y[kk..], 2 * n));
        Some(lagrangian_bound(&m, constant, &z))
    }

    /// Multiplier weights `λ_i / scale_i` (with `Σλ = 1`) and the PSD
    /// multiplier from a dual iterate.
    fn multipliers(&self, y: &[f64]) -> Option<(Vec<f64>, CMat)> {
        let kk = self.num_users();
        let lam: Vec<f64> = y[..kk].iter().map(|v| (-v).max(0.0)).collect();
        let total: f64 = lam.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let w = lam.iter().enumerate().map(|(i, l)| l / total / self.rows[i].2).collect();
        Some((w, extract_hermitian(&smat(&y[kk..], 2 * self.dim()))))
    }

    /// Weighted sums `Σ w_i B_ii`, `Σ w_i Σ_{c≠i} B_ic` and the matching
    /// constants, i.e. the pieces of `Σ w_i (signal_i − δ·disturbance_i)`.
    fn dual_cut(&self, y: &[f64]) -> Option<DualCut> {
        let (w, z) = self.multipliers(y)?;
        let n = self.dim();
        let mut cut = DualCut {
            signal: CMat::zeros(n, n),
            disturbance: CMat::zeros(n, n),
            signal_const: 0.0,
            disturbance_const: 0.0,
            z,
        };
        for (i, wi) in w.iter().enumerate().filter(|(_, wi)| **wi > 0.0) {
            let cw = Complex64::from(*wi);
            cut.signal += &self.b[i][i] * cw;
            cut.disturbance += &self.disturbance[i].0 * cw;
            cut.signal_const += wi * self.qbar_sq[i][i];
            cut.disturbance_const += wi * self.disturbance[i].1;
        }
        Some(cut)
    }

    /// Unit-diagonal PSD matrix from the cone-side iterate, if well defined.
    fn witness_from_s(&self, s: &[f64]) -> Option<CMat> {
        let n = self.dim();
        let kk = self.num_users();
        let psi = extract_hermitian(&smat(&s[kk..], 2 * n));
        let d: Vec<f64> = (0..n).map(|j| psi[(j, j)].re).collect();
        if d.iter().any(|&v| !(v > 1e-12)) {
            return None;
        }
        Some(CMat::from_fn(n, n, |j, k| {
            if j == k {
                ONE
            } else {
                psi[(j, k)] / (d[j] * d[k]).sqrt()
            }
        }))
    }
}

/// Any real diagonal `D` gives `max Tr(MΨ) + c ≤ c + Tr D + n·λ_max(M − D)`
/// over unit-diagonal PSD `Ψ` of order `n`. `D` is chosen so that `M − D`
/// is the multiple of the PSD multiplier `z` closest to `M` off the
/// diagonal, which makes the bound tight at a KKT point.
fn lagrangian_bound(m: &CMat, constant: f64, z: &CMat) -> f64 {
    let n = m.nrows();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..n {
        for k in (0..n).filter(|&k| k != j) {
            num += (z[(j, k)].conj() * m[(j, k)]).re;
            den += z[(j, k)].norm_sqr();
        }
    }
    let kappa = if den > 0.0 { num / den } else { 0.0 };
    let mut rem = m.clone();
    let mut trace_d = 0.0;
    for j in 0..n {
        let zj = kappa * z[(j, j)].re;
        trace_d += m[(j, j)].re - zj;
        rem[(j, j)] = Complex64::from(zj);
    }
    let rem = (&rem + rem.adjoint()) * Complex64::from(0.5);
    constant + trace_d + n as f64 * rem.symmetric_eigenvalues().max()
}

/// Weighted combination of the SINR constraints used to rule out targets.
struct DualCut {
    signal: CMat,
    disturbance: CMat,
    signal_const: f64,
    disturbance_const: f64,
    z: CMat,
}

impl DualCut {
    /// Upper bound on `max_Ψ Σ w_i (signal_i − δ·disturbance_i)`; a negative
    /// value proves `δ` infeasible.
    fn value(&self, delta: f64) -> f64 {
        let m = &self.signal - &self.disturbance * Complex64::from(delta);
        lagrangian_bound(&m, self.signal_const - delta * self.disturbance_const, &self.z)
    }

    /// Smallest target in `[lo, hi]` found to be ruled out, if any.
    fn smallest_excluded(&self, lo: f64, hi: f64) -> Option<f64> {
        if !(self.value(hi) < 0.0) {
            return None;
        }
        let (mut a, mut b) = (lo, hi);
        for _ in 0..12 {
            let mid = 0.5 * (a + b);
            if self.value(mid) < 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        Some(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    /// `psi` is unit-diagonal PSD with normalized slack `slack ≥ −feas_tol`.
    Feasible { psi: CMat, slack: f64 },
    /// `bound` is a certified upper bound on the slack when available; the
    /// solver running out of iterations reports `None`.
    Infeasible { bound: Option<f64> },
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdrSettings {
    pub feasibility_tol: f64,
    pub conic: conic::Settings,
}

impl Default for SdrSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-6,
            conic: conic::Settings::default(),
        }
    }
}

/// Decides whether `sub.delta` is achievable by the relaxation.
pub fn sdr_feasible(sub: &SdrSubproblem, settings: &SdrSettings) -> Result<Feasibility> {
    let n = sub.dim();
    if sub.delta == 0.0 || n == 1 {
        // Ψ = I (the only choice when n = 1) meets every target it can.
        let psi = CMat::identity(n, n);
        let slack = sub.min_slack(&psi);
        return Ok(if slack >= -settings.feasibility_tol || sub.delta == 0.0 {
            Feasibility::Feasible { psi, slack }
        } else {
            Feasibility::Infeasible { bound: Some(slack) }
        });
    }
    let problem = sub.to_conic();
    let tol = settings.feasibility_tol;
    let mut decided: Option<Feasibility> = None;
    let mut checks = 0usize;
    let sol = conic::solve_monitored(&problem, &settings.conic, None, |it| {
        checks += 1;
        if let Some(psi) = sub.witness_from_s(it.s) {
            let slack = sub.min_slack(&psi);
            if slack >= -tol {
                decided = Some(Feasibility::Feasible { psi, slack });
                return true;
            }
        }
        if checks % 3 == 0 {
            if let Some(bound) = sub.slack_upper_bound(it.y) {
                if bound < -tol {
                    decided = Some(Feasibility::Infeasible { bound: Some(bound) });
                    return true;
                }
            }
        }
        false
    })?;
    if let Some(verdict) = decided {
        return Ok(verdict);
    }
    Ok(match sol.status {
        Status::Optimal => {
            let t = *sol.x.last().expect("slack variable");
            let psi = sub.witness_from_s(&sol.s).unwrap_or_else(|| sub.psi_from_x(&sol.x));
            if t >= -tol {
                Feasibility::Feasible {
                    slack: sub.min_slack(&psi).max(t),
                    psi,
                }
            } else {
                Feasibility::Infeasible { bound: Some(t) }
            }
        }
        _ => Feasibility::Infeasible { bound: None },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bisection {
    /// Target certified by `psi`.
    pub delta_star: f64,
    pub psi: CMat,
    /// Final upper end of the bracket.
    pub upper: f64,
    pub steps: usize,
    pub solver_iterations: usize,
    /// Final solver state, to warm-start a related bisection.
    pub warm: Option<WarmStart>,
}

/// Largest target achievable by the relaxation in `[lo, hi]`, to relative
/// accuracy `epsilon`.
///
/// Each step solves the max-min slack problem at a trial target. While the
/// solver runs, every unit-diagonal PSD iterate raises `lo` to the SINR level
/// it certifies, and every multiplier estimate lowers `hi` to the smallest
/// target its Lagrangian bound rules out; the step ends once the trial
/// target is decided either way or the bracket is narrow enough. A step the
/// solver cannot decide counts as infeasible, so `lo` stays certified.
///
/// `lo_witness` must meet the target `lo` (the identity does for `lo = 0`);
/// `hi` must be an upper bound, e.g. the smallest co-phasing bound.
pub fn bisect_delta(
    coeffs: &ReducedCoeffs,
    lo: f64,
    lo_witness: Option<CMat>,
    hi: f64,
    epsilon: f64,
    settings: &SdrSettings,
) -> Result<Bisection> {
    bisect_delta_warm(coeffs, lo, lo_witness, hi, epsilon, settings, None)
}

/// [`bisect_delta`] with the first solve started from `warm`, typically the
/// final state of the previous update of the same IRS.
pub fn bisect_delta_warm(
    coeffs: &ReducedCoeffs,
    lo: f64,
    lo_witness: Option<CMat>,
    hi: f64,
    epsilon: f64,
    settings: &SdrSettings,
    warm: Option<WarmStart>,
) -> Result<Bisection> {
    if !(epsilon > 0.0) || !(lo >= 0.0) || !(hi.is_finite()) {
        return Err(invalid("bisection needs epsilon > 0, lo ≥ 0 and finite hi"));
    }
    let base = SdrSubproblem::new(coeffs, 0.0)?;
    let n = base.dim();
    let mut psi = lo_witness.unwrap_or_else(|| CMat::identity(n, n));
    if psi.shape() != (n, n) {
        return Err(invalid("witness has the wrong order"));
    }
    let mut lo = base.sinr_bound(&psi).max(0.0);
    let mut hi = hi.max(lo);
    let mut steps = 0;
    let mut solver_iterations = 0;
    let mut warm = warm;
    let done = |lo: f64, hi: f64| hi - lo <= epsilon * hi || hi <= 0.0;
    while !done(lo, hi) && n > 1 {
        // Geometric steps while the bracket spans orders of magnitude.
        let floor = (epsilon * hi).max(f64::MIN_POSITIVE);
        let mid = if hi > 4.0 * lo.max(floor) {
            (lo.max(floor) * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        let sub = base.with_delta(mid);
        let problem = sub.to_conic();
        let (mut step_lo, mut step_hi, mut step_psi) = (lo, hi, None);
        let mut checks = 0usize;
        let start = warm
            .as_ref()
            .filter(|w| w.x.len() == problem.c.len() && w.s.len() == problem.b.len());
        let sol = conic::solve_monitored(&problem, &settings.conic, start, |it| {
            checks += 1;
            if let Some(p) = sub.witness_from_s(it.s) {
                let level = base.sinr_bound(&p);
                if level > step_lo {
                    step_lo = level.min(step_hi);
                    step_psi = Some(p);
                }
            }
            if checks % 5 == 0 && step_lo < mid {
                if let Some(cut) = sub.dual_cut(it.y) {
                    if let Some(excluded) = cut.smallest_excluded(step_lo, step_hi) {
                        step_hi = excluded.max(step_lo);
                    }
                }
            }
            step_lo >= mid || step_hi <= mid || done(step_lo, step_hi)
        })?;
        steps += 1;
        solver_iterations += sol.iterations;
        if let Some(p) = sub.witness_from_s(&sol.s) {
            let level = base.sinr_bound(&p);
            if level > step_lo && level <= step_hi {
                step_lo = level;
                step_psi = Some(p);
            }
        }
        if let Some(p) = step_psi {
            psi = p;
        }
        lo = step_lo;
        hi = if step_lo < mid && step_hi > mid { mid } else { step_hi };
        warm = Some(WarmStart::from(&sol));
    }
    Ok(Bisection {
        delta_star: lo,
        psi,
        upper: hi,
        steps,
        solver_iterations,
        warm,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomizationResult {
    pub theta: CVec,
    pub achieved_min_sinr: f64,
    pub delta_star: f64,
    /// `1 − achieved / delta_star`.
    pub gap: f64,
    pub samples_used: usize,
    /// `λ₁/λ₂` of `Ψ`; huge or infinite for rank one.
    pub eigen_ratio: f64,
}

/// Maps `v` to unit-modulus phases `exp(i·arg(v_j / v_last))`.
fn dehomogenize(v: &CVec) -> CVec {
    let m = v.len() - 1;
    let anchor = v[m].conj();
    CVec::from_iterator(
        m,
        v.iter().take(m).map(|z| {
            let r = z * anchor;
            if r.norm() > 0.0 {
                Complex64::from_polar(1.0, r.arg())
            } else {
                ONE
            }
        }),
    )
}

/// Gaussian randomization: the top-eigenvector candidate plus `num_samples`
/// draws `v ~ CN(0, Ψ)`, each mapped to unit-modulus phases; returns the
/// candidate with the largest `evaluator` value (first index wins ties).
pub fn randomize_rank1<F, R>(psi: &CMat, evaluator: F, num_samples: usize, delta_star: f64, rng: &mut R) -> RandomizationResult
where
    F: Fn(&CVec) -> f64,
    R: Rng + ?Sized,
{
    let n = psi.nrows();
    let herm = (psi + psi.adjoint()) * Complex64::from(0.5);
    let eig = herm.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let l1 = eig.eigenvalues[order[0]].max(0.0);
    let l2 = if n > 1 { eig.eigenvalues[order[1]].max(0.0) } else { 0.0 };
    let eigen_ratio = if l2 > 0.0 { l1 / l2 } else { f64::INFINITY };

    // Eigen factor of Ψ; eigenvalues below round-off level are dropped.
    let floor = 1e-12 * l1;
    let mut factor = eig.eigenvectors.clone();
    for (j, mut col) in factor.column_iter_mut().enumerate() {
        let l = eig.eigenvalues[j];
        col *= Complex64::from(if l > floor { l.sqrt() } else { 0.0 });
    }

    let top = eig.eigenvectors.column(order[0]).into_owned();
    let mut best = dehomogenize(&top);
    let mut best_val = evaluator(&best);
    let mut z = CVec::from_element(n, ZERO);
    for _ in 0..num_samples {
        for e in z.iter_mut() {
            *e = complex_gaussian(rng);
        }
        let cand = dehomogenize(&(&factor * &z));
        let val = evaluator(&cand);
        if val > best_val {
            best_val = val;
            best = cand;
        }
    }
    RandomizationResult {
        theta: best,
        achieved_min_sinr: best_val,
        delta_star,
        gap: if delta_star > 0.0 { 1.0 - best_val / delta_star } else { 0.0 },
        samples_used: num_samples + 1,
        eigen_ratio,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOptSettings {
    /// Relative bisection accuracy.
    pub epsilon: f64,
    pub randomizations: usize,
    pub sdr: SdrSettings,
}

impl Default for PhaseOptSettings {
    fn default() -> Self {
        Self {
            epsilon: 3e-3,
            randomizations: 1000,
            sdr: SdrSettings::default(),
        }
    }
}

/// Outcome of one guarded IRS update.
#[derive(Debug, Clone, PartialEq)]
pub struct IrsUpdate {
    pub theta: CVec,
    /// False when the candidate would not raise the minimum SINR.
    pub accepted: bool,
    pub before: f64,
    pub after: f64,
    pub delta_star: f64,
    pub gap: f64,
    pub eigen_ratio: f64,
    pub bisection_steps: usize,
    pub solver_iterations: usize,
    pub warm: Option<WarmStart>,
}

/// Minimum SINR of the full model at `phases` with beamformers `w`.
pub fn min_sinr_direct(cc: &CascadedChannels, phases: &PhaseConfig, w: &CMat, powers: &PowerAllocation, sigma2: f64) -> Result<f64> {
    let h = cc.effective_channel_matrix(phases)?;
    Ok(per_user_sinr(w, &h, powers, sigma2).into_iter().fold(f64::INFINITY, f64::min))
}

/// Optimizes `θ_{lbar}` with everything else fixed. The candidate replaces
/// the incumbent only if it strictly raises the minimum SINR.
#[allow(clippy::too_many_arguments)]
pub fn optimize_irs<R: Rng + ?Sized>(
    cc: &CascadedChannels,
    phases: &PhaseConfig,
    w: &CMat,
    powers: &PowerAllocation,
    sigma2: f64,
    lbar: usize,
    settings: &PhaseOptSettings,
    warm: Option<WarmStart>,
    rng: &mut R,
) -> Result<IrsUpdate> {
    if lbar >= cc.num_irs() {
        return Err(invalid(format!("IRS index {lbar} out of range")));
    }
    let coeffs = reduced_coeffs(cc, phases, w, powers.powers(), sigma2, lbar)?;
    let incumbent = phases.theta[lbar].clone();
    let before = min_sinr_direct(cc, phases, w, powers, sigma2)?;
    let lo = min_sinr_reduced(&incumbent, &coeffs).max(0.0);
    let hi = (0..coeffs.num_users())
        .map(|i| coeffs.co_phasing_bound(i))
        .fold(f64::INFINITY, f64::min);
    let bis = bisect_delta_warm(&coeffs, lo, Some(lift(&incumbent)), hi, settings.epsilon, &settings.sdr, warm)?;
    let rnd = randomize_rank1(
        &bis.psi,
        |theta| min_sinr_reduced(theta, &coeffs),
        settings.randomizations,
        bis.delta_star,
        rng,
    );
    let mut candidate = phases.clone();
    candidate.theta[lbar] = rnd.theta.clone();
    let after = min_sinr_direct(cc, &candidate, w, powers, sigma2)?;
    let accepted = after > before;
    Ok(IrsUpdate {
        theta: if accepted { rnd.theta } else { incumbent },
        accepted,
        before,
        after: if accepted { after } else { before },
        delta_star: bis.delta_star,
        gap: rnd.gap,
        eigen_ratio: rnd.eigen_ratio,
        bisection_steps: bis.steps,
        solver_iterations: bis.solver_iterations,
        warm: bis.warm,
    })
}
