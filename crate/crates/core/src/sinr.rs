//! SINR evaluation, directly from effective channels and through the reduction
//! that makes every beamformed channel affine in one IRS's phase vector.
//!
//! Fix every phase vector except `θ_{l̄}`. Each user's channel becomes
//! `h_{l,k} = A θ_{l̄} + b`:
//!
//! * own group (`l = l̄`): `A = R[l̄][l̄][k] + S`, `b = U`;
//! * other groups (`l ≠ l̄`): `A = R[l̄][l][k] + T`, `b = U + S θ_l`,
//!
//! where `S` collects the secondary terms through IRSs other than `l̄` and `l`,
//! `T = Σ_j Q[l̄][l][k][j] θ_{l,j}` is the reflection off the user's own IRS
//! into IRS `l̄`, and `U = Σ_{l'≠l̄} R[l'][l][k] θ_{l'}`.
//!
//! Interference seen by receiver `i` uses *its* beamformer on the other
//! users' channels, so the coefficients are indexed by receiver and
//! transmitter: `√P_c · w_iᴴ h_c = q[i][c]ᴴ θ_{l̄} + q̄[i][c]`.

use num_complex::Complex64;

use crate::cascade::{CascadedChannels, PhaseConfig};
use crate::error::{invalid, Result};
use crate::linalg::{dotc, CMat, CVec, ONE};

/// SINR of column `user` per the uplink model:
/// `P_i|w_iᴴh_i|² / (Σ_{c≠i} P_c|w_iᴴh_c|² + σ²‖w_i‖²)`.
pub fn sinr_direct(w: &CMat, h: &CMat, powers: &[f64], sigma2: f64, user: usize) -> Result<f64> {
    if w.shape() != h.shape() || powers.len() != h.ncols() {
        return Err(invalid("beamformers, channels and powers disagree in shape"));
    }
    if user >= h.ncols() {
        return Err(invalid(format!("user {user} out of range")));
    }
    let wi = w.column(user);
    let wn = wi.norm_squared();
    if wn == 0.0 {
        return Err(invalid(format!("beamformer of user {user} is zero")));
    }
    let mut signal = 0.0;
    let mut interference = 0.0;
    for c in 0..h.ncols() {
        let g = powers[c] * wi.dotc(&h.column(c)).norm_sqr();
        if c == user {
            signal = g;
        } else {
            interference += g;
        }
    }
    Ok(signal / (interference + sigma2 * wn))
}

/// The `S`, `T`, `U` terms of one user with respect to IRS `l̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionTerms {
    /// `N × M_l`; column `j` is `Σ_{l'∉{l̄,l}} Q[l'][l][k][j] θ_{l'}`.
    pub s: CMat,
    /// `N × M_{l̄}`, present only for `l ≠ l̄`.
    pub t: Option<CMat>,
    /// `Σ_{l'≠l̄} R[l'][l][k] θ_{l'}`.
    pub u: CVec,
}

impl ReductionTerms {
    /// `(A, b)` with `h_{l,k} = A θ_{l̄} + b`.
    pub fn affine(&self, cc: &CascadedChannels, phases: &PhaseConfig, lbar: usize, l: usize, k: usize) -> (CMat, CVec) {
        let r = cc.r(lbar, l, k);
        match &self.t {
            None => (r + &self.s, self.u.clone()),
            Some(t) => (r + t, &self.u + &self.s * &phases.theta[l]),
        }
    }
}

pub fn reduction_terms(
    cc: &CascadedChannels,
    phases: &PhaseConfig,
    lbar: usize,
    l: usize,
    k: usize,
) -> Result<ReductionTerms> {
    let l_count = cc.num_irs();
    if lbar >= l_count || l >= l_count || k >= cc.users_per_irs()[l] {
        return Err(invalid(format!("indices (l̄={lbar}, l={l}, k={k}) out of range")));
    }
    if phases.num_irs() != l_count {
        return Err(invalid("phase configuration does not match the IRS count"));
    }
    let n = cc.num_bs_antennas();
    let m = cc.elements();

    let mut s = CMat::zeros(n, m[l]);
    for lp in (0..l_count).filter(|&lp| lp != lbar && lp != l) {
        for (j, qj) in cc.q(lp, l, k).iter().enumerate() {
            let mut col = s.column_mut(j);
            col.gemv(ONE, qj, &phases.theta[lp], ONE);
        }
    }

    let t = (l != lbar).then(|| {
        let mut t = CMat::zeros(n, m[lbar]);
        for (j, qj) in cc.q(lbar, l, k).iter().enumerate() {
            t += qj * phases.theta[l][j];
        }
        t
    });

    let mut u = CVec::zeros(n);
    for lp in (0..l_count).filter(|&lp| lp != lbar) {
        u.gemv(ONE, cc.r(lp, l, k), &phases.theta[lp], ONE);
    }
    Ok(ReductionTerms { s, t, u })
}

/// Coefficients of every beamformed channel as an affine function of `θ_{l̄}`.
#[derive(Debug, Clone)]
pub struct ReducedCoeffs {
    pub lbar: usize,
    /// `q[i][c]`, length `M_{l̄}`.
    pub q: Vec<Vec<CVec>>,
    /// `q̄[i][c]`.
    pub qbar: Vec<Vec<Complex64>>,
    /// `σ²‖w_i‖²`.
    pub sigma2: Vec<f64>,
}

impl ReducedCoeffs {
    pub fn num_users(&self) -> usize {
        self.sigma2.len()
    }

    pub fn dim(&self) -> usize {
        self.q.first().and_then(|row| row.first()).map_or(0, |v| v.len())
    }

    /// `q[i][c]ᴴ θ + q̄[i][c]`.
    #[inline]
    pub fn amplitude(&self, theta: &CVec, i: usize, c: usize) -> Complex64 {
        dotc(&self.q[i][c], theta) + self.qbar[i][c]
    }

    /// Interference-free co-phasing bound `(Σ_j|q_ii,j| + |q̄_ii|)² / σ²_i`
    /// on user `i`'s SINR over unit-modulus `θ`.
    pub fn co_phasing_bound(&self, i: usize) -> f64 {
        let s: f64 = self.q[i][i].iter().map(|z| z.norm()).sum::<f64>() + self.qbar[i][i].norm();
        s * s / self.sigma2[i]
    }
}

/// Builds [`ReducedCoeffs`] for IRS `lbar` given the other IRSs' phases in
/// `phases` and beamformers `w` (columns in channel order).
pub fn reduced_coeffs(
    cc: &CascadedChannels,
    phases: &PhaseConfig,
    w: &CMat,
    powers: &[f64],
    sigma2: f64,
    lbar: usize,
) -> Result<ReducedCoeffs> {
    let users = cc.users();
    if w.ncols() != users.len() || w.nrows() != cc.num_bs_antennas() || powers.len() != users.len() {
        return Err(invalid("beamformers or powers do not match the channel"));
    }
    let kk = users.len();
    let mut q = vec![Vec::with_capacity(kk); kk];
    let mut qbar = vec![Vec::with_capacity(kk); kk];
    for (c, &(l, k)) in users.iter().enumerate() {
        let terms = reduction_terms(cc, phases, lbar, l, k)?;
        let (a, b) = terms.affine(cc, phases, lbar, l, k);
        let amp = Complex64::from(powers[c].sqrt());
        // Column i of Aᴴ W is Aᴴ w_i.
        let aw = a.adjoint() * w * amp;
        let bw = w.adjoint() * b * amp;
        for i in 0..kk {
            q[i].push(aw.column(i).into_owned());
            qbar[i].push(bw[i]);
        }
    }
    let sigma2 = (0..kk).map(|i| sigma2 * w.column(i).norm_squared()).collect();
    Ok(ReducedCoeffs { lbar, q, qbar, sigma2 })
}

/// SINR of user `i` for phase vector `theta` of IRS `l̄`.
pub fn sinr_reduced(theta: &CVec, coeffs: &ReducedCoeffs, i: usize) -> f64 {
    let mut signal = 0.0;
    let mut interference = 0.0;
    for c in 0..coeffs.num_users() {
        let g = coeffs.amplitude(theta, i, c).norm_sqr();
        if c == i {
            signal = g;
        } else {
            interference += g;
        }
    }
    let den = interference + coeffs.sigma2[i];
    if den > 0.0 {
        signal / den
    } else {
        0.0
    }
}

/// `min_i` [`sinr_reduced`].
pub fn min_sinr_reduced(theta: &CVec, coeffs: &ReducedCoeffs) -> f64 {
    (0..coeffs.num_users())
        .map(|i| sinr_reduced(theta, coeffs, i))
        .fold(f64::INFINITY, f64::min)
}
