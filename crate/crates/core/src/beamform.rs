//! Closed-form receive beamformers at the BS for fixed effective channels.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::CMat;

/// Condition number above which zero-forcing refuses the channel.
pub const ZF_MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Mmse,
    Zf,
    Custom,
}

/// Per-user transmit powers in watts, in channel column order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    p: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return Err(invalid("transmit powers must be positive and finite"));
        }
        Ok(Self { p })
    }

    pub fn uniform(users: usize, watts: f64) -> Result<Self> {
        Self::new(vec![watts; users])
    }

    pub fn powers(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// `diag(√P_{l,k})`.
    pub fn as_diagonal(&self) -> CMat {
        DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            self.p.len(),
            self.p.iter().map(|p| Complex64::from(p.sqrt())),
        ))
    }

    /// Doubles as the scaling applied to every user's channel.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            p: self.p.iter().map(|p| p * factor).collect(),
        }
    }
}

/// One receive beamformer per user, columns in channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerBank {
    pub w: CMat,
    pub method: Method,
}

impl BeamformerBank {
    pub fn custom(w: CMat) -> Self {
        Self { w, method: Method::Custom }
    }

    pub fn num_users(&self) -> usize {
        self.w.ncols()
    }
}

/// `W = (H·diag(P)·Hᴴ + σ²I)⁻¹ H·diag(√P)`, via a Cholesky solve.
pub fn mmse(h: &CMat, p: &PowerAllocation, sigma2: f64) -> Result<BeamformerBank> {
    if !(sigma2 > 0.0) {
        return Err(invalid("noise power must be positive"));
    }
    if h.ncols() != p.len() {
        return Err(invalid("power allocation does not match channel columns"));
    }
    let hp = h * p.as_diagonal();
    let mut a = &hp * hp.adjoint();
    for i in 0..a.nrows() {
        a[(i, i)] += Complex64::from(sigma2);
    }
    // Exact Hermitian symmetry helps the factorization.
    let a = (&a + a.adjoint()) * Complex64::from(0.5);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Solver("MMSE covariance is not positive definite".into()))?;
    Ok(BeamformerBank {
        w: chol.solve(&hp),
        method: Method::Mmse,
    })
}

/// Zero-forcing: columns of `H(HᴴH)⁻¹`, each normalized to unit norm.
pub fn zf(h: &CMat, p: &PowerAllocation) -> Result<BeamformerBank> {
    if h.ncols() != p.len() {
        return Err(invalid("power allocation does not match channel columns"));
    }
    if h.ncols() > h.nrows() {
        return Err(Error::SingularMatrix { cond: f64::INFINITY });
    }
    let sv = h.clone().singular_values();
    let (hi, lo) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &s| (hi.max(s), lo.min(s)));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= ZF_MAX_CONDITION) {
        return Err(Error::SingularMatrix { cond });
    }
    let gram = h.adjoint() * h;
    let inv = gram
        .try_inverse()
        .ok_or(Error::SingularMatrix { cond })?;
    let mut w = h * inv;
    for mut col in w.column_iter_mut() {
        let n = col.norm();
        col /= Complex64::from(n);
    }
    Ok(BeamformerBank { w, method: Method::Zf })
}

/// SINR of every user for beamformers `w` and channels `h`. A zero
/// beamformer column yields SINR 0.
pub fn per_user_sinr(w: &CMat, h: &CMat, p: &PowerAllocation, sigma2: f64) -> Vec<f64> {
    let cross = w.adjoint() * h;
    let powers = p.powers();
    (0..h.ncols())
        .map(|i| {
            let signal = powers[i] * cross[(i, i)].norm_sqr();
            let interference: f64 = (0..h.ncols())
                .filter(|&c| c != i)
                .map(|c| powers[c] * cross[(i, c)].norm_sqr())
                .sum();
            let noise = sigma2 * w.column(i).norm_squared();
            let den = interference + noise;
            if den > 0.0 {
                signal / den
            } else {
                0.0
            }
        })
        .collect()
}
