//! Cascaded channels and effective per-user channels.
//!
//! For user `(l, k)` the received channel is
//!
//! ```text
//! h = Σ_{l'} R[l'][l][k] θ_{l'} + Σ_{l'≠l} Σ_j Q[l'][l][k][j] θ_{l'} θ_{l,j}
//! ```
//!
//! with `R[l'][l][k] = G[l'] diag(u[l'][l][k])` (user → IRS l' → BS) and
//! `Q[l'][l][k][j] = G[l'] diag(column j of D[l'][l] diag(u[l][l][k]))`
//! (user → own IRS l → IRS l' → BS).

use rand::Rng;

use crate::error::{invalid, Result};
use crate::linalg::{cis, CMat, CVec, ONE, ZERO};
use crate::scene::{RawChannels, Scene};

/// One unit-modulus phase vector per IRS.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseConfig {
    pub theta: Vec<CVec>,
}

impl PhaseConfig {
    pub fn ones(elements: &[usize]) -> Self {
        Self {
            theta: elements.iter().map(|&m| CVec::from_element(m, ONE)).collect(),
        }
    }

    /// Phases drawn uniformly on the unit circle.
    pub fn random<R: Rng + ?Sized>(elements: &[usize], rng: &mut R) -> Self {
        Self {
            theta: elements
                .iter()
                .map(|&m| CVec::from_fn(m, |_, _| cis(2.0 * std::f64::consts::PI * rng.random::<f64>())))
                .collect(),
        }
    }

    pub fn num_irs(&self) -> usize {
        self.theta.len()
    }

    pub fn is_unit_modulus(&self, tol: f64) -> bool {
        self.theta.iter().flatten().all(|z| (z.norm() - 1.0).abs() <= tol)
    }
}

/// Precomputed `R` and `Q` matrices of one channel realization. Immutable
/// after construction.
#[derive(Debug, Clone)]
pub struct CascadedChannels {
    n: usize,
    elements: Vec<usize>,
    users_per_irs: Vec<usize>,
    /// `r[l'][l][k]`, `N × M_{l'}`.
    r: Vec<Vec<Vec<CMat>>>,
    /// `q[l'][l][k][j]`, `N × M_{l'}`, `j < M_l`; empty when the pair is excluded.
    q: Vec<Vec<Vec<Vec<CMat>>>>,
    secondary: bool,
    /// `pair_mask[l'][l]`: the `l → l'` secondary reflection is modeled.
    pair_mask: Vec<Vec<bool>>,
}

impl CascadedChannels {
    /// Builds `R` for every link and `Q` for the IRS pairs within `cutoff_m`
    /// when `include_secondary` is set.
    pub fn build(raw: &RawChannels, include_secondary: bool, cutoff_m: f64, scene: &Scene) -> Self {
        let l_count = raw.num_irs();
        let elements = raw.elements();
        let users_per_irs = raw.users_per_irs();

        let r = (0..l_count)
            .map(|lp| {
                raw.u[lp]
                    .iter()
                    .map(|group| group.iter().map(|u| scale_columns(&raw.g[lp], u)).collect())
                    .collect()
            })
            .collect();

        let pair_mask: Vec<Vec<bool>> = (0..l_count)
            .map(|lp| {
                (0..l_count)
                    .map(|l| include_secondary && lp != l && scene.irs_distance(lp, l) <= cutoff_m)
                    .collect()
            })
            .collect();

        let q = (0..l_count)
            .map(|lp| {
                (0..l_count)
                    .map(|l| {
                        if !pair_mask[lp][l] {
                            return vec![Vec::new(); users_per_irs[l]];
                        }
                        let d = raw.d[lp][l].as_ref().expect("inter-IRS link for l' != l");
                        raw.u[l][l]
                            .iter()
                            .map(|u_own| {
                                (0..elements[l])
                                    .map(|j| {
                                        let col = d.column(j) * u_own[j];
                                        scale_columns(&raw.g[lp], &col)
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();

        Self {
            n: raw.num_bs_antennas(),
            elements,
            users_per_irs,
            r,
            q,
            secondary: include_secondary,
            pair_mask,
        }
    }

    /// Same realization with every secondary term dropped.
    pub fn without_secondary(&self) -> Self {
        let l_count = self.num_irs();
        Self {
            q: (0..l_count)
                .map(|_| self.users_per_irs.iter().map(|&k| vec![Vec::new(); k]).collect())
                .collect(),
            secondary: false,
            pair_mask: vec![vec![false; l_count]; l_count],
            ..self.clone()
        }
    }

    pub fn num_irs(&self) -> usize {
        self.elements.len()
    }

    pub fn num_bs_antennas(&self) -> usize {
        self.n
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn users_per_irs(&self) -> &[usize] {
        &self.users_per_irs
    }

    pub fn num_users(&self) -> usize {
        self.users_per_irs.iter().sum()
    }

    pub fn secondary_enabled(&self) -> bool {
        self.secondary
    }

    pub fn pair_mask(&self) -> &[Vec<bool>] {
        &self.pair_mask
    }

    /// Number of materialized `Q` matrices.
    pub fn q_count(&self) -> usize {
        self.q.iter().flatten().flatten().map(Vec::len).sum()
    }

    pub fn r(&self, lp: usize, l: usize, k: usize) -> &CMat {
        &self.r[lp][l][k]
    }

    /// `Q[l'][l][k]` as a slice over `j`; empty when not modeled.
    pub fn q(&self, lp: usize, l: usize, k: usize) -> &[CMat] {
        &self.q[lp][l][k]
    }

    /// Users in column order `(0,0), (0,1), …, (L-1, K_{L-1}-1)`.
    pub fn users(&self) -> Vec<(usize, usize)> {
        self.users_per_irs
            .iter()
            .enumerate()
            .flat_map(|(l, &k)| (0..k).map(move |k| (l, k)))
            .collect()
    }

    /// Column index of user `(l, k)`.
    pub fn user_index(&self, l: usize, k: usize) -> usize {
        self.users_per_irs[..l].iter().sum::<usize>() + k
    }

    fn check_phases(&self, phases: &PhaseConfig) -> Result<()> {
        if phases.num_irs() != self.num_irs()
            || phases.theta.iter().zip(&self.elements).any(|(t, &m)| t.len() != m)
        {
            return Err(invalid("phase configuration does not match the IRS sizes"));
        }
        Ok(())
    }

    /// Effective channel `h_{l,k}` of user `(l, k)`.
    pub fn effective_channel(&self, phases: &PhaseConfig, l: usize, k: usize) -> Result<CVec> {
        self.check_phases(phases)?;
        if l >= self.num_irs() || k >= self.users_per_irs[l] {
            return Err(invalid(format!("user ({l}, {k}) out of range")));
        }
        Ok(self.channel_unchecked(phases, l, k))
    }

    pub(crate) fn channel_unchecked(&self, phases: &PhaseConfig, l: usize, k: usize) -> CVec {
        let mut h = CVec::from_element(self.n, ZERO);
        for lp in 0..self.num_irs() {
            h.gemv(ONE, &self.r[lp][l][k], &phases.theta[lp], ONE);
            for (j, qj) in self.q[lp][l][k].iter().enumerate() {
                h.gemv(phases.theta[l][j], qj, &phases.theta[lp], ONE);
            }
        }
        h
    }

    /// `H = [h_{0,0}, …]`, `N × K` in [`users`](Self::users) order.
    pub fn effective_channel_matrix(&self, phases: &PhaseConfig) -> Result<CMat> {
        self.check_phases(phases)?;
        let users = self.users();
        let mut h = CMat::zeros(self.n, users.len());
        for (c, &(l, k)) in users.iter().enumerate() {
            h.set_column(c, &self.channel_unchecked(phases, l, k));
        }
        Ok(h)
    }
}

/// `a · diag(v)`.
fn scale_columns(a: &CMat, v: &CVec) -> CMat {
    let mut out = a.clone();
    for (mut col, s) in out.column_iter_mut().zip(v.iter()) {
        col *= *s;
    }
    out
}
