//! Cell geometry and physical channel synthesis.
//!
//! Positions are in meters with the base station (BS) near the origin and the
//! IRS row along the y axis. All arrays (BS antennas, IRS elements) are modeled
//! as uniform linear arrays along the y axis; the line-of-sight component of a
//! Rician link is the far-field response of those arrays.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beamform::Method;
use crate::error::{invalid, Result};
use crate::linalg::{cis, db_to_linear, CMat, CVec};

/// Reference loss at 1 m, in dB.
pub const REFERENCE_LOSS_DB: f64 = -30.0;

/// Thermal noise density, dBm/Hz.
pub const NOISE_DENSITY_DBM_HZ: f64 = -174.0;

/// Axis-aligned ground rectangle, `x = [min, max]`, `y = [min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Rect {
    fn is_valid(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| v.is_finite())
            && self.x[0] <= self.x[1]
            && self.y[0] <= self.y[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Geometry {
    /// Ground position of the BS.
    pub bs_position: [f64; 2],
    /// Ground position of each IRS; derived from `user_region` when empty.
    pub irs_positions: Vec<[f64; 2]>,
    /// Rectangle in which each group's users are dropped; derived when empty.
    pub user_areas: Vec<Rect>,
    /// Region split into equal strips (along y) when positions are derived.
    pub user_region: Rect,
    /// x coordinate of derived IRS positions.
    pub irs_x: f64,
    pub bs_height: f64,
    pub irs_height: f64,
    pub user_height: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            bs_position: [0.0, 0.0],
            irs_positions: Vec::new(),
            user_areas: Vec::new(),
            user_region: Rect {
                x: [60.0, 80.0],
                y: [-20.0, 20.0],
            },
            irs_x: 60.0,
            bs_height: 25.0,
            irs_height: 30.0,
            user_height: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Radio {
    /// Per-user transmit power.
    pub tx_power_dbm: f64,
    pub bandwidth_hz: f64,
    /// Pathloss exponent of the BS–IRS and IRS–IRS links.
    pub pathloss_exp_los: f64,
    /// Pathloss exponent of the user–IRS links.
    pub pathloss_exp_nlos: f64,
    pub rician_factor_db: f64,
    pub gain_bs_dbi: f64,
    pub gain_irs_dbi: f64,
    pub gain_user_dbi: f64,
    /// Only affects the line-of-sight phases.
    pub carrier_hz: f64,
    pub element_spacing_wavelengths: f64,
}

impl Default for Radio {
    fn default() -> Self {
        Self {
            tx_power_dbm: 30.0,
            bandwidth_hz: 180e3,
            pathloss_exp_los: 2.2,
            pathloss_exp_nlos: 3.0,
            rician_factor_db: 5.0,
            gain_bs_dbi: 5.0,
            gain_irs_dbi: 5.0,
            gain_user_dbi: 0.0,
            carrier_hz: 3.5e9,
            element_spacing_wavelengths: 0.5,
        }
    }
}

/// Initial phase configuration for the alternating optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseInit {
    #[default]
    Random,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// Stall tolerance on the minimum SINR between iterations.
    pub xi: f64,
    /// Relative accuracy of the bisection on the SINR target.
    pub epsilon: f64,
    /// Maximum number of alternating-optimization iterations.
    pub max_iterations: usize,
    pub randomizations: usize,
    pub beamformer: Method,
    pub init: PhaseInit,
    /// Stopping tolerance of the conic solver.
    pub conic_tol: f64,
    pub conic_max_iters: usize,
    /// Minimum slack accepted as feasible in the relaxed problem.
    pub feasibility_tol: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            xi: 1e-3,
            epsilon: 3e-3,
            max_iterations: 50,
            randomizations: 1000,
            beamformer: Method::Mmse,
            init: PhaseInit::Random,
            conic_tol: 1e-6,
            conic_max_iters: 50_000,
            feasibility_tol: 1e-6,
        }
    }
}

fn default_num_bs_antennas() -> usize {
    16
}

fn default_true() -> bool {
    true
}

fn default_cutoff() -> f64 {
    f64::INFINITY
}

/// Everything needed to build one scenario. Empty vectors are filled by
/// [`ScenarioConfig::resolved`] with the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_irs: usize,
    #[serde(default = "default_num_bs_antennas")]
    pub num_bs_antennas: usize,
    /// Elements per IRS (default 64 each).
    #[serde(default)]
    pub elements_per_irs: Vec<usize>,
    /// Users served by each IRS (default 3 each).
    #[serde(default)]
    pub users_per_irs: Vec<usize>,
    #[serde(default = "default_true")]
    pub secondary_reflections: bool,
    /// IRS pairs farther apart than this carry no secondary reflection.
    #[serde(default = "default_cutoff")]
    pub secondary_distance_cutoff_m: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub radio: Radio,
    #[serde(default)]
    pub solver: SolverSettings,
}

impl ScenarioConfig {
    /// Defaults for `num_irs` surfaces; call [`resolved`](Self::resolved)
    /// after adjusting fields.
    pub fn with_irs(num_irs: usize) -> Self {
        Self {
            num_irs,
            num_bs_antennas: default_num_bs_antennas(),
            elements_per_irs: Vec::new(),
            users_per_irs: Vec::new(),
            secondary_reflections: true,
            secondary_distance_cutoff_m: f64::INFINITY,
            rng_seed: 0,
            geometry: Geometry::default(),
            radio: Radio::default(),
            solver: SolverSettings::default(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.users_per_irs.iter().sum()
    }

    /// Fills derived fields and checks every invariant.
    pub fn resolved(mut self) -> Result<Self> {
        let l = self.num_irs;
        if l == 0 {
            return Err(invalid("num_irs must be at least 1"));
        }
        if self.num_bs_antennas == 0 {
            return Err(invalid("num_bs_antennas must be at least 1"));
        }
        if self.elements_per_irs.is_empty() {
            self.elements_per_irs = vec![64; l];
        }
        if self.users_per_irs.is_empty() {
            self.users_per_irs = vec![3; l];
        }
        if self.elements_per_irs.len() != l || self.users_per_irs.len() != l {
            return Err(invalid(format!(
                "elements_per_irs and users_per_irs must have num_irs = {l} entries"
            )));
        }
        if self.elements_per_irs.contains(&0) || self.users_per_irs.contains(&0) {
            return Err(invalid("every IRS needs at least one element and one user"));
        }

        let g = &mut self.geometry;
        if !g.user_region.is_valid() {
            return Err(invalid("user_region must be a finite, ordered rectangle"));
        }
        let strip = (g.user_region.y[1] - g.user_region.y[0]) / l as f64;
        if g.irs_positions.is_empty() {
            g.irs_positions = (0..l)
                .map(|i| [g.irs_x, g.user_region.y[0] + (i as f64 + 0.5) * strip])
                .collect();
        }
        if g.user_areas.is_empty() {
            g.user_areas = (0..l)
                .map(|i| Rect {
                    x: g.user_region.x,
                    y: [
                        g.user_region.y[0] + i as f64 * strip,
                        g.user_region.y[0] + (i as f64 + 1.0) * strip,
                    ],
                })
                .collect();
        }
        if g.irs_positions.len() != l || g.user_areas.len() != l {
            return Err(invalid("irs_positions and user_areas need num_irs entries"));
        }
        let finite = g.bs_position.iter().all(|v| v.is_finite())
            && g.irs_positions.iter().flatten().all(|v| v.is_finite())
            && g.user_areas.iter().all(Rect::is_valid);
        if !finite {
            return Err(invalid("positions must be finite"));
        }
        if !(g.bs_height > 0.0 && g.irs_height > 0.0 && g.user_height > 0.0) {
            return Err(invalid("heights must be positive"));
        }

        let r = &self.radio;
        if !r.tx_power_dbm.is_finite() {
            return Err(invalid("tx_power_dbm must be finite"));
        }
        if !(r.bandwidth_hz > 0.0) {
            return Err(invalid("bandwidth_hz must be positive"));
        }
        if !(r.carrier_hz > 0.0 && r.element_spacing_wavelengths > 0.0) {
            return Err(invalid("carrier_hz and element spacing must be positive"));
        }
        let s = &self.solver;
        if !(s.xi >= 0.0) || !(s.epsilon > 0.0) || s.max_iterations == 0 {
            return Err(invalid("solver needs xi >= 0, epsilon > 0, max_iterations >= 1"));
        }
        if self.secondary_distance_cutoff_m.is_nan() || self.secondary_distance_cutoff_m < 0.0 {
            return Err(invalid("secondary_distance_cutoff_m must be >= 0"));
        }
        Ok(self)
    }

    /// Noise power at the BS in watts.
    pub fn noise_power_w(&self) -> f64 {
        crate::linalg::dbm_to_watts(NOISE_DENSITY_DBM_HZ + 10.0 * self.radio.bandwidth_hz.log10())
    }

    pub fn tx_power_w(&self) -> f64 {
        crate::linalg::dbm_to_watts(self.radio.tx_power_dbm)
    }
}

/// Sampled node positions (3-D, meters).
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bs_position: [f64; 3],
    pub irs_positions: Vec<[f64; 3]>,
    /// `users[l][k]`: user `k` of group `l`.
    pub users: Vec<Vec<[f64; 3]>>,
}

impl Scene {
    /// Drops each group's users uniformly in its rectangle.
    pub fn sample<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Self> {
        let g = &cfg.geometry;
        if g.irs_positions.len() != cfg.num_irs || g.user_areas.len() != cfg.num_irs {
            return Err(invalid("config is not resolved"));
        }
        let users = g
            .user_areas
            .iter()
            .zip(&cfg.users_per_irs)
            .map(|(area, &k)| {
                (0..k)
                    .map(|_| {
                        let x = area.x[0] + (area.x[1] - area.x[0]) * rng.random::<f64>();
                        let y = area.y[0] + (area.y[1] - area.y[0]) * rng.random::<f64>();
                        [x, y, g.user_height]
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            bs_position: [g.bs_position[0], g.bs_position[1], g.bs_height],
            irs_positions: g
                .irs_positions
                .iter()
                .map(|p| [p[0], p[1], g.irs_height])
                .collect(),
            users,
        })
    }

    pub fn irs_distance(&self, a: usize, b: usize) -> f64 {
        distance(&self.irs_positions[a], &self.irs_positions[b])
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// The physical links of one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawChannels {
    /// `u[l'][l][k]`: user `(l, k)` to IRS `l'`, length `M_{l'}`.
    pub u: Vec<Vec<Vec<CVec>>>,
    /// `d[l][l']`: IRS `l'` to IRS `l` (`M_l × M_{l'}`); `None` on the diagonal.
    pub d: Vec<Vec<Option<CMat>>>,
    /// `g[l]`: IRS `l` to BS, `N × M_l`.
    pub g: Vec<CMat>,
}

impl RawChannels {
    pub fn num_irs(&self) -> usize {
        self.g.len()
    }

    pub fn num_bs_antennas(&self) -> usize {
        self.g.first().map_or(0, |g| g.nrows())
    }

    pub fn elements(&self) -> Vec<usize> {
        self.g.iter().map(|g| g.ncols()).collect()
    }

    pub fn users_per_irs(&self) -> Vec<usize> {
        self.u.first().map_or_else(Vec::new, |row| row.iter().map(Vec::len).collect())
    }

    /// FNV-1a hash over the bit patterns of every entry.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for g in &self.g {
            h.matrix(g);
        }
        for row in &self.d {
            for d in row.iter().flatten() {
                h.matrix(d);
            }
        }
        for per_irs in &self.u {
            for group in per_irs {
                for v in group {
                    h.matrix(v);
                }
            }
        }
        h.0
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn bytes(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn matrix<R: nalgebra::Dim, C: nalgebra::Dim, S>(&mut self, m: &nalgebra::Matrix<Complex64, R, C, S>)
    where
        S: nalgebra::RawStorage<Complex64, R, C>,
    {
        for z in m.iter() {
            self.bytes(&z.re.to_bits().to_le_bytes());
            self.bytes(&z.im.to_bits().to_le_bytes());
        }
    }
}

/// `-174 + 10·log10(B)` dBm.
pub fn noise_power_dbm(bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(invalid(format!("bandwidth must be positive, got {bandwidth_hz}")));
    }
    Ok(NOISE_DENSITY_DBM_HZ + 10.0 * bandwidth_hz.log10())
}

/// Log-distance pathloss as a (negative) gain in dB: `-30 - 10·α·log10(d)`.
pub fn pathloss_db(distance_m: f64, exponent: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(invalid(format!("distance must be positive, got {distance_m}")));
    }
    Ok(REFERENCE_LOSS_DB - 10.0 * exponent * distance_m.log10())
}

/// Weights `(√(κ/(1+κ)), √(1/(1+κ)))` of the LOS and scattered parts.
pub fn rician_weights(rician_factor_db: f64) -> (f64, f64) {
    kappa_weights(db_to_linear(rician_factor_db))
}

fn kappa_weights(kappa: f64) -> (f64, f64) {
    if kappa.is_infinite() {
        return (1.0, 0.0);
    }
    ((kappa / (1.0 + kappa)).sqrt(), (1.0 / (1.0 + kappa)).sqrt())
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Unit-power Rician matrix mixing a unit-modulus LOS part with i.i.d.
/// scattering. Pathloss and antenna gains are applied by the caller.
pub fn rician_matrix<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rician_factor_db: f64,
    los: &CMat,
    rng: &mut R,
) -> Result<CMat> {
    if los.shape() != (rows, cols) {
        return Err(invalid(format!(
            "LOS component is {:?}, expected ({rows}, {cols})",
            los.shape()
        )));
    }
    if !rician_factor_db.is_finite() {
        return Err(invalid("rician factor must be finite"));
    }
    Ok(mix(db_to_linear(rician_factor_db), los, rng))
}

fn mix<R: Rng + ?Sized>(kappa: f64, los: &CMat, rng: &mut R) -> CMat {
    let (a, b) = kappa_weights(kappa);
    // Column-major fill keeps the draw order fixed.
    DMatrix::from_fn(los.nrows(), los.ncols(), |_, _| complex_gaussian(rng))
        .map(|w| w * b)
        + los.map(|z| z * a)
}

/// Far-field LOS response between two uniform linear arrays along the y axis.
/// `entry[r][t] = e^{-j2πd/λ} · e^{j2πs(r·c_rx + t·c_tx)}`, which is symmetric
/// under swapping the two ends (then transposing).
pub fn los_response(
    rx: &[f64; 3],
    n_rx: usize,
    tx: &[f64; 3],
    n_tx: usize,
    radio: &Radio,
) -> CMat {
    let d = distance(rx, tx);
    let lambda = 299_792_458.0 / radio.carrier_hz;
    let s = radio.element_spacing_wavelengths;
    let c_rx = (tx[1] - rx[1]) / d;
    let c_tx = (rx[1] - tx[1]) / d;
    let common = -2.0 * PI * d / lambda;
    DMatrix::from_fn(n_rx, n_tx, |r, t| {
        cis(common + 2.0 * PI * s * (r as f64 * c_rx + t as f64 * c_tx))
    })
}

fn amplitude(distance_m: f64, exponent: f64, gains_dbi: f64) -> Result<f64> {
    Ok(db_to_linear(pathloss_db(distance_m, exponent)? + gains_dbi).sqrt())
}

/// Draws every link of the scene: Rician BS–IRS and IRS–IRS links (pathloss
/// exponent `pathloss_exp_los`) and Rayleigh user–IRS links (`pathloss_exp_nlos`).
pub fn synth_channels<R: Rng + ?Sized>(
    scene: &Scene,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<RawChannels> {
    let l_count = cfg.num_irs;
    if scene.irs_positions.len() != l_count || scene.users.len() != l_count {
        return Err(invalid("scene does not match config"));
    }
    let radio = &cfg.radio;
    let kappa = db_to_linear(radio.rician_factor_db);
    let n = cfg.num_bs_antennas;
    let m = &cfg.elements_per_irs;

    let g = (0..l_count)
        .map(|l| {
            let irs = &scene.irs_positions[l];
            let d = distance(&scene.bs_position, irs);
            let amp = amplitude(d, radio.pathloss_exp_los, radio.gain_bs_dbi + radio.gain_irs_dbi)?;
            let los = los_response(&scene.bs_position, n, irs, m[l], radio);
            Ok(mix(kappa, &los, rng) * Complex64::from(amp))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut d: Vec<Vec<Option<CMat>>> = vec![vec![None; l_count]; l_count];
    for a in 0..l_count {
        for b in (a + 1)..l_count {
            let (pa, pb) = (&scene.irs_positions[a], &scene.irs_positions[b]);
            let amp = amplitude(distance(pa, pb), radio.pathloss_exp_los, 2.0 * radio.gain_irs_dbi)?;
            let los = los_response(pa, m[a], pb, m[b], radio);
            let link = mix(kappa, &los, rng) * Complex64::from(amp);
            d[b][a] = Some(link.transpose());
            d[a][b] = Some(link);
        }
    }

    let mut u = Vec::with_capacity(l_count);
    for lp in 0..l_count {
        let irs = &scene.irs_positions[lp];
        let per_group = scene
            .users
            .iter()
            .map(|group| {
                group
                    .iter()
                    .map(|user| {
                        let amp = amplitude(
                            distance(user, irs),
                            radio.pathloss_exp_nlos,
                            radio.gain_irs_dbi + radio.gain_user_dbi,
                        )?;
                        Ok(CVec::from_fn(m[lp], |_, _| complex_gaussian(rng) * amp))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        u.push(per_group);
    }

    Ok(RawChannels { u, d, g })
}
