//! Experiment plans, Monte Carlo sweeps and CSV output.
//!
//! A plan is a TOML document with a base `[scenario]`, a `[sweep]` over
//! transmit power, IRS layouts, elements per IRS and the handling of
//! secondary reflections, and an `[output]` section:
//!
//! ```toml
//! trials = 20
//! seed = 1
//!
//! [scenario]
//! num_irs = 1
//! num_bs_antennas = 8
//!
//! [sweep]
//! tx_power_dbm = [20.0, 30.0]
//! elements_per_irs = [16]
//! secondary = ["managed", "unmanaged"]
//!
//! [[sweep.layout]]
//! name = "4x3"
//! num_irs = 4
//! users_per_irs = 3
//!
//! [output]
//! path = "results.csv"
//! timing = true
//! ```
//!
//! Trial `t` of every sweep point draws its scene and channels from
//! `derive_seed(seed, [t])`. Points that differ only in power or secondary
//! handling see the same channel realizations, and trial `t` of two layouts
//! forms a pair (common random numbers).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{AoParams, AoProblem, AoState};
use crate::beamform::PowerAllocation;
use crate::cascade::CascadedChannels;
use crate::error::{Error, Result};
use crate::scene::{synth_channels, ScenarioConfig, Scene};

/// How the inter-IRS (secondary) reflections are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Secondary {
    /// Optimized and evaluated with the full channel.
    Managed,
    /// Optimized without secondary terms, evaluated with them.
    Unmanaged,
    /// Removed from the channel altogether.
    Off,
}

impl Secondary {
    pub fn name(self) -> &'static str {
        match self {
            Secondary::Managed => "managed",
            Secondary::Unmanaged => "unmanaged",
            Secondary::Off => "off",
        }
    }
}

/// One IRS layout: `num_irs` surfaces serving `users_per_irs` users each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    #[serde(default)]
    pub name: String,
    pub num_irs: usize,
    pub users_per_irs: usize,
}

/// Sweep axes. Empty axes fall back to the base scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub tx_power_dbm: Vec<f64>,
    #[serde(rename = "layout")]
    pub layouts: Vec<Layout>,
    /// Elements on every IRS.
    pub elements_per_irs: Vec<usize>,
    pub secondary: Vec<Secondary>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub path: Option<PathBuf>,
    /// Record wall time; when false `wall_ms` is 0 so reruns are
    /// byte-identical.
    pub timing: bool,
}

fn default_trials() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Base seed; defaults to `scenario.rng_seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub output: Output,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub layout: usize,
    pub layout_name: String,
    pub elements: usize,
    pub secondary: Secondary,
    pub tx_power_dbm: f64,
    /// Fully resolved scenario for this point.
    pub config: ScenarioConfig,
    pub fingerprint: String,
}

impl ExperimentPlan {
    pub fn base_seed(&self) -> u64 {
        self.seed.unwrap_or(self.scenario.rng_seed)
    }

    fn layouts(&self) -> Vec<Layout> {
        if self.sweep.layouts.is_empty() {
            let s = &self.scenario;
            let k = s.users_per_irs.first().copied().unwrap_or(3);
            vec![Layout {
                name: String::new(),
                num_irs: s.num_irs,
                users_per_irs: k,
            }]
        } else {
            self.sweep.layouts.clone()
        }
    }

    /// Expands the grid in the order layout, elements, secondary, power.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let layouts = self.layouts();
        let powers = if self.sweep.tx_power_dbm.is_empty() {
            vec![self.scenario.radio.tx_power_dbm]
        } else {
            self.sweep.tx_power_dbm.clone()
        };
        let modes = if self.sweep.secondary.is_empty() {
            vec![if self.scenario.secondary_reflections {
                Secondary::Managed
            } else {
                Secondary::Off
            }]
        } else {
            self.sweep.secondary.clone()
        };
        let elements: Vec<Option<usize>> = if self.sweep.elements_per_irs.is_empty() {
            vec![None]
        } else {
            self.sweep.elements_per_irs.iter().copied().map(Some).collect()
        };

        let mut points = Vec::new();
        for (li, layout) in layouts.iter().enumerate() {
            for &m in &elements {
                for &mode in &modes {
                    for &p in &powers {
                        let mut cfg = self.scenario.clone();
                        if !self.sweep.layouts.is_empty() {
                            if cfg.num_irs != layout.num_irs {
                                cfg.geometry.irs_positions.clear();
                                cfg.geometry.user_areas.clear();
                                if cfg.elements_per_irs.len() != layout.num_irs {
                                    cfg.elements_per_irs.clear();
                                }
                            }
                            cfg.num_irs = layout.num_irs;
                            cfg.users_per_irs = vec![layout.users_per_irs; layout.num_irs];
                        }
                        if let Some(m) = m {
                            cfg.elements_per_irs = vec![m; cfg.num_irs];
                        }
                        cfg.radio.tx_power_dbm = p;
                        cfg.secondary_reflections = mode != Secondary::Off;
                        let cfg = cfg.resolved().map_err(|e| scenario_error(e, "scenario"))?;
                        let fingerprint = config_fingerprint(&cfg, mode);
                        points.push(SweepPoint {
                            index: points.len(),
                            layout: li,
                            layout_name: layout.name.clone(),
                            elements: cfg.elements_per_irs.first().copied().unwrap_or(0),
                            secondary: mode,
                            tx_power_dbm: p,
                            config: cfg,
                            fingerprint,
                        });
                    }
                }
            }
        }
        Ok(points)
    }

    /// Seed of trial `trial`. The same for every point, so trials are paired
    /// across all sweep axes.
    pub fn trial_seed(&self, _point: &SweepPoint, trial: usize) -> u64 {
        derive_seed(self.base_seed(), &[trial as u64])
    }
}

fn scenario_error(e: Error, key: &str) -> Error {
    match e {
        Error::InvalidArgument(message) => Error::Config {
            key: key.to_string(),
            line: 0,
            message,
        },
        other => other,
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(... splitmix64(splitmix64(base) ^ parts[0]) ... ^ parts[n-1])`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |h, &p| splitmix64(h ^ p))
}

/// FNV-1a over the serialized point config and secondary handling.
pub fn config_fingerprint(cfg: &ScenarioConfig, mode: Secondary) -> String {
    let text = toml::to_string(cfg).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes().chain(mode.name().bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Parses and validates a plan. Schema and validation errors carry the
/// offending key and its 1-based line (0 when the key is absent).
pub fn parse_config(text: &str) -> Result<ExperimentPlan> {
    let plan: ExperimentPlan = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let line = e
            .span()
            .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let key = backticked(&message)
            .or_else(|| e.span().and_then(|s| key_at(text, s.start)))
            .unwrap_or_default();
        Error::Config { key, line, message }
    })?;
    validate_plan(&plan, text)?;
    Ok(plan)
}

fn validate_plan(plan: &ExperimentPlan, text: &str) -> Result<()> {
    let fail = |key: &str, message: &str| {
        Err(Error::Config {
            key: key.to_string(),
            line: line_of(text, key),
            message: message.to_string(),
        })
    };
    if plan.trials == 0 {
        return fail("trials", "trials must be at least 1");
    }
    let s = &plan.sweep;
    // An axis spelled out as `[]` is an error; an omitted one has a default.
    for (key, empty) in [
        ("tx_power_dbm", s.tx_power_dbm.is_empty()),
        ("elements_per_irs", s.elements_per_irs.is_empty()),
        ("secondary", s.secondary.is_empty()),
    ] {
        if empty && sweep_has(text, key) {
            return fail(key, "sweep axis must not be empty");
        }
    }
    if s.elements_per_irs.contains(&0) {
        return fail("elements_per_irs", "every IRS needs at least one element");
    }
    for l in &s.layouts {
        if l.num_irs == 0 || l.users_per_irs == 0 {
            return fail("layout", "layouts need num_irs >= 1 and users_per_irs >= 1");
        }
    }
    if s.tx_power_dbm.iter().any(|p| !p.is_finite()) {
        return fail("tx_power_dbm", "powers must be finite");
    }
    plan.points().map_err(|e| match e {
        Error::Config { key, message, .. } => {
            let line = line_of(text, &key);
            Error::Config { key, line, message }
        }
        other => other,
    })?;
    Ok(())
}

fn backticked(message: &str) -> Option<String> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(message[start..start + len].to_string())
}

fn key_at(text: &str, offset: usize) -> Option<String> {
    let offset = offset.min(text.len());
    let begin = text[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line = text[begin..].lines().next()?;
    let key = line.split('=').next()?.trim().trim_matches(['[', ']']);
    (!key.is_empty()).then(|| key.to_string())
}

/// First line defining `key` (as `key =` or a `[..key]` header).
fn line_of(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            let head = t.trim_start_matches('[').trim_end_matches(']');
            t.split('=').next().map(str::trim) == Some(key)
                || (t.starts_with('[') && head.rsplit('.').next() == Some(key))
        })
        .map_or(0, |i| i + 1)
}

fn sweep_has(text: &str, key: &str) -> bool {
    let mut in_sweep = false;
    for l in text.lines() {
        let t = l.trim();
        if t.starts_with('[') {
            in_sweep = t == "[sweep]";
        } else if in_sweep && t.split('=').next().map(str::trim) == Some(key) {
            return true;
        }
    }
    false
}

/// Serializes a plan back to TOML.
pub fn emit_config(plan: &ExperimentPlan) -> Result<String> {
    toml::to_string(plan).map_err(|e| Error::Config {
        key: String::new(),
        line: 0,
        message: e.to_string(),
    })
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub fingerprint: String,
    pub seed: u64,
    pub ptx_dbm: f64,
    pub min_rate: f64,
    pub avg_rate: f64,
    pub iters: usize,
    pub gap: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub point: usize,
    pub trial: usize,
    /// Fingerprint of the raw channels the trial used.
    pub channel: u64,
    pub record: ExperimentRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub point: usize,
    pub trial: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub points: Vec<SweepPoint>,
    /// Sorted by `(point, trial)`.
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

impl ExperimentRun {
    pub fn records(&self) -> Vec<ExperimentRecord> {
        self.results.iter().map(|r| r.record.clone()).collect()
    }
}

/// Solves one trial of one sweep point, returning the terminal AO state and
/// the channel fingerprint.
pub fn run_trial(plan: &ExperimentPlan, point: &SweepPoint, trial: usize) -> Result<(AoState, u64)> {
    let cfg = &point.config;
    let seed = plan.trial_seed(point, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::sample(cfg, &mut rng)?;
    let raw = synth_channels(&scene, cfg, &mut rng)?;
    let full = CascadedChannels::build(
        &raw,
        point.secondary != Secondary::Off,
        cfg.secondary_distance_cutoff_m,
        &scene,
    );
    let params = AoParams {
        seed,
        ..AoParams::from_config(cfg)
    };
    let powers = PowerAllocation::uniform(full.num_users(), cfg.tx_power_w())?;
    let state = match point.secondary {
        Secondary::Unmanaged => {
            let model = full.without_secondary();
            AoProblem::with_model(&model, &full, powers, cfg.noise_power_w()).run(&params)?
        }
        _ => AoProblem::with_model(&full, &full, powers, cfg.noise_power_w()).run(&params)?,
    };
    Ok((state, raw.fingerprint()))
}

/// Runs every `(point, trial)` pair on the current rayon pool. Failed trials
/// are collected, not fatal.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentRun> {
    let points = plan.points()?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..plan.trials).map(move |t| (p, t)))
        .collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(p, t)| {
            let point = &points[p];
            let start = Instant::now();
            let outcome = run_trial(plan, point, t);
            let wall_ms = if plan.output.timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let seed = plan.trial_seed(point, t);
            match outcome {
                Ok((state, channel)) => Ok(TrialResult {
                    point: p,
                    trial: t,
                    channel,
                    record: ExperimentRecord {
                        fingerprint: point.fingerprint.clone(),
                        seed,
                        ptx_dbm: point.tx_power_dbm,
                        min_rate: state.min_rate(),
                        avg_rate: state.avg_rate(),
                        iters: state.iteration,
                        gap: state.sdr_gap,
                        wall_ms,
                    },
                }),
                Err(e) => Err(TrialFailure {
                    point: p,
                    trial: t,
                    seed,
                    message: e.to_string(),
                }),
            }
        })
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    // par_iter().collect() keeps job order, which is already (point, trial).
    Ok(ExperimentRun {
        points,
        results,
        failures,
    })
}

/// Writes records with a fixed header; floats use the shortest decimal that
/// round-trips.
pub fn emit_csv(records: &[ExperimentRecord], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record([
        "fingerprint", "seed", "ptx_dbm", "min_rate", "avg_rate", "iters", "gap", "wall_ms",
    ])?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Path of the point table written next to `out`: `runs/a.csv` maps to
/// `runs/a.points.csv`.
pub fn points_path(out: &Path) -> PathBuf {
    out.with_extension("points.csv")
}

/// One row per sweep point: fingerprint and the axis values behind it.
pub fn emit_points(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "fingerprint", "point", "layout", "num_irs", "users_per_irs", "elements_per_irs", "secondary", "ptx_dbm",
    ])?;
    for p in points {
        w.write_record([
            p.fingerprint.clone(),
            p.index.to_string(),
            p.layout_name.clone(),
            p.config.num_irs.to_string(),
            p.config.users_per_irs.first().copied().unwrap_or(0).to_string(),
            p.elements.to_string(),
            p.secondary.name().to_string(),
            p.tx_power_dbm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-point means of `min_rate` and `avg_rate`, as a small text table.
pub fn summarize(run: &ExperimentRun) -> String {
    let mut out = String::from("point  layout      M  secondary  ptx_dbm  trials  min_rate  avg_rate\n");
    for p in &run.points {
        let rs: Vec<_> = run.results.iter().filter(|r| r.point == p.index).collect();
        let n = rs.len().max(1) as f64;
        let min: f64 = rs.iter().map(|r| r.record.min_rate).sum::<f64>() / n;
        let avg: f64 = rs.iter().map(|r| r.record.avg_rate).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "{:>5}  {:<10} {:>3}  {:<9}  {:>7.2}  {:>6}  {:>8.4}  {:>8.4}",
            p.index,
            if p.layout_name.is_empty() { "-" } else { &p.layout_name },
            p.elements,
            p.secondary.name(),
            p.tx_power_dbm,
            rs.len(),
            min,
            avg
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[scenario]\nnum_irs = 2\n";

    #[test]
    fn minimal_plan_gets_defaults() {
        let plan = parse_config(MINIMAL).unwrap();
        assert_eq!(plan.trials, 1);
        let pts = plan.points().unwrap();
        assert_eq!(pts.len(), 1);
        let c = &pts[0].config;
        assert_eq!(c.num_bs_antennas, 16);
        assert_eq!(c.elements_per_irs, vec![64, 64]);
        assert_eq!(c.users_per_irs, vec![3, 3]);
        let (g, r) = (&c.geometry, &c.radio);
        assert_eq!((g.bs_height, g.irs_height, g.user_height), (25.0, 30.0, 1.5));
        assert_eq!((r.pathloss_exp_los, r.pathloss_exp_nlos), (2.2, 3.0));
        assert_eq!(r.rician_factor_db, 5.0);
        assert_eq!((r.gain_bs_dbi, r.gain_irs_dbi, r.gain_user_dbi), (5.0, 5.0, 0.0));
        assert_eq!(r.bandwidth_hz, 180e3);
        assert_eq!(pts[0].secondary, Secondary::Managed);
    }

    #[test]
    fn missing_num_irs_is_named() {
        match parse_config("trials = 2\n[scenario]\nnum_bs_antennas = 4\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "num_irs"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_reports_line() {
        match parse_config("[scenario]\nnum_irs = 1\nbogus = 3\n") {
            Err(Error::Config { key, line, .. }) => {
                assert_eq!(key, "bogus");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_trials_rejected() {
        match parse_config("trials = 0\n[scenario]\nnum_irs = 1\n") {
            Err(Error::Config { key, line, .. }) => assert_eq!((key.as_str(), line), ("trials", 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_axis_rejected() {
        let text = "[scenario]\nnum_irs = 1\n[sweep]\ntx_power_dbm = []\n";
        match parse_config(text) {
            Err(Error::Config { key, line, .. }) => assert_eq!((key.as_str(), line), ("tx_power_dbm", 4)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let text = r#"
trials = 3
seed = 9
[scenario]
num_irs = 1
num_bs_antennas = 8
[sweep]
tx_power_dbm = [15.0, 25.0]
elements_per_irs = [4, 8]
secondary = ["managed", "unmanaged", "off"]
[[sweep.layout]]
name = "a"
num_irs = 2
users_per_irs = 2
[output]
path = "x.csv"
"#;
        let plan = parse_config(text).unwrap();
        let again = parse_config(&emit_config(&plan).unwrap()).unwrap();
        assert_eq!(plan, again);
        assert_eq!(plan.points().unwrap().len(), 12);
    }

    #[test]
    fn seeds_are_paired_across_points() {
        let text = "[scenario]\nnum_irs = 1\n[sweep]\ntx_power_dbm = [10.0, 20.0]\nsecondary = [\"managed\", \"off\"]\n";
        let plan = parse_config(text).unwrap();
        let pts = plan.points().unwrap();
        let s: Vec<u64> = pts.iter().map(|p| plan.trial_seed(p, 3)).collect();
        assert!(s.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(plan.trial_seed(&pts[0], 3), plan.trial_seed(&pts[0], 4));
        let f: std::collections::HashSet<_> = pts.iter().map(|p| p.fingerprint.clone()).collect();
        assert_eq!(f.len(), pts.len());
    }

    #[test]
    fn splitmix_reference() {
        // First outputs of the SplitMix64 generator seeded with 0.
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(splitmix64(0x9e37_79b9_7f4a_7c15), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn csv_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        emit_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        let rec = ExperimentRecord {
            fingerprint: "00ff".into(),
            seed: u64::MAX,
            ptx_dbm: 30.0,
            min_rate: 0.1 + 0.2,
            avg_rate: 1.0 / 3.0,
            iters: 7,
            gap: 1e-300,
            wall_ms: 0.0,
        };
        emit_csv(std::slice::from_ref(&rec), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), "fingerprint,seed,ptx_dbm,min_rate,avg_rate,iters,gap,wall_ms");
        assert_eq!(read_csv(&path).unwrap(), vec![rec]);
        assert_eq!(points_path(&path).file_name().unwrap(), "r.points.csv");
    }
}
