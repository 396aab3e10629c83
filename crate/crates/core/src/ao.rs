//! Alternating optimization: an MMSE (or ZF) receiver update followed by a
//! Gauss-Seidel pass of guarded per-IRS phase updates, repeated until the
//! minimum SINR stalls or the iteration cap is hit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::beamform::{mmse, per_user_sinr, zf, BeamformerBank, Method, PowerAllocation};
use crate::cascade::{CascadedChannels, PhaseConfig};
use crate::conic::{self, WarmStart};
use crate::error::{invalid, Result};
use crate::linalg::CMat;
use crate::phaseopt::{optimize_irs, PhaseOptSettings, SdrSettings};
use crate::scene::{PhaseInit, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AoParams {
    /// Stop once the minimum SINR changes by less than this between passes.
    pub xi: f64,
    /// Relative accuracy of the bisection on the SINR target.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub randomizations: usize,
    pub beamformer: Method,
    pub init: PhaseInit,
    pub seed: u64,
    /// Disables the IRS loop, leaving only receiver updates.
    pub update_phases: bool,
    pub sdr: SdrSettings,
}

impl AoParams {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let s = &cfg.solver;
        Self {
            xi: s.xi,
            epsilon: s.epsilon,
            max_iterations: s.max_iterations,
            randomizations: s.randomizations,
            beamformer: s.beamformer,
            init: s.init,
            seed: cfg.rng_seed,
            update_phases: true,
            sdr: SdrSettings {
                feasibility_tol: s.feasibility_tol,
                conic: conic::Settings::new(s.conic_tol, s.conic_max_iters),
                ..SdrSettings::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 0.0) {
            return Err(invalid("xi must be nonnegative"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("at least one iteration is required"));
        }
        Ok(())
    }

    fn phase_settings(&self) -> PhaseOptSettings {
        PhaseOptSettings {
            epsilon: self.epsilon,
            randomizations: self.randomizations,
            sdr: self.sdr.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub gamma_min: f64,
    /// `log2(1 + gamma_min)` in bps/Hz.
    pub min_rate: f64,
}

impl TracePoint {
    fn new(iteration: usize, gamma_min: f64) -> Self {
        Self {
            iteration,
            gamma_min,
            min_rate: (1.0 + gamma_min).log2(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AoState {
    pub phases: PhaseConfig,
    pub beamformers: BeamformerBank,
    /// Minimum SINR of the optimizer's channel model after each pass;
    /// entry 0 is the initialization.
    pub trace: Vec<TracePoint>,
    /// Per-user SINR on the evaluation channels, channel order.
    pub sinr: Vec<f64>,
    pub iteration: usize,
    /// Largest relative gap between the relaxation bound and the
    /// randomized phases over the latest pass.
    pub sdr_gap: f64,
    /// Smallest `λ₁/λ₂` of the relaxed solutions over the latest pass.
    pub eigen_ratio: f64,
    rng: ChaCha8Rng,
    /// Last conic solver state per IRS, reused by the next pass.
    solver_state: Vec<Option<WarmStart>>,
}

impl AoState {
    pub fn gamma_min(&self) -> f64 {
        self.trace.last().map_or(0.0, |t| t.gamma_min)
    }

    /// Minimum rate over users on the evaluation channels.
    pub fn min_rate(&self) -> f64 {
        self.sinr.iter().map(|g| (1.0 + g).log2()).fold(f64::INFINITY, f64::min)
    }

    pub fn avg_rate(&self) -> f64 {
        self.sinr.iter().map(|g| (1.0 + g).log2()).sum::<f64>() / self.sinr.len().max(1) as f64
    }
}

/// A channel model to optimize on plus the channels used for reporting.
/// Both are the same except when secondary reflections are left unmanaged.
#[derive(Debug, Clone)]
pub struct AoProblem<'a> {
    model: &'a CascadedChannels,
    eval: &'a CascadedChannels,
    powers: PowerAllocation,
    sigma2: f64,
}

impl<'a> AoProblem<'a> {
    /// Uniform transmit power and noise level from `cfg`.
    pub fn new(cc: &'a CascadedChannels, cfg: &ScenarioConfig) -> Self {
        Self::with_model(cc, cc, uniform_powers(cc, cfg), cfg.noise_power_w())
    }

    pub fn with_model(
        model: &'a CascadedChannels,
        eval: &'a CascadedChannels,
        powers: PowerAllocation,
        sigma2: f64,
    ) -> Self {
        Self { model, eval, powers, sigma2 }
    }

    pub fn powers(&self) -> &PowerAllocation {
        &self.powers
    }

    pub fn noise_power(&self) -> f64 {
        self.sigma2
    }

    fn receivers(&self, phases: &PhaseConfig, method: Method, current: Option<&BeamformerBank>) -> Result<BeamformerBank> {
        let h = self.model.effective_channel_matrix(phases)?;
        match method {
            Method::Mmse => mmse(&h, &self.powers, self.sigma2),
            Method::Zf => zf(&h, &self.powers),
            Method::Custom => current
                .cloned()
                .ok_or_else(|| invalid("custom beamformers need an initial bank")),
        }
    }

    fn model_min_sinr(&self, phases: &PhaseConfig, w: &CMat) -> Result<f64> {
        let h = self.model.effective_channel_matrix(phases)?;
        Ok(per_user_sinr(w, &h, &self.powers, self.sigma2)
            .into_iter()
            .fold(f64::INFINITY, f64::min))
    }

    fn eval_sinr(&self, phases: &PhaseConfig, w: &CMat) -> Result<Vec<f64>> {
        let h = self.eval.effective_channel_matrix(phases)?;
        Ok(per_user_sinr(w, &h, &self.powers, self.sigma2))
    }

    /// Seeded initial phases and the matching receivers.
    pub fn initialize(&self, params: &AoParams) -> Result<AoState> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let phases = match params.init {
            PhaseInit::Random => PhaseConfig::random(self.model.elements(), &mut rng),
            PhaseInit::Ones => PhaseConfig::ones(self.model.elements()),
        };
        let method = match params.beamformer {
            Method::Custom => Method::Mmse,
            m => m,
        };
        let beamformers = self.receivers(&phases, method, None)?;
        self.start_from(phases, beamformers, rng)
    }

    /// Starts from given phases and receivers, e.g. a previous run's output.
    pub fn warm_start(&self, phases: PhaseConfig, beamformers: BeamformerBank, params: &AoParams) -> Result<AoState> {
        params.validate()?;
        if phases.theta.len() != self.model.num_irs()
            || phases.theta.iter().zip(self.model.elements()).any(|(t, &m)| t.len() != m)
            || !phases.is_unit_modulus(1e-9)
        {
            return Err(invalid("warm-start phases do not fit the channel"));
        }
        if beamformers.w.shape() != (self.model.num_bs_antennas(), self.model.num_users()) {
            return Err(invalid("warm-start beamformers do not fit the channel"));
        }
        self.start_from(phases, beamformers, ChaCha8Rng::seed_from_u64(params.seed))
    }

    fn start_from(&self, phases: PhaseConfig, beamformers: BeamformerBank, rng: ChaCha8Rng) -> Result<AoState> {
        let gamma = self.model_min_sinr(&phases, &beamformers.w)?;
        let sinr = self.eval_sinr(&phases, &beamformers.w)?;
        Ok(AoState {
            phases,
            beamformers,
            trace: vec![TracePoint::new(0, gamma)],
            sinr,
            iteration: 0,
            sdr_gap: 0.0,
            eigen_ratio: f64::INFINITY,
            rng,
            solver_state: vec![None; self.model.num_irs()],
        })
    }

    /// One pass: receiver update, then IRSs `0..L` in order, each seeing the
    /// phases already updated in this pass.
    pub fn step(&self, state: &mut AoState, params: &AoParams) -> Result<()> {
        let previous = state.gamma_min();
        let fresh = self.receivers(&state.phases, params.beamformer, Some(&state.beamformers))?;
        // Closed-form receivers are optimal in exact arithmetic; the check
        // only guards against round-off.
        if self.model_min_sinr(&state.phases, &fresh.w)? >= previous {
            state.beamformers = fresh;
        }
        let mut gap: f64 = 0.0;
        let mut ratio = f64::INFINITY;
        if params.update_phases {
            let settings = params.phase_settings();
            for lbar in 0..self.model.num_irs() {
                let update = optimize_irs(
                    self.model,
                    &state.phases,
                    &state.beamformers.w,
                    &self.powers,
                    self.sigma2,
                    lbar,
                    &settings,
                    state.solver_state[lbar].take(),
                    &mut state.rng,
                )?;
                state.solver_state[lbar] = update.warm;
                gap = gap.max(update.gap);
                ratio = ratio.min(update.eigen_ratio);
                state.phases.theta[lbar] = update.theta;
            }
        }
        state.iteration += 1;
        state.sdr_gap = gap;
        state.eigen_ratio = ratio;
        let gamma = self.model_min_sinr(&state.phases, &state.beamformers.w)?;
        state.trace.push(TracePoint::new(state.iteration, gamma));
        state.sinr = self.eval_sinr(&state.phases, &state.beamformers.w)?;
        Ok(())
    }

    /// Steps until the minimum SINR moves by less than `xi` or
    /// `max_iterations` passes have run.
    pub fn run(&self, params: &AoParams) -> Result<AoState> {
        let state = self.initialize(params)?;
        self.run_from(state, params)
    }

    pub fn run_from(&self, mut state: AoState, params: &AoParams) -> Result<AoState> {
        params.validate()?;
        for _ in 0..params.max_iterations {
            let before = state.gamma_min();
            self.step(&mut state, params)?;
            if (state.gamma_min() - before).abs() < params.xi {
                break;
            }
        }
        Ok(state)
    }
}

fn uniform_powers(cc: &CascadedChannels, cfg: &ScenarioConfig) -> PowerAllocation {
    PowerAllocation::uniform(cc.num_users(), cfg.tx_power_w()).expect("transmit power is validated by the config")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{synth_channels, Scene};

    fn instance(l: usize, m: usize, n: usize, k: usize, seed: u64) -> (CascadedChannels, ScenarioConfig) {
        let mut cfg = ScenarioConfig::with_irs(l);
        cfg.num_bs_antennas = n;
        cfg.elements_per_irs = vec![m; l];
        cfg.users_per_irs = vec![k; l];
        cfg.rng_seed = seed;
        cfg.solver.randomizations = 100;
        let cfg = cfg.resolved().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = Scene::sample(&cfg, &mut rng).unwrap();
        let raw = synth_channels(&scene, &cfg, &mut rng).unwrap();
        (CascadedChannels::build(&raw, true, f64::INFINITY, &scene), cfg)
    }

    #[test]
    fn same_seed_same_start() {
        let (cc, cfg) = instance(2, 3, 4, 1, 1);
        let p = AoProblem::new(&cc, &cfg);
        let params = AoParams::from_config(&cfg);
        let a = p.initialize(&params).unwrap();
        let b = p.initialize(&params).unwrap();
        assert_eq!(a.phases, b.phases);
        assert_eq!(a.beamformers, b.beamformers);
        assert!(a.phases.is_unit_modulus(1e-15));
    }

    #[test]
    fn single_link_start_is_matched_filter_snr() {
        let (cc, cfg) = instance(1, 1, 1, 1, 2);
        let p = AoProblem::new(&cc, &cfg);
        let state = p.initialize(&AoParams::from_config(&cfg)).unwrap();
        let h = cc.effective_channel(&state.phases, 0, 0).unwrap();
        let snr = cfg.tx_power_w() * h.norm_squared() / cfg.noise_power_w();
        assert!((state.gamma_min() - snr).abs() <= 1e-10 * snr);
    }

    #[test]
    fn stall_tolerance_controls_iteration_count() {
        let (cc, cfg) = instance(2, 2, 3, 1, 3);
        let p = AoProblem::new(&cc, &cfg);
        let mut params = AoParams::from_config(&cfg);
        params.max_iterations = 4;
        params.xi = f64::INFINITY;
        assert_eq!(p.run(&params).unwrap().iteration, 1);
        params.xi = 0.0;
        assert_eq!(p.run(&params).unwrap().iteration, 4);
    }

    #[test]
    fn receiver_only_passes_never_decrease() {
        let (cc, cfg) = instance(2, 3, 4, 2, 4);
        let p = AoProblem::new(&cc, &cfg);
        let mut params = AoParams::from_config(&cfg);
        params.update_phases = false;
        params.max_iterations = 3;
        params.xi = 0.0;
        let state = p.run(&params).unwrap();
        assert!(state.trace.windows(2).all(|w| w[1].gamma_min >= w[0].gamma_min));
    }

    #[test]
    fn trace_is_monotone_and_phases_unit_modulus() {
        let (cc, cfg) = instance(2, 4, 4, 1, 5);
        let p = AoProblem::new(&cc, &cfg);
        let mut params = AoParams::from_config(&cfg);
        params.max_iterations = 5;
        params.xi = 0.0;
        let state = p.run(&params).unwrap();
        assert_eq!(state.trace.len(), 6);
        assert!(state.trace.windows(2).all(|w| w[1].gamma_min >= w[0].gamma_min));
        assert!(state.phases.is_unit_modulus(1e-12));
        assert!(state.min_rate() <= state.avg_rate());
    }

    #[test]
    fn warm_start_continues_from_given_point() {
        let (cc, cfg) = instance(2, 2, 3, 1, 6);
        let p = AoProblem::new(&cc, &cfg);
        let mut params = AoParams::from_config(&cfg);
        params.max_iterations = 2;
        let first = p.run(&params).unwrap();
        let again = p.warm_start(first.phases.clone(), first.beamformers.clone(), &params).unwrap();
        assert_eq!(again.gamma_min(), first.gamma_min());
        let bad = PhaseConfig::ones(&[3, 3]);
        assert!(p.warm_start(bad, first.beamformers, &params).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let (cc, cfg) = instance(1, 2, 2, 1, 7);
        let p = AoProblem::new(&cc, &cfg);
        let mut params = AoParams::from_config(&cfg);
        params.max_iterations = 0;
        assert!(p.run(&params).is_err());
        params.max_iterations = 1;
        params.epsilon = 0.0;
        assert!(p.run(&params).is_err());
    }
}
