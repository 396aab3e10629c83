//! Joint max-min rate design for uplink multi-user MIMO cells assisted by
//! several intelligent reflecting surfaces (IRSs).
//!
//! The crate covers the full pipeline:
//!
//! * [`scene`] builds the cell geometry and draws the physical links
//!   (user → IRS, IRS → IRS, IRS → BS) with pathloss and Rician fading;
//! * [`cascade`] turns those links into the cascaded matrices that make each
//!   user's effective channel linear (primary reflection) or bilinear
//!   (secondary, IRS-to-IRS reflection) in the phase-shift vectors;
//! * [`sinr`] evaluates SINRs directly and as an affine-in-one-IRS reduction;
//! * [`beamform`] gives the MMSE and zero-forcing receivers;
//! * [`conic`] is a small ADMM solver for conic programs with PSD blocks;
//! * [`phaseopt`] solves the per-IRS semidefinite relaxation by bisection and
//!   extracts unit-modulus phases by Gaussian randomization;
//! * [`ao`] alternates the two updates until the minimum SINR stalls;
//! * [`bench`] parses experiment plans, runs Monte Carlo sweeps and writes CSV.
//!
//! ```
//! use irs_maxmin::prelude::*;
//! use rand::SeedableRng;
//!
//! let mut cfg = ScenarioConfig::with_irs(2);
//! cfg.num_bs_antennas = 4;
//! cfg.elements_per_irs = vec![4, 4];
//! cfg.users_per_irs = vec![1, 1];
//! let cfg = cfg.resolved().unwrap();
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let scene = Scene::sample(&cfg, &mut rng).unwrap();
//! let raw = synth_channels(&scene, &cfg, &mut rng).unwrap();
//! let cc = CascadedChannels::build(&raw, true, f64::INFINITY, &scene);
//!
//! let params = AoParams { max_iterations: 3, ..AoParams::from_config(&cfg) };
//! let problem = AoProblem::new(&cc, &cfg);
//! let state = problem.run(&params).unwrap();
//! assert!(state.trace.windows(2).all(|w| w[1].gamma_min >= w[0].gamma_min));
//! ```

pub mod ao;
pub mod beamform;
pub mod bench;
pub mod cascade;
pub mod conic;
pub mod error;
pub mod linalg;
pub mod phaseopt;
pub mod scene;
pub mod sinr;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::ao::{AoParams, AoProblem, AoState, TracePoint};
    pub use crate::beamform::{BeamformerBank, Method, PowerAllocation};
    pub use crate::cascade::{CascadedChannels, PhaseConfig};
    pub use crate::scene::{synth_channels, RawChannels, ScenarioConfig, Scene};
    pub use crate::{Error, Result};
}

// The guide's code listings are compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/reduction.md")]
    mod reduction {}
    #[doc = include_str!("../../../book/src/beamforming.md")]
    mod beamforming {}
    #[doc = include_str!("../../../book/src/conic.md")]
    mod conic {}
    #[doc = include_str!("../../../book/src/sdr.md")]
    mod sdr {}
    #[doc = include_str!("../../../book/src/alternating.md")]
    mod alternating {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
