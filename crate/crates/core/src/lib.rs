//! Learning discrete and continuous dynamics from trajectory data.
//!
//! The crate covers the full loop: closed-form testbeds and a pseudo-spectral
//! Burgers solver produce trajectories, [`net`] and [`train`] fit feedforward
//! models with an optional Jacobian-Frobenius penalty, [`sindy`] provides the
//! sparse polynomial baseline, and [`eval`] measures a-priori and a-posteriori
//! quality together with Jacobian spectra.

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod net;
pub mod reduction;
pub mod sindy;
pub mod spectral;
pub mod systems;
pub mod train;

pub use error::{Error, Result};
pub use eval::DynamicsModel;
pub use net::{Activation, MlpModel, MlpParams};
pub use sindy::SindyModel;
pub use systems::{System, TargetKind, TargetSeries, Trajectory};
pub use train::{Dataset, TrainConfig};

/// Runs `f` on a rayon pool capped by `PHASEFLOW_THREADS` when it is set to a
/// positive integer, otherwise on the global pool.
pub fn with_thread_limit<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let cap = std::env::var("PHASEFLOW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    match cap.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}
