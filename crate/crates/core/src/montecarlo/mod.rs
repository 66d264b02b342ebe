//! Seeded Monte Carlo estimation of overlap moments: sample `W`, diagonalize
//! `diag(eps) + W`, and accumulate streaming statistics.

mod accumulator;
mod realization;
mod runner;

pub use accumulator::{
    Estimate, GreenProbe, MomentAccumulator, ProbeEstimate, ProbeStats, TrackingConfig, Welford,
};
pub use realization::{diagonalize, run_realization, OverlapMatrix, RealizationResult};
pub use runner::{McConfig, MonteCarlo};
