//! Eigenvector overlap statistics for `H = H0 + W` with deterministic
//! diagonal `H0` and Gaussian `W` (GOE or GUE).
//!
//! - [`spectra`]: bare spectra and interaction sampling.
//! - [`resolvent`]: the self-consistent Stieltjes transform and derived densities.
//! - [`theory`]: closed-form second and fourth overlap moments and Green-function covariances.
//! - [`montecarlo`]: seeded, reproducible Monte Carlo estimators of the same quantities.

pub mod error;
pub mod interp;
pub mod montecarlo;
pub mod resolvent;
pub mod spectra;
pub mod table;
pub mod theory;

pub use error::{Error, Result};
pub use resolvent::{solve_grid, solve_m, SolverConfig, StieltjesSolution};
pub use spectra::{
    load_spectrum, make_gaussian_spectrum, sample_interaction, BareSpectrum, Ensemble,
    GaussianStream, InteractionSample, InteractionSpec,
};
pub use theory::{CovarianceMode, CyclicMode, OverlapTheory};
