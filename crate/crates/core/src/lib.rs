//! Exact sampling of stationary Gaussian Markov random fields on `Z^d`.
//!
//! The target field is characterised by its single-site conditional law: at
//! every site the field is Gaussian with variance one and mean `epsilon`
//! times the average of its `2d` nearest neighbours. Two variants are
//! supported, a truncated model with state space `[-L, L]` and the unbounded
//! Gaussian model.
//!
//! Sampling is done by coupling-from-the-past driven by a space-time Poisson
//! process of update marks. The truncated model uses a flat maximal coupling
//! of all conditional laws; the unbounded model uses a stratified coupling
//! over growing value bands `[-L_n, L_n]` with a wet/dry Boolean percolation
//! certificate. Both samplers are deterministic functions of a 64-bit master
//! seed.
//!
//! The crate also ships the auxiliary interacting particle systems (binary
//! spin system, multi-level system and their backward duals) used to verify
//! the duality identities behind the samplers, plus the statistics used by
//! the validation suite.

pub mod acceptance;
pub mod config;
pub mod coupler;
pub mod error;
pub mod exec;
pub mod gauss;
pub mod geometry;
pub mod marks;
pub mod output;
pub mod particle;
pub mod sampler;
pub mod schedule;
pub mod stats;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use geometry::{NeighborhoodSpec, Site, TorusWindow};
pub use schedule::{LevelSchedule, ModelParams};
