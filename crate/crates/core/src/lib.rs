//! Recovering latent thoughts behind multi-agent model states.
//!
//! The pipeline: synthesize states from known thoughts ([`synthgen`]), fit a
//! sparsity-regularized autoencoder ([`autoencoder`]), read the thought-agent
//! structure off its decoder Jacobian ([`structure`]), route thoughts to
//! agents by agreement ([`routing`]) and score identifiability ([`eval`]).
//! [`harness`] runs the whole loop against mock agents and [`experiment`]
//! holds run configs and presets.

pub mod autoencoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod harness;
pub mod numerics;
pub mod routing;
pub mod structure;
pub mod synthgen;

pub use error::{Error, Result};
pub use numerics::{Matrix, SeededRng};
