//! Discrete Langevin proposals for sampling from distributions over finite
//! product spaces, `pi(x) ∝ exp(U(x))`, together with baseline samplers,
//! exact small-state oracles and chain diagnostics.

pub mod diagnostics;
pub mod dlp;
pub mod domain;
pub mod energy;
pub mod error;
pub mod models;
pub mod numerics;
pub mod oracle;
pub mod rng;
pub mod samplers;

pub use domain::{enumerate_states, Domain, DomainKind, State, DEFAULT_STATE_CAP};
pub use energy::{finite_diff_grad, EnergyModel, MinibatchSpec};
pub use error::{Error, Result};
pub use numerics::stable_softmax;

/// Library version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
