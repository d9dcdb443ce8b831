//! Artificial-currency reduction for repeated allocation of excludable
//! public goods.
//!
//! The crate turns one-shot monetary cost-sharing mechanisms (proportional,
//! Moulin, potential/VCG) into repeated non-monetary mechanisms by endowing
//! each agent with a budget of artificial credits proportional to its share.
//! On top of the round engine it provides:
//!
//! * pacing (value-scaling) strategies and a fixed-point solver for the
//!   focal profile where each agent's expected per-round spend equals its
//!   share,
//! * dead-weight-loss analyzers and regularity probes for the one-shot
//!   mechanisms,
//! * approximate-core audits — ex-ante via weighted-threshold witness
//!   policies, ex-post via blocking-coalition search over realized traces —
//!   together with a brute-force oracle for tiny instances,
//! * canonical instance generators, including the permuted-harmonic family
//!   on which the Moulin reduction provably leaves the `(H_n - 1 - eps)`
//!   core.
//!
//! Value/payment arithmetic is generic over [`scalar::Scalar`] (`f32`/`f64`);
//! budget ledgers are exact integer micro-units. The default precision used
//! by the simulation stack is [`Real`].

pub mod coreaudit;
pub mod equilibrium;
pub mod instances;
pub mod mechanisms;
pub mod model;
pub mod reduction;
pub mod rng;
pub mod scalar;
pub mod strategies;

/// Default scalar for the simulation and solver stack.
pub type Real = f64;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid instance, distribution, or cost configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was asked to enumerate past its exhaustive limit.
    #[error("size error: {0}")]
    Size(String),

    /// Mechanism incompatible with the instance (e.g. proportional with m>1).
    #[error("kind mismatch: {0}")]
    KindMismatch(String),

    /// A strategy emitted an unusable report.
    #[error("strategy error: agent {agent} round {round}: {reason}")]
    Strategy {
        agent: usize,
        round: u64,
        reason: String,
    },

    /// The pacing solver hit its iteration cap; diagnostics attached.
    #[error("solver did not converge after {iterations} sweeps (max residual {max_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        max_residual: f64,
        beta: Vec<f64>,
        residuals: Vec<f64>,
    },

    /// The trace lacks the rounds an audit needs (e.g. thinned retention).
    #[error("trace unusable: {0}")]
    Trace(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
