//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent configuration input.
    #[error("config: {0}")]
    Config(String),

    /// Structurally inconsistent model or claim definition.
    #[error("model definition: {0}")]
    ModelDefinition(String),

    /// An operation was called with arguments it cannot serve.
    #[error("usage: {0}")]
    Usage(String),

    /// Path generation failed outright (as opposed to per-path exclusion).
    #[error("simulation: {0}")]
    Simulation(String),

    /// Too many paths were flagged and dropped for the estimate to be trusted.
    #[error("excluded {excluded} of {total} paths, over the {budget} budget")]
    ExcessiveExclusion {
        excluded: usize,
        total: usize,
        budget: f64,
    },

    /// The declared constants make the fixed-point map expand, not contract.
    #[error("fixed-point map is not a contraction: rate {rate} >= 1 at beta {beta}")]
    NonContraction { beta: f64, rate: f64 },

    /// Iteration budget exhausted or distances diverged; the trace records
    /// every iteration for post-mortem inspection.
    #[error("no convergence after {iterations} iterations (last distance {last_distance:.3e})")]
    NoConvergence {
        iterations: usize,
        last_distance: f64,
        trace: Box<crate::fixed_point::ContractionTrace>,
    },

    /// A linear solve would run on a matrix too ill-conditioned to trust.
    #[error("ill-conditioned system: estimate {estimate:.3e} exceeds {limit:.3e} ({context})")]
    IllConditioned {
        estimate: f64,
        limit: f64,
        context: String,
    },

    /// The within-step sub-iteration resolving value-dependent terms stalled.
    #[error("sub-iteration stalled at time step {step}: residual {residual:.3e} after {iters} rounds")]
    PicardStall {
        step: usize,
        iters: usize,
        residual: f64,
    },

    /// A quantity a formula divides by is numerically zero.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
