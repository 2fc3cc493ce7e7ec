//! Valuation and hedging in markets whose coefficients switch with a finite
//! regime process driven by state-dependent point processes.
//!
//! Everything centres on one object: the value field `v(t, x, k)` of a claim,
//! defined over diffusion state `x` and regime `k`. Three independent routes
//! compute or probe it:
//!
//! * a coupled-system PDE march ([`pde`]),
//! * a probabilistic fixed-point iteration on grids ([`fixed_point`]),
//! * Monte Carlo simulation of the market itself ([`sim`]),
//!
//! and the [`hedge`] module turns a solved field into hedging strategies with
//! measurable residuals. [`credit`] packages ready-made default-risk scenarios
//! together with closed-form or matrix-exponential reference values.

pub mod credit;
pub mod ctmc;
pub mod error;
pub mod field;
pub mod fixed_point;
pub mod hedge;
pub mod model;
pub mod pde;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
