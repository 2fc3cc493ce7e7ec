//! Backward marching solver for the coupled semilinear valuation system.
//!
//! A value field `v_k(t, x)` — one scalar layer per regime `k` — solves the
//! terminal-value problem
//!
//! ```text
//! d/dt v_k + Gamma_k . grad v_k + 1/2 tr(a_k D^2 v_k) + c_k v_k + g_k(t, x, v) = 0,
//! v_k(T, x) = h(x, k),
//! ```
//!
//! where the regimes interact only through the zeroth-order reaction `g`.
//! The marcher discretises each regime layer on a shared rectangular grid,
//! treats drift, diffusion and discount implicitly, and resolves the
//! reaction with damped fixed-point sweeps inside every time step:
//!
//! * one spatial dimension: tridiagonal theta-scheme steps
//!   (Crank–Nicolson with an implicit-Euler start to damp non-smooth
//!   terminal data);
//! * two spatial dimensions: Douglas alternating-direction steps with the
//!   mixed-derivative term kept explicit.
//!
//! [`apply_generator`] exposes the full integro-differential generator as a
//! finite-difference quadrature for test functions, and
//! [`markov_property_check`] verifies, by nested simulation, that a solved
//! field really is the conditional expectation it claims to be.

pub mod generator;
mod markov;
mod solver;

use serde::{Deserialize, Serialize};

use crate::field::{log_uniform_grid, uniform_grid};
use crate::model::{ClaimSpec, CoefficientField, ModelSpec, Shape, StateDomain};
use crate::{Error, Result};

pub use generator::apply_generator;
pub use markov::{
    markov_property_check, ConditionalCheck, MarkovCheckConfig, MarkovCheckReport, MartingaleCheck,
};
pub use solver::{solve_system, solve_system_detailed, SolveDetail};

/// Node placement along one spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spacing {
    /// Equidistant nodes.
    Uniform,
    /// Equidistant in `log x`; concentrates nodes near the lower edge.
    LogUniform,
}

/// One spatial axis of the marching grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub lo: f64,
    pub hi: f64,
    /// Total node count including both faces.
    pub count: usize,
    pub spacing: Spacing,
}

impl AxisSpec {
    pub fn new(lo: f64, hi: f64, count: usize, spacing: Spacing) -> Self {
        AxisSpec {
            lo,
            hi,
            count,
            spacing,
        }
    }

    /// Materialise the node coordinates.
    pub fn build(&self) -> Vec<f64> {
        match self.spacing {
            Spacing::Uniform => uniform_grid(self.lo, self.hi, self.count),
            Spacing::LogUniform => log_uniform_grid(self.lo, self.hi, self.count),
        }
    }
}

/// Value imposed on one boundary face of the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    /// Pin the face to the terminal payoff evaluated at the face node.
    /// Appropriate where the payoff is flat (deep in or out of the money)
    /// and the value has essentially no time decay left.
    PayoffValue,
    /// Second spatial derivative vanishes across the face: the solution is
    /// extended linearly from the two interior neighbours.
    ZeroCurvature,
}

/// Which first-order term the marcher puts in front of the gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PdeVariant {
    /// Use the model drift as given (or `drift_override` when present), the
    /// claim's discount and the full reaction. Prices under the measure the
    /// model coefficients are written in.
    Valuation,
    /// Keep the model drift but drop payments and discounting: the reaction
    /// reduces to `sum_j lambda_kj (v_j - v_k)`. The solved field is the
    /// plain conditional expectation of the terminal payoff, which is what
    /// the nested-simulation consistency check needs.
    CouplingOnly,
    /// Zero drift: valuation under the minimal martingale measure, where
    /// every traded coordinate is driftless. This is the field the hedging
    /// constructions differentiate.
    Hedging,
    /// A mandatory `drift_override` supplies the compensator drift of a
    /// price that jumps at a regime switch (for example `(1 - R) lambda x`
    /// for a crash to a fraction `R`); discount and reaction as declared.
    CrashAtDefault,
}

/// Controls for the within-step fixed-point resolution of the reaction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardControls {
    /// Relative sweep-to-sweep tolerance (scaled by the layer magnitude).
    pub tol: f64,
    /// Sweep budget per time step before the step is declared stalled.
    pub max_iters: usize,
}

impl Default for PicardControls {
    fn default() -> Self {
        PicardControls {
            tol: 1e-12,
            max_iters: 25,
        }
    }
}

/// A fully specified backward marching problem.
#[derive(Clone, Debug)]
pub struct PdeProblem {
    pub model: ModelSpec,
    pub claim: ClaimSpec,
    pub variant: PdeVariant,
    /// Replaces the model drift in the marching operator when present.
    pub drift_override: Option<CoefficientField>,
    /// One entry per spatial dimension.
    pub axes: Vec<AxisSpec>,
    /// Number of backward time steps (the grid has `t_steps + 1` levels).
    pub t_steps: usize,
    /// Per axis: `[low face, high face]`.
    pub boundary: Vec<[BoundaryCondition; 2]>,
    /// Leading backward steps taken as pairs of fully implicit half-steps
    /// to damp oscillations seeded by non-smooth terminal data.
    pub rannacher_steps: usize,
    pub picard: PicardControls,
}

impl PdeProblem {
    /// A problem with the default variant, fully extrapolating boundaries,
    /// two damped start steps and default sweep controls.
    pub fn new(model: ModelSpec, claim: ClaimSpec, axes: Vec<AxisSpec>, t_steps: usize) -> Self {
        let d = axes.len();
        PdeProblem {
            model,
            claim,
            variant: PdeVariant::Valuation,
            drift_override: None,
            axes,
            t_steps,
            boundary: vec![[BoundaryCondition::ZeroCurvature; 2]; d],
            rannacher_steps: 2,
            picard: PicardControls::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.check_consistent()?;
        self.claim.check_consistent(self.model.regimes)?;
        let d = self.model.dim();
        if self.axes.len() != d {
            return Err(Error::Config(format!(
                "{} grid axes for a {d}-dimensional model",
                self.axes.len()
            )));
        }
        if d == 0 || d > 2 {
            return Err(Error::Config(format!(
                "grid marching covers one and two spatial dimensions, model has {d}"
            )));
        }
        if self.boundary.len() != d {
            return Err(Error::Config(format!(
                "{} boundary entries for {d} axes",
                self.boundary.len()
            )));
        }
        let orthant = self.model.domain.kind == StateDomain::PositiveOrthant;
        for (i, ax) in self.axes.iter().enumerate() {
            if !(ax.lo.is_finite() && ax.hi.is_finite() && ax.lo < ax.hi) {
                return Err(Error::Config(format!(
                    "axis {i}: bounds [{}, {}] are not an interval",
                    ax.lo, ax.hi
                )));
            }
            if ax.count < 4 {
                return Err(Error::Config(format!(
                    "axis {i}: {} nodes; boundary elimination needs at least 4",
                    ax.count
                )));
            }
            if (orthant || ax.spacing == Spacing::LogUniform) && ax.lo <= 0.0 {
                return Err(Error::Config(format!(
                    "axis {i}: lower bound {} must be positive here",
                    ax.lo
                )));
            }
        }
        if self.t_steps == 0 {
            return Err(Error::Config("at least one time step is required".into()));
        }
        if self.rannacher_steps > self.t_steps {
            return Err(Error::Config(format!(
                "{} damped start steps exceed the {} time steps",
                self.rannacher_steps, self.t_steps
            )));
        }
        if !(self.picard.tol > 0.0) || self.picard.max_iters == 0 {
            return Err(Error::Config(
                "reaction sweeps need a positive tolerance and a nonzero budget".into(),
            ));
        }
        if let Some(field) = &self.drift_override {
            field.check_consistent(
                "drift override",
                Shape { rows: d, cols: 1 },
                self.model.regimes,
                d,
            )?;
        }
        if self.variant == PdeVariant::CrashAtDefault && self.drift_override.is_none() {
            return Err(Error::Config(
                "the crash-at-default variant needs an explicit compensator drift".into(),
            ));
        }
        Ok(())
    }
}
