//! Claim payoff structure and the interaction term it induces.
//!
//! A claim pays a terminal amount `h(X_T, Y_T)`, a running flow at rate
//! `delta`, and a lump payment `f_{kj}` whenever the regime switches from `k`
//! to `j`. Together with the switch intensities these produce the coupling
//! term `g` that ties the per-regime value functions to each other:
//!
//! ```text
//! g_k(t, x, v) = delta(t, x, v_k, k)
//!              + sum_{j} lambda_{kj}(t, x) * link(v_j - v_k + f_{kj}(t, x, v_k))
//! ```
//!
//! with `link(y) = y` for the linear family and `link(y) = expm1(alpha*y)/alpha`
//! for the exponential-utility family. The sum runs over structurally present
//! switch channels only.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::coefficients::ScalarField;
use crate::model::intensity::IntensityMatrix;
use crate::Result;

/// Terminal payoff `h(x, k)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum TerminalPayoff {
    /// Depends on the regime only.
    RegimeConstant { values: Vec<f64> },
    /// `value_scale[k] * min((x_scale[k] * x_1 - strike)^+, cap)`: a capped
    /// call on the first coordinate, with per-regime rescaling of both the
    /// underlier and the payout.
    CappedCall {
        strike: f64,
        cap: f64,
        value_scale: Vec<f64>,
        x_scale: Vec<f64>,
    },
    /// `min((x_1 * ... * x_d - strike)^+, cap)`: a capped call on the product
    /// of all coordinates.
    CappedCallOnProduct { strike: f64, cap: f64 },
}

impl TerminalPayoff {
    pub fn eval(&self, x: &[f64], k: usize) -> f64 {
        match self {
            TerminalPayoff::RegimeConstant { values } => values[k],
            TerminalPayoff::CappedCall {
                strike,
                cap,
                value_scale,
                x_scale,
            } => {
                let u = x_scale[k] * x[0];
                value_scale[k] * (u - strike).max(0.0).min(*cap)
            }
            TerminalPayoff::CappedCallOnProduct { strike, cap } => {
                let u: f64 = x.iter().product();
                (u - strike).max(0.0).min(*cap)
            }
        }
    }

    /// Sup of `|h|` over the domain (knowable for every variant: capped calls
    /// are bounded by their cap).
    pub fn sup_abs(&self) -> f64 {
        match self {
            TerminalPayoff::RegimeConstant { values } => {
                values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
            }
            TerminalPayoff::CappedCall {
                cap, value_scale, ..
            } => value_scale.iter().fold(0.0f64, |a, s| a.max(s.abs())) * cap,
            TerminalPayoff::CappedCallOnProduct { cap, .. } => *cap,
        }
    }
}

/// Running payment rate `delta(t, x, v, k)`; `v` is the value of the claim in
/// the current regime, so value-proportional flows are supported.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum FlowPayoff {
    None,
    RegimeConstant { rates: Vec<f64> },
    ValueProportional { rates: Vec<f64> },
}

impl FlowPayoff {
    pub fn eval(&self, _t: f64, _x: &[f64], v_own: f64, k: usize) -> f64 {
        match self {
            FlowPayoff::None => 0.0,
            FlowPayoff::RegimeConstant { rates } => rates[k],
            FlowPayoff::ValueProportional { rates } => rates[k] * v_own,
        }
    }
}

/// Lump payment `f_{kj}(t, x, v)` on a `k -> j` switch; `v` is the pre-switch
/// claim value, so recovery-of-market-value contracts are supported.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum JumpPayoff {
    None,
    Constant { amounts: DMatrix<f64> },
    ValueFraction { fractions: DMatrix<f64> },
}

impl JumpPayoff {
    pub fn eval(&self, _t: f64, _x: &[f64], v_own: f64, k: usize, j: usize) -> f64 {
        match self {
            JumpPayoff::None => 0.0,
            JumpPayoff::Constant { amounts } => amounts[(k, j)],
            JumpPayoff::ValueFraction { fractions } => fractions[(k, j)] * v_own,
        }
    }
}

/// Link function applied to the value spread inside the coupling sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InteractionFamily {
    /// `link(y) = y`: risk-neutral / no-arbitrage pricing of switch risk.
    Linear,
    /// `link(y) = expm1(alpha * y) / alpha`: exponential-utility indifference
    /// pricing with risk aversion `alpha`.
    Exponential { alpha: f64 },
}

impl InteractionFamily {
    #[inline]
    pub fn link(&self, y: f64) -> f64 {
        match self {
            InteractionFamily::Linear => y,
            InteractionFamily::Exponential { alpha } => (alpha * y).exp_m1() / alpha,
        }
    }
}

/// Declared growth and regularity constants. These feed the a-priori value
/// envelope and the fixed-point contraction estimate; probes during model
/// validation check them against sampled evaluations.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ClaimBounds {
    /// Bound on the terminal payoff: `|h| <= terminal_sup`.
    pub terminal_sup: f64,
    /// Growth of the coupling term: `|g(t,x,v)| <= growth_offset +
    /// growth_slope * |v|_inf` for `|v|` within the value envelope.
    pub growth_offset: f64,
    pub growth_slope: f64,
    /// Lipschitz constant of `g` in `v` under the sup norm.
    pub interaction_lipschitz: f64,
    /// Linear-growth constant for the payments themselves:
    /// `|delta|, |f_{kj}| <= payment_growth * (1 + |v|)`.
    pub payment_growth: f64,
    /// Nonnegative upper bound for the discount field (`max(0, sup c)`).
    pub discount_sup: f64,
}

impl ClaimBounds {
    pub fn check(&self) -> Result<()> {
        let fields = [
            ("terminal_sup", self.terminal_sup),
            ("growth_offset", self.growth_offset),
            ("growth_slope", self.growth_slope),
            ("interaction_lipschitz", self.interaction_lipschitz),
            ("payment_growth", self.payment_growth),
            ("discount_sup", self.discount_sup),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::ModelDefinition(format!(
                    "claim bound {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Full payoff specification of a claim.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClaimSpec {
    pub terminal: TerminalPayoff,
    pub flow: FlowPayoff,
    pub jump_pay: JumpPayoff,
    /// Per-regime discount field `c(t, x, k)`; `None` means zero.
    pub discount: Option<Vec<ScalarField>>,
    pub interaction: InteractionFamily,
    pub bounds: ClaimBounds,
}

impl ClaimSpec {
    /// Terminal payoff `h(x, k)`.
    #[inline]
    pub fn terminal_value(&self, x: &[f64], k: usize) -> f64 {
        self.terminal.eval(x, k)
    }

    /// Flow rate `delta(t, x, v_k, k)`.
    #[inline]
    pub fn flow_rate(&self, t: f64, x: &[f64], v_own: f64, k: usize) -> f64 {
        self.flow.eval(t, x, v_own, k)
    }

    /// Switch payment `f_{kj}(t, x, v_k)`.
    #[inline]
    pub fn jump_payment(&self, t: f64, x: &[f64], v_own: f64, k: usize, j: usize) -> f64 {
        self.jump_pay.eval(t, x, v_own, k, j)
    }

    /// Discount rate `c(t, x, k)`; zero when no discount field is declared.
    #[inline]
    pub fn discount_rate(&self, t: f64, x: &[f64], k: usize) -> f64 {
        match &self.discount {
            Some(fields) => fields[k].eval(t, x),
            None => 0.0,
        }
    }

    /// The coupling term `g_k(t, x, v)`; `v` holds one value per regime.
    pub fn interaction_g(&self, q: &IntensityMatrix, t: f64, x: &[f64], v: &[f64], k: usize) -> f64 {
        let v_own = v[k];
        let mut acc = self.flow.eval(t, x, v_own, k);
        for &j in q.live_targets(k) {
            let spread = v[j] - v_own + self.jump_pay.eval(t, x, v_own, k, j);
            acc += q.rate(t, x, k, j) * self.interaction.link(spread);
        }
        acc
    }

    /// The coupling term with the own-value pass-through removed:
    ///
    /// ```text
    /// g_k(t,x,v) = [delta + sum_j lambda_{kj} (v_j + f_{kj})] - exit_rate(t,x,k) * v_k
    /// ```
    ///
    /// This returns the bracket; pairing it with an extra discount of
    /// `-exit_rate` reproduces `g` exactly for the linear family and removes
    /// the dominant own-value dependence from the source term.
    pub fn interaction_g_exit_split(
        &self,
        q: &IntensityMatrix,
        t: f64,
        x: &[f64],
        v: &[f64],
        k: usize,
    ) -> f64 {
        let v_own = v[k];
        let mut acc = self.flow.eval(t, x, v_own, k);
        for &j in q.live_targets(k) {
            acc += q.rate(t, x, k, j) * (v[j] + self.jump_pay.eval(t, x, v_own, k, j));
        }
        acc
    }

    /// Structural consistency against a model with `m` regimes.
    pub fn check_consistent(&self, m: usize) -> Result<()> {
        match &self.terminal {
            TerminalPayoff::RegimeConstant { values } => {
                if values.len() != m {
                    return Err(Error::ModelDefinition(format!(
                        "terminal payoff has {} regime values, model has {m}",
                        values.len()
                    )));
                }
            }
            TerminalPayoff::CappedCall {
                strike,
                cap,
                value_scale,
                x_scale,
            } => {
                if value_scale.len() != m || x_scale.len() != m {
                    return Err(Error::ModelDefinition(
                        "capped call scales need one entry per regime".into(),
                    ));
                }
                if !(strike.is_finite() && *strike >= 0.0 && cap.is_finite() && *cap > 0.0) {
                    return Err(Error::ModelDefinition(
                        "capped call needs strike >= 0 and cap > 0".into(),
                    ));
                }
            }
            TerminalPayoff::CappedCallOnProduct { strike, cap } => {
                if !(strike.is_finite() && *strike >= 0.0 && cap.is_finite() && *cap > 0.0) {
                    return Err(Error::ModelDefinition(
                        "capped call needs strike >= 0 and cap > 0".into(),
                    ));
                }
            }
        }
        match &self.flow {
            FlowPayoff::None => {}
            FlowPayoff::RegimeConstant { rates } | FlowPayoff::ValueProportional { rates } => {
                if rates.len() != m {
                    return Err(Error::ModelDefinition(format!(
                        "flow payoff has {} regime rates, model has {m}",
                        rates.len()
                    )));
                }
            }
        }
        match &self.jump_pay {
            JumpPayoff::None => {}
            JumpPayoff::Constant { amounts: mat } | JumpPayoff::ValueFraction { fractions: mat } => {
                if mat.nrows() != m || mat.ncols() != m {
                    return Err(Error::ModelDefinition(format!(
                        "switch payment matrix is {}x{}, model has {m} regimes",
                        mat.nrows(),
                        mat.ncols()
                    )));
                }
            }
        }
        if let Some(fields) = &self.discount {
            if fields.len() != m {
                return Err(Error::ModelDefinition(format!(
                    "discount has {} regime fields, model has {m}",
                    fields.len()
                )));
            }
            for (k, f) in fields.iter().enumerate() {
                f.check_consistent(&format!("discount regime {k}"))?;
            }
        }
        if let InteractionFamily::Exponential { alpha } = self.interaction {
            if !(alpha.is_finite() && alpha != 0.0) {
                return Err(Error::ModelDefinition(
                    "exponential interaction needs finite nonzero alpha".into(),
                ));
            }
        }
        self.bounds.check()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn bounds() -> ClaimBounds {
        ClaimBounds {
            terminal_sup: 1.0,
            growth_offset: 1.0,
            growth_slope: 0.0,
            interaction_lipschitz: 0.6,
            payment_growth: 0.5,
            discount_sup: 0.0,
        }
    }

    fn claim(interaction: InteractionFamily) -> ClaimSpec {
        ClaimSpec {
            terminal: TerminalPayoff::RegimeConstant {
                values: vec![1.0, 0.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction,
            bounds: bounds(),
        }
    }

    fn q_single_channel() -> IntensityMatrix {
        IntensityMatrix::from_constant(&[vec![0.0, 0.3], vec![0.0, 0.0]]).unwrap()
    }

    #[test]
    fn zero_spread_gives_zero_coupling() {
        let q = q_single_channel();
        for fam in [InteractionFamily::Linear, InteractionFamily::Exponential { alpha: 1.5 }] {
            let c = claim(fam);
            assert_eq!(c.interaction_g(&q, 0.0, &[1.0], &[0.7, 0.7], 0), 0.0);
        }
    }

    #[test]
    fn linear_coupling_single_channel() {
        let c = claim(InteractionFamily::Linear);
        let q = q_single_channel();
        // rate 0.3, spread 0 - 1 + 0 = -1
        assert_relative_eq!(c.interaction_g(&q, 0.0, &[1.0], &[1.0, 0.0], 0), -0.3);
        // absorbing regime has no channels
        assert_eq!(c.interaction_g(&q, 0.0, &[1.0], &[1.0, 0.0], 1), 0.0);
    }

    #[test]
    fn exponential_coupling_matches_linear_for_small_alpha() {
        let lin = claim(InteractionFamily::Linear);
        let exp = claim(InteractionFamily::Exponential { alpha: 1e-6 });
        let q = q_single_channel();
        let v = [0.9, 0.2];
        let a = lin.interaction_g(&q, 0.0, &[1.0], &v, 0);
        let b = exp.interaction_g(&q, 0.0, &[1.0], &v, 0);
        assert_relative_eq!(a, b, max_relative = 1e-5);
    }

    #[test]
    fn exponential_coupling_closed_form() {
        let c = claim(InteractionFamily::Exponential { alpha: 2.0 });
        let q = q_single_channel();
        let expect = 0.3 * ((2.0f64 * -1.0).exp_m1() / 2.0);
        assert_relative_eq!(c.interaction_g(&q, 0.0, &[1.0], &[1.0, 0.0], 0), expect);
    }

    #[test]
    fn exit_split_moves_own_value_out() {
        let c = claim(InteractionFamily::Linear);
        let q = q_single_channel();
        let v = [0.8, 0.1];
        let g = c.interaction_g(&q, 0.0, &[1.0], &v, 0);
        let bracket = c.interaction_g_exit_split(&q, 0.0, &[1.0], &v, 0);
        let exit = q.exit_rate(0.0, &[1.0], 0);
        assert_relative_eq!(bracket - exit * v[0], g, epsilon = 1e-14);
    }

    #[test]
    fn jump_payment_value_fraction() {
        let mut c = claim(InteractionFamily::Linear);
        c.jump_pay = JumpPayoff::ValueFraction {
            fractions: DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.0, 0.0]),
        };
        let q = q_single_channel();
        // spread = 0 - v + 0.4 v = -0.6 v
        let v = [0.5, 0.0];
        assert_relative_eq!(c.interaction_g(&q, 0.0, &[1.0], &v, 0), 0.3 * (-0.6 * 0.5));
    }

    #[test]
    fn capped_call_payoff_shapes() {
        let h = TerminalPayoff::CappedCall {
            strike: 1.0,
            cap: 0.5,
            value_scale: vec![1.0, 0.25],
            x_scale: vec![1.0, 0.4],
        };
        assert_eq!(h.eval(&[0.8], 0), 0.0);
        assert_relative_eq!(h.eval(&[1.3], 0), 0.3);
        assert_relative_eq!(h.eval(&[99.0], 0), 0.5);
        // regime 1 rescales the underlier by 0.4 and the payout by 0.25
        assert_relative_eq!(h.eval(&[3.0], 1), 0.25 * 0.2);
        assert_relative_eq!(h.sup_abs(), 0.5);
    }

    #[test]
    fn product_call_uses_all_coordinates() {
        let h = TerminalPayoff::CappedCallOnProduct {
            strike: 1.0,
            cap: 10.0,
        };
        assert_relative_eq!(h.eval(&[1.5, 2.0], 0), 2.0);
    }

    #[test]
    fn structural_checks_reject_mismatches() {
        let mut c = claim(InteractionFamily::Linear);
        assert!(c.check_consistent(2).is_ok());
        assert!(c.check_consistent(3).is_err());
        c.interaction = InteractionFamily::Exponential { alpha: 0.0 };
        assert!(c.check_consistent(2).is_err());
    }
}
