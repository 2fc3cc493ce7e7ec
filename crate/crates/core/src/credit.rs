//! Ready-made default-risk scenarios: a model, a claim, a starting point,
//! solver hints and (where one exists) an independent reference value,
//! bundled so the runner and the acceptance suite drive every method from
//! the same definitions.
//!
//! All scenarios write their coefficients directly under the pricing
//! measure (driftless traded state, except where a price that crashes at a
//! switch needs its compensating drift), with one unit of initial state
//! and the all-alive regime as the common starting point.

use nalgebra::DMatrix;

use crate::ctmc::expectation_terminal;
use crate::model::{
    ClaimBounds, ClaimSpec, CoefficientField, Domain, FlowPayoff, InteractionFamily,
    IntensityMatrix, JumpPayoff, ModelSpec, ScalarField, Shape, StateDomain, TerminalPayoff,
};
use crate::pde::{AxisSpec, PdeProblem, PdeVariant, Spacing};
use crate::{Error, Result};

/// How a defaulted claim recovers value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    /// A fixed fraction of notional (a riskless-bond position), paid at the
    /// default time for the plain bond and at maturity for the crashing
    /// stock variant.
    Treasury,
    /// A fixed fraction of the claim's own pre-default value, paid at the
    /// default time.
    MarketValue,
}

/// Closed-form reference for two-regime default scenarios with constant
/// switch rate. `value` gives the exact value of the *remaining* payments,
/// which is what the solved field holds — so a recovery settled at the
/// default moment leaves a defaulted-regime value of zero, while one
/// settled at maturity is still owed there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BondFormula {
    /// Fixed recovery paid at the default time. Live value
    /// `e^{-lambda tau} + R (1 - e^{-lambda tau})` over the remaining time
    /// `tau`; zero once defaulted (the payment already happened).
    Treasury { lambda: f64, recovery: f64 },
    /// Fixed recovery delivered at maturity. Same live value (no
    /// discounting makes the settlement date irrelevant beforehand), and
    /// the recovery itself once defaulted.
    TreasuryAtMaturity { lambda: f64, recovery: f64 },
    /// Recovery as a fraction of the claim's own just-before value, paid
    /// at the default time. Live value `e^{-lambda (1 - R) tau}`; zero
    /// once defaulted.
    MarketValue { lambda: f64, recovery: f64 },
}

impl BondFormula {
    /// Exact remaining-payments value at time `t` in regime `k` for
    /// maturity `horizon`.
    pub fn value(&self, t: f64, horizon: f64, k: usize) -> f64 {
        let tau = horizon - t;
        match *self {
            BondFormula::Treasury { lambda, recovery } => {
                if k == 0 {
                    let live = (-lambda * tau).exp();
                    live + recovery * (1.0 - live)
                } else {
                    0.0
                }
            }
            BondFormula::TreasuryAtMaturity { lambda, recovery } => {
                if k == 0 {
                    let live = (-lambda * tau).exp();
                    live + recovery * (1.0 - live)
                } else {
                    recovery
                }
            }
            BondFormula::MarketValue { lambda, recovery } => {
                if k == 0 {
                    (-lambda * (1.0 - recovery) * tau).exp()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Independent reference a scenario can be checked against.
#[derive(Clone, Debug)]
pub enum Oracle {
    /// Cross-method agreement is the only check available.
    None,
    /// Exact two-regime formula.
    ClosedForm(BondFormula),
    /// State-independent switch rates: the value is the terminal payoff
    /// pushed through the exponential of this regime generator.
    MatrixExponential { generator: DMatrix<f64> },
}

/// Default solver resolution for a scenario.
#[derive(Clone, Debug)]
pub struct GridHint {
    pub axes: Vec<AxisSpec>,
    pub t_steps: usize,
}

/// Pass/fail thresholds the scenario is expected to meet.
#[derive(Clone, Copy, Debug)]
pub struct ToleranceProfile {
    /// Absolute error allowed against the oracle.
    pub oracle_abs: f64,
    /// Relative error allowed between independent methods (the larger of
    /// this and three combined standard errors).
    pub cross_rel: f64,
}

impl Default for ToleranceProfile {
    fn default() -> Self {
        ToleranceProfile {
            oracle_abs: 1e-5,
            cross_rel: 1e-2,
        }
    }
}

/// A fully specified pricing problem: dynamics, claim, starting point,
/// how to solve it and what to check it against.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub model: ModelSpec,
    pub claim: ClaimSpec,
    pub x0: Vec<f64>,
    pub k0: usize,
    pub variant: PdeVariant,
    /// Marching drift when it differs from the model's (the crashing-price
    /// compensator); carried by [`Scenario::pde_problem`].
    pub drift_override: Option<CoefficientField>,
    pub oracle: Oracle,
    pub grid: GridHint,
    pub tol: ToleranceProfile,
    /// Fraction the traded price keeps at the default switch, for
    /// scenarios about a crashing price: the observable terminal price is
    /// the simulated state times this factor once defaulted.
    pub stock_recovery: Option<f64>,
}

impl Scenario {
    /// Marching problem at the scenario's default resolution.
    pub fn pde_problem(&self) -> PdeProblem {
        let mut problem = PdeProblem::new(
            self.model.clone(),
            self.claim.clone(),
            self.grid.axes.clone(),
            self.grid.t_steps,
        );
        problem.variant = self.variant;
        problem.drift_override = self.drift_override.clone();
        problem
    }

    /// Reference value at `(t, regime)` where an oracle exists; the
    /// scenarios carrying one are state-independent by construction, so no
    /// state argument is needed.
    pub fn oracle_value(&self, t: f64, k: usize) -> Result<Option<f64>> {
        match &self.oracle {
            Oracle::None => Ok(None),
            Oracle::ClosedForm(formula) => Ok(Some(formula.value(t, self.model.horizon, k))),
            Oracle::MatrixExponential { generator } => {
                let h: Vec<f64> = (0..self.model.regimes)
                    .map(|j| self.claim.terminal_value(&self.x0, j))
                    .collect();
                let means = expectation_terminal(generator, self.model.horizon - t, &h)?;
                Ok(Some(means[k]))
            }
        }
    }

    /// Model and claim consistency in one call.
    pub fn check(&self) -> Result<()> {
        self.model.check_consistent()?;
        self.claim.check_consistent(self.model.regimes)?;
        if self.x0.len() != self.model.dim() {
            return Err(Error::Config(format!(
                "scenario {}: start point has dimension {}, model has {}",
                self.name,
                self.x0.len(),
                self.model.dim()
            )));
        }
        if self.k0 >= self.model.regimes {
            return Err(Error::Config(format!(
                "scenario {}: start regime {} out of range",
                self.name, self.k0
            )));
        }
        Ok(())
    }
}

fn lognormal_domain() -> Domain {
    Domain {
        kind: StateDomain::PositiveOrthant,
        dim: 1,
    }
}

fn state_scaled_vols(per_regime: &[f64]) -> CoefficientField {
    CoefficientField::StateScaled {
        per_regime: per_regime
            .iter()
            .map(|&s| DMatrix::from_element(1, 1, s))
            .collect(),
    }
}

fn default_axes() -> Vec<AxisSpec> {
    vec![AxisSpec::new(0.25, 4.0, 200, Spacing::LogUniform)]
}

fn lambda_sup(lambda: &ScalarField) -> Result<f64> {
    lambda.sup_bound().ok_or_else(|| {
        Error::Config(
            "switch-rate field needs a knowable upper bound; use a constant or a table".into(),
        )
    })
}

fn check_rate_nonnegative(lambda: &ScalarField) -> Result<()> {
    let ok = match lambda {
        ScalarField::Constant(v) => *v >= 0.0,
        ScalarField::Tabulated { values, .. } => values.iter().all(|&v| v >= 0.0),
        ScalarField::Affine { .. } => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(
            "switch-rate field must be nonnegative everywhere".into(),
        ))
    }
}

/// Two-regime defaultable zero bond: pays one at maturity if no default
/// happened, and on default either a fixed fraction (`Treasury`) or a
/// fraction of its own just-before value (`MarketValue`). Default is
/// absorbing. A constant rate ships with its exact formula; a tabulated
/// state-dependent rate relies on cross-method checks.
pub fn scenario_defaultable_bond(
    mode: RecoveryMode,
    recovery: f64,
    lambda: ScalarField,
) -> Result<Scenario> {
    if !(0.0..1.0).contains(&recovery) {
        return Err(Error::Config(format!(
            "bond recovery must lie in [0, 1), got {recovery}"
        )));
    }
    check_rate_nonnegative(&lambda)?;
    let sup = lambda_sup(&lambda)?;
    let intensities =
        IntensityMatrix::new(2, vec![None, Some(lambda.clone()), None, None], sup)?;
    let model = ModelSpec {
        domain: lognormal_domain(),
        regimes: 2,
        noise_dim: 1,
        horizon: 1.0,
        drift: CoefficientField::zeros(Shape { rows: 1, cols: 1 }, 2),
        vol: state_scaled_vols(&[0.2, 0.25]),
        intensities,
        premium_bound: 10.0,
    };
    let (jump_pay, bounds_slope, bounds_offset, lipschitz) = match mode {
        RecoveryMode::Treasury => (
            JumpPayoff::Constant {
                amounts: DMatrix::from_row_slice(2, 2, &[0.0, recovery, 0.0, 0.0]),
            },
            2.0 * sup,
            recovery * sup,
            2.0 * sup,
        ),
        RecoveryMode::MarketValue => (
            JumpPayoff::ValueFraction {
                fractions: DMatrix::from_row_slice(2, 2, &[0.0, recovery, 0.0, 0.0]),
            },
            (2.0 - recovery) * sup,
            0.0,
            (2.0 - recovery) * sup,
        ),
    };
    let claim = ClaimSpec {
        terminal: TerminalPayoff::RegimeConstant {
            values: vec![1.0, 0.0],
        },
        flow: FlowPayoff::None,
        jump_pay,
        discount: None,
        interaction: InteractionFamily::Linear,
        bounds: ClaimBounds {
            terminal_sup: 1.0,
            growth_offset: bounds_offset,
            growth_slope: bounds_slope,
            interaction_lipschitz: lipschitz,
            payment_growth: recovery,
            discount_sup: 0.0,
        },
    };
    let constant_rate = matches!(lambda, ScalarField::Constant(_));
    let (name, oracle) = match (mode, constant_rate) {
        (RecoveryMode::Treasury, true) => (
            "defaultable_bond_treasury",
            Oracle::ClosedForm(BondFormula::Treasury {
                lambda: sup,
                recovery,
            }),
        ),
        (RecoveryMode::MarketValue, true) => (
            "defaultable_bond_market_value",
            Oracle::ClosedForm(BondFormula::MarketValue {
                lambda: sup,
                recovery,
            }),
        ),
        (RecoveryMode::Treasury, false) => ("defaultable_bond_state_linked", Oracle::None),
        (RecoveryMode::MarketValue, false) => {
            ("defaultable_bond_state_linked_market_value", Oracle::None)
        }
    };
    let description = match (mode, constant_rate) {
        (RecoveryMode::Treasury, true) => {
            "two-regime defaultable bond, fixed recovery paid at default".into()
        }
        (RecoveryMode::MarketValue, true) => {
            "two-regime defaultable bond, recovery as a fraction of its own value".into()
        }
        (mode, false) => format!(
            "two-regime defaultable bond with a state-linked default rate, {} recovery",
            match mode {
                RecoveryMode::Treasury => "fixed",
                RecoveryMode::MarketValue => "market-value",
            }
        ),
    };
    Ok(Scenario {
        name: name.into(),
        description,
        model,
        claim,
        x0: vec![1.0],
        k0: 0,
        variant: PdeVariant::Valuation,
        drift_override: None,
        oracle,
        grid: GridHint {
            axes: default_axes(),
            t_steps: 200,
        },
        tol: ToleranceProfile::default(),
        stock_recovery: None,
    })
}

/// Maximum total exit rate over the basket's states: `(firms - c)`
/// channels at rate `base * amplify^c` for `c` prior defaults.
fn basket_exit_sup(firms: u32, base_sup: f64, amplify: f64) -> f64 {
    (0..firms)
        .map(|c| (firms - c) as f64 * base_sup * amplify.powi(c as i32))
        .fold(0.0, f64::max)
}

/// Basket of `firms` names whose default rates rise with the number of
/// names already in default: each live name defaults at
/// `base * amplify^(number defaulted)`, independently of which names those
/// are, and never simultaneously. Regimes encode the default set as a
/// bitmask with firm `i` on bit `i` (lowest bit first). The claim pays one
/// at maturity iff every name survived.
///
/// With a constant `base` the scenario carries a matrix-exponential
/// reference; a state-linked `base` (optional table) leaves cross-method
/// agreement as the only check.
pub fn scenario_contagion_basket(
    firms: u32,
    base: f64,
    amplify: f64,
    state_link: Option<ScalarField>,
) -> Result<Scenario> {
    if firms < 2 {
        return Err(Error::Config(format!(
            "a basket needs at least two names, got {firms}"
        )));
    }
    if firms > 10 {
        return Err(Error::Config(format!(
            "{firms} names means {} regimes; ten names is the supported ceiling",
            1u64 << firms
        )));
    }
    if !(base.is_finite() && base > 0.0) {
        return Err(Error::Config(format!(
            "base default rate must be positive, got {base}"
        )));
    }
    if !(amplify.is_finite() && amplify >= 1.0) {
        return Err(Error::Config(format!(
            "amplification must be at least one, got {amplify}"
        )));
    }
    let m = 1usize << firms;
    let base_field = match &state_link {
        None => ScalarField::Constant(base),
        Some(f) => {
            check_rate_nonnegative(f)?;
            f.clone()
        }
    };
    let base_sup = lambda_sup(&base_field)?;

    let mut entries: Vec<Option<ScalarField>> = vec![None; m * m];
    for k in 0..m {
        let defaults = (k as u32).count_ones();
        let rate = amplify.powi(defaults as i32);
        for i in 0..firms {
            if k & (1 << i) == 0 {
                let j = k | (1 << i);
                entries[k * m + j] = Some(base_field.scaled(rate));
            }
        }
    }
    let bound = base_sup * amplify.powi(firms as i32 - 1);
    let intensities = IntensityMatrix::new(m, entries, bound)?;
    let exit_sup = basket_exit_sup(firms, base_sup, amplify);

    let oracle = if state_link.is_none() {
        // Constant rates: the regime chain is autonomous and its generator
        // exact, so the survival claim prices by the matrix exponential.
        let mut generator = DMatrix::zeros(m, m);
        for k in 0..m {
            let defaults = (k as u32).count_ones();
            let rate = base * amplify.powi(defaults as i32);
            for i in 0..firms {
                if k & (1 << i) == 0 {
                    let j = k | (1 << i);
                    generator[(k, j)] = rate;
                    generator[(k, k)] -= rate;
                }
            }
        }
        Oracle::MatrixExponential { generator }
    } else {
        Oracle::None
    };

    let vols: Vec<f64> = (0..m)
        .map(|k| 0.2 + 0.05 * (k as u32).count_ones() as f64)
        .collect();
    let mut terminal = vec![0.0; m];
    terminal[0] = 1.0;
    let model = ModelSpec {
        domain: lognormal_domain(),
        regimes: m,
        noise_dim: 1,
        horizon: 1.0,
        drift: CoefficientField::zeros(Shape { rows: 1, cols: 1 }, m),
        vol: state_scaled_vols(&vols),
        intensities,
        premium_bound: 10.0,
    };
    let claim = ClaimSpec {
        terminal: TerminalPayoff::RegimeConstant { values: terminal },
        flow: FlowPayoff::None,
        jump_pay: JumpPayoff::None,
        discount: None,
        interaction: InteractionFamily::Linear,
        bounds: ClaimBounds {
            terminal_sup: 1.0,
            growth_offset: 0.0,
            growth_slope: 2.0 * exit_sup,
            interaction_lipschitz: 2.0 * exit_sup,
            payment_growth: 0.0,
            discount_sup: 0.0,
        },
    };
    Ok(Scenario {
        name: if state_link.is_none() {
            "contagion_basket".into()
        } else {
            "contagion_basket_state_linked".into()
        },
        description: format!(
            "{firms}-name contagion basket, joint-survival claim, rate amplification {amplify}"
        ),
        model,
        claim,
        x0: vec![1.0],
        k0: 0,
        variant: PdeVariant::Valuation,
        drift_override: None,
        oracle,
        grid: GridHint {
            axes: vec![AxisSpec::new(0.25, 4.0, 61, Spacing::LogUniform)],
            t_steps: 192,
        },
        tol: ToleranceProfile::default(),
        stock_recovery: None,
    })
}

/// Claim on a stock that crashes to a fraction `stock_recovery` of its
/// value when the issuing firm defaults. The simulated state is the
/// pre-default price continued through default; the observable price is
/// that state once alive, `stock_recovery` times it once defaulted. The
/// state's live-regime drift `(1 - stock_recovery) * lambda * x` exactly
/// compensates the crash so the observable price is a martingale.
///
/// `MarketValue` recovers a fraction of the claim's own value at default
/// and owes nothing afterwards, so any `stock_recovery` in `[0, 1]` works;
/// `Treasury` keeps paying after default (the recovery is settled at
/// maturity), which forces `stock_recovery > 0` — a price that crashes to
/// zero carries no information about post-default payments.
pub fn scenario_crash_at_default(
    mode: RecoveryMode,
    claim_recovery: f64,
    stock_recovery: f64,
    sigma: f64,
    lambda: f64,
) -> Result<Scenario> {
    if !(0.0..=1.0).contains(&claim_recovery) {
        return Err(Error::Config(format!(
            "claim recovery must lie in [0, 1], got {claim_recovery}"
        )));
    }
    if !(0.0..=1.0).contains(&stock_recovery) {
        return Err(Error::Config(format!(
            "stock recovery must lie in [0, 1], got {stock_recovery}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!(
            "volatility must be positive, got {sigma}"
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!(
            "default rate must be nonnegative, got {lambda}"
        )));
    }
    if mode == RecoveryMode::Treasury && stock_recovery == 0.0 && claim_recovery > 0.0 {
        return Err(Error::Config(
            "post-default payments need a positive stock recovery: with a total crash the \
             defaulted price level is lost and the payment profile cannot be expressed on it"
                .into(),
        ));
    }
    let intensities =
        IntensityMatrix::from_constant(&[vec![0.0, lambda], vec![0.0, 0.0]])?;
    // Compensating drift on the live layer only; the defaulted layer is
    // driftless. The observable price then has zero expected growth.
    let gamma = CoefficientField::StateScaled {
        per_regime: vec![
            DMatrix::from_element(1, 1, (1.0 - stock_recovery) * lambda),
            DMatrix::from_element(1, 1, 0.0),
        ],
    };
    let model = ModelSpec {
        domain: lognormal_domain(),
        regimes: 2,
        noise_dim: 1,
        horizon: 1.0,
        drift: gamma.clone(),
        vol: state_scaled_vols(&[sigma, sigma]),
        intensities,
        premium_bound: 10.0,
    };
    let (claim, oracle) = match mode {
        RecoveryMode::MarketValue => (
            ClaimSpec {
                terminal: TerminalPayoff::RegimeConstant {
                    values: vec![1.0, 0.0],
                },
                flow: FlowPayoff::None,
                jump_pay: JumpPayoff::ValueFraction {
                    fractions: DMatrix::from_row_slice(
                        2,
                        2,
                        &[0.0, claim_recovery, 0.0, 0.0],
                    ),
                },
                discount: None,
                interaction: InteractionFamily::Linear,
                bounds: ClaimBounds {
                    terminal_sup: 1.0,
                    growth_offset: 0.0,
                    growth_slope: (2.0 - claim_recovery) * lambda,
                    interaction_lipschitz: (2.0 - claim_recovery) * lambda,
                    payment_growth: claim_recovery,
                    discount_sup: 0.0,
                },
            },
            Oracle::ClosedForm(BondFormula::MarketValue {
                lambda,
                recovery: claim_recovery,
            }),
        ),
        RecoveryMode::Treasury => (
            ClaimSpec {
                terminal: TerminalPayoff::RegimeConstant {
                    values: vec![1.0, claim_recovery],
                },
                flow: FlowPayoff::None,
                jump_pay: JumpPayoff::None,
                discount: None,
                interaction: InteractionFamily::Linear,
                bounds: ClaimBounds {
                    terminal_sup: 1.0,
                    growth_offset: claim_recovery * lambda,
                    growth_slope: 2.0 * lambda,
                    interaction_lipschitz: 2.0 * lambda,
                    payment_growth: 0.0,
                    discount_sup: 0.0,
                },
            },
            Oracle::ClosedForm(BondFormula::TreasuryAtMaturity {
                lambda,
                recovery: claim_recovery,
            }),
        ),
    };
    let name = if stock_recovery == 0.0 {
        "crash_at_default_full_loss"
    } else if stock_recovery == 1.0 {
        "crash_at_default_no_crash"
    } else {
        "crash_at_default"
    };
    Ok(Scenario {
        name: name.into(),
        description: format!(
            "claim on a stock crashing to {stock_recovery} of its value at default"
        ),
        model,
        claim,
        x0: vec![1.0],
        k0: 0,
        variant: PdeVariant::CrashAtDefault,
        drift_override: Some(gamma),
        oracle,
        grid: GridHint {
            axes: default_axes(),
            t_steps: 200,
        },
        tol: ToleranceProfile::default(),
        stock_recovery: Some(stock_recovery),
    })
}

fn state_linked_rate() -> ScalarField {
    // Mildly procyclical default rate, rising with the state level; the
    // interpolated table IS the model, so every method sees the same field.
    let xs = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut values = DMatrix::zeros(2, xs.len());
    for (c, &x) in xs.iter().enumerate() {
        let v = 0.3 + 0.25 * x / (1.0 + x);
        values[(0, c)] = v;
        values[(1, c)] = v;
    }
    ScalarField::Tabulated {
        t_grid: vec![0.0, 1.0],
        x_grid: xs.to_vec(),
        values,
    }
}

fn state_linked_basket_rate() -> ScalarField {
    let xs = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut values = DMatrix::zeros(2, xs.len());
    for (c, &x) in xs.iter().enumerate() {
        let v = 0.2 + 0.15 * x / (1.0 + x);
        values[(0, c)] = v;
        values[(1, c)] = v;
    }
    ScalarField::Tabulated {
        t_grid: vec![0.0, 1.0],
        x_grid: xs.to_vec(),
        values,
    }
}

/// Every shipped scenario, constructed fresh.
pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![
        scenario_defaultable_bond(RecoveryMode::Treasury, 0.4, ScalarField::Constant(0.5))
            .expect("builtin"),
        scenario_defaultable_bond(RecoveryMode::MarketValue, 0.4, ScalarField::Constant(0.5))
            .expect("builtin"),
        scenario_defaultable_bond(RecoveryMode::Treasury, 0.4, state_linked_rate())
            .expect("builtin"),
        scenario_contagion_basket(2, 0.3, 2.0, None).expect("builtin"),
        scenario_contagion_basket(2, 0.3, 2.0, Some(state_linked_basket_rate()))
            .expect("builtin"),
        scenario_crash_at_default(RecoveryMode::MarketValue, 0.4, 0.4, 0.2, 0.5)
            .expect("builtin"),
        scenario_crash_at_default(RecoveryMode::MarketValue, 0.4, 0.0, 0.2, 0.5)
            .expect("builtin"),
        scenario_crash_at_default(RecoveryMode::MarketValue, 0.4, 1.0, 0.2, 0.5)
            .expect("builtin"),
    ]
}

/// Names accepted by [`scenario_by_name`], in listing order.
pub fn scenario_names() -> Vec<String> {
    builtin_scenarios().into_iter().map(|s| s.name).collect()
}

/// Look a shipped scenario up by its name.
pub fn scenario_by_name(name: &str) -> Result<Scenario> {
    builtin_scenarios()
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown scenario '{name}'; shipped: {}",
                scenario_names().join(", ")
            ))
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::transition_matrix;
    use crate::pde::solve_system;
    use crate::sim::{map_paths, simulate_market_pasting, MarketConfig, StepScheme};
    use crate::stats::sample_stats;

    #[test]
    fn builtin_scenarios_are_consistent_and_uniquely_named() {
        let all = builtin_scenarios();
        let mut names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        for s in &all {
            s.check().unwrap_or_else(|e| panic!("{}: {e}", s.name));
        }
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), all.len(), "duplicate scenario names");
        assert!(scenario_by_name("defaultable_bond_treasury").is_ok());
        assert!(matches!(
            scenario_by_name("no_such_scenario"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn constant_rate_bonds_solve_to_their_closed_forms() {
        for name in ["defaultable_bond_treasury", "defaultable_bond_market_value"] {
            let scenario = scenario_by_name(name).unwrap();
            let field = solve_system(&scenario.pde_problem()).unwrap();
            for (t, x, k) in [
                (0.0, 1.0, 0),
                (0.0, 1.0, 1),
                (0.37, 0.6, 0),
                (0.75, 2.5, 0),
                (0.5, 1.0, 1),
            ] {
                let expect = scenario.oracle_value(t, k).unwrap().unwrap();
                let got = field.interp(t, &[x], k);
                assert!(
                    (got - expect).abs() <= scenario.tol.oracle_abs,
                    "{name} at (t={t}, x={x}, k={k}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn zero_recovery_bond_prices_the_survival_probability() {
        let scenario =
            scenario_defaultable_bond(RecoveryMode::Treasury, 0.0, ScalarField::Constant(0.5))
                .unwrap();
        let field = solve_system(&scenario.pde_problem()).unwrap();
        let got = field.interp(0.0, &[1.0], 0);
        assert!(
            (got - (-0.5f64).exp()).abs() <= 1e-5,
            "survival {got} vs {}",
            (-0.5f64).exp()
        );
    }

    #[test]
    fn basket_rates_allow_only_single_new_defaults() {
        let scenario = scenario_contagion_basket(3, 0.3, 1.7, None).unwrap();
        let q = &scenario.model.intensities;
        let m = 8;
        for k in 0..m {
            let defaults = (k as u32).count_ones();
            for j in 0..m {
                let rate = q.rate(0.2, &[1.0], k, j);
                let expected = if j > k && (j & k) == k && (j ^ k).count_ones() == 1 {
                    0.3 * 1.7f64.powi(defaults as i32)
                } else {
                    0.0
                };
                assert!(
                    (rate - expected).abs() < 1e-14,
                    "rate {k}->{j}: {rate} vs {expected}"
                );
            }
        }
        // All-defaulted state is absorbing.
        assert!(q.live_targets(7).is_empty());
    }

    #[test]
    fn independent_names_survive_as_a_product() {
        let scenario = scenario_contagion_basket(2, 0.3, 1.0, None).unwrap();
        let joint = scenario.oracle_value(0.0, 0).unwrap().unwrap();
        let product = (-2.0 * 0.3f64).exp();
        assert!(
            (joint - product).abs() < 1e-12,
            "joint survival {joint} vs product {product}"
        );
    }

    #[test]
    fn amplified_rates_correlate_defaults_positively() {
        let scenario = scenario_contagion_basket(2, 0.3, 2.0, None).unwrap();
        let generator = match &scenario.oracle {
            Oracle::MatrixExponential { generator } => generator.clone(),
            other => panic!("expected a generator oracle, got {other:?}"),
        };
        let p = transition_matrix(&generator, 1.0).unwrap();
        let both = p[(0, 3)];
        let first = p[(0, 1)] + p[(0, 3)];
        let second = p[(0, 2)] + p[(0, 3)];
        assert!(
            both > first * second + 1e-4,
            "joint default {both} vs independent product {}",
            first * second
        );
        // Leaving the all-alive state is amplification-free, so the joint
        // survival probability still has a hand-computable form.
        let joint_survival = scenario.oracle_value(0.0, 0).unwrap().unwrap();
        assert!((joint_survival - (-0.6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn crash_scenarios_solve_to_the_reduced_rate_formula() {
        for stock_recovery in [0.0, 0.4, 1.0] {
            let scenario = scenario_crash_at_default(
                RecoveryMode::MarketValue,
                0.4,
                stock_recovery,
                0.2,
                0.5,
            )
            .unwrap();
            let field = solve_system(&scenario.pde_problem()).unwrap();
            for (t, x) in [(0.0, 1.0), (0.3, 2.0), (0.8, 0.5)] {
                let expect = scenario.oracle_value(t, 0).unwrap().unwrap();
                let got = field.interp(t, &[x], 0);
                assert!(
                    (got - expect).abs() <= scenario.tol.oracle_abs,
                    "recovery {stock_recovery} at (t={t}, x={x}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn crashed_price_is_a_martingale_under_the_compensating_drift() {
        let scenario =
            scenario_crash_at_default(RecoveryMode::MarketValue, 0.4, 0.4, 0.2, 0.5).unwrap();
        let recovery = scenario.stock_recovery.unwrap();
        let cfg = MarketConfig {
            steps: 64,
            scheme: StepScheme::LogEuler,
            seed: 0x91,
        };
        let observed: Vec<f64> = map_paths(4000, |p| {
            let b = simulate_market_pasting(&scenario.model, &scenario.x0, scenario.k0, &cfg, p)?;
            let factor = if b.terminal_regime() == 0 { 1.0 } else { recovery };
            Ok(b.terminal_state()[0] * factor)
        })
        .unwrap();
        let stats = sample_stats(&observed);
        assert!(
            stats.mean_within(scenario.x0[0], 3.0, 0.0),
            "observable terminal mean {} +- {} vs {}",
            stats.mean,
            stats.se,
            scenario.x0[0]
        );
    }

    #[test]
    fn invalid_configurations_are_rejected() {
        assert!(matches!(
            scenario_defaultable_bond(RecoveryMode::Treasury, 1.0, ScalarField::Constant(0.5)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            scenario_defaultable_bond(RecoveryMode::Treasury, -0.1, ScalarField::Constant(0.5)),
            Err(Error::Config(_))
        ));
        let affine = ScalarField::Affine {
            intercept: 0.3,
            slope: vec![0.1],
        };
        assert!(
            matches!(
                scenario_defaultable_bond(RecoveryMode::Treasury, 0.4, affine),
                Err(Error::Config(_))
            ),
            "a rate field without a knowable bound must be refused"
        );
        assert!(matches!(
            scenario_contagion_basket(1, 0.3, 2.0, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            scenario_contagion_basket(11, 0.3, 2.0, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            scenario_contagion_basket(2, 0.0, 2.0, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            scenario_contagion_basket(2, 0.3, 0.9, None),
            Err(Error::Config(_))
        ));
        // Post-default payments with a total crash.
        assert!(matches!(
            scenario_crash_at_default(RecoveryMode::Treasury, 0.4, 0.0, 0.2, 0.5),
            Err(Error::Config(_))
        ));
        // The same profile with any positive stock recovery is fine.
        assert!(scenario_crash_at_default(RecoveryMode::Treasury, 0.4, 0.2, 0.2, 0.5).is_ok());
        assert!(matches!(
            scenario_crash_at_default(RecoveryMode::MarketValue, 0.4, 1.5, 0.2, 0.5),
            Err(Error::Config(_))
        ));
    }
}
