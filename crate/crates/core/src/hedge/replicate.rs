//! Exact replication in the completed market: one diffusive asset plus a
//! traded instrument that jumps at the single regime switch span every
//! payment profile, so a self-financed portfolio reproduces the claim.

use crate::field::ValueField;
use crate::model::{ClaimSpec, ModelSpec};
use crate::pde::{solve_system, AxisSpec, PdeProblem, PdeVariant};
use crate::sim::{
    map_paths, simulate_market_pasting, stats_with_exclusions, MarketConfig, PathBundle,
    StepScheme,
};
use crate::stats::SampleStats;
use crate::{Error, Result};

use super::gradient_field;

/// Controls for [`replicate_completed_market`].
#[derive(Clone, Debug)]
pub struct ReplicationConfig {
    pub seed: u64,
    pub paths: usize,
    /// Rebalance steps along each path.
    pub steps: usize,
    pub scheme: StepScheme,
    /// Common starting level of the diffusive asset.
    pub x0: f64,
    /// Spatial grid for both value surfaces.
    pub axes: Vec<AxisSpec>,
    /// Time steps for both value surfaces.
    pub t_steps: usize,
    /// Fraction of a path's rows allowed outside the surface hull before
    /// the path is dropped.
    pub clamp_budget: f64,
}

impl ReplicationConfig {
    pub fn new(seed: u64, paths: usize, steps: usize, x0: f64, axes: Vec<AxisSpec>, t_steps: usize) -> Self {
        ReplicationConfig {
            seed,
            paths,
            steps,
            scheme: StepScheme::LogEuler,
            x0,
            axes,
            t_steps,
            clamp_budget: 0.02,
        }
    }
}

/// Outcome of replicating one claim with the asset and the traded
/// jump-sensitive instrument.
#[derive(Clone, Debug)]
pub struct ReplicationReport {
    /// Claim surface at the start: the capital the strategy needs.
    pub initial_wealth: f64,
    /// Units of the traded instrument held at the start.
    pub initial_bond_position: f64,
    /// Units of the diffusive asset held at the start.
    pub initial_stock_position: f64,
    /// Numeraire balance at the start.
    pub initial_cash: f64,
    /// Terminal wealth minus the claim's realized payment stream, per path.
    pub terminal_errors: Vec<f64>,
    pub excluded: Vec<bool>,
    pub error_stats: SampleStats,
    pub rms_error: f64,
}

/// Replicate `claim` by trading the diffusive asset and the instrument
/// whose payment profile is `bond_claim`, both priced on the same grid.
///
/// The market must be complete in the strict sense: one diffusive
/// dimension, two regimes with the second absorbing, and no drift (the
/// construction prices and hedges under the same measure). The instrument
/// position is the ratio of the claim's switch exposure to the
/// instrument's switch spread; the asset position carries the remaining
/// gradient. A vanishing spread means the instrument carries no switch
/// risk and the market is not completed by it.
pub fn replicate_completed_market(
    model: &ModelSpec,
    claim: &ClaimSpec,
    bond_claim: &ClaimSpec,
    cfg: &ReplicationConfig,
) -> Result<ReplicationReport> {
    if model.dim() != 1 {
        return Err(Error::Usage(
            "replication needs exactly one diffusive dimension".into(),
        ));
    }
    if model.regimes != 2 {
        return Err(Error::Usage("replication needs exactly two regimes".into()));
    }
    if !model.intensities.live_targets(1).is_empty() {
        return Err(Error::Usage(
            "the second regime must be absorbing for the instrument to span the single switch"
                .into(),
        ));
    }
    claim.check_consistent(2)?;
    bond_claim.check_consistent(2)?;
    if cfg.axes.len() != 1 {
        return Err(Error::Usage("one axis specification required".into()));
    }
    // The construction works under one measure for pricing and trading, so
    // the asset must be locally riskless under it: probe the drift.
    let mut b = [0.0];
    let probe_x = [cfg.axes[0].lo, cfg.x0, cfg.axes[0].hi];
    for k in 0..2 {
        for &x in &probe_x {
            for t in [0.0, 0.5 * model.horizon, model.horizon] {
                model.drift_into(t, &[x], k, &mut b);
                if b[0] != 0.0 {
                    return Err(Error::Usage(
                        "replication requires zero drift; price under the pricing measure".into(),
                    ));
                }
            }
        }
    }

    let solve = |c: &ClaimSpec| -> Result<ValueField> {
        let mut problem = PdeProblem::new(model.clone(), c.clone(), cfg.axes.clone(), cfg.t_steps);
        problem.variant = PdeVariant::Hedging;
        solve_system(&problem)
    };
    let claim_field = solve(claim)?;
    let bond_field = solve(bond_claim)?;
    let claim_grad = gradient_field(&claim_field, 0);
    let bond_grad = gradient_field(&bond_field, 0);
    let bond_scale = (0..bond_field.t_grid().len())
        .map(|it| bond_field.layer_max_abs(it))
        .fold(1e-300, f64::max);
    let spread_floor = 1e-8 * bond_scale;

    let mcfg = MarketConfig {
        steps: cfg.steps,
        scheme: cfg.scheme,
        seed: cfg.seed,
    };
    let x0 = [cfg.x0];
    let positions_at = |t: f64, x: &[f64], k: usize| -> Result<(f64, f64)> {
        let v0 = claim_field.interp(t, x, 0);
        let v1 = claim_field.interp(t, x, 1);
        let num = v1 - v0 + claim.jump_payment(t, x, v0, 0, 1);
        let den = bond_field.interp(t, x, 1) - bond_field.interp(t, x, 0);
        if den.abs() < spread_floor {
            return Err(Error::Degenerate(format!(
                "instrument switch spread {den:.3e} at t={t:.4} is below {spread_floor:.3e}; \
                 the instrument does not span the switch"
            )));
        }
        let bond_pos = num / den;
        let stock_pos = claim_grad.interp(t, x, k) - bond_pos * bond_grad.interp(t, x, k);
        Ok((bond_pos, stock_pos))
    };

    let (bond0, stock0) = positions_at(0.0, &x0, 0)?;
    let initial_wealth = claim_field.interp(0.0, &x0, 0);
    let initial_cash =
        initial_wealth - stock0 * cfg.x0 - bond0 * bond_field.interp(0.0, &x0, 0);

    let runs = map_paths(cfg.paths, |p| {
        let bundle = simulate_market_pasting(model, &x0, 0, &mcfg, p)?;
        replicate_one_path(claim, &claim_field, &bond_field, &positions_at, &bundle, cfg)
    })?;
    let terminal_errors: Vec<f64> = runs.iter().map(|&(e, _)| e).collect();
    let excluded: Vec<bool> = runs.iter().map(|&(_, x)| x).collect();
    let error_stats = stats_with_exclusions(&terminal_errors, &excluded)?;
    let kept_sq: Vec<f64> = terminal_errors
        .iter()
        .zip(&excluded)
        .filter(|(_, &e)| !e)
        .map(|(&r, _)| r * r)
        .collect();
    let rms_error = (crate::stats::pairwise_sum(&kept_sq) / kept_sq.len() as f64).sqrt();

    Ok(ReplicationReport {
        initial_wealth,
        initial_bond_position: bond0,
        initial_stock_position: stock0,
        initial_cash,
        terminal_errors,
        excluded,
        error_stats,
        rms_error,
    })
}

fn replicate_one_path(
    claim: &ClaimSpec,
    claim_field: &ValueField,
    bond_field: &ValueField,
    positions_at: &impl Fn(f64, &[f64], usize) -> Result<(f64, f64)>,
    b: &PathBundle,
    cfg: &ReplicationConfig,
) -> Result<(f64, bool)> {
    let mut wealth = claim_field.interp(b.t[0], b.state(0), b.regime[0]);
    let mut clamp_rows = 0usize;
    let mut flow_int = 0.0;
    let mut pay_sum = 0.0;
    let mut jp = 0usize;
    let (mut y_here, clamped) = bond_field.interp_clamped(b.t[0], b.state(0), b.regime[0]);
    if clamped {
        clamp_rows += 1;
    }
    for r in 0..b.rows() - 1 {
        let k = b.regime[r];
        let ta = b.t[r];
        let tb = b.t[r + 1];
        let sa = b.state(r);
        let sb = b.state(r + 1);
        let (bond_pos, stock_pos) = positions_at(ta, sa, k)?;
        let (y_next, clamped) = bond_field.interp_clamped(tb, sb, b.regime[r + 1]);
        if clamped {
            clamp_rows += 1;
        }
        wealth += stock_pos * (sb[0] - sa[0]) + bond_pos * (y_next - y_here);
        y_here = y_next;

        let va = claim_field.interp(ta, sa, k);
        let vb = claim_field.interp(tb, sb, k);
        flow_int += 0.5
            * (claim.flow_rate(ta, sa, va, k) + claim.flow_rate(tb, sb, vb, k))
            * (tb - ta);
        if jp < b.jumps.len() && b.jumps[jp].row == r + 1 {
            let rec = &b.jumps[jp];
            pay_sum += claim.jump_payment(
                rec.time,
                sb,
                claim_field.interp(rec.time, sb, rec.from),
                rec.from,
                rec.to,
            );
            jp += 1;
        }
    }
    let owed = claim.terminal_value(b.terminal_state(), b.terminal_regime()) + flow_int + pay_sum;
    let excluded = b.excluded || (clamp_rows as f64) > cfg.clamp_budget * b.rows() as f64;
    Ok((wealth - owed, excluded))
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::model::{
        ClaimBounds, CoefficientField, Domain, FlowPayoff, InteractionFamily, IntensityMatrix,
        JumpPayoff, ScalarField, Shape, StateDomain, TerminalPayoff,
    };
    use crate::pde::Spacing;

    fn complete_model(lambda: f64, sigma: f64) -> ModelSpec {
        ModelSpec {
            domain: Domain {
                kind: StateDomain::PositiveOrthant,
                dim: 1,
            },
            regimes: 2,
            noise_dim: 1,
            horizon: 1.0,
            drift: CoefficientField::zeros(Shape { rows: 1, cols: 1 }, 2),
            vol: CoefficientField::StateScaled {
                per_regime: vec![DMatrix::from_element(1, 1, sigma); 2],
            },
            intensities: IntensityMatrix::from_constant(&[vec![0.0, lambda], vec![0.0, 0.0]])
                .unwrap(),
            premium_bound: 10.0,
        }
    }

    fn bounds(sup: f64) -> ClaimBounds {
        ClaimBounds {
            terminal_sup: sup,
            growth_offset: 0.0,
            growth_slope: 2.0,
            interaction_lipschitz: 1.0,
            payment_growth: 1.0,
            discount_sup: 0.0,
        }
    }

    fn treasury_recovery_bond(recovery: f64) -> ClaimSpec {
        ClaimSpec {
            terminal: TerminalPayoff::RegimeConstant {
                values: vec![1.0, recovery],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(1.0),
        }
    }

    fn config(seed: u64, paths: usize, steps: usize, nx: usize, nt: usize) -> ReplicationConfig {
        ReplicationConfig::new(
            seed,
            paths,
            steps,
            1.0,
            vec![AxisSpec::new(0.25, 4.0, nx, Spacing::LogUniform)],
            nt,
        )
    }

    #[test]
    fn replicating_the_traded_instrument_with_itself_is_exact() {
        let model = complete_model(0.5, 0.2);
        // Recovery one half keeps every price move of the instrument below
        // one half in magnitude, so each move is exactly representable (all
        // prices live in [1/4, 1] where doubles are multiples of 2^-54) and
        // the wealth recursion telescopes without any rounding at all.
        let bond = treasury_recovery_bond(0.5);
        let cfg = config(0x81, 200, 32, 9, 64);
        let report = replicate_completed_market(&model, &bond, &bond, &cfg).unwrap();
        // Identical payment profiles solve to bitwise-identical surfaces, so
        // the position in the instrument is exactly one and the asset
        // position exactly zero.
        assert_eq!(report.initial_bond_position, 1.0);
        assert_eq!(report.initial_stock_position, 0.0);
        assert_eq!(report.initial_cash, 0.0);
        let mut kept = 0;
        for (i, (&err, &ex)) in report
            .terminal_errors
            .iter()
            .zip(&report.excluded)
            .enumerate()
        {
            if !ex {
                kept += 1;
                assert_eq!(err, 0.0, "path {i} error {err:e}");
            }
        }
        assert!(kept >= 190, "only {kept} of 200 paths kept");
        assert_eq!(report.rms_error, 0.0);
    }

    #[test]
    fn digital_default_claim_is_short_one_zero_recovery_bond() {
        // With zero recovery the instrument pays one iff no switch happens,
        // while the claim pays one iff it does: the claim is a unit of cash
        // minus the instrument, and the positions must say exactly that.
        let model = complete_model(0.5, 0.2);
        let bond = treasury_recovery_bond(0.0);
        let digital = ClaimSpec {
            terminal: TerminalPayoff::RegimeConstant {
                values: vec![0.0, 1.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(1.0),
        };
        let cfg = config(0x82, 200, 64, 9, 128);
        let report = replicate_completed_market(&model, &digital, &bond, &cfg).unwrap();
        assert!(
            (report.initial_bond_position + 1.0).abs() <= 1e-9,
            "bond position {}",
            report.initial_bond_position
        );
        assert!(
            report.initial_stock_position.abs() <= 1e-9,
            "asset position {}",
            report.initial_stock_position
        );
        assert!(
            (report.initial_cash - 1.0).abs() <= 1e-9,
            "cash {}",
            report.initial_cash
        );
        for (&err, &ex) in report.terminal_errors.iter().zip(&report.excluded) {
            if !ex {
                assert!(err.abs() <= 1e-8, "error {err:e}");
            }
        }
    }

    #[test]
    fn refining_steps_and_grid_shrinks_the_replication_error() {
        // State-dependent switch rate and a recovery-of-value payment make
        // both surfaces genuinely two-dimensional; the replication error is
        // then pure discretization and must shrink under joint refinement.
        let lam = ScalarField::Tabulated {
            t_grid: vec![0.0, 1.0],
            x_grid: vec![0.25, 1.0, 2.0, 4.0],
            values: DMatrix::from_row_slice(2, 4, &[0.35, 0.5, 0.6, 0.65, 0.35, 0.5, 0.6, 0.65]),
        };
        let mut model = complete_model(0.5, 0.2);
        model.intensities = IntensityMatrix::new(2, vec![None, Some(lam), None, None], 0.8).unwrap();
        let bond = treasury_recovery_bond(0.4);
        let claim = ClaimSpec {
            terminal: TerminalPayoff::CappedCall {
                strike: 1.0,
                cap: 2.0,
                value_scale: vec![1.0, 0.0],
                x_scale: vec![1.0, 1.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::ValueFraction {
                fractions: DMatrix::from_row_slice(2, 2, &[0.0, 0.6, 0.0, 0.0]),
            },
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(2.0),
        };
        let coarse = replicate_completed_market(
            &model,
            &claim,
            &bond,
            &config(0x83, 1500, 16, 31, 24),
        )
        .unwrap();
        let fine = replicate_completed_market(
            &model,
            &claim,
            &bond,
            &config(0x84, 1500, 64, 61, 48),
        )
        .unwrap();
        let ratio = coarse.rms_error / fine.rms_error;
        assert!(
            (1.4..=4.5).contains(&ratio),
            "rms {:.3e} -> {:.3e}, ratio {ratio:.2}",
            coarse.rms_error,
            fine.rms_error
        );
    }

    #[test]
    fn an_instrument_without_switch_exposure_is_rejected() {
        let model = complete_model(0.5, 0.2);
        // Pays one in both regimes: a riskless zero bond, blind to the switch.
        let riskless = treasury_recovery_bond(1.0);
        let digital = ClaimSpec {
            terminal: TerminalPayoff::RegimeConstant {
                values: vec![0.0, 1.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(1.0),
        };
        let cfg = config(0x85, 8, 8, 9, 16);
        assert!(matches!(
            replicate_completed_market(&model, &digital, &riskless, &cfg),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn markets_the_construction_cannot_complete_are_rejected() {
        let bond = treasury_recovery_bond(0.4);
        let cfg = config(0x86, 8, 8, 9, 16);

        let mut drifting = complete_model(0.5, 0.2);
        drifting.drift = CoefficientField::Constant {
            per_regime: vec![DMatrix::from_element(1, 1, 0.03); 2],
        };
        assert!(matches!(
            replicate_completed_market(&drifting, &bond, &bond, &cfg),
            Err(Error::Usage(_))
        ));

        let mut recovering = complete_model(0.5, 0.2);
        recovering.intensities =
            IntensityMatrix::from_constant(&[vec![0.0, 0.5], vec![0.2, 0.0]]).unwrap();
        assert!(matches!(
            replicate_completed_market(&recovering, &bond, &bond, &cfg),
            Err(Error::Usage(_))
        ));

        let mut wide = complete_model(0.5, 0.2);
        wide.regimes = 3;
        wide.drift = CoefficientField::zeros(Shape { rows: 1, cols: 1 }, 3);
        wide.vol = CoefficientField::StateScaled {
            per_regime: vec![DMatrix::from_element(1, 1, 0.2); 3],
        };
        wide.intensities = IntensityMatrix::from_constant(&[
            vec![0.0, 0.3, 0.2],
            vec![0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!(matches!(
            replicate_completed_market(&wide, &bond, &bond, &cfg),
            Err(Error::Usage(_))
        ));
    }
}
