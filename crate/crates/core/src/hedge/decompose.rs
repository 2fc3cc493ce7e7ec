//! Pathwise hedge accounting: split a claim along simulated paths into
//! initial capital, a gradient position in the state, and the orthogonal
//! jump martingale, then audit the split.

use std::io::Write as _;
use std::path::Path;

use crate::field::ValueField;
use crate::model::{ClaimSpec, ModelSpec};
use crate::sim::{map_paths, stats_with_exclusions, PathBundle};
use crate::stats::{sample_stats, SampleStats};
use crate::{Error, Result};

use super::gradient_field;

/// Accounting controls for [`build_hedge`].
#[derive(Clone, Copy, Debug)]
pub struct HedgeConfig {
    /// Fraction of a path's rows allowed to fall outside the field hull
    /// (clamped interpolation) before the path is dropped from statistics.
    pub clamp_budget: f64,
}

impl Default for HedgeConfig {
    fn default() -> Self {
        HedgeConfig { clamp_budget: 0.02 }
    }
}

/// Result of hedging one claim along a bundle of simulated paths.
///
/// Per-path columns are index-aligned with the input bundles; per-step
/// columns live on the global time grid and average over the kept paths.
/// The numeraire position recorded per step is the amount
/// `capital + jump leg + accumulated state gains - position * state`, so the
/// total portfolio self-finances by construction.
#[derive(Clone, Debug)]
pub struct HedgeReport {
    /// Initial capital: the field at the common start `(t0, s0, k0)`.
    pub h0: f64,
    pub dim: usize,
    /// Global grid times shared by all bundles.
    pub grid_t: Vec<f64>,
    /// Mean hedge position per grid time, row-major `grid x dim`.
    pub mean_theta: Vec<f64>,
    /// Mean jump-leg level per grid time; starts at exactly zero.
    pub mean_l: Vec<f64>,
    /// Mean numeraire position per grid time.
    pub mean_theta0: Vec<f64>,
    /// Realized total payment of the claim per path.
    pub payoffs: Vec<f64>,
    /// Accumulated gradient gains `sum theta . dS` per path.
    pub stock_integrals: Vec<f64>,
    /// Terminal level of the jump leg per path.
    pub l_terminals: Vec<f64>,
    /// `payoff - (h0 + stock integral + jump leg)` per path.
    pub residuals: Vec<f64>,
    /// Per-path sum over steps of (jump-leg increment) x (gradient-gain
    /// increment): the sample covariation between the two legs.
    pub covariations: Vec<f64>,
    /// Paths dropped by the simulator or by the hull-clamp budget.
    pub excluded: Vec<bool>,
    pub residual_stats: SampleStats,
    /// Root-mean-square residual over kept paths.
    pub residual_rms: f64,
    /// Pooled increments of `value-along-path - position . dS`: the running
    /// cost of the strategy, zero-mean when the split is right.
    pub cost_increments: SampleStats,
    /// Pooled increments of the value-plus-payments process alone; zero-mean
    /// along drift-free paths.
    pub value_increments: SampleStats,
}

/// Martingale-and-orthogonality audit of a hedge report.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct OrthogonalityReport {
    /// Covariation between the jump leg and the gradient-gain leg.
    pub covariation: SampleStats,
    /// Terminal jump-leg level; mean zero when the leg is a martingale.
    pub l_terminal: SampleStats,
    /// Additive tolerance floor used alongside the three-standard-error
    /// band, sized to rounding noise so exactly-zero legs pass exactly.
    pub floor: f64,
    pub passed: bool,
}

struct PathHedge {
    payoff: f64,
    stock_integral: f64,
    l_terminal: f64,
    residual: f64,
    covariation: f64,
    excluded: bool,
    grid_theta: Vec<f64>,
    grid_l: Vec<f64>,
    grid_theta0: Vec<f64>,
    cost_incs: Vec<f64>,
    value_incs: Vec<f64>,
}

/// Hedge `claim` along `bundles` using the solved `field`.
///
/// The field must be marched for the drift-free variant of the claim's
/// system; bundles must come from the pasting construction (no density
/// weights) and share one starting point. Per path the accounting follows
/// the decomposition exactly: the position is the field gradient at the
/// pre-switch regime, the jump leg collects value jumps plus switch
/// payments against their compensator (trapezoidal in time, exact at
/// switch rows), and the residual compares the realized payment stream
/// with capital plus gains plus jump leg.
pub fn build_hedge(
    model: &ModelSpec,
    claim: &ClaimSpec,
    field: &ValueField,
    bundles: &[PathBundle],
    cfg: &HedgeConfig,
) -> Result<HedgeReport> {
    let d = model.dim();
    let m = model.regimes;
    if bundles.is_empty() {
        return Err(Error::Usage("hedge accounting needs at least one path".into()));
    }
    if field.dim() != d || field.regimes() != m {
        return Err(Error::Usage(format!(
            "field shape ({}, {} regimes) does not match the model ({d}, {m} regimes)",
            field.dim(),
            field.regimes()
        )));
    }
    claim.check_consistent(m)?;
    if !(cfg.clamp_budget >= 0.0 && cfg.clamp_budget <= 1.0) {
        return Err(Error::Usage(format!(
            "clamp budget must lie in [0, 1], got {}",
            cfg.clamp_budget
        )));
    }
    let first = &bundles[0];
    let grid_n = first.grid_rows.len();
    for b in bundles {
        if b.dim != d {
            return Err(Error::Usage("bundle dimension does not match the model".into()));
        }
        if b.weight.is_some() {
            return Err(Error::Usage(
                "hedge accounting runs on pasting-construction paths; weighted bundles are not supported"
                    .into(),
            ));
        }
        if b.grid_rows.len() != grid_n
            || b.t[0] != first.t[0]
            || b.regime[0] != first.regime[0]
            || b.state(0) != first.state(0)
        {
            return Err(Error::Usage(
                "all bundles must share one grid and one starting point".into(),
            ));
        }
    }

    let grads: Vec<ValueField> = (0..d).map(|axis| gradient_field(field, axis)).collect();
    let h0 = field.interp(first.t[0], first.state(0), first.regime[0]);
    let grid_t: Vec<f64> = first.grid_rows.iter().map(|&r| first.t[r]).collect();

    let per_path = map_paths(bundles.len(), |p| {
        Ok(hedge_one_path(
            model,
            claim,
            field,
            &grads,
            &bundles[p as usize],
            h0,
            cfg.clamp_budget,
        ))
    })?;

    let n = per_path.len();
    let mut payoffs = Vec::with_capacity(n);
    let mut stock_integrals = Vec::with_capacity(n);
    let mut l_terminals = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    let mut covariations = Vec::with_capacity(n);
    let mut excluded = Vec::with_capacity(n);
    let mut mean_theta = vec![0.0; grid_n * d];
    let mut mean_l = vec![0.0; grid_n];
    let mut mean_theta0 = vec![0.0; grid_n];
    let mut cost_pool = Vec::new();
    let mut value_pool = Vec::new();
    let mut kept = 0usize;
    for ph in &per_path {
        payoffs.push(ph.payoff);
        stock_integrals.push(ph.stock_integral);
        l_terminals.push(ph.l_terminal);
        residuals.push(ph.residual);
        covariations.push(ph.covariation);
        excluded.push(ph.excluded);
        if !ph.excluded {
            kept += 1;
            for (acc, &v) in mean_theta.iter_mut().zip(&ph.grid_theta) {
                *acc += v;
            }
            for (acc, &v) in mean_l.iter_mut().zip(&ph.grid_l) {
                *acc += v;
            }
            for (acc, &v) in mean_theta0.iter_mut().zip(&ph.grid_theta0) {
                *acc += v;
            }
            cost_pool.extend_from_slice(&ph.cost_incs);
            value_pool.extend_from_slice(&ph.value_incs);
        }
    }
    let residual_stats = stats_with_exclusions(&residuals, &excluded)?;
    let scale = 1.0 / kept as f64;
    for v in mean_theta
        .iter_mut()
        .chain(mean_l.iter_mut())
        .chain(mean_theta0.iter_mut())
    {
        *v *= scale;
    }
    let kept_sq: Vec<f64> = residuals
        .iter()
        .zip(&excluded)
        .filter(|(_, &e)| !e)
        .map(|(&r, _)| r * r)
        .collect();
    let residual_rms = (crate::stats::pairwise_sum(&kept_sq) / kept_sq.len() as f64).sqrt();

    Ok(HedgeReport {
        h0,
        dim: d,
        grid_t,
        mean_theta,
        mean_l,
        mean_theta0,
        payoffs,
        stock_integrals,
        l_terminals,
        residuals,
        covariations,
        excluded,
        residual_stats,
        residual_rms,
        cost_increments: sample_stats(&cost_pool),
        value_increments: sample_stats(&value_pool),
    })
}

fn hedge_one_path(
    model: &ModelSpec,
    claim: &ClaimSpec,
    field: &ValueField,
    grads: &[ValueField],
    b: &PathBundle,
    h0: f64,
    clamp_budget: f64,
) -> PathHedge {
    let d = b.dim;
    let m = model.regimes;
    let q = &model.intensities;
    let rows = b.rows();
    let grid_n = b.grid_rows.len();
    let intervals = rows - 1;

    let mut v_here = vec![0.0; m];
    let mut v_next = vec![0.0; m];
    let mut theta = vec![0.0; d];
    let mut grid_theta = vec![0.0; grid_n * d];
    let mut grid_l = vec![0.0; grid_n];
    let mut grid_theta0 = vec![0.0; grid_n];
    let mut cost_incs = Vec::with_capacity(intervals);
    let mut value_incs = Vec::with_capacity(intervals);

    let compensator = |t: f64, x: &[f64], k: usize, v: &[f64]| -> f64 {
        let mut acc = 0.0;
        for &j in q.live_targets(k) {
            let spread = v[j] - v[k] + claim.jump_payment(t, x, v[k], k, j);
            acc += q.rate(t, x, k, j) * spread;
        }
        acc
    };

    let mut clamp_rows = 0usize;
    let t0 = b.t[0];
    let s0 = b.state(0);
    let k0 = b.regime[0];
    if field.interp_all_regimes(t0, s0, &mut v_here) {
        clamp_rows += 1;
    }
    let mut comp_here = compensator(t0, s0, k0, &v_here);
    let mut l_cur = 0.0;
    let mut stock_int = 0.0;
    let mut delta_int = 0.0;
    let mut f_sum = 0.0;
    let mut y_here = v_here[k0];
    let mut covariation = 0.0;

    let mut jp = 0usize;
    let mut gp = 0usize;
    // Record a grid row's aggregates (position, jump leg, numeraire) once
    // the accounting has advanced to that row.
    let record_grid = |row: usize,
                           gp: &mut usize,
                           theta: &[f64],
                           l_cur: f64,
                           stock_int: f64,
                           state: &[f64],
                           grid_theta: &mut [f64],
                           grid_l: &mut [f64],
                           grid_theta0: &mut [f64]| {
        while *gp < grid_n && b.grid_rows[*gp] == row {
            grid_theta[*gp * d..(*gp + 1) * d].copy_from_slice(theta);
            grid_l[*gp] = l_cur;
            let dot: f64 = theta.iter().zip(state).map(|(&a, &s)| a * s).sum();
            grid_theta0[*gp] = h0 + l_cur + stock_int - dot;
            *gp += 1;
        }
    };

    for axis in 0..d {
        theta[axis] = grads[axis].interp(t0, s0, k0);
    }
    record_grid(
        0,
        &mut gp,
        &theta,
        l_cur,
        stock_int,
        s0,
        &mut grid_theta,
        &mut grid_l,
        &mut grid_theta0,
    );

    for r in 0..intervals {
        let k = b.regime[r];
        let ta = b.t[r];
        let tb = b.t[r + 1];
        let dt = tb - ta;
        let sa = b.state(r).to_vec();
        let sb = b.state(r + 1);

        for axis in 0..d {
            theta[axis] = grads[axis].interp(ta, &sa, k);
        }
        let mut gain = 0.0;
        for i in 0..d {
            gain += theta[i] * (sb[i] - sa[i]);
        }
        stock_int += gain;

        if field.interp_all_regimes(tb, sb, &mut v_next) {
            clamp_rows += 1;
        }
        // Trapezoid of the compensator and of the flow over (ta, tb], both
        // gated on the regime holding over the interval.
        let comp_next = compensator(tb, sb, k, &v_next);
        let l_before = l_cur;
        l_cur -= 0.5 * (comp_here + comp_next) * dt;
        delta_int += 0.5
            * (claim.flow_rate(ta, &sa, v_here[k], k) + claim.flow_rate(tb, sb, v_next[k], k))
            * dt;
        if jp < b.jumps.len() && b.jumps[jp].row == r + 1 {
            let rec = &b.jumps[jp];
            debug_assert_eq!(rec.from, k);
            let pay = claim.jump_payment(tb, sb, v_next[rec.from], rec.from, rec.to);
            l_cur += v_next[rec.to] - v_next[rec.from] + pay;
            f_sum += pay;
            jp += 1;
        }
        covariation += (l_cur - l_before) * gain;

        let k_next = b.regime[r + 1];
        let y_next = v_next[k_next] + delta_int + f_sum;
        cost_incs.push(y_next - y_here - gain);
        value_incs.push(y_next - y_here);
        y_here = y_next;
        v_here.copy_from_slice(&v_next);
        comp_here = if k_next == k {
            comp_next
        } else {
            compensator(tb, sb, k_next, &v_next)
        };

        for axis in 0..d {
            theta[axis] = grads[axis].interp(tb, sb, k_next);
        }
        record_grid(
            r + 1,
            &mut gp,
            &theta,
            l_cur,
            stock_int,
            sb,
            &mut grid_theta,
            &mut grid_l,
            &mut grid_theta0,
        );
    }

    let payoff = claim.terminal_value(b.terminal_state(), b.terminal_regime()) + delta_int + f_sum;
    let residual = payoff - (h0 + stock_int + l_cur);
    let excluded = b.excluded || (clamp_rows as f64) > clamp_budget * rows as f64;

    PathHedge {
        payoff,
        stock_integral: stock_int,
        l_terminal: l_cur,
        residual,
        covariation,
        excluded,
        grid_theta,
        grid_l,
        grid_theta0,
        cost_incs,
        value_incs,
    }
}

/// Audit the two legs of a hedge report: the jump leg must have zero
/// terminal mean (martingale) and zero covariation with the gradient-gain
/// leg (orthogonality), each within three standard errors plus a rounding
/// floor.
pub fn orthogonality_check(report: &HedgeReport) -> Result<OrthogonalityReport> {
    let covariation = stats_with_exclusions(&report.covariations, &report.excluded)?;
    let l_terminal = stats_with_exclusions(&report.l_terminals, &report.excluded)?;
    let scale = report
        .l_terminals
        .iter()
        .chain(&report.stock_integrals)
        .fold(1.0f64, |acc, &v| acc.max(v.abs()));
    let floor = 1e-12 * scale;
    let passed =
        covariation.mean_within(0.0, 3.0, floor) && l_terminal.mean_within(0.0, 3.0, floor);
    Ok(OrthogonalityReport {
        covariation,
        l_terminal,
        floor,
        passed,
    })
}

impl HedgeReport {
    /// One CSV row per path: realized payment, leg totals, residual.
    pub fn write_paths_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            file,
            "path,payoff,stock_integral,l_terminal,residual,covariation,excluded"
        )?;
        for i in 0..self.payoffs.len() {
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                i,
                self.payoffs[i],
                self.stock_integrals[i],
                self.l_terminals[i],
                self.residuals[i],
                self.covariations[i],
                self.excluded[i] as u8
            )?;
        }
        Ok(())
    }

    /// One CSV row per grid time: mean position, jump leg, numeraire.
    pub fn write_steps_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(file, "t")?;
        for i in 0..self.dim {
            write!(file, ",mean_theta{}", i + 1)?;
        }
        writeln!(file, ",mean_l,mean_theta0")?;
        for (g, &t) in self.grid_t.iter().enumerate() {
            write!(file, "{t}")?;
            for i in 0..self.dim {
                write!(file, ",{}", self.mean_theta[g * self.dim + i])?;
            }
            writeln!(file, ",{},{}", self.mean_l[g], self.mean_theta0[g])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::model::{
        ClaimBounds, ClaimSpec, CoefficientField, Domain, FlowPayoff, InteractionFamily,
        IntensityMatrix, JumpPayoff, ModelSpec, ScalarField, Shape, StateDomain, TerminalPayoff,
    };
    use crate::pde::{AxisSpec, PdeProblem, PdeVariant, Spacing};
    use crate::sim::{simulate_market_pasting, MarketConfig, StepScheme};

    fn lognormal_model(m: usize, sigma: f64, q: IntensityMatrix) -> ModelSpec {
        ModelSpec {
            domain: Domain {
                kind: StateDomain::PositiveOrthant,
                dim: 1,
            },
            regimes: m,
            noise_dim: 1,
            horizon: 1.0,
            drift: CoefficientField::zeros(Shape { rows: 1, cols: 1 }, m),
            vol: CoefficientField::StateScaled {
                per_regime: vec![DMatrix::from_element(1, 1, sigma); m],
            },
            intensities: q,
            premium_bound: 10.0,
        }
    }

    fn bounds(sup: f64, offset: f64) -> ClaimBounds {
        ClaimBounds {
            terminal_sup: sup,
            growth_offset: offset,
            growth_slope: 2.0,
            interaction_lipschitz: 2.0,
            payment_growth: 1.0,
            discount_sup: 0.0,
        }
    }

    fn plain_claim(values: Vec<f64>, sup: f64) -> ClaimSpec {
        ClaimSpec {
            terminal: TerminalPayoff::RegimeConstant { values },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(sup, 0.0),
        }
    }

    fn simulate(model: &ModelSpec, x0: f64, paths: usize, steps: usize, seed: u64) -> Vec<PathBundle> {
        let cfg = MarketConfig {
            steps,
            scheme: StepScheme::LogEuler,
            seed,
        };
        map_paths(paths, |p| simulate_market_pasting(model, &[x0], 0, &cfg, p)).unwrap()
    }

    #[test]
    fn constant_claim_decomposes_to_pure_capital() {
        let q = IntensityMatrix::from_constant(&[vec![0.0, 0.8], vec![0.5, 0.0]]).unwrap();
        let model = lognormal_model(2, 0.2, q);
        let claim = plain_claim(vec![4.2, 4.2], 4.2);
        // Hand-built flat field: the value of a constant claim is itself.
        let axes = vec![vec![0.25, 0.5, 1.0, 2.0, 4.0]];
        let mut field = ValueField::zeros(vec![0.0, 0.5, 1.0], axes, 2);
        for it in 0..3 {
            field.layer_mut(it).fill(4.2);
        }
        let bundles = simulate(&model, 1.0, 64, 16, 0x11);
        let report =
            build_hedge(&model, &claim, &field, &bundles, &HedgeConfig::default()).unwrap();
        assert_eq!(report.h0, 4.2);
        for i in 0..bundles.len() {
            assert_eq!(report.residuals[i], 0.0, "path {i}");
            assert_eq!(report.l_terminals[i], 0.0, "path {i}");
            assert_eq!(report.stock_integrals[i], 0.0, "path {i}");
            assert_eq!(report.covariations[i], 0.0, "path {i}");
        }
        assert_eq!(report.mean_l[0], 0.0);
        // Per-path numeraire positions are exactly the capital; averaging
        // over paths reintroduces summation rounding at machine precision.
        assert!(report.mean_theta0.iter().all(|&v| (v - 4.2).abs() < 1e-12));
        let orth = orthogonality_check(&report).unwrap();
        assert!(orth.passed);
        assert_eq!(orth.covariation.mean, 0.0);
    }

    #[test]
    fn state_independent_bond_is_carried_by_the_jump_leg() {
        let lambda = 0.5;
        let recovery = 0.4;
        let q = IntensityMatrix::from_constant(&[vec![0.0, lambda], vec![0.0, 0.0]]).unwrap();
        let model = lognormal_model(2, 0.2, q);
        let claim = ClaimSpec {
            terminal: TerminalPayoff::RegimeConstant {
                values: vec![1.0, 0.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::Constant {
                amounts: DMatrix::from_row_slice(2, 2, &[0.0, recovery, 0.0, 0.0]),
            },
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(1.0, lambda * recovery),
        };
        let axes = vec![AxisSpec::new(0.25, 4.0, 9, Spacing::LogUniform)];
        let mut problem = PdeProblem::new(model.clone(), claim.clone(), axes, 128);
        problem.variant = PdeVariant::Hedging;
        problem.rannacher_steps = 0;
        let field = crate::pde::solve_system(&problem).unwrap();

        let bundles = simulate(&model, 1.0, 4000, 64, 0x22);
        let report =
            build_hedge(&model, &claim, &field, &bundles, &HedgeConfig::default()).unwrap();
        let expect = (-lambda).exp() + recovery * (1.0 - (-lambda).exp());
        assert!(
            (report.h0 - expect).abs() <= 2e-6,
            "h0 {} vs {expect}",
            report.h0
        );
        // The value surface is flat in x, so the position and its gains are
        // rounding noise and the jump leg carries the whole payoff.
        for (&si, &ex) in report.stock_integrals.iter().zip(&report.excluded) {
            if !ex {
                assert!(si.abs() <= 1e-9, "stock integral {si}");
            }
        }
        // A state-independent claim leaves no diffusion noise in the
        // residual, so its standard error is tiny and the deterministic
        // remainder of the trapezoidal compensator quadrature (order
        // lambda^2 * spread * dt^2 ~ 1e-6 at 64 steps) must be allowed for
        // explicitly.
        assert!(
            report.residual_stats.mean_within(0.0, 3.0, 2e-6),
            "residual mean {} se {}",
            report.residual_stats.mean,
            report.residual_stats.se
        );
        assert!(report.residual_rms <= 1e-3, "rms {}", report.residual_rms);
        let orth = orthogonality_check(&report).unwrap();
        assert!(orth.passed);
    }

    #[test]
    fn single_regime_call_reduces_to_delta_hedging() {
        let model = lognormal_model(1, 0.2, IntensityMatrix::from_constant(&[vec![0.0]]).unwrap());
        let claim = ClaimSpec {
            terminal: TerminalPayoff::CappedCall {
                strike: 1.0,
                cap: 2.0,
                value_scale: vec![1.0],
                x_scale: vec![1.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(2.0, 0.0),
        };
        // The surface must be fine enough that its own discretization error
        // in the initial value sits well below the three-standard-error
        // band on the residual mean (the payoff expectation is exact for
        // log-stepped constant-volatility paths, so any surface error shows
        // up directly as residual bias).
        let axes = vec![AxisSpec::new(0.25, 4.0, 321, Spacing::LogUniform)];
        let mut problem = PdeProblem::new(model.clone(), claim.clone(), axes, 192);
        problem.variant = PdeVariant::Hedging;
        let field = crate::pde::solve_system(&problem).unwrap();

        let mut rms = Vec::new();
        for (steps, seed) in [(32usize, 0x33u64), (128, 0x34)] {
            let bundles = simulate(&model, 1.0, 3000, steps, seed);
            let report =
                build_hedge(&model, &claim, &field, &bundles, &HedgeConfig::default()).unwrap();
            // No switching: the jump leg is identically zero, exactly.
            assert!(report.l_terminals.iter().all(|&l| l == 0.0));
            assert!(
                report.residual_stats.mean_within(0.0, 3.0, 1e-9),
                "steps {steps}: mean {} se {}",
                report.residual_stats.mean,
                report.residual_stats.se
            );
            rms.push(report.residual_rms);
        }
        // Quadrupling the rebalance frequency should halve the residual
        // spread (inverse square root law), with sampling slack.
        let ratio = rms[0] / rms[1];
        assert!(
            (1.5..=3.5).contains(&ratio),
            "rms {:.3e} -> {:.3e}, ratio {ratio:.2}",
            rms[0],
            rms[1]
        );
    }

    #[test]
    fn state_dependent_switch_rates_keep_the_legs_orthogonal() {
        // Intensity rising in the state couples the jump leg to the diffusion
        // through the value surface; orthogonality must still hold.
        let lam = ScalarField::Tabulated {
            t_grid: vec![0.0, 1.0],
            x_grid: vec![0.25, 1.0, 2.0, 4.0],
            values: DMatrix::from_row_slice(2, 4, &[0.35, 0.5, 0.6, 0.65, 0.35, 0.5, 0.6, 0.65]),
        };
        let q = IntensityMatrix::new(2, vec![None, Some(lam), None, None], 0.8).unwrap();
        let model = lognormal_model(2, 0.2, q);
        let claim = ClaimSpec {
            terminal: TerminalPayoff::CappedCall {
                strike: 1.0,
                cap: 2.0,
                value_scale: vec![1.0, 0.35],
                x_scale: vec![1.0, 1.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(2.0, 0.0),
        };
        // Fine surface: its discretization error feeds straight into the
        // residual mean and must stay below the statistical band.
        let axes = vec![AxisSpec::new(0.2, 5.0, 241, Spacing::LogUniform)];
        let mut problem = PdeProblem::new(model.clone(), claim.clone(), axes, 192);
        problem.variant = PdeVariant::Hedging;
        let field = crate::pde::solve_system(&problem).unwrap();

        let bundles = simulate(&model, 1.0, 4000, 64, 0x44);
        let report =
            build_hedge(&model, &claim, &field, &bundles, &HedgeConfig::default()).unwrap();
        let orth = orthogonality_check(&report).unwrap();
        assert!(
            orth.passed,
            "covariation {} +- {}, jump-leg mean {} +- {}",
            orth.covariation.mean, orth.covariation.se, orth.l_terminal.mean, orth.l_terminal.se
        );
        // Drift-free paths: the value-plus-payments process and the running
        // cost must both have zero-mean increments.
        assert!(
            report.value_increments.mean_within(0.0, 3.0, 1e-12),
            "value increments {} +- {}",
            report.value_increments.mean,
            report.value_increments.se
        );
        assert!(
            report.cost_increments.mean_within(0.0, 3.0, 1e-12),
            "cost increments {} +- {}",
            report.cost_increments.mean,
            report.cost_increments.se
        );
        assert!(
            report.residual_stats.mean_within(0.0, 3.0, 1e-9),
            "residual mean {} se {}",
            report.residual_stats.mean,
            report.residual_stats.se
        );
    }

    #[test]
    fn refining_paths_and_grid_together_shrinks_the_residual() {
        let lambda = 0.45;
        let q = IntensityMatrix::from_constant(&[vec![0.0, lambda], vec![0.0, 0.0]]).unwrap();
        let model = lognormal_model(2, 0.25, q);
        let claim = ClaimSpec {
            terminal: TerminalPayoff::CappedCall {
                strike: 1.0,
                cap: 2.0,
                value_scale: vec![1.0, 0.4],
                x_scale: vec![1.0, 1.0],
            },
            flow: FlowPayoff::None,
            jump_pay: JumpPayoff::None,
            discount: None,
            interaction: InteractionFamily::Linear,
            bounds: bounds(2.0, 0.0),
        };
        let mut rms = Vec::new();
        for (nx, nt, steps, seed) in [(31usize, 24usize, 24usize, 0x55u64), (61, 48, 48, 0x56)] {
            let axes = vec![AxisSpec::new(0.2, 5.0, nx, Spacing::LogUniform)];
            let mut problem = PdeProblem::new(model.clone(), claim.clone(), axes, nt);
            problem.variant = PdeVariant::Hedging;
            let field = crate::pde::solve_system(&problem).unwrap();
            let bundles = simulate(&model, 1.0, 2000, steps, seed);
            let report =
                build_hedge(&model, &claim, &field, &bundles, &HedgeConfig::default()).unwrap();
            rms.push(report.residual_rms);
        }
        assert!(
            rms[1] <= 0.85 * rms[0],
            "rms did not shrink: {:.3e} -> {:.3e}",
            rms[0],
            rms[1]
        );
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let q = IntensityMatrix::from_constant(&[vec![0.0, 0.5], vec![0.0, 0.0]]).unwrap();
        let model = lognormal_model(2, 0.2, q);
        let claim = plain_claim(vec![1.0, 0.0], 1.0);
        let mut field = ValueField::zeros(vec![0.0, 1.0], vec![vec![0.5, 1.0, 2.0]], 2);
        for it in 0..2 {
            field.layer_mut(it).fill(1.0);
        }
        let cfg = HedgeConfig::default();
        assert!(matches!(
            build_hedge(&model, &claim, &field, &[], &cfg),
            Err(Error::Usage(_))
        ));
        let mut bundles = simulate(&model, 1.0, 2, 8, 0x66);
        bundles[1].weight = Some(vec![1.0; bundles[1].rows()]);
        assert!(matches!(
            build_hedge(&model, &claim, &field, &bundles, &cfg),
            Err(Error::Usage(_))
        ));
        let mut bundles = simulate(&model, 1.0, 2, 8, 0x66);
        bundles[1].s[0] = 1.5;
        assert!(matches!(
            build_hedge(&model, &claim, &field, &bundles, &cfg),
            Err(Error::Usage(_))
        ));
    }
}
