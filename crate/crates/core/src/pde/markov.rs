//! Nested-simulation verification of the conditional-expectation property.
//!
//! A coupling-only solve of the valuation system on `[0, T']` produces a
//! field that claims to be `v(t, x, k) = E[h(X_{T'}, Y_{T'}) | X_t = x,
//! Y_t = k]` under the simulated market measure. This module checks that
//! claim directly, with no shared machinery beyond the model itself:
//!
//! * **conditional checks** — restart fresh inner simulations from states an
//!   outer simulation actually visited and compare the inner sample mean of
//!   the terminal payoff against the field value at the restart point;
//! * **martingale checks** — along the outer paths, the field evaluated at
//!   the running state must have zero expected increment between check
//!   times (the tower property), tested pairwise over consecutive times.
//!
//! Every comparison is a z-score against the Monte Carlo standard error,
//! with a tiny absolute floor so that exactly-resolved cases (a constant
//! payoff, say) register as passes instead of zero-over-zero.

use serde::Serialize;

use crate::model::{ClaimSpec, ModelSpec};
use crate::pde::{solve_system, AxisSpec, PdeProblem, PdeVariant};
use crate::rng::{purpose, stream_rng};
use crate::sim::market::{pasting_from, pasting_with};
use crate::sim::{stats_with_exclusions, MarketConfig, PathBundle, StepScheme, EXCLUSION_BUDGET};
use crate::stats::sample_stats;
use crate::{Error, Result};

/// Acceptance band for all z-scores.
const Z_LIMIT: f64 = 3.0;

/// Controls for [`markov_property_check`].
#[derive(Clone, Debug)]
pub struct MarkovCheckConfig {
    pub seed: u64,
    /// Start state of the outer simulation.
    pub x0: Vec<f64>,
    pub k0: usize,
    /// Outer paths feeding the martingale statistics.
    pub outer_paths: usize,
    /// Outer states per check time that get a nested re-simulation.
    pub nested_states: usize,
    /// Inner paths per nested re-simulation.
    pub inner_paths: usize,
    /// Market grid steps on `[0, T']`; inner runs inherit the spacing.
    pub steps: usize,
    pub scheme: StepScheme,
    /// Interior times to test, each snapped to the nearest market grid row;
    /// empty means the three quarter-points of `[0, T']`.
    pub check_times: Vec<f64>,
    /// Spatial grid for the comparison field.
    pub axes: Vec<AxisSpec>,
    /// Field time steps; a multiple of `steps` aligns the rows exactly.
    pub t_steps: usize,
}

impl MarkovCheckConfig {
    pub fn new(seed: u64, x0: Vec<f64>, k0: usize, axes: Vec<AxisSpec>) -> Self {
        MarkovCheckConfig {
            seed,
            x0,
            k0,
            outer_paths: 400,
            nested_states: 3,
            inner_paths: 800,
            steps: 32,
            scheme: StepScheme::LogEuler,
            check_times: Vec::new(),
            axes,
            t_steps: 64,
        }
    }
}

/// One restart comparison: inner sample mean versus the field value.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionalCheck {
    pub time: f64,
    pub state: Vec<f64>,
    pub regime: usize,
    pub field_value: f64,
    pub nested_mean: f64,
    pub nested_se: f64,
    pub z: f64,
    pub passed: bool,
}

/// Zero-increment test of the field along the outer paths.
#[derive(Clone, Debug, Serialize)]
pub struct MartingaleCheck {
    pub from_time: f64,
    pub to_time: f64,
    pub mean_increment: f64,
    pub se: f64,
    pub z: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarkovCheckReport {
    pub conditional: Vec<ConditionalCheck>,
    pub martingale: Vec<MartingaleCheck>,
    pub all_passed: bool,
}

/// z-score with an absolute floor: sampling noise in exactly-resolved cases
/// must not divide by a vanishing standard error.
fn floored_z(diff: f64, se: f64, scale: f64) -> f64 {
    diff / se.max(1e-12 * scale)
}

/// Verify that the coupling-only solve on `[0, T']` is the conditional
/// expectation of `claim`'s terminal payoff under the simulated market law.
pub fn markov_property_check(
    model: &ModelSpec,
    claim: &ClaimSpec,
    t_prime: f64,
    cfg: &MarkovCheckConfig,
) -> Result<MarkovCheckReport> {
    if !(t_prime > 0.0 && t_prime <= model.horizon) {
        return Err(Error::Usage(format!(
            "restriction time {t_prime} outside (0, {}]",
            model.horizon
        )));
    }
    if cfg.outer_paths == 0 || cfg.nested_states == 0 || cfg.inner_paths == 0 || cfg.steps < 2 {
        return Err(Error::Usage(
            "the check needs nonzero path counts and at least two grid steps".into(),
        ));
    }

    let mut sub = model.clone();
    sub.horizon = t_prime;

    let mut problem = PdeProblem::new(sub.clone(), claim.clone(), cfg.axes.clone(), cfg.t_steps);
    problem.variant = PdeVariant::CouplingOnly;
    let field = solve_system(&problem)?;

    let market_cfg = MarketConfig {
        steps: cfg.steps,
        scheme: cfg.scheme,
        seed: cfg.seed,
    };

    // Snap requested times to interior market grid rows.
    let dt = t_prime / cfg.steps as f64;
    let requested: Vec<f64> = if cfg.check_times.is_empty() {
        [0.25, 0.5, 0.75].iter().map(|f| f * t_prime).collect()
    } else {
        cfg.check_times.clone()
    };
    let mut check_idx: Vec<usize> = requested
        .iter()
        .map(|&tc| ((tc / dt).round() as i64).clamp(1, cfg.steps as i64 - 1) as usize)
        .collect();
    check_idx.sort_unstable();
    check_idx.dedup();

    // Outer sweep.
    let mut outer = Vec::with_capacity(cfg.outer_paths);
    for p in 0..cfg.outer_paths {
        let mut rng = stream_rng(cfg.seed, purpose::MARKOV_OUTER, p as u64);
        outer.push(pasting_with(&sub, &cfg.x0, cfg.k0, &market_cfg, &mut rng)?);
    }
    let kept: Vec<&PathBundle> = outer.iter().filter(|b| !b.excluded).collect();
    let dropped = outer.len() - kept.len();
    if dropped as f64 > EXCLUSION_BUDGET * outer.len() as f64 {
        return Err(Error::ExcessiveExclusion {
            excluded: dropped,
            total: outer.len(),
            budget: EXCLUSION_BUDGET,
        });
    }
    if kept.len() < cfg.nested_states {
        return Err(Error::Simulation(
            "too few usable outer paths for the nested restarts".into(),
        ));
    }

    // Conditional checks: nested restart from visited states.
    let mut conditional = Vec::new();
    for (c, &j) in check_idx.iter().enumerate() {
        let t_c = j as f64 * dt;
        let steps_left = cfg.steps - j;
        let inner_cfg = MarketConfig {
            steps: steps_left,
            scheme: cfg.scheme,
            seed: cfg.seed,
        };
        for (oi, bundle) in kept.iter().take(cfg.nested_states).enumerate() {
            let row = bundle.grid_rows[j];
            let state = bundle.state(row).to_vec();
            let regime = bundle.regime[row];
            let field_value = field.interp_clamped(t_c, &state, regime).0;

            let mut values = Vec::with_capacity(cfg.inner_paths);
            let mut excluded = Vec::with_capacity(cfg.inner_paths);
            for i in 0..cfg.inner_paths {
                let stream = (((c * cfg.outer_paths + oi) as u64) << 32) | i as u64;
                let mut rng = stream_rng(cfg.seed, purpose::MARKOV_INNER, stream);
                let inner = pasting_from(&sub, t_c, &state, regime, &inner_cfg, &mut rng)?;
                let last = *inner.grid_rows.last().expect("at least one grid row");
                values.push(claim.terminal_value(inner.state(last), inner.regime[last]));
                excluded.push(inner.excluded);
            }
            let stats = stats_with_exclusions(&values, &excluded)?;
            let z = floored_z(
                stats.mean - field_value,
                stats.se,
                1.0 + field_value.abs(),
            );
            conditional.push(ConditionalCheck {
                time: t_c,
                state,
                regime,
                field_value,
                nested_mean: stats.mean,
                nested_se: stats.se,
                z,
                passed: z.abs() <= Z_LIMIT,
            });
        }
    }

    // Martingale checks: zero expected field increment between check times.
    let mut sequence = vec![0usize];
    sequence.extend_from_slice(&check_idx);
    let mut martingale = Vec::new();
    for pair in sequence.windows(2) {
        let (ja, jb) = (pair[0], pair[1]);
        let (ta, tb) = (ja as f64 * dt, jb as f64 * dt);
        let mut scale = 1.0f64;
        let diffs: Vec<f64> = kept
            .iter()
            .map(|b| {
                let ra = b.grid_rows[ja];
                let rb = b.grid_rows[jb];
                let va = field.interp_clamped(ta, b.state(ra), b.regime[ra]).0;
                let vb = field.interp_clamped(tb, b.state(rb), b.regime[rb]).0;
                scale = scale.max(va.abs()).max(vb.abs());
                vb - va
            })
            .collect();
        let stats = sample_stats(&diffs);
        let z = floored_z(stats.mean, stats.se, scale);
        martingale.push(MartingaleCheck {
            from_time: ta,
            to_time: tb,
            mean_increment: stats.mean,
            se: stats.se,
            z,
            passed: z.abs() <= Z_LIMIT,
        });
    }

    let all_passed =
        conditional.iter().all(|c| c.passed) && martingale.iter().all(|m| m.passed);
    Ok(MarkovCheckReport {
        conditional,
        martingale,
        all_passed,
    })
}
