//! Nested conditional-expectation audit: restart the drift-free dynamics
//! from interior probe points and compare the Monte Carlo payout estimate
//! (with the candidate surface feeding its own flow and switch payments)
//! against the surface value at the probe.

use crate::field::ValueField;
use crate::model::{ClaimSpec, ModelSpec};
use crate::rng::{purpose, stream_rng};
use crate::sim::market::pasting_from;
use crate::sim::{map_paths, stats_with_exclusions, MarketConfig, StepScheme};
use crate::{Error, Result};

/// Interior restart point for the audit.
#[derive(Clone, Debug)]
pub struct Probe {
    pub t: f64,
    pub x: Vec<f64>,
    pub regime: usize,
}

/// Controls for [`recursive_value_check`].
#[derive(Clone, Debug)]
pub struct RecursiveCheckConfig {
    pub seed: u64,
    /// Paths per probe.
    pub paths: usize,
    /// Step budget for a full-horizon restart; probes later in time get a
    /// proportional share (at least two steps).
    pub steps: usize,
    pub scheme: StepScheme,
    pub probes: Vec<Probe>,
    /// Additive perturbation applied to the surface wherever it feeds the
    /// estimator and to the candidate value itself. Zero audits the surface;
    /// a nonzero shift must make the audit fail, which calibrates its power.
    pub value_shift: f64,
    /// Fraction of a path's rows allowed outside the surface hull before
    /// the path is dropped.
    pub clamp_budget: f64,
}

impl RecursiveCheckConfig {
    pub fn new(seed: u64, paths: usize, steps: usize, probes: Vec<Probe>) -> Self {
        RecursiveCheckConfig {
            seed,
            paths,
            steps,
            scheme: StepScheme::LogEuler,
            probes,
            value_shift: 0.0,
            clamp_budget: 0.02,
        }
    }
}

/// Outcome at one probe.
#[derive(Clone, Debug, serde::Serialize)]
pub struct RecursiveProbeRecord {
    pub t: f64,
    pub x: Vec<f64>,
    pub regime: usize,
    /// Candidate value at the probe (surface plus shift).
    pub field_value: f64,
    pub mc_mean: f64,
    pub mc_se: f64,
    /// Standardized gap between estimate and candidate.
    pub z: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct RecursiveCheckReport {
    pub probes: Vec<RecursiveProbeRecord>,
    pub all_passed: bool,
}

/// Audit `field` as the conditional expectation of the claim's payment
/// stream under the drift-free dynamics, restarting at each probe.
///
/// The estimator feeds the (shifted) surface back into its own flow and
/// switch payments, so a correct surface is a fixed point of the audit
/// while a shifted one moves by strictly less than the shift — the gap is
/// what the three-standard-error band detects.
pub fn recursive_value_check(
    model: &ModelSpec,
    claim: &ClaimSpec,
    field: &ValueField,
    cfg: &RecursiveCheckConfig,
) -> Result<RecursiveCheckReport> {
    let d = model.dim();
    let m = model.regimes;
    claim.check_consistent(m)?;
    if field.dim() != d || field.regimes() != m {
        return Err(Error::Usage(format!(
            "surface shape ({}, {} regimes) does not match the model ({d}, {m} regimes)",
            field.dim(),
            field.regimes()
        )));
    }
    if cfg.probes.is_empty() {
        return Err(Error::Usage("at least one probe point required".into()));
    }
    if cfg.paths < 2 {
        return Err(Error::Usage("at least two paths per probe required".into()));
    }
    if !cfg.value_shift.is_finite() {
        return Err(Error::Usage("value shift must be finite".into()));
    }
    let sub = model.with_zero_drift();
    let horizon = model.horizon;

    let mut records = Vec::with_capacity(cfg.probes.len());
    for (pi, probe) in cfg.probes.iter().enumerate() {
        if probe.x.len() != d {
            return Err(Error::Usage(format!(
                "probe {pi} has dimension {}, model has {d}",
                probe.x.len()
            )));
        }
        let frac = (horizon - probe.t) / horizon;
        let steps = ((cfg.steps as f64 * frac).ceil() as usize).max(2);
        let mcfg = MarketConfig {
            steps,
            scheme: cfg.scheme,
            seed: cfg.seed,
        };
        let shift = cfg.value_shift;

        let outcomes = map_paths(cfg.paths, |p| {
            let mut rng = stream_rng(cfg.seed, purpose::CHECK, ((pi as u64) << 32) | p);
            let b = pasting_from(&sub, probe.t, &probe.x, probe.regime, &mcfg, &mut rng)?;
            let mut clamp_rows = 0usize;
            let mut flow_int = 0.0;
            let mut pay_sum = 0.0;
            let mut jp = 0usize;
            let value_at = |t: f64, x: &[f64], k: usize, clamps: &mut usize| -> f64 {
                let (v, clamped) = field.interp_clamped(t, x, k);
                if clamped {
                    *clamps += 1;
                }
                v + shift
            };
            for r in 0..b.rows() - 1 {
                let k = b.regime[r];
                let ta = b.t[r];
                let tb = b.t[r + 1];
                let sa = b.state(r);
                let sb = b.state(r + 1);
                let va = value_at(ta, sa, k, &mut clamp_rows);
                let vb = value_at(tb, sb, k, &mut clamp_rows);
                flow_int += 0.5
                    * (claim.flow_rate(ta, sa, va, k) + claim.flow_rate(tb, sb, vb, k))
                    * (tb - ta);
                if jp < b.jumps.len() && b.jumps[jp].row == r + 1 {
                    let rec = &b.jumps[jp];
                    let v_pre = value_at(rec.time, sb, rec.from, &mut clamp_rows);
                    pay_sum += claim.jump_payment(rec.time, sb, v_pre, rec.from, rec.to);
                    jp += 1;
                }
            }
            let y = claim.terminal_value(b.terminal_state(), b.terminal_regime())
                + flow_int
                + pay_sum;
            let rows = 2 * (b.rows() - 1).max(1);
            let excluded = b.excluded || (clamp_rows as f64) > cfg.clamp_budget * rows as f64;
            Ok((y, excluded))
        })?;
        let values: Vec<f64> = outcomes.iter().map(|&(y, _)| y).collect();
        let excluded: Vec<bool> = outcomes.iter().map(|&(_, e)| e).collect();
        let stats = stats_with_exclusions(&values, &excluded)?;
        let candidate = field.interp(probe.t, &probe.x, probe.regime) + shift;
        let floor = 1e-9 * (1.0 + candidate.abs());
        let passed = stats.mean_within(candidate, 3.0, floor);
        records.push(RecursiveProbeRecord {
            t: probe.t,
            x: probe.x.clone(),
            regime: probe.regime,
            field_value: candidate,
            mc_mean: stats.mean,
            mc_se: stats.se,
            z: stats.z_against(candidate),
            passed,
        });
    }
    let all_passed = records.iter().all(|r| r.passed);
    Ok(RecursiveCheckReport {
        probes: records,
        all_passed,
    })
}
