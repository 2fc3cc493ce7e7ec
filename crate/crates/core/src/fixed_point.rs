//! Monte Carlo fixed-point solver for the coupled valuation system.
//!
//! The Feynman–Kac operator takes a candidate value field `v` and returns,
//! node by node, the expectation
//!
//! ```text
//! (F v)(t, x, k) = E[ h(X_T, k) e^{int_t^T c}
//!                    + int_t^T g_k(s, X_s, v(s, X_s)) e^{int_t^s c} ds ]
//! ```
//!
//! along the frozen-regime diffusion started at `(t, x)` with coefficients
//! held at regime `k`. The coupled system's value function is the unique
//! fixed point of `F` under the exponentially weighted norm
//! `||v||_beta = sup e^{-beta (T - t)} |v(t, x)|`, where `F` contracts with
//! rate `L_g e^{K_c T} / beta`; Picard iteration therefore converges
//! geometrically once `beta` exceeds `L_g e^{K_c T}`.
//!
//! Two devices keep the iteration well behaved:
//!
//! * **Truncation.** Value arguments fed into the coupling term are clamped
//!   to the a-priori envelope `±kappa(s)` ([`kappa_bound`]). The true fixed
//!   point lies inside the envelope, so the clamp never moves it, but it
//!   globalizes a merely locally Lipschitz coupling and renders wild starting
//!   fields harmless.
//! * **Common random numbers.** Every sweep re-simulates each node's paths
//!   from the same per-`(node, path)` stream, so successive iterates share
//!   their sampling noise and the measured contraction ratio reflects the
//!   operator, not resampling variance. A side effect worth having: the
//!   empirical operator itself is a contraction, so iteration converges to
//!   machine-level stationarity instead of dithering at the MC noise floor.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::field::ValueField;
use crate::model::claim::{ClaimBounds, ClaimSpec, InteractionFamily};
use crate::model::ModelSpec;
use crate::rng::{purpose, stream_rng};
use crate::sim::frozen::{draw_increments, StepOutcome, Stepper};
use crate::sim::StepScheme;
use crate::stats::sample_stats;
use crate::Result;

/// How the regime-exit term of the coupling is handled inside the operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingSplit {
    /// Evaluate the coupling `g` as declared and discount with `c` alone.
    /// This is the form whose contraction rate the declared Lipschitz
    /// constant bounds, so contraction diagnostics use it.
    Direct,
    /// Move the own-value pass-through `-exit_rate * v_k` of the linear
    /// family into the discount: `c_eff = c - exit_rate` and the coupling
    /// keeps only the inflow bracket `delta + sum_j lambda_kj (v_j + f_kj)`.
    /// Identical fixed point, but far less of the update flows through the
    /// source integral, so single applications are much closer to the
    /// answer (a one-state-survival claim solves in one application).
    ExitDiscount,
}

/// Monte Carlo and iteration controls for the fixed-point solver.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FkConfig {
    /// Independent paths per grid node and sweep.
    pub paths_per_node: usize,
    /// Time steps across the full horizon; nodes at later `t` use
    /// proportionally fewer so the step size stays roughly constant.
    pub steps: usize,
    pub seed: u64,
    pub scheme: StepScheme,
    pub split: CouplingSplit,
    /// Weight of the exponential norm; `None` picks twice the contraction
    /// threshold, which guarantees rate <= 1/2.
    pub beta: Option<f64>,
    /// Stop when consecutive iterates are closer than this in the weighted
    /// norm.
    pub tol: f64,
    pub max_iters: usize,
    /// Clamp coupling value arguments to the a-priori envelope.
    pub truncate: bool,
    /// Largest tolerated fraction of frozen paths leaving the domain at any
    /// single node.
    pub exit_budget: f64,
}

impl FkConfig {
    pub fn new(seed: u64) -> Self {
        FkConfig {
            paths_per_node: 1000,
            steps: 64,
            seed,
            scheme: StepScheme::Euler,
            split: CouplingSplit::Direct,
            beta: None,
            tol: 1e-4,
            max_iters: 40,
            truncate: true,
            exit_budget: 0.01,
        }
    }
}

/// One sweep-over-sweep distance measurement.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `||v_{n+1} - v_n||_beta`.
    pub beta_distance: f64,
    /// Plain sup distance over all nodes.
    pub sup_distance: f64,
    /// Conservative weighted bound on the Monte Carlo standard error of the
    /// distance (sum of both iterates' node standard errors at the weighted
    /// argmax).
    pub se_bound: f64,
}

/// Distance history of a Picard iteration, for convergence diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionTrace {
    pub beta: f64,
    /// `L_g e^{K_c T} / beta` from the declared claim bounds.
    pub theoretical_rate: f64,
    /// Whether the declared bounds guarantee contraction (`rate < 1`).
    pub guaranteed: bool,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
    /// Total count of sample points where the envelope clamp fired.
    pub clamp_hits: u64,
}

impl ContractionTrace {
    /// Successive decay ratios `d_{n+1} / d_n`; entries with a zero
    /// denominator are skipped.
    pub fn decay_ratios(&self) -> Vec<f64> {
        self.iterations
            .windows(2)
            .filter(|w| w[0].beta_distance > 0.0)
            .map(|w| w[1].beta_distance / w[0].beta_distance)
            .collect()
    }

    /// Write the trace as CSV (`iter,beta_dist,sup_dist,theoretical_rate`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "iter,beta_dist,sup_dist,theoretical_rate")?;
        for rec in &self.iterations {
            writeln!(
                file,
                "{},{},{},{}",
                rec.iter, rec.beta_distance, rec.sup_distance, self.theoretical_rate
            )?;
        }
        Ok(())
    }
}

/// A-priori envelope `kappa(t)` bounding the value system on `[0, T]`:
/// the solution of `kappa' = K2 kappa + K1` backwards from `kappa(T) = K3`,
/// where `K3` bounds the terminal payoff and `K1`, `K2` the coupling growth.
pub fn kappa_bound(bounds: &ClaimBounds, horizon: f64, t: f64) -> Result<f64> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Usage(format!(
            "time {t} outside the claim horizon [0, {horizon}]"
        )));
    }
    Ok(kappa_value(bounds, horizon - t))
}

/// Envelope at time-to-go `tau >= 0` (no range check).
#[inline]
fn kappa_value(bounds: &ClaimBounds, tau: f64) -> f64 {
    let (k1, k2, k3) = (
        bounds.growth_offset,
        bounds.growth_slope,
        bounds.terminal_sup,
    );
    if k2 == 0.0 {
        k3 + k1 * tau
    } else {
        let e = (k2 * tau).exp();
        k3 * e + (k1 / k2) * (e - 1.0)
    }
}

/// Exponentially weighted distance `max e^{-beta (T - t)} |v - w|`, the norm
/// under which the valuation operator contracts. `beta = 0` recovers the
/// plain sup distance.
pub fn beta_norm(v: &ValueField, w: &ValueField, beta: f64) -> Result<f64> {
    v.same_grids(w)?;
    let t_grid = v.t_grid();
    let horizon = *t_grid.last().expect("time grid is nonempty");
    let mut worst = 0.0f64;
    for (it, &t) in t_grid.iter().enumerate() {
        let weight = (-beta * (horizon - t)).exp();
        let (a, b) = (v.layer(it), w.layer(it));
        let layer_max = a
            .iter()
            .zip(b)
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()));
        worst = worst.max(weight * layer_max);
    }
    Ok(worst)
}

/// Norm weight that makes the operator contract with rate 1/2 under the
/// declared bounds: twice the contraction threshold `L_g e^{K_c T}`.
pub fn default_beta(bounds: &ClaimBounds, horizon: f64) -> f64 {
    2.0 * bounds.interaction_lipschitz * (bounds.discount_sup * horizon).exp()
}

/// Per-sweep diagnostics of one operator application.
#[derive(Clone, Debug)]
pub struct SweepDetail {
    /// Monte Carlo standard error per node (zero on the terminal layer).
    pub se: ValueField,
    /// Sample points at which the envelope clamp fired.
    pub clamp_hits: u64,
    /// Paths that left the domain and were frozen there.
    pub exit_paths: usize,
    pub total_paths: usize,
}

struct NodeOut {
    value: f64,
    se: f64,
    clamp_hits: u64,
    exits: usize,
}

/// One application of the valuation operator, with sweep diagnostics.
///
/// For every interior grid node this runs `paths_per_node` frozen-regime
/// paths and accumulates the discounted source integral by the trapezoid
/// rule, interpolating `v_in` at the sample points; the terminal layer is
/// the payoff exactly. Nodes where more than `exit_budget` of the paths
/// leave the domain fail the sweep.
pub fn apply_fk_operator_detailed(
    model: &ModelSpec,
    claim: &ClaimSpec,
    v_in: &ValueField,
    cfg: &FkConfig,
) -> Result<(ValueField, SweepDetail)> {
    check_inputs(model, claim, v_in, cfg)?;

    let t_grid = v_in.t_grid().to_vec();
    let nt = t_grid.len();
    let space = v_in.space_count();
    let m = model.regimes;

    let mut out = ValueField::zeros(t_grid.clone(), v_in.axes().to_vec(), m);
    let mut se = ValueField::zeros(t_grid.clone(), v_in.axes().to_vec(), m);
    out.set_terminal(|x, k| claim.terminal_value(x, k));

    // One task per interior node (t, x, k); the terminal layer is exact.
    let tasks: Vec<(usize, usize, usize)> = (0..nt - 1)
        .flat_map(|it| (0..space).flat_map(move |flat| (0..m).map(move |k| (it, flat, k))))
        .collect();

    let results: Vec<NodeOut> = tasks
        .par_iter()
        .map(|&(it, flat, k)| {
            let mut x0 = vec![0.0; model.dim()];
            v_in.node_coords(flat, &mut x0);
            let node_id = ((it * space + flat) * m + k) as u64;
            node_estimate(model, claim, v_in, cfg, t_grid[it], &x0, k, node_id)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut clamp_hits = 0u64;
    let mut exit_paths = 0usize;
    for (&(it, flat, k), node) in tasks.iter().zip(&results) {
        out.layer_mut(it)[flat * m + k] = node.value;
        se.layer_mut(it)[flat * m + k] = node.se;
        clamp_hits += node.clamp_hits;
        exit_paths += node.exits;
    }
    let detail = SweepDetail {
        se,
        clamp_hits,
        exit_paths,
        total_paths: tasks.len() * cfg.paths_per_node,
    };
    Ok((out, detail))
}

/// One application of the valuation operator.
pub fn apply_fk_operator(
    model: &ModelSpec,
    claim: &ClaimSpec,
    v_in: &ValueField,
    cfg: &FkConfig,
) -> Result<ValueField> {
    apply_fk_operator_detailed(model, claim, v_in, cfg).map(|(field, _)| field)
}

fn check_inputs(
    model: &ModelSpec,
    claim: &ClaimSpec,
    v_in: &ValueField,
    cfg: &FkConfig,
) -> Result<()> {
    if v_in.regimes() != model.regimes {
        return Err(Error::Usage(format!(
            "value field has {} regimes, model has {}",
            v_in.regimes(),
            model.regimes
        )));
    }
    if v_in.dim() != model.dim() {
        return Err(Error::Usage(format!(
            "value field dimension {} does not match the model's {}",
            v_in.dim(),
            model.dim()
        )));
    }
    let t_last = *v_in.t_grid().last().expect("time grid is nonempty");
    if (t_last - model.horizon).abs() > 1e-12 * model.horizon.max(1.0) {
        return Err(Error::Usage(format!(
            "value grid ends at {t_last}, model horizon is {}",
            model.horizon
        )));
    }
    if v_in.t_grid()[0] < 0.0 {
        return Err(Error::Usage("value grid starts before time zero".into()));
    }
    if cfg.paths_per_node == 0 || cfg.steps == 0 {
        return Err(Error::Usage(
            "paths_per_node and steps must be positive".into(),
        ));
    }
    if cfg.split == CouplingSplit::ExitDiscount
        && !matches!(claim.interaction, InteractionFamily::Linear)
    {
        return Err(Error::Usage(
            "the exit-discount split rewrites the linear coupling family only".into(),
        ));
    }
    Ok(())
}

/// Coupling value and effective discount rate at one sample point, per the
/// configured split; `v_args` is clamped in place when truncation is on.
#[inline]
#[allow(clippy::too_many_arguments)]
fn coupling_at(
    model: &ModelSpec,
    claim: &ClaimSpec,
    cfg: &FkConfig,
    s: f64,
    x: &[f64],
    k: usize,
    v_args: &mut [f64],
    clamp_hits: &mut u64,
) -> (f64, f64) {
    if cfg.truncate {
        let envelope = kappa_value(&claim.bounds, model.horizon - s);
        let mut hit = false;
        for v in v_args.iter_mut() {
            if v.abs() > envelope {
                *v = v.clamp(-envelope, envelope);
                hit = true;
            }
        }
        if hit {
            *clamp_hits += 1;
        }
    }
    let q = &model.intensities;
    match cfg.split {
        CouplingSplit::Direct => (
            claim.interaction_g(q, s, x, v_args, k),
            claim.discount_rate(s, x, k),
        ),
        CouplingSplit::ExitDiscount => (
            claim.interaction_g_exit_split(q, s, x, v_args, k),
            claim.discount_rate(s, x, k) - q.exit_rate(s, x, k),
        ),
    }
}

/// Monte Carlo estimate at a single interior node.
#[allow(clippy::too_many_arguments)]
fn node_estimate(
    model: &ModelSpec,
    claim: &ClaimSpec,
    v_in: &ValueField,
    cfg: &FkConfig,
    t: f64,
    x0: &[f64],
    k: usize,
    node_id: u64,
) -> Result<NodeOut> {
    let horizon = model.horizon;
    let tau = horizon - t;
    let m = model.regimes;
    let n_steps = (((cfg.steps as f64) * tau / horizon).ceil() as usize).max(1);
    let dt = tau / n_steps as f64;

    let mut stepper = Stepper::new(model, cfg.scheme)?;
    let mut dw = vec![0.0; model.noise_dim];
    let mut x = vec![0.0; model.dim()];
    let mut v_args = vec![0.0; m];
    let mut estimates = Vec::with_capacity(cfg.paths_per_node);
    let mut clamp_hits = 0u64;
    let mut exits = 0usize;

    for p in 0..cfg.paths_per_node {
        let mut rng = stream_rng(cfg.seed, purpose::FIXED_POINT, (node_id << 32) | p as u64);
        x.copy_from_slice(x0);
        let mut exited = false;

        // Trapezoid accumulation of int g e^{int c} ds together with the
        // running discount factor e^{int_t^s c}.
        v_in.interp_all_regimes(t, x0, &mut v_args);
        let (mut g_prev, mut c_prev) =
            coupling_at(model, claim, cfg, t, x0, k, &mut v_args, &mut clamp_hits);
        let mut disc = 1.0f64;
        let mut source = 0.0f64;

        for i in 0..n_steps {
            let s0 = t + dt * i as f64;
            let s1 = if i + 1 == n_steps {
                horizon
            } else {
                t + dt * (i + 1) as f64
            };
            if !exited {
                draw_increments(&mut rng, dt, &mut dw);
                match stepper.advance(s0, &mut x, k, dt, &dw, i)? {
                    StepOutcome::Inside => {}
                    StepOutcome::Exited => exited = true,
                }
            }
            v_in.interp_all_regimes(s1, &x, &mut v_args);
            let (g_next, c_next) =
                coupling_at(model, claim, cfg, s1, &x, k, &mut v_args, &mut clamp_hits);
            let disc_next = disc * (0.5 * (c_prev + c_next) * dt).exp();
            source += 0.5 * dt * (g_prev * disc + g_next * disc_next);
            disc = disc_next;
            g_prev = g_next;
            c_prev = c_next;
        }

        if exited {
            exits += 1;
        }
        estimates.push(claim.terminal_value(&x, k) * disc + source);
    }

    let frac = exits as f64 / cfg.paths_per_node as f64;
    if frac > cfg.exit_budget {
        return Err(Error::Simulation(format!(
            "node (t = {t:.4}, x = {x0:?}, regime {k}): {exits}/{} frozen paths left the \
             domain, above the budget of {:.1}%",
            cfg.paths_per_node,
            cfg.exit_budget * 100.0
        )));
    }
    let stats = sample_stats(&estimates);
    Ok(NodeOut {
        value: stats.mean,
        se: stats.se,
        clamp_hits,
        exits,
    })
}

/// Picard-iterate the valuation operator to its fixed point.
///
/// Stops when consecutive sweeps are closer than `tol` in the weighted norm
/// and returns the converged field with its distance trace; exhausting
/// `max_iters` returns a diagnostic error that carries the full trace.
pub fn iterate_to_fixed_point(
    model: &ModelSpec,
    claim: &ClaimSpec,
    v0: ValueField,
    cfg: &FkConfig,
) -> Result<(ValueField, ContractionTrace)> {
    check_inputs(model, claim, &v0, cfg)?;
    let lip = claim.bounds.interaction_lipschitz;
    let beta = cfg
        .beta
        .unwrap_or_else(|| default_beta(&claim.bounds, model.horizon));
    let threshold = lip * (claim.bounds.discount_sup * model.horizon).exp();
    let theoretical_rate = if beta > 0.0 {
        threshold / beta
    } else if lip == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let mut trace = ContractionTrace {
        beta,
        theoretical_rate,
        guaranteed: theoretical_rate < 1.0,
        iterations: Vec::new(),
        converged: false,
        clamp_hits: 0,
    };

    let horizon = model.horizon;
    let mut v = v0;
    let mut prev_se: Option<ValueField> = None;
    for n in 1..=cfg.max_iters {
        let (next, detail) = apply_fk_operator_detailed(model, claim, &v, cfg)?;
        let beta_distance = beta_norm(&next, &v, beta)?;
        let sup_distance = next.sup_distance(&v);
        let se_bound = weighted_se_bound(&detail.se, prev_se.as_ref(), beta, horizon);
        trace.clamp_hits += detail.clamp_hits;
        trace.iterations.push(IterationRecord {
            iter: n,
            beta_distance,
            sup_distance,
            se_bound,
        });
        v = next;
        if beta_distance < cfg.tol {
            trace.converged = true;
            return Ok((v, trace));
        }
        prev_se = Some(detail.se);
    }

    let last_distance = trace
        .iterations
        .last()
        .map(|r| r.beta_distance)
        .unwrap_or(f64::NAN);
    Err(Error::NoConvergence {
        iterations: cfg.max_iters,
        last_distance,
        trace: Box::new(trace),
    })
}

/// Weighted max over nodes of the summed standard errors of two sweeps — a
/// conservative bound on the MC noise in a beta-norm distance.
fn weighted_se_bound(
    se_new: &ValueField,
    se_old: Option<&ValueField>,
    beta: f64,
    horizon: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for (it, &t) in se_new.t_grid().iter().enumerate() {
        let weight = (-beta * (horizon - t)).exp();
        let new_layer = se_new.layer(it);
        match se_old {
            Some(old) => {
                let old_layer = old.layer(it);
                for (a, b) in new_layer.iter().zip(old_layer) {
                    worst = worst.max(weight * (a + b));
                }
            }
            None => {
                for a in new_layer {
                    worst = worst.max(weight * a);
                }
            }
        }
    }
    worst
}
