//! Full market simulation: diffusion plus regime switches.
//!
//! Two independent constructions of the same joint law:
//!
//! * **Pasting**: run the frozen-regime diffusion for the current regime and
//!   generate switches by thinning candidate events against the uniform
//!   intensity bound. No weights; the sampled measure is the market measure.
//! * **Reweighting**: drive every structural switch channel by a unit-rate
//!   Poisson counter (the regime reads only the jumps that leave its current
//!   state) and carry the density that turns unit intensities into the
//!   model's state-dependent ones — a product of per-jump factors and an
//!   exponential correction between jumps. Estimators multiply by the
//!   terminal weight.
//!
//! Agreement of the two is a sharp end-to-end test: they share no jump
//! mechanism, only the model.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::field::uniform_grid;
use crate::model::ModelSpec;
use crate::rng::{purpose, stream_rng};
use crate::sim::frozen::{draw_increments, StepOutcome, Stepper};
use crate::sim::{JumpRecord, PathBundle, StepScheme};
use crate::Result;

/// Discretization parameters shared by the market simulators.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Number of global grid steps on `[0, T]`.
    pub steps: usize,
    pub scheme: StepScheme,
    pub seed: u64,
}

/// Shared builder for the row structure of a path bundle.
struct BundleBuilder {
    dim: usize,
    noise_dim: usize,
    t: Vec<f64>,
    s: Vec<f64>,
    regime: Vec<usize>,
    jumps: Vec<JumpRecord>,
    weight: Option<Vec<f64>>,
    dw: Vec<f64>,
    dw_acc: Vec<f64>,
    grid_rows: Vec<usize>,
}

impl BundleBuilder {
    fn new(model: &ModelSpec, t0: f64, s0: &[f64], k0: usize, weighted: bool) -> Self {
        BundleBuilder {
            dim: model.dim(),
            noise_dim: model.noise_dim,
            t: vec![t0],
            s: s0.to_vec(),
            regime: vec![k0],
            jumps: Vec::new(),
            weight: weighted.then(|| vec![1.0]),
            dw: Vec::new(),
            dw_acc: vec![0.0; model.noise_dim],
            grid_rows: vec![0],
        }
    }

    fn accumulate(&mut self, dw: &[f64]) {
        for (a, &d) in self.dw_acc.iter_mut().zip(dw) {
            *a += d;
        }
    }

    /// Append a row, flushing the accumulated Brownian increment into the
    /// preceding interval.
    fn push_row(&mut self, t: f64, x: &[f64], k: usize, w: f64) -> usize {
        self.t.push(t);
        self.s.extend_from_slice(x);
        self.regime.push(k);
        if let Some(ws) = &mut self.weight {
            ws.push(w);
        }
        self.dw.extend_from_slice(&self.dw_acc);
        self.dw_acc.fill(0.0);
        self.t.len() - 1
    }

    fn finish(self, excluded: bool) -> PathBundle {
        PathBundle {
            dim: self.dim,
            noise_dim: self.noise_dim,
            t: self.t,
            s: self.s,
            regime: self.regime,
            jumps: self.jumps,
            weight: self.weight,
            dw: self.dw,
            grid_rows: self.grid_rows,
            excluded,
        }
    }
}

fn check_market_inputs(model: &ModelSpec, s0: &[f64], k0: usize, cfg: &MarketConfig) -> Result<()> {
    if cfg.steps == 0 {
        return Err(Error::Usage("at least one step required".into()));
    }
    if !model.domain.contains(s0) {
        return Err(Error::Usage(format!("start point {s0:?} outside the domain")));
    }
    if k0 >= model.regimes {
        return Err(Error::Usage(format!("regime {k0} out of range")));
    }
    Ok(())
}

/// Pasting construction driven by the supplied stream.
pub(crate) fn pasting_with(
    model: &ModelSpec,
    s0: &[f64],
    k0: usize,
    cfg: &MarketConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PathBundle> {
    pasting_from(model, 0.0, s0, k0, cfg, rng)
}

/// Pasting construction restarted from an interior point `(t0, s0, k0)`;
/// the bundle's grid rows are `cfg.steps + 1` uniform times on
/// `[t0, horizon]`. This is what nested conditional-expectation checks use.
pub(crate) fn pasting_from(
    model: &ModelSpec,
    t0: f64,
    s0: &[f64],
    k0: usize,
    cfg: &MarketConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PathBundle> {
    check_market_inputs(model, s0, k0, cfg)?;
    if !(t0 >= 0.0 && t0 < model.horizon) {
        return Err(Error::Usage(format!(
            "restart time {t0} outside [0, {})",
            model.horizon
        )));
    }
    let grid = uniform_grid(t0, model.horizon, cfg.steps + 1);
    let q = &model.intensities;
    let bound = q.bound();
    let m = model.regimes;
    let mut channel_index = vec![usize::MAX; m * m];
    for (idx, (k, j)) in q.channels().into_iter().enumerate() {
        channel_index[k * m + j] = idx;
    }

    let mut stepper = Stepper::new(model, cfg.scheme)?;
    let mut builder = BundleBuilder::new(model, t0, s0, k0, false);
    let mut x = s0.to_vec();
    let mut k = k0;
    let mut dw = vec![0.0; model.noise_dim];
    let mut t_cur = t0;
    let mut excluded = false;

    for step in 0..cfg.steps {
        let t_goal = grid[step + 1];
        while !excluded {
            // Candidate switches arrive at the summed bound rate over the
            // channels out of the current regime. The clock is exponential,
            // hence memoryless: discarding an overshooting candidate and
            // redrawing next segment leaves the law unchanged.
            let live = q.live_targets(k);
            let total_rate = live.len() as f64 * bound;
            let t_cand = if total_rate > 0.0 {
                let e: f64 = rng.sample(Exp1);
                t_cur + e / total_rate
            } else {
                f64::INFINITY
            };
            let t_end = t_cand.min(t_goal);
            let dt = t_end - t_cur;
            if dt > 0.0 {
                draw_increments(rng, dt, &mut dw);
                match stepper.advance(t_cur, &mut x, k, dt, &dw, step)? {
                    StepOutcome::Inside => {}
                    StepOutcome::Exited => excluded = true,
                }
                builder.accumulate(&dw);
            }
            t_cur = t_end;
            if t_cand >= t_goal {
                break;
            }
            if excluded {
                break;
            }
            // Candidate at t_cur: choose the channel uniformly (each has
            // candidate rate `bound`), then accept with the true rate over
            // the bound. Rejected candidates refine the diffusion partition
            // but add no row.
            let j = live[rng.gen_range(0..live.len())];
            let lam = q.rate(t_cur, &x, k, j);
            if lam > bound * (1.0 + 1e-9) {
                return Err(Error::ModelDefinition(format!(
                    "thinning bound violated: lambda[{k}->{j}] = {lam} > {bound} at t = {t_cur:.6}"
                )));
            }
            let u: f64 = rng.gen();
            if u * bound < lam {
                let row = builder.push_row(t_cur, &x, j, 1.0);
                builder.jumps.push(JumpRecord {
                    time: t_cur,
                    from: k,
                    to: j,
                    row,
                    channel: channel_index[k * m + j],
                });
                k = j;
            }
        }
        t_cur = t_goal;
        let row = builder.push_row(t_goal, &x, k, 1.0);
        builder.grid_rows.push(row);
    }
    Ok(builder.finish(excluded))
}

/// Simulate one market path by pasting frozen-regime segments with thinned
/// switches.
pub fn simulate_market_pasting(
    model: &ModelSpec,
    s0: &[f64],
    k0: usize,
    cfg: &MarketConfig,
    path_index: u64,
) -> Result<PathBundle> {
    let mut rng = stream_rng(cfg.seed, purpose::MARKET, path_index);
    pasting_with(model, s0, k0, cfg, &mut rng)
}

/// Simulate one market path under the unit-intensity reference measure and
/// carry the density weight that restores the model's switch intensities.
pub fn simulate_market_reweight(
    model: &ModelSpec,
    s0: &[f64],
    k0: usize,
    cfg: &MarketConfig,
    path_index: u64,
) -> Result<PathBundle> {
    check_market_inputs(model, s0, k0, cfg)?;
    let mut rng = stream_rng(cfg.seed, purpose::REWEIGHT, path_index);
    let grid = uniform_grid(0.0, model.horizon, cfg.steps + 1);
    let q = &model.intensities;
    // Only structurally present channels carry counters: a channel with
    // identically zero rate would force the density to zero on every path
    // where its unit-rate counter fired, discarding almost all paths for
    // models with absorbing regimes. Dropping such channels from both the
    // reference measure and the density is the same change of measure.
    let channels = q.channels();
    let n_ch = channels.len() as f64;

    let mut stepper = Stepper::new(model, cfg.scheme)?;
    let mut builder = BundleBuilder::new(model, 0.0, s0, k0, true);
    let mut x = s0.to_vec();
    let mut k = k0;
    let mut w = 1.0;
    let mut dw = vec![0.0; model.noise_dim];
    let mut t_cur = 0.0;
    let mut excluded = false;

    for step in 0..cfg.steps {
        let t_goal = grid[step + 1];
        while !excluded {
            let t_ev = if n_ch > 0.0 {
                let e: f64 = rng.sample(Exp1);
                t_cur + e / n_ch
            } else {
                f64::INFINITY
            };
            let t_end = t_ev.min(t_goal);
            let dt = t_end - t_cur;
            if dt > 0.0 {
                // Density between jumps: exp(-sum(lambda - 1) dt) over all
                // counters, rates read at the left endpoint.
                let sum_rates: f64 = channels
                    .iter()
                    .map(|&(a, b)| q.rate(t_cur, &x, a, b))
                    .sum();
                w *= (-(sum_rates - n_ch) * dt).exp();
                draw_increments(&mut rng, dt, &mut dw);
                match stepper.advance(t_cur, &mut x, k, dt, &dw, step)? {
                    StepOutcome::Inside => {}
                    StepOutcome::Exited => excluded = true,
                }
                builder.accumulate(&dw);
            }
            t_cur = t_end;
            if t_ev >= t_goal {
                break;
            }
            if excluded {
                break;
            }
            // A counter fired: density picks up its current intensity; the
            // regime moves only when the counter's source is the live regime.
            let ch = rng.gen_range(0..channels.len());
            let (from, to) = channels[ch];
            let lam = q.rate(t_cur, &x, from, to);
            w *= lam;
            if w == 0.0 {
                excluded = true;
            }
            let moves = from == k;
            if moves {
                k = to;
            }
            let row = builder.push_row(t_cur, &x, k, w);
            if moves {
                builder.jumps.push(JumpRecord {
                    time: t_cur,
                    from,
                    to,
                    row,
                    channel: ch,
                });
            }
            if excluded {
                break;
            }
        }
        t_cur = t_goal;
        let row = builder.push_row(t_goal, &x, k, w);
        builder.grid_rows.push(row);
    }
    Ok(builder.finish(excluded))
}
