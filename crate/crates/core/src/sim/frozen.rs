//! Frozen-regime diffusion paths.
//!
//! With the regime pinned at `k`, the state follows the plain SDE
//! `dX = Gamma(t, X, k) dt + Sigma(t, X, k) dW`. These paths underpin the
//! Feynman–Kac operator (which freezes the regime and reads the coupling from
//! the previous iterate) and serve as the diffusion segments of the full
//! market simulators.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::field::uniform_grid;
use crate::model::{ModelSpec, StateDomain};
use crate::rng::{purpose, stream_rng};
use crate::sim::StepScheme;
use crate::Result;

/// Path of a single frozen-regime diffusion on a uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrozenPath {
    pub t: Vec<f64>,
    /// Row-major `(steps + 1) x dim` states; `x[0]` is the start point.
    pub x: Vec<f64>,
    pub dim: usize,
    pub k: usize,
    /// Some step left the domain; the path is frozen from there on and must
    /// be excluded from estimators.
    pub exited: bool,
}

impl FrozenPath {
    pub fn state(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.t.len() - 1)
    }
}

/// Outcome of one diffusion step.
pub(crate) enum StepOutcome {
    Inside,
    Exited,
}

/// Reusable stepper: owns evaluation buffers so the per-step cost is free of
/// allocation.
pub(crate) struct Stepper<'a> {
    model: &'a ModelSpec,
    scheme: StepScheme,
    drift: Vec<f64>,
    vol: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a ModelSpec, scheme: StepScheme) -> Result<Self> {
        if scheme == StepScheme::LogEuler && model.domain.kind != StateDomain::PositiveOrthant {
            return Err(Error::Usage(
                "log-space stepping needs a positive-orthant domain".into(),
            ));
        }
        Ok(Stepper {
            model,
            scheme,
            drift: vec![0.0; model.dim()],
            vol: vec![0.0; model.dim() * model.noise_dim],
        })
    }

    /// Advance `x` in place over `[t, t + dt]` in regime `k` with Brownian
    /// increments `dw` (already scaled by `sqrt(dt)`).
    pub fn advance(
        &mut self,
        t: f64,
        x: &mut [f64],
        k: usize,
        dt: f64,
        dw: &[f64],
        step: usize,
    ) -> Result<StepOutcome> {
        let d = self.model.dim();
        let n = self.model.noise_dim;
        self.model.drift_into(t, x, k, &mut self.drift);
        self.model.vol_into(t, x, k, &mut self.vol);
        match self.scheme {
            StepScheme::Euler => {
                for i in 0..d {
                    let mut dx = self.drift[i] * dt;
                    for j in 0..n {
                        dx += self.vol[i * n + j] * dw[j];
                    }
                    x[i] += dx;
                }
            }
            StepScheme::LogEuler => {
                // Divide the coefficients by the state to step in log space;
                // exact when drift and vol are proportional to the state.
                for i in 0..d {
                    let xi = x[i];
                    let gamma = self.drift[i] / xi;
                    let mut noise = 0.0;
                    let mut quad = 0.0;
                    for j in 0..n {
                        let s = self.vol[i * n + j] / xi;
                        noise += s * dw[j];
                        quad += s * s;
                    }
                    x[i] = xi * ((gamma - 0.5 * quad) * dt + noise).exp();
                }
            }
        }
        for &v in x.iter() {
            if !v.is_finite() {
                return Err(Error::Simulation(format!(
                    "non-finite state at step {step} (t = {t:.6})"
                )));
            }
        }
        if self.model.domain.contains(x) {
            Ok(StepOutcome::Inside)
        } else {
            Ok(StepOutcome::Exited)
        }
    }
}

/// Draw `noise_dim` Brownian increments over `dt` into `dw`.
#[inline]
pub(crate) fn draw_increments(rng: &mut ChaCha8Rng, dt: f64, dw: &mut [f64]) {
    let scale = dt.sqrt();
    for w in dw.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *w = z * scale;
    }
}

/// Simulate the frozen-regime diffusion from `(t0, x0, k)` to the horizon on
/// a uniform grid with `steps` steps, using the supplied stream.
pub fn simulate_frozen_with(
    model: &ModelSpec,
    t0: f64,
    x0: &[f64],
    k: usize,
    steps: usize,
    scheme: StepScheme,
    rng: &mut ChaCha8Rng,
) -> Result<FrozenPath> {
    if steps == 0 {
        return Err(Error::Usage("at least one step required".into()));
    }
    if !model.domain.contains(x0) {
        return Err(Error::Usage(format!("start point {x0:?} outside the domain")));
    }
    if k >= model.regimes {
        return Err(Error::Usage(format!("regime {k} out of range")));
    }
    if !(0.0..model.horizon).contains(&t0) {
        return Err(Error::Usage(format!(
            "start time {t0} outside [0, {})",
            model.horizon
        )));
    }

    let d = model.dim();
    let t = uniform_grid(t0, model.horizon, steps + 1);
    let dt = (model.horizon - t0) / steps as f64;
    let mut x = Vec::with_capacity((steps + 1) * d);
    x.extend_from_slice(x0);

    let mut stepper = Stepper::new(model, scheme)?;
    let mut cur = x0.to_vec();
    let mut dw = vec![0.0; model.noise_dim];
    let mut exited = false;
    for i in 0..steps {
        if exited {
            x.extend_from_slice(&cur);
            continue;
        }
        draw_increments(rng, dt, &mut dw);
        match stepper.advance(t[i], &mut cur, k, dt, &dw, i)? {
            StepOutcome::Inside => {}
            StepOutcome::Exited => exited = true,
        }
        x.extend_from_slice(&cur);
    }
    Ok(FrozenPath {
        t,
        x,
        dim: d,
        k,
        exited,
    })
}

/// Seed-keyed convenience wrapper around [`simulate_frozen_with`].
pub fn simulate_frozen(
    model: &ModelSpec,
    t0: f64,
    x0: &[f64],
    k: usize,
    steps: usize,
    scheme: StepScheme,
    seed: u64,
    path_index: u64,
) -> Result<FrozenPath> {
    let mut rng = stream_rng(seed, purpose::FROZEN, path_index);
    simulate_frozen_with(model, t0, x0, k, steps, scheme, &mut rng)
}
