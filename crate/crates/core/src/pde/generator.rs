//! Pointwise action of the full generator on test functions.
//!
//! For the interacting system the generator acting on a function
//! `f(x, k)` of state and regime combines the diffusion part of the active
//! regime with the switch coupling:
//!
//! ```text
//! A_t f(x, k) = Gamma . grad f + (1/2) tr(a Hess f)
//!             + sum_j lambda_{kj}(t, x) (f(x, j) - f(x, k))
//! ```
//!
//! This evaluator feeds the martingale-problem checks: along simulated
//! paths, `f(S_t, eta_t) - integral A f ds` must be a mean-zero process, the
//! sharpest practical law test for the simulators.

use crate::model::ModelSpec;

/// Action of the time-`t` generator on a test function by central finite
/// differences. `rel_step` scales the stencil width relative to
/// `max(|x_i|, 1)`; derivatives of `f` are never required analytically.
pub fn apply_generator(
    model: &ModelSpec,
    f: &dyn Fn(&[f64], usize) -> f64,
    t: f64,
    x: &[f64],
    k: usize,
    rel_step: f64,
) -> f64 {
    let d = model.dim();
    let mut drift = vec![0.0; d];
    let mut sigma = vec![0.0; d * model.noise_dim];
    let mut a = vec![0.0; d * d];
    model.drift_into(t, x, k, &mut drift);
    model.diffusion_into(t, x, k, &mut sigma, &mut a);

    let h: Vec<f64> = x.iter().map(|&xi| rel_step * xi.abs().max(1.0)).collect();
    let f0 = f(x, k);
    let mut xp = x.to_vec();
    let mut acc = 0.0;

    for i in 0..d {
        xp.copy_from_slice(x);
        xp[i] = x[i] + h[i];
        let fp = f(&xp, k);
        xp[i] = x[i] - h[i];
        let fm = f(&xp, k);
        acc += drift[i] * (fp - fm) / (2.0 * h[i]);
        acc += 0.5 * a[i * d + i] * (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let mut cross = 0.0;
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                xp.copy_from_slice(x);
                xp[i] = x[i] + si * h[i];
                xp[j] = x[j] + sj * h[j];
                cross += si * sj * f(&xp, k);
            }
            // symmetric pair (i,j) and (j,i) contribute a_ij each
            acc += a[i * d + j] * cross / (4.0 * h[i] * h[j]);
        }
    }
    for &j in model.intensities.live_targets(k) {
        acc += model.intensities.rate(t, x, k, j) * (f(x, j) - f(x, k));
    }
    acc
}
