//! Distributional self-checks on simulated paths.
//!
//! The sharpest available test that a simulated process has the intended law
//! is the martingale problem: for a smooth test function `f`,
//!
//! ```text
//! f(S_t, eta_t) - f(S_0, eta_0) - integral_0^t (A_s f)(S_s, eta_s) ds
//! ```
//!
//! must have mean zero, where `A` is the full generator (diffusion part plus
//! switch coupling). Likewise each switch counter minus its intensity
//! integral must have mean zero. Both residuals are computed per path here;
//! callers aggregate and apply a standard-error test.

use crate::model::ModelSpec;
use crate::pde::apply_generator;
use crate::sim::PathBundle;
use crate::Result;

/// Cumulative martingale residual of the test function along one path at
/// every global grid time. Index `g` of the result corresponds to grid row
/// `g`; entry 0 is always zero.
///
/// The integral uses the trapezoid rule on the bundle's row partition with
/// the regime in effect on each interval (the pre-jump regime at interval
/// ends), which matches the left-limit convention of the dynamics.
pub fn generator_martingale_residuals(
    model: &ModelSpec,
    bundle: &PathBundle,
    f: &dyn Fn(&[f64], usize) -> f64,
    rel_step: f64,
) -> Result<Vec<f64>> {
    let f00 = f(bundle.state(0), bundle.regime[0]);
    let mut out = Vec::with_capacity(bundle.grid_rows.len());
    out.push(0.0);
    let mut integral = 0.0;
    let mut next_grid = 1;
    for i in 0..bundle.rows() - 1 {
        let k = bundle.regime[i];
        let a0 = apply_generator(model, f, bundle.t[i], bundle.state(i), k, rel_step);
        let a1 = apply_generator(model, f, bundle.t[i + 1], bundle.state(i + 1), k, rel_step);
        integral += 0.5 * (a0 + a1) * (bundle.t[i + 1] - bundle.t[i]);
        while next_grid < bundle.grid_rows.len() && bundle.grid_rows[next_grid] == i + 1 {
            let row = i + 1;
            out.push(f(bundle.state(row), bundle.regime[row]) - f00 - integral);
            next_grid += 1;
        }
    }
    Ok(out)
}

/// Terminal residual of the compensated switch counter for one channel:
/// number of observed `from -> to` jumps minus the integral of the switch
/// intensity gated by occupancy of the source regime.
pub fn compensated_counter_residual(
    model: &ModelSpec,
    bundle: &PathBundle,
    from: usize,
    to: usize,
) -> f64 {
    let count = bundle
        .jumps
        .iter()
        .filter(|j| j.from == from && j.to == to)
        .count() as f64;
    let mut integral = 0.0;
    for i in 0..bundle.rows() - 1 {
        if bundle.regime[i] != from {
            continue;
        }
        let l0 = model.intensities.rate(bundle.t[i], bundle.state(i), from, to);
        let l1 = model
            .intensities
            .rate(bundle.t[i + 1], bundle.state(i + 1), from, to);
        integral += 0.5 * (l0 + l1) * (bundle.t[i + 1] - bundle.t[i]);
    }
    count - integral
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::coefficients::CoefficientField;
    use crate::model::{Domain, IntensityMatrix, StateDomain};
    use crate::sim::market::{simulate_market_pasting, MarketConfig};
    use crate::sim::{map_paths, StepScheme};
    use crate::stats::sample_stats;
    use nalgebra::DMatrix;

    fn model() -> ModelSpec {
        ModelSpec {
            domain: Domain {
                kind: StateDomain::PositiveOrthant,
                dim: 1,
            },
            regimes: 2,
            noise_dim: 1,
            horizon: 1.0,
            drift: CoefficientField::StateScaled {
                per_regime: vec![
                    DMatrix::from_element(1, 1, 0.05),
                    DMatrix::from_element(1, 1, 0.05),
                ],
            },
            vol: CoefficientField::StateScaled {
                per_regime: vec![
                    DMatrix::from_element(1, 1, 0.2),
                    DMatrix::from_element(1, 1, 0.35),
                ],
            },
            intensities: IntensityMatrix::from_constant(&[vec![0.0, 0.5], vec![0.0, 0.0]])
                .unwrap(),
            premium_bound: 10.0,
        }
    }

    /// Smooth localized test function with a regime-dependent factor.
    fn test_fn(x: &[f64], k: usize) -> f64 {
        let u = (x[0] - 1.2) / 0.8;
        (1.0 + 0.5 * k as f64) * (-u * u).exp()
    }

    #[test]
    fn martingale_residual_mean_is_zero() {
        let m = model();
        let cfg = MarketConfig {
            steps: 32,
            scheme: StepScheme::LogEuler,
            seed: 99,
        };
        let rows: Vec<Vec<f64>> = map_paths(20_000, |i| {
            let b = simulate_market_pasting(&m, &[1.0], 0, &cfg, i)?;
            generator_martingale_residuals(&m, &b, &test_fn, 1e-4)
        })
        .unwrap();
        // test a mid checkpoint and the terminal one
        for g in [16, 32] {
            let vals: Vec<f64> = rows.iter().map(|r| r[g]).collect();
            let stats = sample_stats(&vals);
            assert!(
                stats.mean.abs() <= 3.0 * stats.se,
                "residual mean {} at grid {} (se {})",
                stats.mean,
                g,
                stats.se
            );
        }
    }

    #[test]
    fn compensated_counter_mean_is_zero() {
        let m = model();
        let cfg = MarketConfig {
            steps: 16,
            scheme: StepScheme::LogEuler,
            seed: 101,
        };
        let vals: Vec<f64> = map_paths(20_000, |i| {
            let b = simulate_market_pasting(&m, &[1.0], 0, &cfg, i)?;
            Ok(compensated_counter_residual(&m, &b, 0, 1))
        })
        .unwrap();
        let stats = sample_stats(&vals);
        assert!(
            stats.mean.abs() <= 3.0 * stats.se,
            "counter residual mean {} (se {})",
            stats.mean,
            stats.se
        );
    }
}
