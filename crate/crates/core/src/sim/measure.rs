//! Change of measure to the minimal equivalent local martingale measure.
//!
//! The drift of the traded assets is removed by the stochastic exponential
//! of `-integral Phi dW` with `Phi = Sigma^T (Sigma Sigma^T)^{-1} Gamma`;
//! regime-switch intensities are untouched (the minimal measure preserves
//! them). Expectations under the new measure are computed either as
//! weighted averages over paths simulated under the market measure, or by
//! re-simulating with the drift removed.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::ModelSpec;
use crate::rng::{purpose, stream_rng};
use crate::sim::market::{pasting_with, MarketConfig};
use crate::sim::PathBundle;
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElmmMode {
    /// Multiply the density onto the recorded path: needs the Brownian
    /// increments stored in the bundle.
    Reweight,
    /// Fresh pasting simulation of the zero-drift model on its own stream.
    Resimulate,
}

/// Produce a bundle whose weights make expectations martingale-measure
/// expectations.
///
/// In `Reweight` mode the returned bundle is the input with its weight
/// multiplied by the discretized stochastic exponential — per interval,
/// `exp(-Phi . dW - |Phi|^2 dt / 2)` with `Phi` read at the interval start.
/// With the coefficients frozen per interval this update is an exact
/// martingale step. In `Resimulate` mode the input bundle only provides the
/// start point and regime.
pub fn girsanov_to_minimal_elmm(
    model: &ModelSpec,
    bundle: &PathBundle,
    mode: ElmmMode,
    cfg: &MarketConfig,
    path_index: u64,
) -> Result<PathBundle> {
    match mode {
        ElmmMode::Resimulate => {
            let zero = model.with_zero_drift();
            let s0 = bundle.state(0).to_vec();
            let k0 = bundle.regime[0];
            let mut rng: ChaCha8Rng = stream_rng(cfg.seed, purpose::ELMM, path_index);
            pasting_with(&zero, &s0, k0, cfg, &mut rng)
        }
        ElmmMode::Reweight => {
            if bundle.excluded {
                // The path froze mid-way; its states need not support a
                // premium evaluation, and it is excluded either way.
                return Ok(bundle.clone());
            }
            let rows = bundle.rows();
            if rows > 1 && bundle.dw.len() != (rows - 1) * bundle.noise_dim {
                return Err(Error::Usage(
                    "reweighting needs the recorded Brownian increments".into(),
                ));
            }
            let mut out = bundle.clone();
            let base = bundle
                .weight
                .clone()
                .unwrap_or_else(|| vec![1.0; rows]);
            let mut weights = vec![1.0; rows];
            weights[0] = base[0];
            let mut z = 1.0;
            for i in 0..rows - 1 {
                let phi = model.market_premium(bundle.t[i], bundle.state(i), bundle.regime[i])?;
                let dwr = bundle.dw_row(i);
                let dt = bundle.t[i + 1] - bundle.t[i];
                let mut drive = 0.0;
                for (p, &w) in phi.iter().zip(dwr) {
                    drive += p * w;
                }
                z *= (-drive - 0.5 * phi.norm_squared() * dt).exp();
                if !(z.is_finite() && z > 0.0) {
                    return Err(Error::Numerical(format!(
                        "density degenerated to {z} at row {i}"
                    )));
                }
                weights[i + 1] = base[i + 1] * z;
            }
            out.weight = Some(weights);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::coefficients::CoefficientField;
    use crate::model::{Domain, IntensityMatrix, StateDomain};
    use crate::sim::market::simulate_market_pasting;
    use crate::sim::{map_paths, stats_with_exclusions, StepScheme};
    use nalgebra::DMatrix;

    fn bs_model(gamma: f64, sigma: f64) -> ModelSpec {
        ModelSpec {
            domain: Domain {
                kind: StateDomain::PositiveOrthant,
                dim: 1,
            },
            regimes: 1,
            noise_dim: 1,
            horizon: 1.0,
            drift: CoefficientField::StateScaled {
                per_regime: vec![DMatrix::from_element(1, 1, gamma)],
            },
            vol: CoefficientField::StateScaled {
                per_regime: vec![DMatrix::from_element(1, 1, sigma)],
            },
            intensities: IntensityMatrix::from_constant(&[vec![0.0]]).unwrap(),
            premium_bound: 10.0,
        }
    }

    fn cfg(seed: u64) -> MarketConfig {
        MarketConfig {
            steps: 16,
            scheme: StepScheme::LogEuler,
            seed,
        }
    }

    #[test]
    fn zero_drift_gives_unit_density() {
        let model = bs_model(0.0, 0.2);
        let b = simulate_market_pasting(&model, &[1.0], 0, &cfg(3), 0).unwrap();
        let rb = girsanov_to_minimal_elmm(&model, &b, ElmmMode::Reweight, &cfg(3), 0).unwrap();
        assert!(rb.weight.unwrap().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn weighted_terminal_mean_is_martingale() {
        let model = bs_model(0.05, 0.2);
        let s0 = 1.3;
        let vals_flags: Vec<(f64, bool)> = map_paths(10_000, |i| {
            let b = simulate_market_pasting(&model, &[s0], 0, &cfg(77), i)?;
            let rb = girsanov_to_minimal_elmm(&model, &b, ElmmMode::Reweight, &cfg(77), i)?;
            Ok((rb.terminal_weight() * rb.terminal_state()[0], rb.excluded))
        })
        .unwrap();
        let (vals, flags): (Vec<f64>, Vec<bool>) = vals_flags.into_iter().unzip();
        let stats = stats_with_exclusions(&vals, &flags).unwrap();
        assert!(
            (stats.mean - s0).abs() <= 3.0 * stats.se,
            "weighted mean {} vs {} (se {})",
            stats.mean,
            s0,
            stats.se
        );
    }

    #[test]
    fn density_normalizes_to_one() {
        let model = bs_model(0.05, 0.2);
        let vals_flags: Vec<(f64, bool)> = map_paths(10_000, |i| {
            let b = simulate_market_pasting(&model, &[1.0], 0, &cfg(78), i)?;
            let rb = girsanov_to_minimal_elmm(&model, &b, ElmmMode::Reweight, &cfg(78), i)?;
            Ok((rb.terminal_weight(), rb.excluded))
        })
        .unwrap();
        let (vals, flags): (Vec<f64>, Vec<bool>) = vals_flags.into_iter().unzip();
        let stats = stats_with_exclusions(&vals, &flags).unwrap();
        assert!(
            (stats.mean - 1.0).abs() <= 3.0 * stats.se,
            "mean density {} (se {})",
            stats.mean,
            stats.se
        );
        assert!(vals.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn missing_increments_is_usage_error() {
        let model = bs_model(0.05, 0.2);
        let mut b = simulate_market_pasting(&model, &[1.0], 0, &cfg(3), 0).unwrap();
        b.dw.clear();
        let err = girsanov_to_minimal_elmm(&model, &b, ElmmMode::Reweight, &cfg(3), 0);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn resimulate_removes_the_drift() {
        let model = bs_model(0.08, 0.2);
        let s0 = 2.0;
        let vals: Vec<f64> = map_paths(10_000, |i| {
            let b = simulate_market_pasting(&model, &[s0], 0, &cfg(9), i)?;
            let rb = girsanov_to_minimal_elmm(&model, &b, ElmmMode::Resimulate, &cfg(9), i)?;
            Ok(rb.terminal_state()[0])
        })
        .unwrap();
        let stats = crate::stats::sample_stats(&vals);
        assert!(
            (stats.mean - s0).abs() <= 3.0 * stats.se,
            "resimulated mean {} vs {} (se {})",
            stats.mean,
            s0,
            stats.se
        );
    }
}
