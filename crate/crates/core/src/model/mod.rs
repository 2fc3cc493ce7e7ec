//! Market model: a diffusion with regime-switching coefficients.
//!
//! The state is a pair `(X, Y)` where `X` solves
//! `dX = Gamma(t, X, Y) dt + Sigma(t, X, Y) dW` between switches and `Y` is a
//! finite-state process whose switch intensities may depend on `(t, X)`. The
//! regime freezes the diffusion coefficients; the diffusion feeds back into
//! the switch rates — both directions of interaction are supported.

pub mod claim;
pub mod coefficients;
pub mod intensity;
pub mod validate;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

pub use claim::{
    ClaimBounds, ClaimSpec, FlowPayoff, InteractionFamily, JumpPayoff, TerminalPayoff,
};
pub use coefficients::{CoefficientField, ScalarField, Shape};
pub use intensity::IntensityMatrix;

/// Maximum supported diffusion dimension (grids are dense in each axis).
pub const MAX_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateDomain {
    /// `x_i > 0` for all coordinates; the lognormal-style setting.
    PositiveOrthant,
    /// All of `R^d`.
    FullSpace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: StateDomain,
    pub dim: usize,
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim
            && x.iter().all(|v| v.is_finite())
            && match self.kind {
                StateDomain::PositiveOrthant => x.iter().all(|&v| v > 0.0),
                StateDomain::FullSpace => true,
            }
    }
}

/// Full specification of the market dynamics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub domain: Domain,
    pub regimes: usize,
    pub noise_dim: usize,
    /// Terminal time `T`; valuation runs on `[0, T]`.
    pub horizon: f64,
    /// Drift `Gamma(t, x, k)`, shape `dim x 1`.
    pub drift: CoefficientField,
    /// Volatility `Sigma(t, x, k)`, shape `dim x noise_dim`.
    pub vol: CoefficientField,
    pub intensities: IntensityMatrix,
    /// Declared bound on the market price of risk `|Phi|`; validation probes
    /// check it, and the measure change relies on it staying finite.
    pub premium_bound: f64,
}

impl ModelSpec {
    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    /// Drift vector into a `dim`-length buffer.
    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], k: usize, out: &mut [f64]) {
        self.drift.eval_into(t, x, k, out);
    }

    /// Volatility matrix into a row-major `dim * noise_dim` buffer.
    #[inline]
    pub fn vol_into(&self, t: f64, x: &[f64], k: usize, out: &mut [f64]) {
        self.vol.eval_into(t, x, k, out);
    }

    /// Diffusion matrix `a = Sigma Sigma^T` into a row-major `dim * dim`
    /// buffer; `sigma_buf` must hold `dim * noise_dim` scratch.
    pub fn diffusion_into(&self, t: f64, x: &[f64], k: usize, sigma_buf: &mut [f64], out: &mut [f64]) {
        let d = self.dim();
        let n = self.noise_dim;
        self.vol.eval_into(t, x, k, sigma_buf);
        for i in 0..d {
            for j in 0..=i {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += sigma_buf[i * n + l] * sigma_buf[j * n + l];
                }
                out[i * d + j] = acc;
                out[j * d + i] = acc;
            }
        }
    }

    /// Market price of risk `Phi = Sigma^T (Sigma Sigma^T)^{-1} Gamma`, the
    /// drift adjustment that makes `X` a local martingale under the minimal
    /// equivalent measure. Fails when the diffusion matrix is singular.
    pub fn market_premium(&self, t: f64, x: &[f64], k: usize) -> Result<DVector<f64>> {
        let d = self.dim();
        let n = self.noise_dim;
        let mut sigma_buf = vec![0.0; d * n];
        self.vol.eval_into(t, x, k, &mut sigma_buf);
        let sigma = DMatrix::from_row_slice(d, n, &sigma_buf);
        let mut gamma = DVector::zeros(d);
        self.drift.eval_into(t, x, k, gamma.as_mut_slice());
        let a = &sigma * sigma.transpose();
        let chol = a.cholesky().ok_or_else(|| {
            Error::Degenerate(format!(
                "diffusion matrix singular at t={t}, x={x:?}, regime {k}"
            ))
        })?;
        Ok(sigma.transpose() * chol.solve(&gamma))
    }

    /// Same model with the drift replaced by zero: the dynamics under the
    /// minimal equivalent measure when vol and intensities are reused as-is.
    pub fn with_zero_drift(&self) -> ModelSpec {
        let mut out = self.clone();
        out.drift = CoefficientField::zeros(Shape { rows: self.dim(), cols: 1 }, self.regimes);
        out
    }

    /// Total switch rate out of regime `k`.
    #[inline]
    pub fn exit_rate(&self, t: f64, x: &[f64], k: usize) -> f64 {
        self.intensities.exit_rate(t, x, k)
    }

    /// Structural consistency of all components.
    pub fn check_consistent(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || d > MAX_DIM {
            return Err(Error::ModelDefinition(format!(
                "state dimension must be in 1..={MAX_DIM}, got {d}"
            )));
        }
        if self.regimes == 0 {
            return Err(Error::ModelDefinition("at least one regime required".into()));
        }
        if self.noise_dim == 0 {
            return Err(Error::ModelDefinition("at least one noise dimension required".into()));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::ModelDefinition(format!(
                "horizon must be finite and positive, got {}",
                self.horizon
            )));
        }
        if !(self.premium_bound.is_finite() && self.premium_bound >= 0.0) {
            return Err(Error::ModelDefinition(format!(
                "premium bound must be finite and >= 0, got {}",
                self.premium_bound
            )));
        }
        self.drift
            .check_consistent("drift", Shape { rows: d, cols: 1 }, self.regimes, d)?;
        self.vol.check_consistent(
            "vol",
            Shape {
                rows: d,
                cols: self.noise_dim,
            },
            self.regimes,
            d,
        )?;
        if self.intensities.regimes() != self.regimes {
            return Err(Error::ModelDefinition(format!(
                "intensity matrix has {} regimes, model has {}",
                self.intensities.regimes(),
                self.regimes
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// One-dimensional lognormal market with a single switch channel.
    pub(crate) fn lognormal_two_regime(mu: f64, sigma: f64, rate: f64) -> ModelSpec {
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
                    DMatrix::from_element(1, 1, mu),
                    DMatrix::from_element(1, 1, mu),
                ],
            },
            vol: CoefficientField::StateScaled {
                per_regime: vec![
                    DMatrix::from_element(1, 1, sigma),
                    DMatrix::from_element(1, 1, sigma),
                ],
            },
            intensities: IntensityMatrix::from_constant(&[vec![0.0, rate], vec![0.0, 0.0]])
                .unwrap(),
            premium_bound: 10.0,
        }
    }

    #[test]
    fn premium_for_lognormal_market() {
        // drift 0.05 x, vol 0.2 x: the premium is 0.05 / 0.2 = 0.25 at any x.
        let model = lognormal_two_regime(0.05, 0.2, 0.5);
        let phi = model.market_premium(0.3, &[7.0], 0).unwrap();
        assert_relative_eq!(phi[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn premium_solves_overdetermined_noise() {
        // 1 state coordinate driven by 2 noise sources.
        let model = ModelSpec {
            domain: Domain {
                kind: StateDomain::FullSpace,
                dim: 1,
            },
            regimes: 1,
            noise_dim: 2,
            horizon: 1.0,
            drift: CoefficientField::Constant {
                per_regime: vec![DMatrix::from_element(1, 1, 0.1)],
            },
            vol: CoefficientField::Constant {
                per_regime: vec![DMatrix::from_row_slice(1, 2, &[0.3, 0.4])],
            },
            intensities: IntensityMatrix::from_constant(&[vec![0.0]]).unwrap(),
            premium_bound: 10.0,
        };
        let phi = model.market_premium(0.0, &[1.0], 0).unwrap();
        // Sigma Sigma^T = 0.25, so Phi = Sigma^T * 0.1 / 0.25
        assert_relative_eq!(phi[0], 0.3 * 0.4, epsilon = 1e-12);
        assert_relative_eq!(phi[1], 0.4 * 0.4, epsilon = 1e-12);
        // drift is recovered: Sigma Phi = Gamma
        assert_relative_eq!(0.3 * phi[0] + 0.4 * phi[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn singular_vol_is_degenerate() {
        let model = lognormal_two_regime(0.05, 0.0, 0.5);
        assert!(model.market_premium(0.0, &[1.0], 0).is_err());
    }

    #[test]
    fn zero_drift_variant() {
        let model = lognormal_two_regime(0.05, 0.2, 0.5);
        let mut out = [f64::NAN];
        model.with_zero_drift().drift_into(0.0, &[3.0], 0, &mut out);
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn diffusion_matrix_is_sigma_sigma_t() {
        let model = lognormal_two_regime(0.05, 0.2, 0.5);
        let mut sigma = [0.0];
        let mut a = [0.0];
        model.diffusion_into(0.0, &[2.0], 0, &mut sigma, &mut a);
        assert_relative_eq!(a[0], (0.2f64 * 2.0).powi(2), epsilon = 1e-12);
    }

    #[test]
    fn structural_check_catches_shape_mismatch() {
        let mut model = lognormal_two_regime(0.05, 0.2, 0.5);
        assert!(model.check_consistent().is_ok());
        model.regimes = 3;
        assert!(model.check_consistent().is_err());
    }

    #[test]
    fn orthant_membership() {
        let d = Domain {
            kind: StateDomain::PositiveOrthant,
            dim: 2,
        };
        assert!(d.contains(&[1.0, 0.5]));
        assert!(!d.contains(&[1.0, 0.0]));
        assert!(!d.contains(&[1.0]));
    }
}
