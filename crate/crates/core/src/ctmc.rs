//! Finite-state Markov chains with constant generator.
//!
//! Transition matrices are computed by uniformization: with
//! `L = max_k |q_kk|` and `P = I + Q/L`,
//!
//! ```text
//! exp(Q t) = sum_{n>=0} e^{-Lt} (Lt)^n / n! * P^n
//! ```
//!
//! Every term is a product of stochastic matrices weighted by Poisson
//! probabilities, so the series is numerically stable (no cancellation) and
//! the truncation error is an explicit Poisson tail. This serves as the
//! independent oracle for regime-marginal statistics and pure-coupling
//! valuation problems.

use nalgebra::DMatrix;

use crate::error::Error;
use crate::Result;

/// Tail mass at which the uniformization series stops.
const TAIL: f64 = 1e-14;

/// Check that `q` is a conservative generator: square, off-diagonal entries
/// nonnegative, rows summing to zero.
pub fn check_generator(q: &DMatrix<f64>) -> Result<()> {
    if q.nrows() != q.ncols() || q.nrows() == 0 {
        return Err(Error::Usage(format!(
            "generator must be square and nonempty, got {}x{}",
            q.nrows(),
            q.ncols()
        )));
    }
    let scale = q.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for k in 0..q.nrows() {
        let mut row_sum = 0.0;
        for j in 0..q.ncols() {
            let v = q[(k, j)];
            if !v.is_finite() {
                return Err(Error::Usage(format!("non-finite generator entry at ({k},{j})")));
            }
            if k != j && v < 0.0 {
                return Err(Error::Usage(format!(
                    "negative off-diagonal generator entry at ({k},{j}): {v}"
                )));
            }
            row_sum += v;
        }
        if row_sum.abs() > 1e-10 * scale {
            return Err(Error::Usage(format!(
                "generator row {k} sums to {row_sum:.3e}, expected 0"
            )));
        }
    }
    Ok(())
}

/// Transition matrix `exp(Q t)` of the chain with generator `q` over a
/// horizon `t >= 0`.
pub fn transition_matrix(q: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_generator(q)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Usage(format!("horizon must be finite and >= 0, got {t}")));
    }
    let m = q.nrows();
    let rate = (0..m).fold(0.0f64, |a, k| a.max(-q[(k, k)]));
    if rate * t == 0.0 {
        return Ok(DMatrix::identity(m, m));
    }

    let p = DMatrix::identity(m, m) + q / rate;
    let lt = rate * t;
    let mut weight = (-lt).exp();
    if weight == 0.0 {
        return Err(Error::Numerical(format!(
            "uniformization rate * t = {lt:.3e} too large for a direct series"
        )));
    }
    let mut acc_weight = weight;
    let mut term = DMatrix::identity(m, m); // P^n
    let mut sum = term.clone() * weight;
    let mut n = 1.0;
    while 1.0 - acc_weight > TAIL {
        term *= &p;
        weight *= lt / n;
        n += 1.0;
        sum += &term * weight;
        acc_weight += weight;
    }
    Ok(sum)
}

/// `E[h(Y_t) | Y_0 = k]` for every starting regime `k`: the action of
/// `exp(Q t)` on the terminal vector.
pub fn expectation_terminal(q: &DMatrix<f64>, t: f64, h: &[f64]) -> Result<Vec<f64>> {
    if h.len() != q.nrows() {
        return Err(Error::Usage(format!(
            "terminal vector has {} entries, generator has {} states",
            h.len(),
            q.nrows()
        )));
    }
    let p = transition_matrix(q, t)?;
    Ok((0..q.nrows())
        .map(|k| (0..q.ncols()).map(|j| p[(k, j)] * h[j]).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn one_way_chain_matches_closed_form() {
        let lam = 0.7;
        let q = DMatrix::from_row_slice(2, 2, &[-lam, lam, 0.0, 0.0]);
        let p = transition_matrix(&q, 1.3).unwrap();
        assert_relative_eq!(p[(0, 0)], (-lam * 1.3f64).exp(), epsilon = 1e-13);
        assert_relative_eq!(p[(0, 1)], 1.0 - (-lam * 1.3f64).exp(), epsilon = 1e-13);
        assert_eq!(p[(1, 0)], 0.0);
        // the series is truncated at the Poisson tail bound, so the absorbing
        // diagonal carries that truncation error
        assert_relative_eq!(p[(1, 1)], 1.0, epsilon = 1e-13);
    }

    #[test]
    fn symmetric_flip_chain() {
        let lam = 0.4;
        let q = DMatrix::from_row_slice(2, 2, &[-lam, lam, lam, -lam]);
        let p = transition_matrix(&q, 2.0).unwrap();
        let expect = 0.5 * (1.0 + (-2.0 * lam * 2.0f64).exp());
        assert_relative_eq!(p[(0, 0)], expect, epsilon = 1e-13);
        // rows are probability distributions
        assert_relative_eq!(p[(0, 0)] + p[(0, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_horizon_is_identity() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let p = transition_matrix(&q, 0.0).unwrap();
        assert_eq!(p, DMatrix::identity(2, 2));
    }

    #[test]
    fn expectation_of_indicator() {
        let lam = 0.5;
        let q = DMatrix::from_row_slice(2, 2, &[-lam, lam, 0.0, 0.0]);
        let v = expectation_terminal(&q, 1.0, &[1.0, 0.0]).unwrap();
        assert_relative_eq!(v[0], (-0.5f64).exp(), epsilon = 1e-13);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn invalid_generators_rejected() {
        let bad_sum = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, 0.0]);
        assert!(check_generator(&bad_sum).is_err());
        let bad_sign = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        assert!(check_generator(&bad_sign).is_err());
    }
}
