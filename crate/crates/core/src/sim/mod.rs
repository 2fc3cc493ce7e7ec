//! Path simulation for the interacting diffusion/regime system.
//!
//! Three generators live here: frozen-regime diffusions (the building block
//! of the fixed-point operator), the full market via pasting with thinned
//! regime jumps, and the same market via unit-rate counters plus density
//! weights. The last two are independent constructions of the same law and
//! cross-validate each other.

pub(crate) mod frozen;
pub(crate) mod market;
pub mod check;
pub mod measure;

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::stats::{sample_stats, SampleStats};
use crate::Result;

pub use frozen::{simulate_frozen, simulate_frozen_with, FrozenPath};
pub use market::{simulate_market_pasting, simulate_market_reweight, MarketConfig};
pub use measure::{girsanov_to_minimal_elmm, ElmmMode};

/// Fraction of paths allowed to be excluded (domain exit, dead weight)
/// before estimators refuse to report a number.
pub const EXCLUSION_BUDGET: f64 = 1e-3;

/// Time discretization scheme for diffusion steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepScheme {
    /// Plain Euler–Maruyama in the state variable.
    Euler,
    /// Exponential step in log space: exact for multiplicative coefficients
    /// and positivity-preserving on the orthant.
    LogEuler,
}

/// One regime switch on a path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub time: f64,
    pub from: usize,
    pub to: usize,
    /// Row index in the bundle at which the post-jump state is stored.
    pub row: usize,
    /// Index into the model's structural channel list.
    pub channel: usize,
}

/// One simulated path of `(S, eta)` with everything later consumers need:
/// states at an increasing row grid, the regime in effect from each row on
/// (right-continuous), Brownian increments per interval, and optionally a
/// running density weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub dim: usize,
    pub noise_dim: usize,
    /// Row times; the global grid plus event rows inserted between.
    pub t: Vec<f64>,
    /// Row-major `rows x dim` states.
    pub s: Vec<f64>,
    /// Regime holding on `[t_i, t_{i+1})`; changes only at logged jumps.
    pub regime: Vec<usize>,
    pub jumps: Vec<JumpRecord>,
    /// Running density weight per row (starts at 1, strictly positive) for
    /// weighted constructions; `None` for pasting.
    pub weight: Option<Vec<f64>>,
    /// Brownian increments over `(t_i, t_{i+1}]`, row-major
    /// `(rows-1) x noise_dim`.
    pub dw: Vec<f64>,
    /// Row index of each global grid time.
    pub grid_rows: Vec<usize>,
    /// Set when the path left the domain or its weight died; excluded paths
    /// carry data up to the failure but must not enter estimators.
    pub excluded: bool,
}

impl PathBundle {
    pub fn rows(&self) -> usize {
        self.t.len()
    }

    pub fn state(&self, row: usize) -> &[f64] {
        &self.s[row * self.dim..(row + 1) * self.dim]
    }

    pub fn dw_row(&self, interval: usize) -> &[f64] {
        &self.dw[interval * self.noise_dim..(interval + 1) * self.noise_dim]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.rows() - 1)
    }

    pub fn terminal_regime(&self) -> usize {
        self.regime[self.rows() - 1]
    }

    pub fn terminal_weight(&self) -> f64 {
        match &self.weight {
            Some(w) => *w.last().unwrap(),
            None => 1.0,
        }
    }

    /// Columnar CSV export of one bundle: time, state, regime, weight.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(file, "time")?;
        for i in 0..self.dim {
            write!(file, ",s{}", i + 1)?;
        }
        writeln!(file, ",regime,weight")?;
        for row in 0..self.rows() {
            write!(file, "{}", self.t[row])?;
            for &c in self.state(row) {
                write!(file, ",{c}")?;
            }
            let w = self.weight.as_ref().map_or(1.0, |w| w[row]);
            writeln!(file, ",{},{w}", self.regime[row])?;
        }
        Ok(())
    }
}

/// Generate `n` per-path results in parallel with a fixed reduction order:
/// results come back indexed by path, independent of scheduling.
pub fn map_paths<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..n as u64)
        .into_par_iter()
        .map(f)
        .collect::<Result<Vec<T>>>()
}

/// Sample statistics over per-path values with an exclusion mask, enforcing
/// the exclusion budget: estimators are refused once more than
/// [`EXCLUSION_BUDGET`] of the paths dropped out.
pub fn stats_with_exclusions(values: &[f64], excluded: &[bool]) -> Result<SampleStats> {
    assert_eq!(values.len(), excluded.len());
    let total = values.len();
    let kept: Vec<f64> = values
        .iter()
        .zip(excluded)
        .filter(|(_, &e)| !e)
        .map(|(&v, _)| v)
        .collect();
    let dropped = total - kept.len();
    if total > 0 && dropped as f64 > EXCLUSION_BUDGET * total as f64 {
        return Err(Error::ExcessiveExclusion {
            excluded: dropped,
            total,
            budget: EXCLUSION_BUDGET,
        });
    }
    if kept.is_empty() {
        return Err(Error::Simulation("no usable paths".into()));
    }
    Ok(sample_stats(&kept))
}
