//! Regime-switch intensity matrices.
//!
//! Off-diagonal entry `(k, j)` is the state-dependent rate of switching from
//! regime `k` to regime `j`. Absent entries are structural zeros: the switch
//! channel does not exist, which matters for the change-of-measure weights
//! (only structurally present channels enter the density).

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::coefficients::ScalarField;
use crate::Result;

/// Sparse matrix of switch-rate fields with a uniform upper bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IntensityMatrix {
    m: usize,
    /// Row-major `m * m`; `None` marks a structural zero (and the diagonal).
    entries: Vec<Option<ScalarField>>,
    /// Uniform bound on each entry, used as the thinning candidate rate and
    /// in growth/contraction estimates. Must dominate every entry pointwise.
    bound: f64,
    /// Targets with a structural channel out of each regime (precomputed).
    #[serde(skip)]
    live: Vec<Vec<usize>>,
}

impl IntensityMatrix {
    pub fn new(m: usize, entries: Vec<Option<ScalarField>>, bound: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::ModelDefinition("at least one regime required".into()));
        }
        if entries.len() != m * m {
            return Err(Error::ModelDefinition(format!(
                "intensity matrix needs {} entries for {m} regimes, got {}",
                m * m,
                entries.len()
            )));
        }
        if !(bound.is_finite() && bound >= 0.0) {
            return Err(Error::ModelDefinition("intensity bound must be finite and >= 0".into()));
        }
        for (pos, e) in entries.iter().enumerate() {
            let (k, j) = (pos / m, pos % m);
            if k == j && e.is_some() {
                return Err(Error::ModelDefinition(format!(
                    "diagonal intensity entry ({k},{k}) must be absent"
                )));
            }
            if let Some(f) = e {
                f.check_consistent(&format!("intensity ({k},{j})"))?;
                if let Some(sup) = f.sup_bound() {
                    if sup > bound + 1e-12 {
                        return Err(Error::ModelDefinition(format!(
                            "intensity ({k},{j}) exceeds declared bound: {sup} > {bound}"
                        )));
                    }
                }
            }
        }
        let mut mat = IntensityMatrix {
            m,
            entries,
            bound,
            live: Vec::new(),
        };
        mat.rebuild_live();
        Ok(mat)
    }

    /// Constant-rate matrix from a dense table; zeros become structural zeros.
    pub fn from_constant(rates: &[Vec<f64>]) -> Result<Self> {
        let m = rates.len();
        let mut entries = vec![None; m * m];
        let mut bound = 0.0f64;
        for (k, row) in rates.iter().enumerate() {
            if row.len() != m {
                return Err(Error::ModelDefinition(format!(
                    "intensity row {k} has {} entries, expected {m}",
                    row.len()
                )));
            }
            for (j, &r) in row.iter().enumerate() {
                if k == j {
                    continue;
                }
                if r < 0.0 {
                    return Err(Error::ModelDefinition(format!(
                        "negative intensity at ({k},{j})"
                    )));
                }
                if r > 0.0 {
                    entries[k * m + j] = Some(ScalarField::Constant(r));
                    bound = bound.max(r);
                }
            }
        }
        IntensityMatrix::new(m, entries, bound)
    }

    /// Rebuild the live-target cache (needed after deserialization, which
    /// skips the cached field).
    pub fn rebuild_live(&mut self) {
        self.live = (0..self.m)
            .map(|k| {
                (0..self.m)
                    .filter(|&j| self.entries[k * self.m + j].is_some())
                    .collect()
            })
            .collect();
    }

    pub fn regimes(&self) -> usize {
        self.m
    }

    /// Uniform upper bound on every entry.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn entry(&self, k: usize, j: usize) -> Option<&ScalarField> {
        self.entries[k * self.m + j].as_ref()
    }

    /// Rate of the `k -> j` switch at `(t, x)`; zero for structural zeros.
    /// State-dependent families are floored at zero, so rates are usable as
    /// probabilities even if a table dips negative.
    pub fn rate(&self, t: f64, x: &[f64], k: usize, j: usize) -> f64 {
        match &self.entries[k * self.m + j] {
            Some(f) => f.eval(t, x).max(0.0),
            None => 0.0,
        }
    }

    /// Total switch rate out of regime `k` at `(t, x)`.
    pub fn exit_rate(&self, t: f64, x: &[f64], k: usize) -> f64 {
        self.live[k].iter().map(|&j| self.rate(t, x, k, j)).sum()
    }

    /// Regimes reachable from `k` through a structural channel.
    pub fn live_targets(&self, k: usize) -> &[usize] {
        &self.live[k]
    }

    /// All structurally present channels as `(from, to)` pairs.
    pub fn channels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for k in 0..self.m {
            for &j in &self.live[k] {
                out.push((k, j));
            }
        }
        out
    }

    /// Whether any entry is state- or time-dependent.
    pub fn is_state_dependent(&self) -> bool {
        self.entries
            .iter()
            .flatten()
            .any(|f| !matches!(f, ScalarField::Constant(_)))
    }
}
