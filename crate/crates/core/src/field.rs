//! Discrete value fields `v(t, x, k)` on tensor grids.
//!
//! Both solution routes (PDE marching and fixed-point iteration) produce
//! their results as a [`ValueField`]: per-regime values on a time grid times
//! a tensor spatial grid. Continuous evaluation is linear in time and
//! multilinear in space, clamped to the grid hull; hedging also needs the
//! spatial gradient of that interpolant.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::MAX_DIM;
use crate::Result;

/// Uniformly spaced grid of `n >= 2` nodes on `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && hi > lo);
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + h * i as f64).collect()
}

/// Log-uniform grid on `[lo, hi]`, `lo > 0`: uniform in `ln x`, so relative
/// spacing is constant. The natural grid for positive-orthant dynamics.
pub fn log_uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    let h = (b - a) / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| (a + h * i as f64).exp()).collect();
    // pin the endpoints exactly
    out[0] = lo;
    out[n - 1] = hi;
    out
}

/// Values of an `m`-regime field on `t_grid x axes[0] x ... x axes[d-1]`.
///
/// Storage is row-major over `(t, x_1, ..., x_d, k)` with the regime index
/// fastest, so one spatial node holds its `m` regime values contiguously.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueField {
    t: Vec<f64>,
    axes: Vec<Vec<f64>>,
    m: usize,
    values: Vec<f64>,
}

impl ValueField {
    pub fn zeros(t: Vec<f64>, axes: Vec<Vec<f64>>, m: usize) -> Self {
        assert!(!axes.is_empty() && axes.len() <= MAX_DIM, "dimension out of range");
        assert!(t.len() >= 2 && m >= 1);
        assert!(
            t.windows(2).all(|w| w[1] > w[0]),
            "time grid must be strictly increasing"
        );
        for axis in &axes {
            assert!(
                axis.len() >= 2 && axis.windows(2).all(|w| w[1] > w[0]),
                "axes must be strictly increasing with at least 2 nodes"
            );
        }
        let space: usize = axes.iter().map(|a| a.len()).product();
        ValueField {
            values: vec![0.0; t.len() * space * m],
            t,
            axes,
            m,
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn regimes(&self) -> usize {
        self.m
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Number of spatial nodes (product over axes).
    pub fn space_count(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    /// Coordinates of the flattened spatial node `flat`, row-major over axes.
    pub fn node_coords(&self, mut flat: usize, out: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let n = self.axes[i].len();
            out[i] = self.axes[i][flat % n];
            flat /= n;
        }
    }

    #[inline]
    fn layer_len(&self) -> usize {
        self.space_count() * self.m
    }

    /// All values at time node `it`, laid out `[space_flat * m + k]`.
    pub fn layer(&self, it: usize) -> &[f64] {
        let l = self.layer_len();
        &self.values[it * l..(it + 1) * l]
    }

    pub fn layer_mut(&mut self, it: usize) -> &mut [f64] {
        let l = self.layer_len();
        &mut self.values[it * l..(it + 1) * l]
    }

    /// Largest `|v|` over the layer at time node `it`.
    pub fn layer_max_abs(&self, it: usize) -> f64 {
        self.layer(it).iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Fill the final time layer with a terminal function `(x, k) -> value`.
    pub fn set_terminal(&mut self, f: impl Fn(&[f64], usize) -> f64) {
        let it = self.t.len() - 1;
        let space = self.space_count();
        let m = self.m;
        let mut x = vec![0.0; self.dim()];
        for flat in 0..space {
            self.node_coords(flat, &mut x);
            for k in 0..m {
                let v = f(&x, k);
                self.layer_mut(it)[flat * m + k] = v;
            }
        }
    }

    /// Largest `|a - b|` over all nodes; the fields must share their grids.
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "field shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// Interpolated value; outside the grid hull the query clamps to it.
    pub fn interp(&self, t: f64, x: &[f64], k: usize) -> f64 {
        self.interp_clamped(t, x, k).0
    }

    /// Interpolated value plus a flag marking whether any coordinate was
    /// clamped to the hull.
    pub fn interp_clamped(&self, t: f64, x: &[f64], k: usize) -> (f64, bool) {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        let mut clamped = false;

        let (it, wt) = locate(&self.t, t, &mut clamped);
        let mut cells = [(0usize, 0.0f64); MAX_DIM];
        for i in 0..d {
            cells[i] = locate(&self.axes[i], x[i], &mut clamped);
        }

        // Gather the 2^(d+1) corner values; if they are all bitwise equal the
        // interpolant is exactly that constant — return it unmixed so that
        // locally flat fields evaluate without rounding.
        let corners = 1usize << d;
        let mut first_bits = 0u64;
        let mut all_equal = true;
        let mut acc = 0.0;
        for (level, w_level) in [(it, 1.0 - wt), (it + 1, wt)] {
            let layer = self.layer(level);
            for corner in 0..corners {
                let mut flat = 0usize;
                let mut w = w_level;
                for i in 0..d {
                    let (ci, wi) = cells[i];
                    let hi = (corner >> i) & 1 == 1;
                    flat = flat * self.axes[i].len() + ci + hi as usize;
                    w *= if hi { wi } else { 1.0 - wi };
                }
                let v = layer[flat * self.m + k];
                if level == it && corner == 0 {
                    first_bits = v.to_bits();
                } else if v.to_bits() != first_bits {
                    all_equal = false;
                }
                acc += w * v;
            }
        }
        if all_equal {
            return (f64::from_bits(first_bits), clamped);
        }
        (acc, clamped)
    }

    /// Interpolate every regime at once into `out` (length `m`).
    pub fn interp_all_regimes(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let mut clamped = false;
        for k in 0..self.m {
            let (v, c) = self.interp_clamped(t, x, k);
            out[k] = v;
            clamped |= c;
        }
        clamped
    }

    /// Spatial gradient of the interpolant at `(t, x, k)`: the cell slope of
    /// the multilinear surface, time-interpolated. Piecewise constant across
    /// each cell in its own axis, which is the natural delta of a grid value.
    pub fn grad_x(&self, t: f64, x: &[f64], k: usize, out: &mut [f64]) {
        let d = self.dim();
        let mut clamped = false;
        let (it, wt) = locate(&self.t, t, &mut clamped);
        let mut cells = [(0usize, 0.0f64); MAX_DIM];
        for i in 0..d {
            cells[i] = locate(&self.axes[i], x[i], &mut clamped);
        }
        out[..d].fill(0.0);
        let corners = 1usize << d;
        for (level, w_level) in [(it, 1.0 - wt), (it + 1, wt)] {
            let layer = self.layer(level);
            for corner in 0..corners {
                let mut flat = 0usize;
                for i in 0..d {
                    let (ci, _) = cells[i];
                    let hi = (corner >> i) & 1 == 1;
                    flat = flat * self.axes[i].len() + ci + hi as usize;
                }
                let v = layer[flat * self.m + k];
                for axis in 0..d {
                    let mut w = w_level;
                    for i in 0..d {
                        let (ci, wi) = cells[i];
                        let hi = (corner >> i) & 1 == 1;
                        if i == axis {
                            let dx = self.axes[i][ci + 1] - self.axes[i][ci];
                            let sign = if hi { 1.0 } else { -1.0 };
                            w *= sign / dx;
                        } else {
                            w *= if hi { wi } else { 1.0 - wi };
                        }
                    }
                    out[axis] += w * v;
                }
            }
        }
    }

    /// Write the field as CSV with one row per `(t, x, k)` node.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(file, "t")?;
        for i in 0..self.dim() {
            write!(file, ",x{}", i + 1)?;
        }
        writeln!(file, ",regime,value")?;
        let space = self.space_count();
        let mut x = vec![0.0; self.dim()];
        for (it, &t) in self.t.iter().enumerate() {
            let layer = self.layer(it);
            for flat in 0..space {
                self.node_coords(flat, &mut x);
                for k in 0..self.m {
                    write!(file, "{t}")?;
                    for &c in &x {
                        write!(file, ",{c}")?;
                    }
                    writeln!(file, ",{k},{}", layer[flat * self.m + k])?;
                }
            }
        }
        Ok(())
    }

    /// Check the two fields share identical grids.
    pub fn same_grids(&self, other: &ValueField) -> Result<()> {
        if self.t != other.t || self.axes != other.axes || self.m != other.m {
            return Err(Error::Usage("value fields are on different grids".into()));
        }
        Ok(())
    }
}

/// Cell index and weight for `x` in an ascending grid, clamping to the hull.
#[inline]
fn locate(grid: &[f64], x: f64, clamped: &mut bool) -> (usize, f64) {
    let n = grid.len();
    if x <= grid[0] {
        *clamped |= x < grid[0];
        return (0, 0.0);
    }
    if x >= grid[n - 1] {
        *clamped |= x > grid[n - 1];
        return (n - 2, 1.0);
    }
    let i = (grid.partition_point(|&g| g <= x) - 1).min(n - 2);
    (i, (x - grid[i]) / (grid[i + 1] - grid[i]))
}
