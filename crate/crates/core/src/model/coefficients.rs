//! Closed coefficient families.
//!
//! Model coefficients are parametric families rather than arbitrary closures:
//! configs stay serializable and a run is fully determined by its input file
//! and seed. Tables interpolate bilinearly in `(t, x1)` and clamp outside
//! their hull.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Output shape of a coefficient field, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const fn scalar() -> Self {
        Shape { rows: 1, cols: 1 }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Regime-indexed coefficient function `(t, x, k) -> matrix`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum CoefficientField {
    /// Same value for every `(t, x)`.
    Constant { per_regime: Vec<DMatrix<f64>> },
    /// `intercept + slope * x`; vector-valued (column shape).
    Affine {
        intercept: Vec<DVector<f64>>,
        slope: Vec<DMatrix<f64>>,
    },
    /// `diag(x) * rate`: row `i` scales with state coordinate `x_i`. The
    /// standard lognormal-market parameterization on the positive orthant.
    StateScaled { per_regime: Vec<DMatrix<f64>> },
    /// Scalar value interpolated bilinearly in `(t, x1)` per regime.
    Tabulated {
        t_grid: Vec<f64>,
        x_grid: Vec<f64>,
        per_regime: Vec<DMatrix<f64>>,
    },
}

impl CoefficientField {
    /// Constant field of zeros with the given shape.
    pub fn zeros(shape: Shape, regimes: usize) -> Self {
        CoefficientField::Constant {
            per_regime: vec![DMatrix::zeros(shape.rows, shape.cols); regimes],
        }
    }

    pub fn regimes(&self) -> usize {
        match self {
            CoefficientField::Constant { per_regime } => per_regime.len(),
            CoefficientField::Affine { intercept, .. } => intercept.len(),
            CoefficientField::StateScaled { per_regime } => per_regime.len(),
            CoefficientField::Tabulated { per_regime, .. } => per_regime.len(),
        }
    }

    pub fn shape(&self) -> Shape {
        match self {
            CoefficientField::Constant { per_regime } | CoefficientField::StateScaled { per_regime } => {
                per_regime
                    .first()
                    .map(|m| Shape {
                        rows: m.nrows(),
                        cols: m.ncols(),
                    })
                    .unwrap_or(Shape::scalar())
            }
            CoefficientField::Affine { intercept, .. } => Shape {
                rows: intercept.first().map(|v| v.len()).unwrap_or(0),
                cols: 1,
            },
            CoefficientField::Tabulated { .. } => Shape::scalar(),
        }
    }

    /// Evaluate into a row-major buffer of length `shape().len()`.
    pub fn eval_into(&self, t: f64, x: &[f64], k: usize, out: &mut [f64]) {
        match self {
            CoefficientField::Constant { per_regime } => {
                let m = &per_regime[k];
                for (i, v) in out.iter_mut().enumerate() {
                    *v = m[(i / m.ncols(), i % m.ncols())];
                }
            }
            CoefficientField::Affine { intercept, slope } => {
                let a = &intercept[k];
                let b = &slope[k];
                for i in 0..a.len() {
                    let mut acc = a[i];
                    for (j, &xj) in x.iter().enumerate() {
                        acc += b[(i, j)] * xj;
                    }
                    out[i] = acc;
                }
            }
            CoefficientField::StateScaled { per_regime } => {
                let m = &per_regime[k];
                let cols = m.ncols();
                for i in 0..m.nrows() {
                    for j in 0..cols {
                        out[i * cols + j] = x[i] * m[(i, j)];
                    }
                }
            }
            CoefficientField::Tabulated {
                t_grid,
                x_grid,
                per_regime,
            } => {
                out[0] = bilinear_clamped(t_grid, x_grid, &per_regime[k], t, x[0]);
            }
        }
    }

    /// Allocating convenience wrapper around [`Self::eval_into`].
    pub fn eval(&self, t: f64, x: &[f64], k: usize) -> DMatrix<f64> {
        let shape = self.shape();
        let mut buf = vec![0.0; shape.len()];
        self.eval_into(t, x, k, &mut buf);
        DMatrix::from_row_slice(shape.rows, shape.cols, &buf)
    }

    /// Structural consistency against an expected shape and regime count.
    pub fn check_consistent(&self, what: &str, expect: Shape, regimes: usize, dim: usize) -> Result<()> {
        if self.regimes() != regimes {
            return Err(Error::ModelDefinition(format!(
                "{what}: {} regime entries, model has {regimes}",
                self.regimes()
            )));
        }
        let shape = self.shape();
        match self {
            CoefficientField::Constant { per_regime } | CoefficientField::StateScaled { per_regime } => {
                for (k, m) in per_regime.iter().enumerate() {
                    if m.nrows() != expect.rows || m.ncols() != expect.cols {
                        return Err(Error::ModelDefinition(format!(
                            "{what}: regime {k} has shape {}x{}, expected {}x{}",
                            m.nrows(),
                            m.ncols(),
                            expect.rows,
                            expect.cols
                        )));
                    }
                }
                if matches!(self, CoefficientField::StateScaled { .. }) && expect.rows != dim {
                    return Err(Error::ModelDefinition(format!(
                        "{what}: state-scaled fields need one row per state dimension"
                    )));
                }
            }
            CoefficientField::Affine { intercept, slope } => {
                if expect.cols != 1 {
                    return Err(Error::ModelDefinition(format!(
                        "{what}: affine fields are vector-valued, expected shape is {}x{}",
                        expect.rows, expect.cols
                    )));
                }
                for k in 0..intercept.len() {
                    if intercept[k].len() != expect.rows
                        || slope[k].nrows() != expect.rows
                        || slope[k].ncols() != dim
                    {
                        return Err(Error::ModelDefinition(format!(
                            "{what}: affine regime {k} dimensions do not match {}x{dim}",
                            expect.rows
                        )));
                    }
                }
            }
            CoefficientField::Tabulated {
                t_grid,
                x_grid,
                per_regime,
            } => {
                if expect != Shape::scalar() {
                    return Err(Error::ModelDefinition(format!(
                        "{what}: tabulated fields are scalar-valued"
                    )));
                }
                check_table(what, t_grid, x_grid, per_regime)?;
            }
        }
        if shape != expect && !matches!(self, CoefficientField::Affine { .. }) {
            return Err(Error::ModelDefinition(format!(
                "{what}: shape {}x{} does not match expected {}x{}",
                shape.rows, shape.cols, expect.rows, expect.cols
            )));
        }
        Ok(())
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self, CoefficientField::Tabulated { .. })
    }
}

/// Scalar function of `(t, x)` without regime indexing; used for switch
/// intensities and discount rates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ScalarField {
    Constant(f64),
    Affine { intercept: f64, slope: Vec<f64> },
    Tabulated {
        t_grid: Vec<f64>,
        x_grid: Vec<f64>,
        values: DMatrix<f64>,
    },
}

impl ScalarField {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            ScalarField::Constant(c) => *c,
            ScalarField::Affine { intercept, slope } => {
                let mut acc = *intercept;
                for (b, &xj) in slope.iter().zip(x) {
                    acc += b * xj;
                }
                acc
            }
            ScalarField::Tabulated {
                t_grid,
                x_grid,
                values,
            } => bilinear_clamped(t_grid, x_grid, values, t, x[0]),
        }
    }

    /// Supremum over the domain, where the family makes it knowable: tables
    /// and constants are bounded by construction, affine fields are not.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            ScalarField::Constant(c) => Some(*c),
            ScalarField::Affine { .. } => None,
            ScalarField::Tabulated { values, .. } => {
                Some(values.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            }
        }
    }

    /// Multiply the field by a constant factor.
    pub fn scaled(&self, factor: f64) -> ScalarField {
        match self {
            ScalarField::Constant(c) => ScalarField::Constant(c * factor),
            ScalarField::Affine { intercept, slope } => ScalarField::Affine {
                intercept: intercept * factor,
                slope: slope.iter().map(|b| b * factor).collect(),
            },
            ScalarField::Tabulated {
                t_grid,
                x_grid,
                values,
            } => ScalarField::Tabulated {
                t_grid: t_grid.clone(),
                x_grid: x_grid.clone(),
                values: values * factor,
            },
        }
    }

    pub fn check_consistent(&self, what: &str) -> Result<()> {
        match self {
            ScalarField::Constant(c) => {
                if !c.is_finite() {
                    return Err(Error::ModelDefinition(format!("{what}: non-finite constant")));
                }
            }
            ScalarField::Affine { intercept, slope } => {
                if !intercept.is_finite() || slope.iter().any(|b| !b.is_finite()) {
                    return Err(Error::ModelDefinition(format!("{what}: non-finite coefficients")));
                }
            }
            ScalarField::Tabulated {
                t_grid,
                x_grid,
                values,
            } => check_table(what, t_grid, x_grid, std::slice::from_ref(values))?,
        }
        Ok(())
    }

    pub fn is_tabulated(&self) -> bool {
        matches!(self, ScalarField::Tabulated { .. })
    }
}

fn check_table(what: &str, t_grid: &[f64], x_grid: &[f64], tables: &[DMatrix<f64>]) -> Result<()> {
    if t_grid.len() < 2 || x_grid.len() < 2 {
        return Err(Error::ModelDefinition(format!(
            "{what}: tables need at least 2 nodes per axis"
        )));
    }
    if !strictly_increasing(t_grid) || !strictly_increasing(x_grid) {
        return Err(Error::ModelDefinition(format!(
            "{what}: table grids must be strictly increasing"
        )));
    }
    for (k, v) in tables.iter().enumerate() {
        if v.nrows() != t_grid.len() || v.ncols() != x_grid.len() {
            return Err(Error::ModelDefinition(format!(
                "{what}: table {k} is {}x{}, grids imply {}x{}",
                v.nrows(),
                v.ncols(),
                t_grid.len(),
                x_grid.len()
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::ModelDefinition(format!("{what}: non-finite table value")));
        }
    }
    Ok(())
}

pub(crate) fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] > w[0])
}

/// Locate `x` in an ascending grid: returns the left cell index and the local
/// weight in `[0, 1]`, clamping outside the hull.
pub(crate) fn locate_clamped(grid: &[f64], x: f64) -> (usize, f64) {
    let n = grid.len();
    if x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[n - 1] {
        return (n - 2, 1.0);
    }
    let i = grid.partition_point(|&g| g <= x) - 1;
    let i = i.min(n - 2);
    let w = (x - grid[i]) / (grid[i + 1] - grid[i]);
    (i, w)
}

fn bilinear_clamped(t_grid: &[f64], x_grid: &[f64], values: &DMatrix<f64>, t: f64, x: f64) -> f64 {
    let (it, wt) = locate_clamped(t_grid, t);
    let (ix, wx) = locate_clamped(x_grid, x);
    let v00 = values[(it, ix)];
    let v01 = values[(it, ix + 1)];
    let v10 = values[(it + 1, ix)];
    let v11 = values[(it + 1, ix + 1)];
    (1.0 - wt) * ((1.0 - wx) * v00 + wx * v01) + wt * ((1.0 - wx) * v10 + wx * v11)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_eval() {
        let f = CoefficientField::Constant {
            per_regime: vec![DMatrix::from_row_slice(1, 2, &[0.3, -0.1])],
        };
        let out = f.eval(0.5, &[2.0], 0);
        assert_eq!(out[(0, 0)], 0.3);
        assert_eq!(out[(0, 1)], -0.1);
    }

    #[test]
    fn state_scaled_multiplies_rows() {
        let f = CoefficientField::StateScaled {
            per_regime: vec![DMatrix::from_row_slice(2, 1, &[0.2, 0.5])],
        };
        let out = f.eval(0.0, &[3.0, 4.0], 0);
        assert_relative_eq!(out[(0, 0)], 0.6, epsilon = 1e-15);
        assert_eq!(out[(1, 0)], 2.0);
    }

    #[test]
    fn affine_eval() {
        let f = CoefficientField::Affine {
            intercept: vec![DVector::from_row_slice(&[1.0])],
            slope: vec![DMatrix::from_row_slice(1, 2, &[2.0, -1.0])],
        };
        let out = f.eval(0.0, &[1.5, 0.5], 0);
        assert_relative_eq!(out[(0, 0)], 1.0 + 3.0 - 0.5);
    }

    #[test]
    fn table_interpolates_and_clamps() {
        let f = ScalarField::Tabulated {
            t_grid: vec![0.0, 1.0],
            x_grid: vec![1.0, 2.0],
            values: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 3.0]),
        };
        assert_relative_eq!(f.eval(0.5, &[1.5]), 1.5);
        // clamped corners
        assert_relative_eq!(f.eval(-1.0, &[0.0]), 0.0);
        assert_relative_eq!(f.eval(9.0, &[9.0]), 3.0);
    }

    #[test]
    fn scaled_scalar_field() {
        let f = ScalarField::Constant(0.5).scaled(3.0);
        assert_eq!(f.eval(0.0, &[0.0]), 1.5);
    }

    #[test]
    fn locate_interior_and_edges() {
        let g = [0.0, 1.0, 3.0];
        assert_eq!(locate_clamped(&g, -1.0), (0, 0.0));
        let (i, w) = locate_clamped(&g, 2.0);
        assert_eq!(i, 1);
        assert_relative_eq!(w, 0.5);
        assert_eq!(locate_clamped(&g, 5.0), (1, 1.0));
    }
}
