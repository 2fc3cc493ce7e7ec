//! The backward marching engine behind [`solve_system`].
//!
//! Time stepping is a theta-scheme: drift, diffusion and discount go into
//! the implicit side, the regime-coupling reaction is resolved by damped
//! fixed-point sweeps within each step, and the leading steps next to the
//! terminal layer are taken as pairs of fully implicit half-steps so that
//! non-smooth terminal data cannot seed oscillations. In two dimensions
//! each step splits into Douglas alternating-direction stages with the
//! mixed second derivative applied explicitly.
//!
//! All spatial stencils are three-point and spacing-aware, so uniform and
//! log-spaced axes are handled identically. Boundary faces carry no
//! equations: a face value is either pinned to the terminal payoff or
//! eliminated through a vanishing-curvature extrapolation, and the face is
//! reconstructed after each interior solve.

use rayon::prelude::*;

use crate::field::{uniform_grid, ValueField};
use crate::pde::{BoundaryCondition, PdeProblem, PdeVariant};
use crate::{Error, Result};

/// Condition-estimate ceiling for a single tridiagonal marching system.
pub(crate) const CONDITION_LIMIT: f64 = 1e8;

/// Implicit weight of the regular steps (Crank–Nicolson).
const THETA: f64 = 0.5;

/// Diagnostics accumulated over one backward march.
#[derive(Clone, Copy, Debug, Default)]
pub struct SolveDetail {
    /// Backward steps actually taken; damped half-steps count individually.
    pub steps: usize,
    /// Reaction sweeps summed over all steps.
    pub picard_total: usize,
    /// Largest sweep count any single step needed.
    pub picard_max: usize,
    /// Largest condition estimate among all tridiagonal systems solved.
    pub condition_max: f64,
}

/// Solve the coupled terminal-value problem and return the value field on
/// the full time grid.
pub fn solve_system(problem: &PdeProblem) -> Result<ValueField> {
    solve_system_detailed(problem).map(|(field, _)| field)
}

/// [`solve_system`] plus marching diagnostics.
pub fn solve_system_detailed(problem: &PdeProblem) -> Result<(ValueField, SolveDetail)> {
    problem.validate()?;
    let marcher = Marcher::new(problem);
    let mut field = ValueField::zeros(
        marcher.t_grid.clone(),
        marcher.axes.clone(),
        problem.model.regimes,
    );
    field.set_terminal(|x, k| problem.claim.terminal_value(x, k));
    let mut detail = SolveDetail::default();
    marcher.march(&mut field, &mut detail)?;
    Ok((field, detail))
}

/// One axis of the spatial operator sampled at every grid node: the
/// three-point coupling `l * v(prev) + c * v(node) + r * v(next)` along that
/// axis. Rows on the axis faces stay identically zero.
struct AxisOp {
    l: Vec<f64>,
    c: Vec<f64>,
    r: Vec<f64>,
}

impl AxisOp {
    fn zeros(space: usize) -> Self {
        AxisOp {
            l: vec![0.0; space],
            c: vec![0.0; space],
            r: vec![0.0; space],
        }
    }
}

/// One tridiagonal interior system along a grid line, with the face values
/// already eliminated into the matrix (vanishing curvature) or the
/// right-hand side (pinned payoff).
struct TriLine {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    /// Right-hand-side additions at the first/last interior row from a
    /// pinned face value.
    rhs_lo: f64,
    rhs_hi: f64,
}

struct Marcher<'a> {
    p: &'a PdeProblem,
    axes: Vec<Vec<f64>>,
    n: Vec<usize>,
    space: usize,
    d: usize,
    m: usize,
    /// Node coordinates, `d` per flat index, axis `d-1` fastest.
    coords: Vec<f64>,
    t_grid: Vec<f64>,
}

impl<'a> Marcher<'a> {
    fn new(p: &'a PdeProblem) -> Self {
        let axes: Vec<Vec<f64>> = p.axes.iter().map(|ax| ax.build()).collect();
        let n: Vec<usize> = axes.iter().map(Vec::len).collect();
        let space: usize = n.iter().product();
        let d = axes.len();
        let m = p.model.regimes;
        let mut coords = vec![0.0; space * d];
        for flat in 0..space {
            let mut rem = flat;
            for ax in (0..d).rev() {
                coords[flat * d + ax] = axes[ax][rem % n[ax]];
                rem /= n[ax];
            }
        }
        let t_grid = uniform_grid(0.0, p.model.horizon, p.t_steps + 1);
        Marcher {
            p,
            axes,
            n,
            space,
            d,
            m,
            coords,
            t_grid,
        }
    }

    #[inline]
    fn coord(&self, flat: usize) -> &[f64] {
        &self.coords[flat * self.d..(flat + 1) * self.d]
    }

    /// Index of a flat node along one axis.
    #[inline]
    fn axis_index(&self, flat: usize, axis: usize) -> usize {
        let mut rem = flat;
        for ax in axis + 1..self.d {
            rem /= self.n[ax];
        }
        rem % self.n[axis]
    }

    /// Distance between neighbours along `axis` in the flat ordering.
    #[inline]
    fn axis_stride(&self, axis: usize) -> usize {
        self.n[axis + 1..].iter().product()
    }

    /// First-order coefficient in front of the gradient, by variant.
    fn drift_at(&self, t: f64, x: &[f64], k: usize, out: &mut [f64]) {
        match self.p.variant {
            PdeVariant::Hedging => out.fill(0.0),
            PdeVariant::CrashAtDefault => self
                .p
                .drift_override
                .as_ref()
                .expect("validated: override required")
                .eval_into(t, x, k, out),
            PdeVariant::Valuation | PdeVariant::CouplingOnly => match &self.p.drift_override {
                Some(field) => field.eval_into(t, x, k, out),
                None => self.p.model.drift_into(t, x, k, out),
            },
        }
    }

    /// Signed zeroth-order coefficient `c` (a plain discount is negative).
    fn discount_at(&self, t: f64, x: &[f64], k: usize) -> f64 {
        match self.p.variant {
            PdeVariant::CouplingOnly => 0.0,
            _ => self.p.claim.discount_rate(t, x, k),
        }
    }

    /// Reaction `g_k(t, x, v)` coupling the regime layers.
    fn reaction(&self, t: f64, x: &[f64], v_node: &[f64], k: usize) -> f64 {
        let q = &self.p.model.intensities;
        match self.p.variant {
            PdeVariant::CouplingOnly => {
                let mut acc = 0.0;
                for &j in q.live_targets(k) {
                    acc += q.rate(t, x, k, j) * (v_node[j] - v_node[k]);
                }
                acc
            }
            _ => self.p.claim.interaction_g(q, t, x, v_node, k),
        }
    }

    /// Assemble the along-`axis` part of the spatial operator at time `t`
    /// for regime `k`: drift component, half the second derivative in that
    /// axis, and this axis's share of the discount.
    fn assemble_axis(&self, t: f64, k: usize, axis: usize) -> AxisOp {
        let mut op = AxisOp::zeros(self.space);
        let x_ax = &self.axes[axis];
        let n_ax = self.n[axis];
        let c_share = 1.0 / self.d as f64;
        let noise = self.p.model.noise_dim;
        let mut gamma = vec![0.0; self.d];
        let mut sigma = vec![0.0; self.d * noise];
        let mut a = vec![0.0; self.d * self.d];
        for flat in 0..self.space {
            let i_ax = self.axis_index(flat, axis);
            if i_ax == 0 || i_ax == n_ax - 1 {
                continue;
            }
            let x = self.coord(flat);
            self.drift_at(t, x, k, &mut gamma);
            self.p.model.diffusion_into(t, x, k, &mut sigma, &mut a);
            let c = self.discount_at(t, x, k);
            let hm = x_ax[i_ax] - x_ax[i_ax - 1];
            let hp = x_ax[i_ax + 1] - x_ax[i_ax];
            let den = hm + hp;
            let g = gamma[axis];
            let aa = a[axis * self.d + axis];
            op.l[flat] = -g * hp / (hm * den) + aa / (hm * den);
            op.c[flat] = g * (hp - hm) / (hm * hp) - aa / (hm * hp) + c_share * c;
            op.r[flat] = g * hm / (hp * den) + aa / (hp * den);
        }
        op
    }

    /// `out[flat] = (Op w_k)(flat)`; zero on the faces of the axis.
    fn apply_axis_op(&self, op: &AxisOp, w: &[f64], k: usize, axis: usize, out: &mut [f64]) {
        let s = self.axis_stride(axis) * self.m;
        for flat in 0..self.space {
            // Face rows carry identically zero coefficients and are never
            // indexed; an all-zero interior row evaluates to zero anyway.
            if op.l[flat] == 0.0 && op.c[flat] == 0.0 && op.r[flat] == 0.0 {
                out[flat] = 0.0;
                continue;
            }
            let idx = flat * self.m + k;
            out[flat] = op.l[flat] * w[idx - s] + op.c[flat] * w[idx] + op.r[flat] * w[idx + s];
        }
    }

    /// Mixed-derivative weight `a_12 / ((x1_+ - x1_-)(x2_+ - x2_-))` per
    /// node; zero on the boundary frame. Two dimensions only.
    fn assemble_cross(&self, t: f64, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.space];
        let (n1, n2) = (self.n[0], self.n[1]);
        let noise = self.p.model.noise_dim;
        let mut sigma = vec![0.0; self.d * noise];
        let mut a = vec![0.0; self.d * self.d];
        for i1 in 1..n1 - 1 {
            for i2 in 1..n2 - 1 {
                let flat = i1 * n2 + i2;
                let x = self.coord(flat);
                self.p.model.diffusion_into(t, x, k, &mut sigma, &mut a);
                let span1 = self.axes[0][i1 + 1] - self.axes[0][i1 - 1];
                let span2 = self.axes[1][i2 + 1] - self.axes[1][i2 - 1];
                out[flat] = a[1] / (span1 * span2);
            }
        }
        out
    }

    /// `out[flat] = a_12 d^2 w_k / dx1 dx2` by the four-point corner stencil.
    fn apply_cross(&self, cw: &[f64], w: &[f64], k: usize, out: &mut [f64]) {
        let s1 = self.n[1] * self.m;
        let s2 = self.m;
        for flat in 0..self.space {
            let c = cw[flat];
            if c == 0.0 {
                out[flat] = 0.0;
                continue;
            }
            let idx = flat * self.m + k;
            out[flat] =
                c * (w[idx + s1 + s2] - w[idx + s1 - s2] - w[idx - s1 + s2] + w[idx - s1 - s2]);
        }
    }

    /// Extract the implicit interior system for one grid line running along
    /// `axis`, starting at flat index `base`.
    fn build_line(&self, op: &AxisOp, axis: usize, base: usize, theta_dt: f64, k: usize) -> TriLine {
        let s = self.axis_stride(axis);
        let x_ax = &self.axes[axis];
        let n_ax = self.n[axis];
        let nu = n_ax - 2;
        let mut sub = vec![0.0; nu];
        let mut diag = vec![0.0; nu];
        let mut sup = vec![0.0; nu];
        for i in 1..=nu {
            let flat = base + i * s;
            sub[i - 1] = -theta_dt * op.l[flat];
            diag[i - 1] = 1.0 - theta_dt * op.c[flat];
            sup[i - 1] = -theta_dt * op.r[flat];
        }
        let mut rhs_lo = 0.0;
        let mut rhs_hi = 0.0;
        let l_first = op.l[base + s];
        match self.p.boundary[axis][0] {
            BoundaryCondition::PayoffValue => {
                let hval = self.p.claim.terminal_value(self.coord(base), k);
                rhs_lo = theta_dt * l_first * hval;
            }
            BoundaryCondition::ZeroCurvature => {
                let q = (x_ax[1] - x_ax[0]) / (x_ax[2] - x_ax[1]);
                diag[0] += -theta_dt * l_first * (1.0 + q);
                sup[0] += theta_dt * l_first * q;
            }
        }
        let r_last = op.r[base + nu * s];
        match self.p.boundary[axis][1] {
            BoundaryCondition::PayoffValue => {
                let hval = self
                    .p
                    .claim
                    .terminal_value(self.coord(base + (n_ax - 1) * s), k);
                rhs_hi = theta_dt * r_last * hval;
            }
            BoundaryCondition::ZeroCurvature => {
                let q = (x_ax[n_ax - 1] - x_ax[n_ax - 2]) / (x_ax[n_ax - 2] - x_ax[n_ax - 3]);
                diag[nu - 1] += -theta_dt * r_last * (1.0 + q);
                sub[nu - 1] += theta_dt * r_last * q;
            }
        }
        TriLine {
            sub,
            diag,
            sup,
            rhs_lo,
            rhs_hi,
        }
    }

    /// Reconstruct one face value from the interior next to it.
    #[inline]
    fn face_value(
        &self,
        bc: BoundaryCondition,
        face_flat: usize,
        k: usize,
        q: f64,
        v1: f64,
        v2: f64,
    ) -> f64 {
        match bc {
            BoundaryCondition::PayoffValue => {
                self.p.claim.terminal_value(self.coord(face_flat), k)
            }
            BoundaryCondition::ZeroCurvature => (1.0 + q) * v1 - q * v2,
        }
    }

    /// Extrapolation weight for the low face of `axis`.
    fn q_lo(&self, axis: usize) -> f64 {
        let x = &self.axes[axis];
        (x[1] - x[0]) / (x[2] - x[1])
    }

    /// Extrapolation weight for the high face of `axis`.
    fn q_hi(&self, axis: usize) -> f64 {
        let x = &self.axes[axis];
        let n = x.len();
        (x[n - 1] - x[n - 2]) / (x[n - 2] - x[n - 3])
    }

    fn march(&self, field: &mut ValueField, detail: &mut SolveDetail) -> Result<()> {
        let nt = self.t_grid.len();
        for it in (0..nt - 1).rev() {
            let t0 = self.t_grid[it];
            let t1 = self.t_grid[it + 1];
            let w = field.layer(it + 1).to_vec();
            let from_terminal = nt - 2 - it;
            let u = if from_terminal < self.p.rannacher_steps {
                let tm = 0.5 * (t0 + t1);
                let half = self.step(tm, t1, 1.0, &w, it, detail)?;
                self.step(t0, tm, 1.0, &half, it, detail)?
            } else {
                self.step(t0, t1, THETA, &w, it, detail)?
            };
            field.layer_mut(it).copy_from_slice(&u);
        }
        Ok(())
    }

    fn step(
        &self,
        t0: f64,
        t1: f64,
        theta: f64,
        w: &[f64],
        it: usize,
        detail: &mut SolveDetail,
    ) -> Result<Vec<f64>> {
        detail.steps += 1;
        match self.d {
            1 => self.step_1d(t0, t1, theta, w, it, detail),
            2 => self.step_2d(t0, t1, theta, w, it, detail),
            _ => unreachable!("validated: one or two dimensions"),
        }
    }

    /// Shared tail of a step: run the merged sweep bookkeeping. Returns the
    /// converged field or the stall error.
    fn sweep_loop(
        &self,
        w: &[f64],
        it: usize,
        detail: &mut SolveDetail,
        mut one_pass: impl FnMut(&[f64]) -> Result<Vec<Vec<f64>>>,
    ) -> Result<Vec<f64>> {
        let scale = 1.0f64.max(w.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
        let tol = self.p.picard.tol * scale;
        let mut cur = w.to_vec();
        let mut resid = f64::INFINITY;
        for pass in 1..=self.p.picard.max_iters {
            let layers = one_pass(&cur)?;
            resid = 0.0;
            for (k, lay) in layers.iter().enumerate() {
                for flat in 0..self.space {
                    let idx = flat * self.m + k;
                    let diff = (lay[flat] - cur[idx]).abs();
                    if diff > resid {
                        resid = diff;
                    }
                    cur[idx] = lay[flat];
                }
            }
            detail.picard_total += 1;
            if resid <= tol {
                detail.picard_max = detail.picard_max.max(pass);
                return Ok(cur);
            }
        }
        Err(Error::PicardStall {
            step: it,
            iters: self.p.picard.max_iters,
            residual: resid,
        })
    }

    fn step_1d(
        &self,
        t0: f64,
        t1: f64,
        theta: f64,
        w: &[f64],
        it: usize,
        detail: &mut SolveDetail,
    ) -> Result<Vec<f64>> {
        let dt = t1 - t0;
        let theta_dt = theta * dt;
        let n = self.n[0];
        let m = self.m;

        struct Prep {
            line: TriLine,
            rhs_base: Vec<f64>,
            cond: f64,
        }

        let preps: Vec<Prep> = (0..m)
            .into_par_iter()
            .map(|k| -> Result<Prep> {
                let op0 = self.assemble_axis(t0, k, 0);
                let line = self.build_line(&op0, 0, 0, theta_dt, k);
                let cond = check_condition(
                    &line.sub,
                    &line.diag,
                    &line.sup,
                    || format!("backward step {it}, regime {k}"),
                )?;
                let mut rhs_base = vec![0.0; n - 2];
                if theta < 1.0 {
                    let op1 = self.assemble_axis(t1, k, 0);
                    let mut lw = vec![0.0; self.space];
                    self.apply_axis_op(&op1, w, k, 0, &mut lw);
                    for i in 1..n - 1 {
                        let re = self.reaction(t1, self.coord(i), &w[i * m..(i + 1) * m], k);
                        rhs_base[i - 1] = w[i * m + k] + dt * (1.0 - theta) * (lw[i] + re);
                    }
                } else {
                    for i in 1..n - 1 {
                        rhs_base[i - 1] = w[i * m + k];
                    }
                }
                rhs_base[0] += line.rhs_lo;
                rhs_base[n - 3] += line.rhs_hi;
                Ok(Prep {
                    line,
                    rhs_base,
                    cond,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for p in &preps {
            detail.condition_max = detail.condition_max.max(p.cond);
        }

        let (q0, q1) = (self.q_lo(0), self.q_hi(0));
        self.sweep_loop(w, it, detail, |cur| {
            (0..m)
                .into_par_iter()
                .map(|k| -> Result<Vec<f64>> {
                    let prep = &preps[k];
                    let mut rhs = prep.rhs_base.clone();
                    for i in 1..n - 1 {
                        rhs[i - 1] += theta_dt
                            * self.reaction(t0, self.coord(i), &cur[i * m..(i + 1) * m], k);
                    }
                    let sol = thomas_solve(&prep.line.sub, &prep.line.diag, &prep.line.sup, &rhs)?;
                    let mut full = vec![0.0; n];
                    full[1..n - 1].copy_from_slice(&sol);
                    full[0] =
                        self.face_value(self.p.boundary[0][0], 0, k, q0, full[1], full[2]);
                    full[n - 1] = self.face_value(
                        self.p.boundary[0][1],
                        n - 1,
                        k,
                        q1,
                        full[n - 2],
                        full[n - 3],
                    );
                    Ok(full)
                })
                .collect::<Result<Vec<_>>>()
        })
    }

    fn step_2d(
        &self,
        t0: f64,
        t1: f64,
        theta: f64,
        w: &[f64],
        it: usize,
        detail: &mut SolveDetail,
    ) -> Result<Vec<f64>> {
        let dt = t1 - t0;
        let theta_dt = theta * dt;
        let (n1, n2) = (self.n[0], self.n[1]);
        let m = self.m;

        struct Prep {
            /// Axis-1 lines at fixed interior `i2` (index `i2 - 1`).
            lines1: Vec<TriLine>,
            /// Axis-2 lines at fixed interior `i1` (index `i1 - 1`).
            lines2: Vec<TriLine>,
            /// Explicit applications at the known layer's time.
            l1w: Vec<f64>,
            l2w: Vec<f64>,
            /// Predictor right-hand side without the implicit reaction part.
            rhs_base: Vec<f64>,
            cond: f64,
        }

        let preps: Vec<Prep> = (0..m)
            .into_par_iter()
            .map(|k| -> Result<Prep> {
                let op1_0 = self.assemble_axis(t0, k, 0);
                let op2_0 = self.assemble_axis(t0, k, 1);
                let op1_1 = self.assemble_axis(t1, k, 0);
                let op2_1 = self.assemble_axis(t1, k, 1);
                let cross = self.assemble_cross(t1, k);

                let mut cond = 0.0f64;
                let mut lines1 = Vec::with_capacity(n2 - 2);
                for i2 in 1..n2 - 1 {
                    let line = self.build_line(&op1_0, 0, i2, theta_dt, k);
                    cond = cond.max(check_condition(&line.sub, &line.diag, &line.sup, || {
                        format!("backward step {it}, regime {k}, first axis, lane {i2}")
                    })?);
                    lines1.push(line);
                }
                let mut lines2 = Vec::with_capacity(n1 - 2);
                for i1 in 1..n1 - 1 {
                    let line = self.build_line(&op2_0, 1, i1 * n2, theta_dt, k);
                    cond = cond.max(check_condition(&line.sub, &line.diag, &line.sup, || {
                        format!("backward step {it}, regime {k}, second axis, lane {i1}")
                    })?);
                    lines2.push(line);
                }

                let mut l1w = vec![0.0; self.space];
                let mut l2w = vec![0.0; self.space];
                let mut crw = vec![0.0; self.space];
                self.apply_axis_op(&op1_1, w, k, 0, &mut l1w);
                self.apply_axis_op(&op2_1, w, k, 1, &mut l2w);
                self.apply_cross(&cross, w, k, &mut crw);

                let mut rhs_base = vec![0.0; self.space];
                for i1 in 1..n1 - 1 {
                    for i2 in 1..n2 - 1 {
                        let flat = i1 * n2 + i2;
                        let mut acc =
                            w[flat * m + k] + dt * (l1w[flat] + l2w[flat] + crw[flat]);
                        if theta < 1.0 {
                            let re = self.reaction(
                                t1,
                                self.coord(flat),
                                &w[flat * m..(flat + 1) * m],
                                k,
                            );
                            acc += dt * (1.0 - theta) * re;
                        }
                        rhs_base[flat] = acc;
                    }
                }
                Ok(Prep {
                    lines1,
                    lines2,
                    l1w,
                    l2w,
                    rhs_base,
                    cond,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        for p in &preps {
            detail.condition_max = detail.condition_max.max(p.cond);
        }

        let (q1_lo, q1_hi) = (self.q_lo(0), self.q_hi(0));
        let (q2_lo, q2_hi) = (self.q_lo(1), self.q_hi(1));
        self.sweep_loop(w, it, detail, |cur| {
            (0..m)
                .into_par_iter()
                .map(|k| -> Result<Vec<f64>> {
                    let prep = &preps[k];

                    // First stage: implicit along axis 1, one tridiagonal
                    // system per interior lane of axis 2.
                    let mut y1 = vec![0.0; self.space];
                    for i2 in 1..n2 - 1 {
                        let line = &prep.lines1[i2 - 1];
                        let mut rhs = vec![0.0; n1 - 2];
                        for i1 in 1..n1 - 1 {
                            let flat = i1 * n2 + i2;
                            let re = self.reaction(
                                t0,
                                self.coord(flat),
                                &cur[flat * m..(flat + 1) * m],
                                k,
                            );
                            rhs[i1 - 1] =
                                prep.rhs_base[flat] + theta_dt * re - theta_dt * prep.l1w[flat];
                        }
                        rhs[0] += line.rhs_lo;
                        rhs[n1 - 3] += line.rhs_hi;
                        let sol = thomas_solve(&line.sub, &line.diag, &line.sup, &rhs)?;
                        for i1 in 1..n1 - 1 {
                            y1[i1 * n2 + i2] = sol[i1 - 1];
                        }
                    }

                    // Second stage: implicit along axis 2, per interior lane
                    // of axis 1.
                    let mut full = vec![0.0; self.space];
                    for i1 in 1..n1 - 1 {
                        let line = &prep.lines2[i1 - 1];
                        let mut rhs = vec![0.0; n2 - 2];
                        for i2 in 1..n2 - 1 {
                            let flat = i1 * n2 + i2;
                            rhs[i2 - 1] = y1[flat] - theta_dt * prep.l2w[flat];
                        }
                        rhs[0] += line.rhs_lo;
                        rhs[n2 - 3] += line.rhs_hi;
                        let sol = thomas_solve(&line.sub, &line.diag, &line.sup, &rhs)?;
                        for i2 in 1..n2 - 1 {
                            full[i1 * n2 + i2] = sol[i2 - 1];
                        }
                    }

                    // Boundary reconstruction: axis-1 faces over interior
                    // axis-2 lanes first, then axis-2 faces over every lane
                    // so the corners extend the just-filled face values.
                    let bc1 = self.p.boundary[0];
                    for i2 in 1..n2 - 1 {
                        full[i2] = self.face_value(
                            bc1[0],
                            i2,
                            k,
                            q1_lo,
                            full[n2 + i2],
                            full[2 * n2 + i2],
                        );
                        full[(n1 - 1) * n2 + i2] = self.face_value(
                            bc1[1],
                            (n1 - 1) * n2 + i2,
                            k,
                            q1_hi,
                            full[(n1 - 2) * n2 + i2],
                            full[(n1 - 3) * n2 + i2],
                        );
                    }
                    let bc2 = self.p.boundary[1];
                    for i1 in 0..n1 {
                        let row = i1 * n2;
                        full[row] = self.face_value(
                            bc2[0],
                            row,
                            k,
                            q2_lo,
                            full[row + 1],
                            full[row + 2],
                        );
                        full[row + n2 - 1] = self.face_value(
                            bc2[1],
                            row + n2 - 1,
                            k,
                            q2_hi,
                            full[row + n2 - 2],
                            full[row + n2 - 3],
                        );
                    }
                    Ok(full)
                })
                .collect::<Result<Vec<_>>>()
        })
    }
}

/// Solve a tridiagonal system by the Thomas recursion. `sub[0]` and
/// `sup[n-1]` are ignored.
pub(crate) fn thomas_solve(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let n = diag.len();
    debug_assert!(sub.len() == n && sup.len() == n && rhs.len() == n);
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut beta = diag[0];
    if beta.abs() < f64::MIN_POSITIVE {
        return Err(Error::Numerical(
            "tridiagonal pivot vanished at row 0".into(),
        ));
    }
    c[0] = sup[0] / beta;
    x[0] = rhs[0] / beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if beta.abs() < f64::MIN_POSITIVE {
            return Err(Error::Numerical(format!(
                "tridiagonal pivot vanished at row {i}"
            )));
        }
        c[i] = sup[i] / beta;
        x[i] = (rhs[i] - sub[i] * x[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Cheap lower bound for the infinity-norm condition number: the row-sum
/// norm of the matrix times the largest response to two fixed probe vectors
/// (all ones, alternating signs).
pub(crate) fn condition_estimate(sub: &[f64], diag: &[f64], sup: &[f64]) -> f64 {
    let n = diag.len();
    let mut norm_a = 0.0f64;
    for i in 0..n {
        let mut row = diag[i].abs();
        if i > 0 {
            row += sub[i].abs();
        }
        if i + 1 < n {
            row += sup[i].abs();
        }
        norm_a = norm_a.max(row);
    }
    let mut inv_norm = 0.0f64;
    for probe in 0..2 {
        let rhs: Vec<f64> = (0..n)
            .map(|i| if probe == 0 || i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        match thomas_solve(sub, diag, sup, &rhs) {
            Ok(sol) => {
                let amp = sol.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                inv_norm = inv_norm.max(amp);
            }
            Err(_) => return f64::INFINITY,
        }
    }
    norm_a * inv_norm
}

/// Fail when the condition estimate exceeds the trust ceiling.
pub(crate) fn check_condition(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    context: impl Fn() -> String,
) -> Result<f64> {
    let estimate = condition_estimate(sub, diag, sup);
    if !(estimate <= CONDITION_LIMIT) {
        return Err(Error::IllConditioned {
            estimate,
            limit: CONDITION_LIMIT,
            context: context(),
        });
    }
    Ok(estimate)
}
