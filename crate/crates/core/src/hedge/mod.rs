//! Locally risk-minimizing hedging from a solved value field.
//!
//! Once the value system has been marched under the drift-free variant, any
//! claim splits into an initial capital, a gradient position in the traded
//! state, and a jump martingale orthogonal to the continuous part. The
//! submodules verify that split pathwise along simulated bundles, check the
//! valuation recursion by restarting simulations from interior points, and
//! run the completed-market replication where a defaultable bond trades
//! alongside the state.

mod decompose;
mod recursive;
mod replicate;

pub use decompose::{
    build_hedge, orthogonality_check, HedgeConfig, HedgeReport, OrthogonalityReport,
};
pub use recursive::{
    recursive_value_check, Probe, RecursiveCheckConfig, RecursiveCheckReport,
    RecursiveProbeRecord,
};
pub use replicate::{replicate_completed_market, ReplicationConfig, ReplicationReport};

use crate::field::ValueField;

/// Nodal spatial derivative of a field along one axis: second-order central
/// differences at interior nodes, second-order one-sided stencils on the two
/// hull faces, applied layer by layer and regime by regime. The result lives
/// on the same grid as the input and is read along paths by interpolation,
/// which keeps the hedge ratio consistent with the solved surface.
pub(crate) fn gradient_field(field: &ValueField, axis: usize) -> ValueField {
    let axes = field.axes().to_vec();
    let t = field.t_grid().to_vec();
    let m = field.regimes();
    let d = field.dim();
    assert!(axis < d, "gradient axis out of range");
    let xs = &axes[axis];
    let n_axis = xs.len();
    let stride: usize = axes[axis + 1..].iter().map(|a| a.len()).product();
    let space = field.space_count();

    // Three-point first-derivative weights per axis index, precomputed once:
    // (offset in nodes, three weights). Interior nodes use (i-1, i, i+1);
    // the faces use the three nearest nodes one-sidedly.
    let mut stencils = Vec::with_capacity(n_axis);
    for i in 0..n_axis {
        if i == 0 {
            let h1 = xs[1] - xs[0];
            let h2 = xs[2] - xs[1];
            stencils.push((
                0usize,
                [
                    -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
                    (h1 + h2) / (h1 * h2),
                    -h1 / (h2 * (h1 + h2)),
                ],
            ));
        } else if i == n_axis - 1 {
            let h1 = xs[n_axis - 1] - xs[n_axis - 2];
            let h2 = xs[n_axis - 2] - xs[n_axis - 3];
            stencils.push((
                n_axis - 3,
                [
                    h1 / (h2 * (h1 + h2)),
                    -(h1 + h2) / (h1 * h2),
                    (2.0 * h1 + h2) / (h1 * (h1 + h2)),
                ],
            ));
        } else {
            let hm = xs[i] - xs[i - 1];
            let hp = xs[i + 1] - xs[i];
            let den = hm + hp;
            stencils.push((
                i - 1,
                [-hp / (hm * den), (hp - hm) / (hm * hp), hm / (hp * den)],
            ));
        }
    }

    let mut out = ValueField::zeros(t, axes, m);
    for it in 0..field.t_grid().len() {
        let src = field.layer(it).to_vec();
        let dst = out.layer_mut(it);
        for flat in 0..space {
            let i = (flat / stride) % n_axis;
            let base = flat - i * stride;
            let (start, w) = stencils[i];
            for k in 0..m {
                // Differencing against the node's own value is algebraically
                // neutral (the weights kill constants) but makes locally
                // flat data differentiate to an exact floating-point zero.
                let center = src[flat * m + k];
                let mut acc = 0.0;
                for (o, &wo) in w.iter().enumerate() {
                    acc += wo * (src[(base + (start + o) * stride) * m + k] - center);
                }
                dst[flat * m + k] = acc;
            }
        }
    }
    out
}
