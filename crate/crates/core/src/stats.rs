//! Order-fixed reductions and sample statistics.
//!
//! All estimators in this crate reduce per-path results in path-index order
//! with a cascade sum, so a run is bit-identical however work was scheduled
//! across threads.

/// Cascade (pairwise) sum over the slice order: deterministic for a fixed
/// input order and accurate to O(log n) rounding steps.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Root mean square of a sample.
pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
    (pairwise_sum(&sq) / xs.len() as f64).sqrt()
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SampleStats {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean.
    pub se: f64,
}

pub fn sample_stats(xs: &[f64]) -> SampleStats {
    assert!(!xs.is_empty(), "statistics of an empty sample");
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return SampleStats {
            n,
            mean,
            variance: 0.0,
            se: 0.0,
        };
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let variance = pairwise_sum(&sq) / (n - 1) as f64;
    SampleStats {
        n,
        mean,
        variance,
        se: (variance / n as f64).sqrt(),
    }
}

impl SampleStats {
    /// `|mean - target| <= sigmas * se + floor`. The floor keeps checks against
    /// exact-arithmetic cases honest when the sample variance is zero.
    pub fn mean_within(&self, target: f64, sigmas: f64, floor: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.se + floor
    }

    /// Distance from `target` in standard errors; infinite when the sample has
    /// zero variance but misses the target.
    pub fn z_against(&self, target: f64) -> f64 {
        let gap = (self.mean - target).abs();
        if self.se == 0.0 {
            if gap == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            gap / self.se
        }
    }
}

/// Combined two-sample z statistic for the difference of two estimates.
pub fn difference_z(a: &SampleStats, b: &SampleStats) -> f64 {
    let se = (a.se * a.se + b.se * b.se).sqrt();
    let gap = (a.mean - b.mean).abs();
    if se == 0.0 {
        if gap == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        gap / se
    }
}
