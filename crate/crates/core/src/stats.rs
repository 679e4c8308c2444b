//! Scalar statistics helpers: the standard normal distribution, empirical
//! quantiles and streaming moments.

use alloc::vec::Vec;
use nalgebra::DVector;

use crate::error::{Error, Result};

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Standard normal quantile function.
///
/// Acklam's rational approximation (relative error below 1.2e-9) followed by
/// one Halley step against `erfc`, which brings it to working precision.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("normal quantile level must lie in (0, 1), got {p}")));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] =
        [7.784_695_709_041_462e-3, 3.224_671_290_700_398e-1, 2.445_134_137_142_996, 3.754_408_661_907_416];
    const P_LOW: f64 = 0.024_25;

    let x = if p < P_LOW {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Halley refinement on Phi(x) - p. In the upper tail the residual is
    // formed from the complements to keep it accurate.
    let e = if x > 0.0 { (1.0 - p) - 0.5 * libm::erfc(x / SQRT_2) } else { normal_cdf(x) - p };
    let u = e * SQRT_2PI * libm::exp(0.5 * x * x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Empirical quantile of an ascending-sorted sample, interpolating linearly
/// between order statistics (position `(n - 1) * level`).
pub fn quantile_sorted(sorted: &[f64], level: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidArgument(alloc::format!("quantile level must lie in [0, 1], got {level}")));
    }
    let pos = (sorted.len() - 1) as f64 * level;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Sorts a copy of `sample` and returns its empirical quantile.
pub fn quantile(sample: &[f64], level: f64) -> Result<f64> {
    let mut sorted: Vec<f64> = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, level)
}

/// Streaming componentwise mean and unbiased variance (Welford).
///
/// The update order is the insertion order, so results are reproducible for
/// a fixed sample sequence.
#[derive(Debug, Clone)]
pub struct RunningMoments {
    count: usize,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: DVector::zeros(dim), m2: DVector::zeros(dim) }
    }

    pub fn push(&mut self, value: &DVector<f64>) {
        debug_assert_eq!(value.len(), self.mean.len());
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(value.iter()) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased (`n - 1`) sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> DVector<f64> {
        if self.count < 2 {
            return DVector::zeros(self.mean.len());
        }
        let denom = (self.count - 1) as f64;
        self.m2.map(|s| (s / denom).max(0.0))
    }

    pub fn std(&self) -> DVector<f64> {
        self.variance().map(libm::sqrt)
    }
}
