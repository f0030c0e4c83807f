//! From raw observations to error counts: thresholding, sweeps, and the
//! closed-form optimal-threshold analysis for the Gaussian mechanism.
//!
//! Decision convention: predict D' when the score is strictly greater than
//! the threshold; ties count as negatives.

use crate::error::{ensure_open_prob, ensure_positive, Error, Result};
use crate::estimators::ErrorCounts;
use crate::numerics::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
use serde::{Deserialize, Serialize};

/// Maximum number of sweep thresholds before uniform subsampling kicks in.
pub const MAX_SWEEP_THRESHOLDS: usize = 10_001;

/// One sweep entry: threshold with its empirical error rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub threshold: f64,
    pub alpha: f64,
    pub beta: f64,
    pub fp: u64,
    pub fn_: u64,
}

/// Ordered sweep of thresholds; alpha nonincreasing, beta nondecreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCurve {
    pub n: u64,
    pub points: Vec<RatePoint>,
}

/// Count attack errors at one threshold: fp = #(D scores > z),
/// fn = #(D' scores <= z).
pub fn compute_error_counts(o: &[f64], o_prime: &[f64], z: f64) -> Result<ErrorCounts> {
    if o.is_empty() || o.len() != o_prime.len() {
        return Err(Error::InvalidInput(format!(
            "observation sets must be nonempty and equal-sized (got {} and {})",
            o.len(),
            o_prime.len()
        )));
    }
    let fp = o.iter().filter(|&&s| s > z).count() as u64;
    let fn_ = o_prime.iter().filter(|&&s| s <= z).count() as u64;
    ErrorCounts::new(fp, fn_, o.len() as u64)
}

/// Sweep candidate thresholds (midpoints of adjacent pooled order statistics,
/// capped by uniform subsampling) plus the two trivial corners, and count
/// errors at each.
pub fn sweep_thresholds(o: &[f64], o_prime: &[f64]) -> Result<RateCurve> {
    if o.is_empty() || o.len() != o_prime.len() {
        return Err(Error::InvalidInput(format!(
            "observation sets must be nonempty and equal-sized (got {} and {})",
            o.len(),
            o_prime.len()
        )));
    }
    let n = o.len();
    let mut pooled: Vec<f64> = o.iter().chain(o_prime.iter()).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut mids = Vec::with_capacity(pooled.len() + 1);
    // corner below every score: (alpha, beta) = (1, 0)
    mids.push(pooled[0] - 1.0);
    for w in pooled.windows(2) {
        if w[1] > w[0] {
            mids.push(0.5 * (w[0] + w[1]));
        }
    }
    // corner above every score: (alpha, beta) = (0, 1)
    mids.push(pooled[pooled.len() - 1] + 1.0);
    if mids.len() > MAX_SWEEP_THRESHOLDS {
        let keep = MAX_SWEEP_THRESHOLDS;
        let step = (mids.len() - 1) as f64 / (keep - 1) as f64;
        let mut sub = Vec::with_capacity(keep);
        for i in 0..keep {
            sub.push(mids[(i as f64 * step).round() as usize]);
        }
        sub.dedup();
        mids = sub;
    }

    let mut o_sorted = o.to_vec();
    o_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut op_sorted = o_prime.to_vec();
    op_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let count_le = |v: &[f64], z: f64| v.partition_point(|&s| s <= z) as u64;

    let points = mids
        .into_iter()
        .map(|z| {
            let fp = n as u64 - count_le(&o_sorted, z);
            let fn_ = count_le(&op_sorted, z);
            RatePoint {
                threshold: z,
                alpha: fp as f64 / n as f64,
                beta: fn_ as f64 / n as f64,
                fp,
                fn_,
            }
        })
        .collect();
    Ok(RateCurve { n: n as u64, points })
}

impl RateCurve {
    /// Thresholds restricted to the central fraction (by value) of the
    /// observation support. The support is estimated robustly as the range
    /// between the 0.1% and 99.9% threshold quantiles, so a single stray
    /// score cannot stretch the band; the corner sentinels are excluded.
    pub fn central_band(&self, fraction: f64) -> Vec<&RatePoint> {
        assert!((0.0..=1.0).contains(&fraction));
        if self.points.len() <= 2 {
            return vec![];
        }
        let inner = &self.points[1..self.points.len() - 1];
        let lo = inner[((inner.len() - 1) as f64 * 0.001).round() as usize].threshold;
        let hi = inner[((inner.len() - 1) as f64 * 0.999).round() as usize].threshold;
        let half = 0.5 * fraction * (hi - lo);
        let mid = 0.5 * (lo + hi);
        inner
            .iter()
            .filter(|p| p.threshold >= mid - half && p.threshold <= mid + half)
            .collect()
    }
}

/// The unique decision threshold w > c/2 maximizing the (eps, delta)-DP
/// lower bound against a Gaussian mechanism with noise sigma and shift c:
/// the root of delta = Phi((c-z)/s) - [phi((c-z)/s)/phi(-z/s)] Phi(-z/s).
pub fn optimal_threshold_dp(sigma: f64, c: f64, delta: f64) -> Result<f64> {
    ensure_positive(sigma, "sigma")?;
    ensure_positive(c, "c")?;
    ensure_open_prob(delta, "delta")?;
    let g = |z: f64| -> f64 {
        let ratio = (std_normal_pdf((c - z) / sigma).ln() - std_normal_pdf(-z / sigma).ln()).exp();
        std_normal_cdf((c - z) / sigma) - ratio * std_normal_cdf(-z / sigma) - delta
    };
    let mut lo = c / 2.0 + 1e-12;
    let mut hi = c / 2.0 + 40.0 * sigma;
    if g(lo) < 0.0 || g(hi) > 0.0 {
        return Err(Error::Bracket(format!(
            "optimal-threshold equation has no sign change on [{lo}, {hi}] at delta={delta}"
        )));
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed-form maximum of the (eps, delta)-DP lower bound at the optimal
/// threshold w: (c / 2 sigma^2) (2w - c).
pub fn max_eps_lower_analytic(sigma: f64, c: f64, w: f64) -> Result<f64> {
    ensure_positive(sigma, "sigma")?;
    ensure_positive(c, "c")?;
    if w < c / 2.0 {
        return Err(Error::Domain(format!("w must be at least c/2, got w={w}, c={c}")));
    }
    Ok(c / (2.0 * sigma * sigma) * (2.0 * w - c))
}

/// ln h(z) with h(z) = (1 - delta - Phi((z-c)/s)) / (1 - Phi(z/s)): the
/// quantity the optimal threshold maximizes. Exposed for grid-scan checks.
/// Both tails go through the survival function so the ratio keeps full
/// precision deep into the bracket.
pub fn ln_h(sigma: f64, c: f64, delta: f64, z: f64) -> f64 {
    let num = crate::numerics::std_normal_survival((z - c) / sigma) - delta;
    let den = crate::numerics::std_normal_survival(z / sigma);
    (num / den).ln()
}

/// Phi^-1(Phi(t)) through the numerically favorable tail, so extreme
/// thresholds keep full precision.
fn quantile_through_cdf(t: f64) -> Result<f64> {
    if t <= 0.0 {
        std_normal_quantile(std_normal_cdf(t))
    } else {
        Ok(-std_normal_quantile(crate::numerics::std_normal_survival(t))?)
    }
}

/// The GDP estimate from analytic rates at threshold z with c = 1:
/// Phi^-1(1 - alpha(z)) - Phi^-1(beta(z)). Equals 1/sigma identically.
pub fn gdp_plugin_threshold_invariance(sigma: f64, z: f64) -> Result<f64> {
    ensure_positive(sigma, "sigma")?;
    let c = 1.0;
    // 1 - alpha(z) = Phi(z/sigma), beta(z) = Phi((z-c)/sigma)
    Ok(quantile_through_cdf(z / sigma)? - quantile_through_cdf((z - c) / sigma)?)
}
