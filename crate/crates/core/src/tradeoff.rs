//! Trade-off functions and privacy regions.
//!
//! A trade-off curve maps an attack's type I error alpha to the smallest
//! achievable type II error beta. Three families are supported: the
//! (epsilon, delta)-DP envelope, the Gaussian-DP curve, and piecewise-linear
//! curves produced by approximating an accountant with supporting envelopes.

use crate::error::{ensure_nonneg, ensure_open_prob, ensure_prob, Error, Result};
use crate::numerics::{std_normal_cdf, std_normal_quantile};
use serde::{Deserialize, Serialize};

/// Number of alpha samples used when materializing piecewise curves.
pub const PIECEWISE_GRID: usize = 2049;

/// An attack operating point: type I error (false positive rate) and
/// type II error (false negative rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyPoint {
    pub alpha: f64,
    pub beta: f64,
}

/// A trade-off function alpha -> beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TradeoffCurve {
    /// f_{eps,delta}(a) = max(0, 1 - delta - e^eps a, e^-eps (1 - delta - a))
    EpsDelta { eps: f64, delta: f64 },
    /// f_mu(a) = Phi(Phi^-1(1-a) - mu)
    Gdp { mu: f64 },
    /// Linear interpolation through (alpha, beta) points, strictly increasing
    /// in alpha and covering [0, 1].
    Piecewise { points: Vec<(f64, f64)> },
}

impl TradeoffCurve {
    /// Evaluate the curve at a type I error.
    pub fn eval(&self, alpha: f64) -> f64 {
        match self {
            TradeoffCurve::EpsDelta { eps, delta } => eps_delta_tradeoff(*eps, *delta, alpha),
            TradeoffCurve::Gdp { mu } => gdp_tradeoff(*mu, alpha),
            TradeoffCurve::Piecewise { points } => {
                if alpha <= points[0].0 {
                    return points[0].1;
                }
                if alpha >= points[points.len() - 1].0 {
                    return points[points.len() - 1].1;
                }
                let idx = points.partition_point(|p| p.0 <= alpha);
                let (x0, y0) = points[idx - 1];
                let (x1, y1) = points[idx];
                y0 + (y1 - y0) * (alpha - x0) / (x1 - x0)
            }
        }
    }

    /// Sample the curve on a uniform alpha grid.
    pub fn sample(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let a = i as f64 / (n - 1) as f64;
                (a, self.eval(a))
            })
            .collect()
    }
}

fn eps_delta_tradeoff(eps: f64, delta: f64, alpha: f64) -> f64 {
    let a = 1.0 - delta - eps.exp() * alpha;
    let b = (-eps).exp() * (1.0 - delta - alpha);
    a.max(b).max(0.0)
}

fn gdp_tradeoff(mu: f64, alpha: f64) -> f64 {
    if mu == 0.0 {
        return (1.0 - alpha).clamp(0.0, 1.0);
    }
    // limit conventions at the endpoints
    if alpha <= 0.0 {
        return 1.0;
    }
    if alpha >= 1.0 {
        return 0.0;
    }
    let q = std_normal_quantile(1.0 - alpha).expect("alpha in (0,1)");
    std_normal_cdf(q - mu)
}

/// Trade-off function of an (epsilon, delta)-DP guarantee.
pub fn tradeoff_eps_delta(eps: f64, delta: f64) -> Result<TradeoffCurve> {
    ensure_nonneg(eps, "eps")?;
    ensure_prob(delta, "delta")?;
    Ok(TradeoffCurve::EpsDelta { eps, delta })
}

/// Trade-off function of a mu-GDP guarantee.
pub fn tradeoff_gdp(mu: f64) -> Result<TradeoffCurve> {
    ensure_nonneg(mu, "mu")?;
    Ok(TradeoffCurve::Gdp { mu })
}

/// delta(eps) for a mu-GDP mechanism:
/// delta = Phi(-eps/mu + mu/2) - e^eps Phi(-eps/mu - mu/2).
pub fn gdp_delta_of_eps(mu: f64, eps: f64) -> Result<f64> {
    ensure_nonneg(mu, "mu")?;
    ensure_nonneg(eps, "eps")?;
    if mu == 0.0 {
        return Ok(0.0);
    }
    let first = std_normal_cdf(-eps / mu + mu / 2.0);
    // second term in log space: e^eps can overflow long before the product does
    let ln_second = eps + crate::numerics::ln_std_normal_cdf(-eps / mu - mu / 2.0);
    let second = if ln_second < -745.0 { 0.0 } else { ln_second.exp() };
    Ok((first - second).max(0.0))
}

/// Smallest eps >= 0 with gdp_delta_of_eps(mu, eps) <= delta, by bisection.
pub fn gdp_eps_of_delta(mu: f64, delta: f64) -> Result<f64> {
    ensure_nonneg(mu, "mu")?;
    ensure_open_prob(delta, "delta")?;
    if mu == 0.0 || gdp_delta_of_eps(mu, 0.0)? <= delta {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while gdp_delta_of_eps(mu, hi)? > delta {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Bracket(format!(
                "no eps <= 1e6 reaches delta={delta} at mu={mu}"
            )));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if gdp_delta_of_eps(mu, mid)? <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest mu >= 0 whose (eps, delta) guarantee matches the given pair:
/// inverse of gdp_eps_of_delta in mu, by bisection.
pub fn gdp_mu_for_eps(eps: f64, delta: f64) -> Result<f64> {
    ensure_nonneg(eps, "eps")?;
    ensure_open_prob(delta, "delta")?;
    if eps == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while gdp_eps_of_delta(hi, delta)? < eps {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::Bracket(format!("no mu <= 1e4 yields eps={eps}")));
        }
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if gdp_eps_of_delta(mid, delta)? < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Membership in the privacy region R(eps, delta): all four linear
/// constraints on (alpha, beta) must hold.
pub fn privacy_region_contains(eps: f64, delta: f64, p: PrivacyPoint) -> Result<bool> {
    ensure_nonneg(eps, "eps")?;
    ensure_prob(delta, "delta")?;
    ensure_prob(p.alpha, "alpha")?;
    ensure_prob(p.beta, "beta")?;
    let e = eps.exp();
    let (a, b) = (p.alpha, p.beta);
    Ok(a + e * b >= 1.0 - delta
        && e * a + b >= 1.0 - delta
        && a + e * b <= e + delta
        && e * a + b <= e + delta)
}

/// How supporting envelopes are combined into one approximate curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combiner {
    /// Pointwise minimum over supporting curves; looser, kept as the
    /// conservative default.
    Min,
    /// Pointwise maximum; every supporting curve is individually a valid
    /// lower bound, so the envelope is also valid and tighter. Preferred for
    /// auditing.
    Max,
}

/// Approximate the trade-off function of a mechanism known only through an
/// accountant eps_of_delta, by evaluating it at `n` linearly spaced
/// delta' in [delta, 1-delta] and combining the supporting
/// f_{eps-hat, delta'} envelopes.
pub fn approx_tradeoff_from_accountant<F>(
    eps_of_delta: F,
    n: usize,
    delta: f64,
    combiner: Combiner,
) -> Result<TradeoffCurve>
where
    F: Fn(f64) -> Result<f64>,
{
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 supporting lines, got {n}")));
    }
    ensure_open_prob(delta, "delta")?;
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let dp = delta + (1.0 - 2.0 * delta) * i as f64 / (n - 1) as f64;
        let eps_hat = eps_of_delta(dp)?;
        lines.push((eps_hat, dp));
    }
    let mut points = Vec::with_capacity(PIECEWISE_GRID);
    for i in 0..PIECEWISE_GRID {
        let alpha = i as f64 / (PIECEWISE_GRID - 1) as f64;
        let vals = lines.iter().map(|&(e, d)| eps_delta_tradeoff(e, d, alpha));
        let beta = match combiner {
            Combiner::Min => vals.fold(f64::INFINITY, f64::min),
            Combiner::Max => vals.fold(0.0_f64, f64::max),
        };
        points.push((alpha, beta.clamp(0.0, 1.0)));
    }
    // pin the endpoints and restore monotonicity lost to grid rounding
    points[0].0 = 0.0;
    let last = points.len() - 1;
    points[last] = (1.0, 0.0);
    for i in (0..last).rev() {
        if points[i].1 < points[i + 1].1 {
            points[i].1 = points[i + 1].1;
        }
    }
    Ok(TradeoffCurve::Piecewise { points })
}
