//! Lower-bound estimators: from attack error counts to privacy parameters.
//!
//! Frequentist route: Clopper-Pearson upper bounds on the attacker's error
//! rates, pushed through either the (eps, delta)-DP region or the Gaussian
//! trade-off function. Bayesian route: the Jeffreys posterior over
//! (FPR, FNR), integrated over privacy regions by Gauss-Legendre quadrature
//! with root-finding in the privacy parameter. The Katz-log ratio interval
//! is included as a baseline for (eps, 0)-DP.
//!
//! Confidence budget: two-sided gamma is split half per error rate for the
//! Clopper-Pearson estimators; the Bayesian bounds use the gamma/2 lower
//! credible end.

use crate::accountant::{pld_build_with, MechanismSpec, PldParams};
use crate::error::{ensure_open_prob, ensure_prob, Error, Result};
use crate::numerics::{
    beta_cdf, beta_quantile, gauss_legendre, ln_gamma, std_normal_cdf, std_normal_quantile,
};
use crate::tradeoff::{approx_tradeoff_from_accountant, gdp_eps_of_delta, Combiner};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

/// Clamp applied to rates before normal quantiles.
const RATE_CLAMP: f64 = 1e-15;
/// Quadrature size for the Bayesian integrals.
const ZB_NODES: usize = 512;
/// Root-finding tolerance in mu / eps for the Bayesian bounds.
const ZB_TOL: f64 = 1e-4;
/// Bisection brackets.
const EPS_BRACKET: f64 = 100.0;
const MU_BRACKET: f64 = 50.0;
const SIGMA_BRACKET: (f64, f64) = (1e-3, 1e3);

/// Attack error counts: fp false positives out of n negatives, fn_ false
/// negatives out of n positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub fp: u64,
    pub fn_: u64,
    pub n: u64,
}

impl ErrorCounts {
    pub fn new(fp: u64, fn_: u64, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("need at least one trial per world".into()));
        }
        if fp > n || fn_ > n {
            return Err(Error::InvalidInput(format!(
                "counts out of range: fp={fp}, fn={fn_}, n={n}"
            )));
        }
        Ok(ErrorCounts { fp, fn_, n })
    }
}

/// Which lower-bounding strategy produced a result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditMethod {
    FdpCp,
    FdpZb,
    DpCp,
    DpZb,
    Katz,
}

impl fmt::Display for AuditMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AuditMethod::FdpCp => "fdp-cp",
            AuditMethod::FdpZb => "fdp-zb",
            AuditMethod::DpCp => "dp-cp",
            AuditMethod::DpZb => "dp-zb",
            AuditMethod::Katz => "katz",
        };
        f.write_str(s)
    }
}

impl FromStr for AuditMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fdp-cp" => Ok(AuditMethod::FdpCp),
            "fdp-zb" => Ok(AuditMethod::FdpZb),
            "dp-cp" => Ok(AuditMethod::DpCp),
            "dp-zb" => Ok(AuditMethod::DpZb),
            "katz" => Ok(AuditMethod::Katz),
            other => Err(Error::InvalidInput(format!(
                "unknown method '{other}' (expected fdp-cp, fdp-zb, dp-cp, dp-zb, katz)"
            ))),
        }
    }
}

/// Outcome of one audit: the bound, its scale, and the inputs used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub method: AuditMethod,
    /// GDP-scale lower bound; 0 when the method is not f-DP based.
    pub mu_lower: f64,
    /// (eps, delta)-DP-scale lower bound at `delta`.
    pub eps_lower: f64,
    pub delta: f64,
    /// 1 - gamma.
    pub confidence: f64,
    /// Fitted noise multiplier for the sub-sampled curve fit, when used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_hat: Option<f64>,
}

// ---------------------------------------------------------------------------
// Clopper-Pearson
// ---------------------------------------------------------------------------

/// One-sided Clopper-Pearson upper bound for a binomial proportion:
/// beta_quantile(confidence, count + 1, n - count); 1 when count = n.
pub fn clopper_pearson_upper(count: u64, n: u64, confidence: f64) -> Result<f64> {
    if n == 0 || count > n {
        return Err(Error::InvalidInput(format!("bad counts: {count}/{n}")));
    }
    ensure_open_prob(confidence, "confidence")?;
    if count == n {
        return Ok(1.0);
    }
    beta_quantile(confidence, count as f64 + 1.0, (n - count) as f64)
}

/// One-sided Clopper-Pearson lower bound; 0 when count = 0.
pub fn clopper_pearson_lower(count: u64, n: u64, confidence: f64) -> Result<f64> {
    if n == 0 || count > n {
        return Err(Error::InvalidInput(format!("bad counts: {count}/{n}")));
    }
    ensure_open_prob(confidence, "confidence")?;
    if count == 0 {
        return Ok(0.0);
    }
    beta_quantile(1.0 - confidence, count as f64, (n - count) as f64 + 1.0)
}

// ---------------------------------------------------------------------------
// plugin forms shared by the CP estimators and the analytic tests
// ---------------------------------------------------------------------------

/// (eps, delta)-DP lower bound from error-rate upper bounds:
/// max(ln((1-a-delta)/b), ln((1-b-delta)/a), 0).
pub fn eps_from_rates(alpha_bar: f64, beta_bar: f64, delta: f64) -> f64 {
    let a = alpha_bar.max(f64::MIN_POSITIVE);
    let b = beta_bar.max(f64::MIN_POSITIVE);
    let t1 = (1.0 - alpha_bar - delta) / b;
    let t2 = (1.0 - beta_bar - delta) / a;
    let mut eps: f64 = 0.0;
    if t1 > 0.0 {
        eps = eps.max(t1.ln());
    }
    if t2 > 0.0 {
        eps = eps.max(t2.ln());
    }
    eps
}

/// GDP lower bound from error-rate upper bounds:
/// max(0, Phi^-1(1 - a) - Phi^-1(b)), with rates clamped away from {0, 1}.
pub fn mu_from_rates(alpha_bar: f64, beta_bar: f64) -> f64 {
    let a = alpha_bar.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
    let b = beta_bar.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
    let qa = std_normal_quantile(1.0 - a).expect("clamped");
    let qb = std_normal_quantile(b).expect("clamped");
    (qa - qb).max(0.0)
}

/// Rate upper bounds at two-sided budget gamma (gamma/2 per side).
fn cp_rate_bounds(counts: ErrorCounts, gamma: f64) -> Result<(f64, f64)> {
    ensure_open_prob(gamma, "gamma")?;
    let conf = 1.0 - gamma / 2.0;
    let alpha_bar = clopper_pearson_upper(counts.fp, counts.n, conf)?;
    let beta_bar = clopper_pearson_upper(counts.fn_, counts.n, conf)?;
    Ok((alpha_bar, beta_bar))
}

/// Clopper-Pearson (eps, delta)-DP lower bound.
pub fn eps_lower_dp_cp(counts: ErrorCounts, delta: f64, gamma: f64) -> Result<AuditResult> {
    ensure_prob(delta, "delta")?;
    let (alpha_bar, beta_bar) = cp_rate_bounds(counts, gamma)?;
    Ok(AuditResult {
        method: AuditMethod::DpCp,
        mu_lower: 0.0,
        eps_lower: eps_from_rates(alpha_bar, beta_bar, delta),
        delta,
        confidence: 1.0 - gamma,
        sigma_hat: None,
    })
}

/// Clopper-Pearson GDP lower bound on mu.
pub fn mu_lower_gdp_cp(counts: ErrorCounts, gamma: f64) -> Result<f64> {
    let (alpha_bar, beta_bar) = cp_rate_bounds(counts, gamma)?;
    Ok(mu_from_rates(alpha_bar, beta_bar))
}

/// Convert a GDP lower bound to an (eps, delta)-DP lower bound at fixed
/// delta (the largest supporting epsilon over all alpha).
pub fn mu_to_eps_lower(mu: f64, delta: f64) -> Result<f64> {
    gdp_eps_of_delta(mu, delta)
}

// ---------------------------------------------------------------------------
// Jeffreys posterior and the Bayesian (credible-interval) bounds
// ---------------------------------------------------------------------------

/// One Beta marginal of the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaMarginal {
    pub a: f64,
    pub b: f64,
}

impl BetaMarginal {
    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let ln_b = ln_gamma(self.a) + ln_gamma(self.b) - ln_gamma(self.a + self.b);
        ((self.a - 1.0) * x.ln() + (self.b - 1.0) * (1.0 - x).ln() - ln_b).exp()
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        beta_cdf(x.clamp(0.0, 1.0), self.a, self.b)
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        beta_quantile(p, self.a, self.b)
    }
}

/// Joint posterior over (FPR, FNR): product of two Beta marginals with
/// Jeffreys 0.5 offsets. The FPR marginal is parameterized by the
/// false-positive count, the FNR marginal by the false-negative count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDensity {
    pub fpr: BetaMarginal,
    pub fnr: BetaMarginal,
}

/// Jeffreys posterior for the observed counts.
pub fn posterior_density(counts: ErrorCounts) -> PosteriorDensity {
    let n = counts.n as f64;
    PosteriorDensity {
        fpr: BetaMarginal { a: counts.fp as f64 + 0.5, b: n - counts.fp as f64 + 0.5 },
        fnr: BetaMarginal { a: counts.fn_ as f64 + 0.5, b: n - counts.fn_ as f64 + 0.5 },
    }
}

impl PosteriorDensity {
    pub fn density(&self, alpha: f64, beta: f64) -> f64 {
        self.fpr.pdf(alpha) * self.fnr.pdf(beta)
    }
}

fn zb_nodes() -> &'static (Vec<f64>, Vec<f64>) {
    static NODES: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(ZB_NODES))
}

/// Posterior mass of the band lower(alpha) <= beta <= upper(alpha),
/// marginalizing alpha by quadrature over the FPR posterior's support.
fn posterior_band_mass<L, U>(post: &PosteriorDensity, lower: L, upper: U) -> Result<f64>
where
    L: Fn(f64) -> f64,
    U: Fn(f64) -> f64,
{
    let (nodes, weights) = zb_nodes();
    let a_lo = post.fpr.quantile(1e-12)?.max(0.0);
    let a_hi = post.fpr.quantile(1.0 - 1e-12)?.min(1.0);
    if a_hi <= a_lo {
        return Ok(0.0);
    }
    let half = 0.5 * (a_hi - a_lo);
    let mid = 0.5 * (a_hi + a_lo);
    let mut mass = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        let alpha = mid + half * x;
        let lo = lower(alpha).clamp(0.0, 1.0);
        let hi = upper(alpha).clamp(0.0, 1.0);
        if hi <= lo {
            continue;
        }
        let band = post.fnr.cdf(hi)? - post.fnr.cdf(lo)?;
        if band > 0.0 {
            mass += w * half * post.fpr.pdf(alpha) * band;
        }
    }
    Ok(mass.clamp(0.0, 1.0))
}

/// Posterior mass inside the mu-GDP region (between the trade-off curve and
/// its reflection).
pub fn posterior_mass_gdp_region(post: &PosteriorDensity, mu: f64) -> Result<f64> {
    if mu <= 0.0 {
        return Ok(0.0);
    }
    let lower = |alpha: f64| {
        let a = alpha.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
        std_normal_cdf(std_normal_quantile(1.0 - a).expect("clamped") - mu)
    };
    let upper = |alpha: f64| {
        let a = alpha.clamp(RATE_CLAMP, 1.0 - RATE_CLAMP);
        std_normal_cdf(mu - std_normal_quantile(a).expect("clamped"))
    };
    posterior_band_mass(post, lower, upper)
}

/// Posterior mass inside the privacy region R(eps, delta).
pub fn posterior_mass_dp_region(post: &PosteriorDensity, eps: f64, delta: f64) -> Result<f64> {
    let e = eps.exp();
    let en = (-eps).exp();
    let lower = move |alpha: f64| (1.0 - delta - e * alpha).max(en * (1.0 - delta - alpha)).max(0.0);
    let upper = move |alpha: f64| {
        // 1 - f_{eps,delta}(1 - alpha)
        let refl = (1.0 - delta - e * (1.0 - alpha)).max(en * (alpha - delta)).max(0.0);
        1.0 - refl
    };
    posterior_band_mass(post, lower, upper)
}

/// Bayesian GDP lower bound: the largest mu whose region holds at most
/// gamma/2 of the posterior (so the mechanism violates mu-GDP with credible
/// probability 1 - gamma/2).
pub fn mu_lower_gdp_zb(counts: ErrorCounts, gamma: f64) -> Result<f64> {
    ensure_open_prob(gamma, "gamma")?;
    let post = posterior_density(counts);
    let target = gamma / 2.0;
    if posterior_mass_gdp_region(&post, MU_BRACKET)? <= target {
        return Ok(MU_BRACKET);
    }
    let mut lo = 0.0;
    let mut hi = MU_BRACKET;
    while hi - lo > ZB_TOL {
        let mid = 0.5 * (lo + hi);
        if posterior_mass_gdp_region(&post, mid)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Bayesian (eps, delta)-DP lower bound: largest eps with region mass at
/// most gamma/2.
pub fn eps_lower_dp_zb(counts: ErrorCounts, delta: f64, gamma: f64) -> Result<f64> {
    ensure_prob(delta, "delta")?;
    ensure_open_prob(gamma, "gamma")?;
    let post = posterior_density(counts);
    let target = gamma / 2.0;
    if posterior_mass_dp_region(&post, 0.0, delta)? > target {
        return Ok(0.0);
    }
    if posterior_mass_dp_region(&post, EPS_BRACKET, delta)? <= target {
        return Ok(EPS_BRACKET);
    }
    let mut lo = 0.0;
    let mut hi = EPS_BRACKET;
    while hi - lo > ZB_TOL {
        let mid = 0.5 * (lo + hi);
        if posterior_mass_dp_region(&post, mid, delta)? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

// ---------------------------------------------------------------------------
// Katz-log baseline
// ---------------------------------------------------------------------------

/// Katz-log lower confidence limit on ln(TPR/FPR), clamped at zero. A
/// baseline for (eps, 0)-DP only; the ratio statement does not carry a
/// delta. Zero cells get the standard 0.5 continuity correction.
pub fn eps_lower_katz(counts: ErrorCounts, gamma: f64) -> Result<f64> {
    ensure_open_prob(gamma, "gamma")?;
    let n = counts.n as f64;
    let tp = (counts.n - counts.fn_) as f64;
    let fp = counts.fp as f64;
    let corr = if tp == 0.0 || fp == 0.0 { 0.5 } else { 0.0 };
    let p1 = (tp + corr) / (n + corr);
    let p0 = (fp + corr) / (n + corr);
    let se = ((1.0 - p1) / (n * p1) + (1.0 - p0) / (n * p0)).sqrt();
    let z = std_normal_quantile(1.0 - gamma)?;
    Ok(((p1 / p0).ln() - z * se).max(0.0))
}

// ---------------------------------------------------------------------------
// sub-sampled / multi-step fit
// ---------------------------------------------------------------------------

/// Supporting lines used for the approximate trade-off curve in the fit.
const FIT_LINES: usize = 64;

/// Smallest noise multiplier whose approximate trade-off curve (PLD
/// accountant, upper-envelope combiner) passes through or above the
/// Clopper-Pearson point; reports the accountant's epsilon at that fit.
pub fn sigma_lower_multistep(
    counts: ErrorCounts,
    q: f64,
    steps: u32,
    gamma: f64,
    delta: f64,
) -> Result<AuditResult> {
    ensure_prob(q, "q")?;
    ensure_open_prob(delta, "delta")?;
    let (alpha_bar, beta_bar) = cp_rate_bounds(counts, gamma)?;
    let base = AuditResult {
        method: AuditMethod::FdpCp,
        mu_lower: 0.0,
        eps_lower: 0.0,
        delta,
        confidence: 1.0 - gamma,
        sigma_hat: None,
    };
    if alpha_bar + beta_bar >= 1.0 {
        // no distinguishing power: every mechanism is consistent
        return Ok(base);
    }
    let curve_at = |sigma: f64| -> Result<f64> {
        let spec = MechanismSpec::new(sigma, q, steps, 1.0)?;
        // a noise multiplier too small for the loss grid leaks beyond the
        // representable range: its trade-off lower bound is trivially zero
        let acct = match pld_build_with(spec, PldParams::coarse()) {
            Ok(a) => a,
            Err(Error::GridResolution(_)) => return Ok(0.0),
            Err(e) => return Err(e),
        };
        let curve = approx_tradeoff_from_accountant(
            |d| acct.eps_of_delta(d),
            FIT_LINES,
            delta,
            Combiner::Max,
        )?;
        Ok(curve.eval(alpha_bar))
    };
    let (mut lo, mut hi) = SIGMA_BRACKET;
    if curve_at(hi)? < beta_bar {
        // even the most private candidate is refuted; the observations are
        // inconsistent with the bracket (attack worse than chance handled
        // above, so this is a genuine bracket failure)
        return Err(Error::Bracket(format!(
            "no noise multiplier in [{lo}, {hi}] places the curve above (alpha={alpha_bar:.4}, beta={beta_bar:.4})"
        )));
    }
    if curve_at(lo)? >= beta_bar {
        // observations are consistent even with the leakiest candidate
        let acct = pld_build_with(MechanismSpec::new(lo, q, steps, 1.0)?, PldParams::coarse())?;
        return Ok(AuditResult {
            eps_lower: acct.eps_of_delta(delta)?,
            sigma_hat: Some(lo),
            ..base
        });
    }
    for _ in 0..40 {
        let mid = (lo * hi).sqrt();
        if curve_at(mid)? >= beta_bar {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-4 {
            break;
        }
    }
    let sigma_hat = hi;
    let acct = pld_build_with(MechanismSpec::new(sigma_hat, q, steps, 1.0)?, PldParams::coarse())?;
    Ok(AuditResult {
        eps_lower: acct.eps_of_delta(delta)?,
        sigma_hat: Some(sigma_hat),
        ..base
    })
}

// ---------------------------------------------------------------------------
// method dispatch
// ---------------------------------------------------------------------------

/// Run one audit method against error counts. `q` and `steps` describe the
/// audited mechanism for composition: with q = 1 the per-step GDP bound is
/// composed in closed form; with q < 1 the f-DP bound comes from fitting a
/// sub-sampled accountant curve (Clopper-Pearson point). DP-region and Katz
/// methods are single-step estimators: they reject steps > 1 or q < 1, and
/// Katz rejects delta > 0.
pub fn audit_counts(
    method: AuditMethod,
    counts: ErrorCounts,
    delta: f64,
    gamma: f64,
    q: f64,
    steps: u32,
) -> Result<AuditResult> {
    ensure_prob(delta, "delta")?;
    ensure_open_prob(gamma, "gamma")?;
    ensure_prob(q, "q")?;
    if steps == 0 {
        return Err(Error::InvalidInput("steps must be >= 1".into()));
    }
    let confidence = 1.0 - gamma;
    match method {
        AuditMethod::FdpCp | AuditMethod::FdpZb => {
            if q < 1.0 {
                if method == AuditMethod::FdpZb {
                    return Err(Error::InvalidInput(
                        "sub-sampled auditing uses the Clopper-Pearson curve fit; use fdp-cp".into(),
                    ));
                }
                return sigma_lower_multistep(counts, q, steps, gamma, delta);
            }
            let mu_step = match method {
                AuditMethod::FdpCp => mu_lower_gdp_cp(counts, gamma)?,
                _ => mu_lower_gdp_zb(counts, gamma)?,
            };
            ensure_open_prob(delta, "delta")?;
            let eps = crate::accountant::steps_to_end_eps(mu_step, steps, 1.0, delta)?;
            Ok(AuditResult {
                method,
                mu_lower: mu_step,
                eps_lower: eps,
                delta,
                confidence,
                sigma_hat: None,
            })
        }
        AuditMethod::DpCp | AuditMethod::DpZb => {
            if steps > 1 || q < 1.0 {
                return Err(Error::InvalidInput(
                    "DP-region methods bound a single step; composition requires an f-DP method"
                        .into(),
                ));
            }
            match method {
                AuditMethod::DpCp => eps_lower_dp_cp(counts, delta, gamma),
                _ => {
                    let eps = eps_lower_dp_zb(counts, delta, gamma)?;
                    Ok(AuditResult {
                        method,
                        mu_lower: 0.0,
                        eps_lower: eps,
                        delta,
                        confidence,
                        sigma_hat: None,
                    })
                }
            }
        }
        AuditMethod::Katz => {
            if delta > 0.0 {
                return Err(Error::InvalidInput(
                    "the Katz-log interval bounds a pure ratio; it is not valid for delta > 0 \
                     (rerun with --delta 0)"
                        .into(),
                ));
            }
            if steps > 1 || q < 1.0 {
                return Err(Error::InvalidInput(
                    "the Katz-log baseline bounds a single step at q = 1".into(),
                ));
            }
            let eps = eps_lower_katz(counts, gamma)?;
            Ok(AuditResult {
                method,
                mu_lower: 0.0,
                eps_lower: eps,
                delta,
                confidence,
                sigma_hat: None,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{simulate_gaussian_pair, CounterRng, RngSeed};

    // -- independent oracles -------------------------------------------------

    /// Binomial lower tail by log-space pmf summation (no gamma functions).
    fn binom_tail_le(k: u64, n: u64, p: f64) -> f64 {
        let nf = n as f64;
        let mut ln_terms = Vec::with_capacity(k as usize + 1);
        let mut ln_choose = 0.0; // ln C(n, 0)
        for j in 0..=k {
            let jf = j as f64;
            if j > 0 {
                ln_choose += ((nf - jf + 1.0) / jf).ln();
            }
            ln_terms.push(ln_choose + jf * p.ln() + (nf - jf) * (1.0 - p).ln());
        }
        let m = ln_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = ln_terms.iter().map(|t| (t - m).exp()).sum();
        (m + sum.ln()).exp().min(1.0)
    }

    fn cp_upper_oracle(count: u64, n: u64, confidence: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if binom_tail_le(count, n, mid) > 1.0 - confidence {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Marsaglia-Tsang gamma sampler (test-only, for posterior sampling).
    fn gamma_sample(rng: &mut CounterRng, shape: f64) -> f64 {
        if shape < 1.0 {
            let u: f64 = rng.next_f64();
            return gamma_sample(rng, shape + 1.0) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (3.0 * d.sqrt());
        loop {
            let x = rng.next_gaussian();
            let v = (1.0 + c * x).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u = rng.next_f64();
            if u < 1.0 - 0.0331 * x.powi(4) {
                return d * v;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    fn beta_sample(rng: &mut CounterRng, a: f64, b: f64) -> f64 {
        let x = gamma_sample(rng, a);
        let y = gamma_sample(rng, b);
        x / (x + y)
    }

    // -- Clopper-Pearson -----------------------------------------------------

    #[test]
    fn cp_upper_saturates_at_one() {
        assert_eq!(clopper_pearson_upper(10, 10, 0.975).unwrap(), 1.0);
    }

    #[test]
    fn cp_upper_zero_count_closed_form() {
        let got = clopper_pearson_upper(0, 1000, 0.975).unwrap();
        let expect = 1.0 - 0.025_f64.powf(1.0 / 1000.0);
        assert!((got - expect).abs() < 1e-10);
        assert!((got - 0.00368).abs() < 1e-5);
    }

    #[test]
    fn cp_upper_matches_binomial_tail_oracle() {
        for &(k, n) in &[(500u64, 1000u64), (3, 50), (999, 1000), (0, 10)] {
            let fast = clopper_pearson_upper(k, n, 0.975).unwrap();
            let slow = cp_upper_oracle(k, n, 0.975);
            assert!((fast - slow).abs() < 1e-9, "k={k} n={n}: {fast} vs {slow}");
        }
    }

    #[test]
    fn cp_lower_is_complement() {
        let up = clopper_pearson_upper(400, 1000, 0.975).unwrap();
        let lo = clopper_pearson_lower(600, 1000, 0.975).unwrap();
        assert!((up + lo - 1.0).abs() < 1e-10);
        assert_eq!(clopper_pearson_lower(0, 50, 0.975).unwrap(), 0.0);
    }

    // -- plugin forms ----------------------------------------------------------

    #[test]
    fn dp_plugin_red_dot() {
        // exact rates on the (0.3, 1e-5) boundary reproduce eps = 0.3
        let delta = 1e-5;
        let alpha = 0.23;
        let beta = 1.0 - alpha * (0.3_f64.exp()) - delta;
        let eps = eps_from_rates(alpha, beta, delta);
        assert!((eps - 0.3).abs() < 1e-12, "eps {eps}");
    }

    #[test]
    fn dp_plugin_trivial_and_symmetric() {
        assert_eq!(eps_from_rates(0.5, 0.5, 0.0), 0.0);
        let e = eps_from_rates(0.1, 0.1, 0.0);
        assert!((e - 9.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mu_plugin_reference_points() {
        let r = std_normal_cdf(-0.5);
        assert!((mu_from_rates(r, r) - 1.0).abs() < 1e-9);
        assert_eq!(mu_from_rates(0.5, 0.5), 0.0);
        // no distinguishing power
        assert_eq!(mu_from_rates(1.0, 0.3), 0.0);
        assert_eq!(mu_from_rates(0.3, 1.0), 0.0);
    }

    #[test]
    fn mu_cp_composed_of_oracles() {
        let counts = ErrorCounts::new(0, 500, 1000).unwrap();
        let got = mu_lower_gdp_cp(counts, 0.05).unwrap();
        let a = cp_upper_oracle(0, 1000, 0.975);
        let b = cp_upper_oracle(500, 1000, 0.975);
        let expect = std_normal_quantile(1.0 - a).unwrap() - std_normal_quantile(b).unwrap();
        assert!((got - expect).abs() < 1e-8);
    }

    #[test]
    fn mu_to_eps_reference() {
        assert_eq!(mu_to_eps_lower(0.0, 1e-5).unwrap(), 0.0);
        let eps = mu_to_eps_lower(0.25, 1e-5).unwrap();
        assert!((eps - 1.0).abs() < 0.15);
        // dominance: the GDP curve lies above the converted envelope
        let g = crate::tradeoff::tradeoff_gdp(0.7).unwrap();
        let env =
            crate::tradeoff::tradeoff_eps_delta(mu_to_eps_lower(0.7, 1e-5).unwrap(), 1e-5).unwrap();
        for i in 0..=100 {
            let a = i as f64 / 100.0;
            assert!(g.eval(a) >= env.eval(a) - 1e-9);
        }
    }

    #[test]
    fn fdp_dominates_dp_at_midrange_rates() {
        // with exact rates alpha = beta = Phi(-mu/2) the GDP plugin recovers
        // mu while the DP plugin's eps stays strictly below the equivalent
        for &mu in &[0.5, 1.0, 2.0] {
            let delta = 1e-5;
            let rate = std_normal_cdf(-mu / 2.0);
            let recovered = mu_from_rates(rate, rate);
            assert!((recovered - mu).abs() < 1e-9);
            let dp = eps_from_rates(rate, rate, delta);
            let fdp_eps = mu_to_eps_lower(mu, delta).unwrap();
            assert!(dp < fdp_eps, "mu={mu}: dp={dp} fdp={fdp_eps}");
        }
    }

    // -- posterior ------------------------------------------------------------

    #[test]
    fn posterior_normalizes_and_centers() {
        let counts = ErrorCounts::new(120, 300, 1000).unwrap();
        let post = posterior_density(counts);
        // separable: each marginal integrates to 1 by quadrature
        let (nodes, weights) = gauss_legendre(256);
        let mut total = 0.0;
        for (x, w) in nodes.iter().zip(weights.iter()) {
            let a = 0.5 + 0.5 * x;
            total += 0.5 * w * post.fpr.pdf(a);
        }
        assert!((total - 1.0).abs() < 1e-6, "fpr marginal integrates to {total}");
        assert!((post.fpr.mean() - 120.5 / 1001.0).abs() < 1e-12);
        assert!((post.fnr.mean() - 300.5 / 1001.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_symmetric_counts() {
        let counts = ErrorCounts::new(200, 200, 500).unwrap();
        let post = posterior_density(counts);
        for &(a, b) in &[(0.3, 0.5), (0.1, 0.9)] {
            assert!((post.density(a, b) - post.density(b, a)).abs() < 1e-9);
        }
    }

    // -- Bayesian bounds -------------------------------------------------------

    #[test]
    fn zb_mu_no_signal_is_near_zero() {
        let counts = ErrorCounts::new(500, 500, 1000).unwrap();
        let mu = mu_lower_gdp_zb(counts, 0.05).unwrap();
        assert!(mu <= 0.2, "mu {mu}");
    }

    #[test]
    fn zb_mu_monotone_in_signal() {
        let weak = ErrorCounts::new(300, 320, 1000).unwrap();
        let strong = ErrorCounts::new(300, 200, 1000).unwrap();
        let mu_weak = mu_lower_gdp_zb(weak, 0.05).unwrap();
        let mu_strong = mu_lower_gdp_zb(strong, 0.05).unwrap();
        assert!(mu_strong > mu_weak, "{mu_strong} vs {mu_weak}");
    }

    #[test]
    fn zb_mu_consistency_large_n() {
        // at exact rates Phi(-1/2) the bound approaches mu = 1
        let n: u64 = 1_000_000;
        let k = (std_normal_cdf(-0.5) * n as f64).round() as u64;
        let counts = ErrorCounts::new(k, k, n).unwrap();
        let mu = mu_lower_gdp_zb(counts, 0.05).unwrap();
        assert!((mu - 1.0).abs() < 0.05, "mu {mu}");
    }

    #[test]
    fn zb_mu_matches_monte_carlo_oracle() {
        // posterior sampling oracle: gamma/2 quantile of
        // |Phi^-1(1-alpha) - Phi^-1(beta)| over posterior draws
        let counts = ErrorCounts::new(250, 310, 1000).unwrap();
        let quad = mu_lower_gdp_zb(counts, 0.05).unwrap();
        let post = posterior_density(counts);
        let mut rng = CounterRng::new(RngSeed(77));
        let m = 200_000;
        let mut vals: Vec<f64> = (0..m)
            .map(|_| {
                let a = beta_sample(&mut rng, post.fpr.a, post.fpr.b);
                let b = beta_sample(&mut rng, post.fnr.a, post.fnr.b);
                (std_normal_quantile(1.0 - a).unwrap() - std_normal_quantile(b).unwrap()).abs()
            })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mc = vals[(0.025 * m as f64) as usize];
        assert!((quad - mc).abs() < 0.02, "quadrature {quad} vs MC {mc}");
    }

    #[test]
    fn zb_eps_beats_cp_on_average() {
        let mut zb_sum = 0.0;
        let mut cp_sum = 0.0;
        for seed in 0..5u64 {
            let (d, dp) = simulate_gaussian_pair(0.5, 1000, RngSeed(600 + seed)).unwrap();
            let counts =
                crate::attack::compute_error_counts(&d.scores, &dp.scores, 0.5).unwrap();
            zb_sum += eps_lower_dp_zb(counts, 1e-5, 0.05).unwrap();
            cp_sum += eps_lower_dp_cp(counts, 1e-5, 0.05).unwrap().eps_lower;
        }
        assert!(zb_sum >= cp_sum, "DP-ZB {zb_sum} should not trail DP-CP {cp_sum} on average");
    }

    #[test]
    fn zb_eps_no_signal_is_near_zero() {
        let counts = ErrorCounts::new(500, 500, 1000).unwrap();
        let eps = eps_lower_dp_zb(counts, 1e-5, 0.05).unwrap();
        assert!(eps < 0.05, "eps {eps}");
    }

    #[test]
    fn zb_region_mass_monotone_in_eps() {
        let counts = ErrorCounts::new(100, 400, 1000).unwrap();
        let post = posterior_density(counts);
        let mut prev = -1.0;
        for &e in &[0.0, 0.5, 1.0, 2.0, 4.0] {
            let m = posterior_mass_dp_region(&post, e, 1e-5).unwrap();
            assert!(m >= prev - 1e-12);
            prev = m;
        }
    }

    #[test]
    fn zb_eps_matches_monte_carlo_oracle() {
        let counts = ErrorCounts::new(100, 320, 1000).unwrap();
        let delta = 1e-5;
        let quad = eps_lower_dp_zb(counts, delta, 0.05).unwrap();
        let post = posterior_density(counts);
        let mut rng = CounterRng::new(RngSeed(78));
        let m = 200_000;
        // smallest eps whose region contains the sampled point
        let point_eps = |a: f64, b: f64| -> f64 {
            let mut e: f64 = 0.0;
            let terms = [
                (1.0 - delta - b) / a.max(f64::MIN_POSITIVE),
                (1.0 - delta - a) / b.max(f64::MIN_POSITIVE),
                (b - delta) / (1.0 - a).max(f64::MIN_POSITIVE),
                (a - delta) / (1.0 - b).max(f64::MIN_POSITIVE),
            ];
            for t in terms {
                if t > 0.0 {
                    e = e.max(t.ln());
                }
            }
            e
        };
        let mut vals: Vec<f64> = (0..m)
            .map(|_| {
                let a = beta_sample(&mut rng, post.fpr.a, post.fpr.b);
                let b = beta_sample(&mut rng, post.fnr.a, post.fnr.b);
                point_eps(a, b)
            })
            .collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mc = vals[(0.025 * m as f64) as usize];
        assert!((quad - mc).abs() < 0.03, "quadrature {quad} vs MC {mc}");
    }

    // -- Katz ------------------------------------------------------------------

    #[test]
    fn katz_no_signal_clamps_to_zero() {
        let counts = ErrorCounts::new(300, 700, 1000).unwrap(); // tpr = fpr = 0.3
        assert_eq!(eps_lower_katz(counts, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn katz_matches_parametric_bootstrap() {
        let counts = ErrorCounts::new(100, 100, 1000).unwrap();
        let gamma = 0.05;
        let katz = eps_lower_katz(counts, gamma).unwrap();
        // bootstrap over binomial draws at the observed rates
        let n = 1000u64;
        let (p1, p0) = (0.9, 0.1);
        let mut rng = CounterRng::new(RngSeed(5150));
        let reps = 40_000;
        let mut stats: Vec<f64> = (0..reps)
            .map(|_| {
                let mut tp = 0u64;
                let mut fp = 0u64;
                for _ in 0..n {
                    if rng.next_bernoulli(p1) {
                        tp += 1;
                    }
                    if rng.next_bernoulli(p0) {
                        fp += 1;
                    }
                }
                ((tp.max(1) as f64 / n as f64) / (fp.max(1) as f64 / n as f64)).ln()
            })
            .collect();
        stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let boot = stats[(gamma * reps as f64) as usize];
        assert!((katz - boot).abs() < 0.05, "katz {katz} vs bootstrap {boot}");
    }

    #[test]
    fn katz_tightens_with_n() {
        let target = (0.9_f64 / 0.1).ln();
        let small = eps_lower_katz(ErrorCounts::new(100, 100, 1000).unwrap(), 0.05).unwrap();
        let big =
            eps_lower_katz(ErrorCounts::new(100_000, 100_000, 1_000_000).unwrap(), 0.05).unwrap();
        assert!(big > small);
        assert!((big - target).abs() < 0.02, "big-n Katz {big} vs {target}");
    }

    #[test]
    fn katz_zero_cell_correction() {
        let counts = ErrorCounts::new(0, 100, 1000).unwrap();
        let v = eps_lower_katz(counts, 0.05).unwrap();
        assert!(v.is_finite() && v > 0.0);
    }

    // -- multi-step fit ---------------------------------------------------------

    #[test]
    fn sigma_fit_agrees_with_gdp_path_at_q1() {
        let (d, dp) = simulate_gaussian_pair(1.0, 4000, RngSeed(21)).unwrap();
        let counts = crate::attack::compute_error_counts(&d.scores, &dp.scores, 0.5).unwrap();
        let fit = sigma_lower_multistep(counts, 1.0, 1, 0.05, 1e-5).unwrap();
        let mu = mu_lower_gdp_cp(counts, 0.05).unwrap();
        let gdp_eps = mu_to_eps_lower(mu, 1e-5).unwrap();
        assert!(
            (fit.eps_lower - gdp_eps).abs() < 0.1,
            "fit {} vs gdp {gdp_eps}",
            fit.eps_lower
        );
    }

    #[test]
    fn sigma_fit_trivial_counts() {
        let counts = ErrorCounts::new(500, 500, 1000).unwrap();
        let fit = sigma_lower_multistep(counts, 0.5, 2, 0.05, 1e-5).unwrap();
        assert_eq!(fit.eps_lower, 0.0);
    }

    // -- dispatch ----------------------------------------------------------------

    #[test]
    fn audit_counts_routing() {
        let counts = ErrorCounts::new(200, 300, 1000).unwrap();
        let r = audit_counts(AuditMethod::FdpCp, counts, 1e-5, 0.05, 1.0, 1).unwrap();
        assert!(r.mu_lower > 0.0 && r.eps_lower > 0.0);
        // composition raises the end-to-end bound
        let r4 = audit_counts(AuditMethod::FdpCp, counts, 1e-5, 0.05, 1.0, 4).unwrap();
        assert!(r4.eps_lower > r.eps_lower);
        // DP methods refuse composition
        assert!(audit_counts(AuditMethod::DpCp, counts, 1e-5, 0.05, 1.0, 4).is_err());
        assert!(audit_counts(AuditMethod::DpZb, counts, 1e-5, 0.05, 0.5, 1).is_err());
        // Katz refuses delta > 0
        assert!(audit_counts(AuditMethod::Katz, counts, 1e-5, 0.05, 1.0, 1).is_err());
        assert!(audit_counts(AuditMethod::Katz, counts, 0.0, 0.05, 1.0, 1).is_ok());
    }

    #[test]
    fn method_names_round_trip() {
        for m in [
            AuditMethod::FdpCp,
            AuditMethod::FdpZb,
            AuditMethod::DpCp,
            AuditMethod::DpZb,
            AuditMethod::Katz,
        ] {
            assert_eq!(m.to_string().parse::<AuditMethod>().unwrap(), m);
        }
    }
}
