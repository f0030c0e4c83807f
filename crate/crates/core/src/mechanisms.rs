//! Observation generators for closed-form mechanisms and the deterministic
//! RNG shared by every randomized component.
//!
//! Randomness comes from a splitmix64 counter generator with per-stream,
//! per-index derivation, so any (seed, stream, index) triple yields the same
//! values on every platform and under any parallel schedule. Normal variates
//! use Box-Muller on the counter stream; each variate consumes exactly two
//! words.

use crate::error::{ensure_positive, ensure_prob, Error, Result};
use serde::{Deserialize, Serialize};

/// 64-bit seed for a family of derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// splitmix64 counter generator.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(seed: RngSeed) -> Self {
        CounterRng { state: mix(seed.0 ^ 0x9E3779B97F4A7C15) }
    }

    /// Derive an independent stream for (seed, stream, index).
    pub fn derive(seed: RngSeed, stream: u64, index: u64) -> Self {
        let s = mix(seed.0 ^ stream.wrapping_mul(0xA0761D6478BD642F));
        CounterRng { state: mix(s ^ index.wrapping_mul(0xE7037ED1A0B428DB)) }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        mix(self.state)
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box-Muller; consumes two words.
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    #[inline]
    pub fn next_bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() <= p
    }

    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

// stream tags for the simulators
const STREAM_WORLD_D: u64 = 0x10;
const STREAM_WORLD_DPRIME: u64 = 0x11;
const STREAM_SUBSAMPLE: u64 = 0x12;

/// Which world a set of attack observations came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum World {
    /// Without the differing record.
    D,
    /// With the differing record.
    Dprime,
}

/// Labeled attack scores from one world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub world: World,
    pub seed: RngSeed,
    pub scores: Vec<f64>,
}

/// Scores for the Gaussian mechanism with sensitivity 1: D draws from
/// N(0, sigma^2), D' from N(1, sigma^2).
pub fn simulate_gaussian_pair(
    sigma: f64,
    n: usize,
    seed: RngSeed,
) -> Result<(ObservationSet, ObservationSet)> {
    ensure_positive(sigma, "sigma")?;
    if n == 0 {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let mut d = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    for i in 0..n {
        let mut r0 = CounterRng::derive(seed, STREAM_WORLD_D, i as u64);
        let mut r1 = CounterRng::derive(seed, STREAM_WORLD_DPRIME, i as u64);
        d.push(sigma * r0.next_gaussian());
        dp.push(1.0 + sigma * r1.next_gaussian());
    }
    Ok((
        ObservationSet { world: World::D, seed, scores: d },
        ObservationSet { world: World::Dprime, seed, scores: dp },
    ))
}

/// Sub-sampled Gaussian: D' includes the unit shift only with probability q
/// per draw.
pub fn simulate_subsampled_gaussian_pair(
    sigma: f64,
    q: f64,
    n: usize,
    seed: RngSeed,
) -> Result<(ObservationSet, ObservationSet)> {
    ensure_positive(sigma, "sigma")?;
    ensure_prob(q, "q")?;
    if q == 0.0 {
        return Err(Error::Domain("q must be in (0, 1]".into()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let mut d = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    for i in 0..n {
        let mut r0 = CounterRng::derive(seed, STREAM_WORLD_D, i as u64);
        let mut r1 = CounterRng::derive(seed, STREAM_WORLD_DPRIME, i as u64);
        let mut rs = CounterRng::derive(seed, STREAM_SUBSAMPLE, i as u64);
        d.push(sigma * r0.next_gaussian());
        let shift = if rs.next_bernoulli(q) { 1.0 } else { 0.0 };
        dp.push(shift + sigma * r1.next_gaussian());
    }
    Ok((
        ObservationSet { world: World::D, seed, scores: d },
        ObservationSet { world: World::Dprime, seed, scores: dp },
    ))
}

/// Randomized response: world D holds bit 0, world D' bit 1; each emitted
/// bit is flipped with probability 1/(1 + e^eps). Scores are the emitted
/// bits as reals.
pub fn simulate_randomized_response(
    eps: f64,
    n: usize,
    seed: RngSeed,
) -> Result<(ObservationSet, ObservationSet)> {
    crate::error::ensure_nonneg(eps, "eps")?;
    if n == 0 {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let flip = 1.0 / (1.0 + eps.exp());
    let mut d = Vec::with_capacity(n);
    let mut dp = Vec::with_capacity(n);
    for i in 0..n {
        let mut r0 = CounterRng::derive(seed, STREAM_WORLD_D, i as u64);
        let mut r1 = CounterRng::derive(seed, STREAM_WORLD_DPRIME, i as u64);
        let b0 = if r0.next_bernoulli(flip) { 1.0 } else { 0.0 };
        let b1 = if r1.next_bernoulli(flip) { 0.0 } else { 1.0 };
        d.push(b0);
        dp.push(b1);
    }
    Ok((
        ObservationSet { world: World::D, seed, scores: d },
        ObservationSet { world: World::Dprime, seed, scores: dp },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::std_normal_cdf;

    #[test]
    fn gaussian_pair_clt_sanity() {
        let n = 10_000;
        let sigma = 1.0;
        let (d, dp) = simulate_gaussian_pair(sigma, n, RngSeed(7)).unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let band = 4.0 * sigma / (n as f64).sqrt();
        assert!(mean(&d.scores).abs() < band);
        assert!((mean(&dp.scores) - 1.0).abs() < band);
    }

    #[test]
    fn same_seed_bit_identical() {
        let (a, b) = simulate_gaussian_pair(2.0, 100, RngSeed(3)).unwrap();
        let (a2, b2) = simulate_gaussian_pair(2.0, 100, RngSeed(3)).unwrap();
        assert_eq!(a.scores, a2.scores);
        assert_eq!(b.scores, b2.scores);
        let (a3, _) = simulate_gaussian_pair(2.0, 100, RngSeed(4)).unwrap();
        assert_ne!(a.scores, a3.scores);
    }

    #[test]
    fn subsampled_reduces_to_gaussian_at_q1() {
        let (_, dp_sub) = simulate_subsampled_gaussian_pair(1.5, 1.0, 500, RngSeed(11)).unwrap();
        let (_, dp_full) = simulate_gaussian_pair(1.5, 500, RngSeed(11)).unwrap();
        assert_eq!(dp_sub.scores, dp_full.scores);
    }

    #[test]
    fn subsampled_mixture_weight() {
        // fraction of D' draws that carry the shift must match q
        let n = 20_000;
        let q = 0.25;
        let sigma = 0.1; // narrow noise so the shift is unambiguous
        let (_, dp) = simulate_subsampled_gaussian_pair(sigma, q, n, RngSeed(5)).unwrap();
        let shifted = dp.scores.iter().filter(|&&s| s > 0.5).count() as f64 / n as f64;
        let sd = (q * (1.0 - q) / n as f64).sqrt();
        assert!((shifted - q).abs() < 3.0 * sd, "shifted fraction {shifted}");
    }

    #[test]
    fn randomized_response_rates() {
        let eps = 1.2;
        let n = 100_000;
        let (d, dp) = simulate_randomized_response(eps, n, RngSeed(9)).unwrap();
        let p_flip = 1.0 / (1.0 + eps.exp());
        let fp = d.scores.iter().filter(|&&s| s > 0.5).count() as f64 / n as f64;
        let fnr = dp.scores.iter().filter(|&&s| s <= 0.5).count() as f64 / n as f64;
        let sd = (p_flip * (1.0 - p_flip) / n as f64).sqrt();
        assert!((fp - p_flip).abs() < 4.0 * sd);
        assert!((fnr - p_flip).abs() < 4.0 * sd);
        // the observed error pair sits on the (eps, 0) trade-off envelope
        let curve = crate::tradeoff::tradeoff_eps_delta(eps, 0.0).unwrap();
        assert!((curve.eval(fp) - fnr).abs() < 0.01);
    }

    #[test]
    fn randomized_response_eps_zero_uniform() {
        let (d, dp) = simulate_randomized_response(0.0, 50_000, RngSeed(2)).unwrap();
        let ones_d = d.scores.iter().filter(|&&s| s > 0.5).count() as f64 / 50_000.0;
        let ones_dp = dp.scores.iter().filter(|&&s| s > 0.5).count() as f64 / 50_000.0;
        assert!((ones_d - 0.5).abs() < 0.01);
        assert!((ones_dp - 0.5).abs() < 0.01);
    }

    #[test]
    fn gaussian_kolmogorov_smirnov() {
        let n = 10_000;
        let (d, _) = simulate_gaussian_pair(1.0, n, RngSeed(42)).unwrap();
        let mut xs = d.scores.clone();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut dmax: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = std_normal_cdf(x);
            let hi = (i + 1) as f64 / n as f64;
            let lo = i as f64 / n as f64;
            dmax = dmax.max((f - lo).abs()).max((hi - f).abs());
        }
        // critical value at significance 1e-3
        let crit = (0.5 * (2.0_f64 / 1e-3).ln()).sqrt() / (n as f64).sqrt();
        assert!(dmax < crit, "KS statistic {dmax} over {crit}");
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = CounterRng::derive(RngSeed(1), 5, 0);
        let mut b = CounterRng::derive(RngSeed(1), 5, 1);
        let mut c = CounterRng::derive(RngSeed(1), 6, 0);
        let (x, y, z) = (a.next_u64(), b.next_u64(), c.next_u64());
        assert_ne!(x, y);
        assert_ne!(x, z);
        assert_ne!(y, z);
    }
}
