//! Theoretical privacy accounting: GDP composition, a numerical
//! privacy-loss-distribution accountant for the (sub-sampled) Gaussian
//! mechanism, and conversion of per-step audited bounds to end-to-end
//! guarantees.
//!
//! The PLD is discretized on a uniform privacy-loss grid, composed by FFT
//! convolution, and queried through the hockey-stick divergence. Loss values
//! are rounded up to the grid and out-of-range mass is folded into a +inf
//! atom, so reported epsilons are conservative (never below the true value,
//! up to the documented discretization error).

use crate::error::{ensure_open_prob, ensure_positive, ensure_prob, Error, Result};
use crate::numerics::std_normal_cdf;
use crate::tradeoff::{gdp_eps_of_delta, gdp_mu_for_eps};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

/// Parameters of the audited mechanism: noise multiplier (noise standard
/// deviation per unit sensitivity), sampling rate, step count, sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub sigma: f64,
    pub q: f64,
    pub steps: u32,
    pub sensitivity: f64,
}

impl MechanismSpec {
    pub fn new(sigma: f64, q: f64, steps: u32, sensitivity: f64) -> Result<Self> {
        ensure_positive(sigma, "sigma")?;
        ensure_prob(q, "q")?;
        if q == 0.0 {
            return Err(Error::Domain("sampling rate q must be in (0, 1]".into()));
        }
        if steps == 0 {
            return Err(Error::Domain("steps must be >= 1".into()));
        }
        ensure_positive(sensitivity, "sensitivity")?;
        Ok(Self { sigma, q, steps, sensitivity })
    }
}

/// Discretization controls for the PLD grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PldParams {
    /// Privacy-loss domain is truncated to [-cutoff, cutoff].
    pub cutoff: f64,
    /// Uniform grid spacing before composition.
    pub spacing: f64,
    /// Maximum tolerated truncated-tail mass per direction after composition.
    pub tail_budget: f64,
}

impl Default for PldParams {
    fn default() -> Self {
        // deep compositions put real mass beyond the cutoff (a composed loss
        // of N(8, 16) leaves ~2e-8 above 30); the budget tolerates that while
        // staying far below any delta of interest
        PldParams { cutoff: 30.0, spacing: 1e-4, tail_budget: 1e-7 }
    }
}

impl PldParams {
    /// Coarser grid for inner loops (e.g. fitting a noise multiplier by
    /// bisection) where 1e-3 accuracy in eps is plenty.
    pub fn coarse() -> Self {
        PldParams { cutoff: 20.0, spacing: 1e-3, tail_budget: 1e-7 }
    }
}

/// One direction's discretized privacy-loss distribution plus its suffix
/// sums, ready for O(log n) hockey-stick queries.
#[derive(Debug, Clone)]
struct PldDirection {
    /// mass[i] sits at loss = -cutoff + (i+1) * spacing (upper bin edge).
    mass: Vec<f64>,
    inf_mass: f64,
    cutoff: f64,
    spacing: f64,
    /// suffix1[i] = sum_{j >= i} mass[j]
    suffix1: Vec<f64>,
    /// suffix2[i] = sum_{j >= i} mass[j] * exp(-loss_j)
    suffix2: Vec<f64>,
}

impl PldDirection {
    fn loss_at(&self, i: usize) -> f64 {
        -self.cutoff + (i as f64 + 1.0) * self.spacing
    }

    fn build_suffixes(&mut self) {
        let n = self.mass.len();
        let mut s1 = vec![0.0; n + 1];
        let mut s2 = vec![0.0; n + 1];
        for i in (0..n).rev() {
            s1[i] = s1[i + 1] + self.mass[i];
            s2[i] = s2[i + 1] + self.mass[i] * (-self.loss_at(i)).exp();
        }
        self.suffix1 = s1;
        self.suffix2 = s2;
    }

    /// Hockey-stick divergence delta(eps) = sum over losses above eps of
    /// mass * (1 - e^{eps - loss}), plus the whole +inf atom.
    fn delta_of_eps(&self, eps: f64) -> f64 {
        let idx = ((eps + self.cutoff) / self.spacing).floor();
        let first = if idx < 0.0 { 0 } else { idx as usize };
        if first >= self.mass.len() {
            return self.inf_mass;
        }
        // bins with loss_at(i) > eps start at `first` (loss_at(first) >= eps
        // up to rounding; the term clamps at zero anyway)
        let d = self.inf_mass + self.suffix1[first] - eps.exp() * self.suffix2[first];
        d.max(self.inf_mass)
    }

    fn total_mass(&self) -> f64 {
        self.suffix1[0] + self.inf_mass
    }
}

/// Numerical PLD accountant for the sub-sampled Gaussian mechanism,
/// self-composed over the configured number of steps. Immutable after
/// construction; queries are cheap.
#[derive(Debug, Clone)]
pub struct PldAccountant {
    spec: MechanismSpec,
    params: PldParams,
    /// add direction: mixture world vs. pure-noise world
    dir_add: PldDirection,
    /// remove direction
    dir_remove: PldDirection,
}

fn next_pow2(n: usize) -> usize {
    let mut p = 1;
    while p < n {
        p <<= 1;
    }
    p
}

/// Multiply two loss distributions (i.e. add independent losses) by FFT
/// convolution, folding out-of-range mass into the +inf atom.
fn convolve(a: &PldDirection, b: &PldDirection, planner: &mut FftPlanner<f64>) -> PldDirection {
    let n = a.mass.len();
    debug_assert_eq!(n, b.mass.len());
    let m = next_pow2(2 * n - 1);
    let fft = planner.plan_fft_forward(m);
    let ifft = planner.plan_fft_inverse(m);
    let mut fa: Vec<Complex<f64>> = a.mass.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(m, Complex::new(0.0, 0.0));
    let mut fb: Vec<Complex<f64>> = b.mass.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(m, Complex::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= *y;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / m as f64;

    // index k of the convolution corresponds to loss l_a(i) + l_b(j) with
    // i + j = k, i.e. loss = -2 cutoff + (k + 2) * spacing. Map back onto the
    // original [-cutoff, cutoff] grid: target index t = k + 1 - n/...:
    // loss_t = -cutoff + (t+1) spacing  =>  t = k + 1 - (n - ...)
    // Solve: -2c + (k+2) h = -c + (t+1) h  =>  t = k + 1 - c/h.
    let shift = (a.cutoff / a.spacing).round() as i64; // = number of bins below 0 .. c/h
    let mut mass = vec![0.0; n];
    let mut folded = 0.0;
    for (k, v) in fa.iter().enumerate().take(2 * n - 1) {
        let val = (v.re * scale).max(0.0);
        if val == 0.0 {
            continue;
        }
        let t = k as i64 + 1 - shift;
        if t < 0 {
            // losses below -cutoff never contribute to delta at eps > -cutoff,
            // but fold them up anyway to keep the total mass conservative
            folded += val;
        } else if (t as usize) < n {
            mass[t as usize] += val;
        } else {
            folded += val;
        }
    }
    // a step landing in either +inf atom stays there; conservation fixes the rest
    let _ = folded;
    let fin: f64 = mass.iter().sum();
    let total_before = a.total_mass() * b.total_mass();
    let inf_mass = (total_before - fin).max(0.0);
    let mut out = PldDirection {
        mass,
        inf_mass,
        cutoff: a.cutoff,
        spacing: a.spacing,
        suffix1: vec![],
        suffix2: vec![],
    };
    out.build_suffixes();
    out
}

/// CDF of the mixture world (1-q) N(0, s^2) + q N(1, s^2).
fn mixture_cdf(x: f64, sigma: f64, q: f64) -> f64 {
    (1.0 - q) * std_normal_cdf(x / sigma) + q * std_normal_cdf((x - 1.0) / sigma)
}

/// Discretize one direction of the single-step sub-sampled Gaussian PLD.
///
/// `add` direction: losses of the mixture world against the pure world,
/// l(x) = ln(1 - q + q e^{(x - 1/2)/s^2}), x ~ mixture. `remove` direction:
/// l'(x) = -l(x), x ~ pure. Bin mass is assigned to the upper loss edge
/// (conservative rounding).
fn discretize_direction(sigma: f64, q: f64, params: &PldParams, add: bool) -> PldDirection {
    let h = params.spacing;
    let c = params.cutoff;
    let n = (2.0 * c / h).round() as usize;
    let s2 = sigma * sigma;

    // x(l): inverse of the loss as a function of the output value
    let x_of_loss = |l: f64| -> Option<f64> {
        // l = ln(1-q + q e^{(x-0.5)/s2})  =>  x = 0.5 + s2 ln((e^l - (1-q))/q)
        let t = l.exp() - (1.0 - q);
        if t <= 0.0 {
            return None;
        }
        Some(0.5 + s2 * (t / q).ln())
    };

    let mut mass = vec![0.0; n];
    let mut below = 0.0; // cdf mass below the lowest representable loss
    let mut prev_cdf: Option<f64> = None;
    let world_cdf = |x: f64| {
        if add {
            mixture_cdf(x, sigma, q)
        } else {
            std_normal_cdf(x / sigma)
        }
    };
    // For the add direction the loss is increasing in x; for the remove
    // direction l'(x) = -l(x) is decreasing, so bin [l_i, l_{i+1}) in l'
    // corresponds to x in (x(-l_{i+1}), x(-l_i)].
    for i in 0..=n {
        let edge = -c + i as f64 * h;
        let x_edge = if add { x_of_loss(edge) } else { x_of_loss(-edge) };
        // No solution means the loss edge is outside the attainable range
        // (below inf l for add, above sup l' for remove); either way the
        // corresponding output value is x -> -inf, so the world CDF is 0.
        let cdf = match x_edge {
            Some(x) => world_cdf(x),
            None => 0.0,
        };
        if let Some(p) = prev_cdf {
            let m = if add { cdf - p } else { p - cdf };
            let m = m.max(0.0);
            if i == 0 {
                below += m;
            } else {
                mass[i - 1] += m;
            }
        } else if i == 0 {
            below = if add { cdf } else { 1.0 - cdf };
        }
        prev_cdf = Some(cdf);
    }
    let assigned: f64 = mass.iter().sum::<f64>() + below;
    // everything above the top edge is unresolved high loss: +inf atom
    let inf_mass = (1.0 - assigned).max(0.0);
    // mass below the bottom edge contributes nothing to delta at eps > -cutoff;
    // keep it on the lowest bin so total mass stays 1
    mass[0] += below;
    let mut dir = PldDirection {
        mass,
        inf_mass,
        cutoff: c,
        spacing: h,
        suffix1: vec![],
        suffix2: vec![],
    };
    dir.build_suffixes();
    dir
}

fn compose_direction(
    single: &PldDirection,
    steps: u32,
    planner: &mut FftPlanner<f64>,
) -> PldDirection {
    if steps == 1 {
        return single.clone();
    }
    // exponentiation by squaring
    let mut result: Option<PldDirection> = None;
    let mut base = single.clone();
    let mut t = steps;
    while t > 0 {
        if t & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => convolve(&r, &base, planner),
            });
        }
        t >>= 1;
        if t > 0 {
            base = convolve(&base, &base, planner);
        }
    }
    result.unwrap()
}

/// Build the composed PLD accountant for a mechanism.
pub fn pld_build(spec: MechanismSpec) -> Result<PldAccountant> {
    pld_build_with(spec, PldParams::default())
}

/// Build with explicit grid parameters.
pub fn pld_build_with(spec: MechanismSpec, params: PldParams) -> Result<PldAccountant> {
    MechanismSpec::new(spec.sigma, spec.q, spec.steps, spec.sensitivity)?;
    if params.spacing <= 0.0 || params.cutoff <= 0.0 {
        return Err(Error::Domain("PLD grid spacing and cutoff must be positive".into()));
    }
    let mut planner = FftPlanner::new();
    // sensitivity cancels: work in units of one sensitivity
    let single_add = discretize_direction(spec.sigma, spec.q, &params, true);
    let single_rem = discretize_direction(spec.sigma, spec.q, &params, false);
    let dir_add = compose_direction(&single_add, spec.steps, &mut planner);
    let dir_remove = compose_direction(&single_rem, spec.steps, &mut planner);
    for (name, d) in [("add", &dir_add), ("remove", &dir_remove)] {
        if d.inf_mass > params.tail_budget {
            return Err(Error::GridResolution(format!(
                "truncated tail mass {:.3e} in {name} direction exceeds budget {:.1e}; \
                 raise the cutoff or coarsen the grid",
                d.inf_mass, params.tail_budget
            )));
        }
        let total = d.total_mass();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::GridResolution(format!(
                "{name} direction mass drifted to {total}"
            )));
        }
    }
    Ok(PldAccountant { spec, params, dir_add, dir_remove })
}

impl PldAccountant {
    pub fn spec(&self) -> MechanismSpec {
        self.spec
    }

    pub fn params(&self) -> PldParams {
        self.params
    }

    /// Hockey-stick divergence at eps, maximized over both neighboring
    /// directions.
    pub fn delta_of_eps(&self, eps: f64) -> f64 {
        self.dir_add.delta_of_eps(eps).max(self.dir_remove.delta_of_eps(eps))
    }

    /// Smallest eps with delta(eps) <= delta, rounded up to the loss grid.
    pub fn eps_of_delta(&self, delta: f64) -> Result<f64> {
        ensure_open_prob(delta, "delta")?;
        let floor = self.dir_add.inf_mass.max(self.dir_remove.inf_mass);
        if delta <= floor {
            return Err(Error::GridResolution(format!(
                "delta={delta} is below the truncated-tail floor {floor:.3e} of this grid"
            )));
        }
        if self.delta_of_eps(0.0) <= delta {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = self.params.cutoff;
        if self.delta_of_eps(hi) > delta {
            return Err(Error::GridResolution(format!(
                "delta={delta} not reachable below the loss cutoff {hi}"
            )));
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.delta_of_eps(mid) <= delta {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // conservative: round up to the grid the losses live on
        let h = self.params.spacing;
        Ok((hi / h).ceil() * h)
    }
}

/// Composition of Gaussian-DP guarantees: sqrt of the sum of squares.
pub fn gdp_compose(mus: &[f64]) -> Result<f64> {
    for &m in mus {
        crate::error::ensure_nonneg(m, "mu")?;
    }
    Ok(mus.iter().map(|m| m * m).sum::<f64>().sqrt())
}

/// Convert a per-step GDP lower bound into an end-to-end epsilon estimate.
///
/// With q = 1 each step is a full Gaussian mechanism and GDP composition is
/// tight: the result is exact GDP arithmetic. With q < 1 the per-step bound
/// is first converted to an equivalent noise multiplier and the composed
/// epsilon comes from the PLD accountant. The sub-sampled case is an
/// estimate, not a certified bound.
pub fn steps_to_end_eps(mu_step_lower: f64, steps: u32, q: f64, delta: f64) -> Result<f64> {
    crate::error::ensure_nonneg(mu_step_lower, "mu_step_lower")?;
    ensure_prob(q, "q")?;
    ensure_open_prob(delta, "delta")?;
    if steps == 0 {
        return Err(Error::Domain("steps must be >= 1".into()));
    }
    if mu_step_lower == 0.0 {
        return Ok(0.0);
    }
    if q >= 1.0 {
        let mu_total = (steps as f64).sqrt() * mu_step_lower;
        return gdp_eps_of_delta(mu_total, delta);
    }
    let sigma_hat = 1.0 / mu_step_lower;
    let acct = pld_build_with(MechanismSpec::new(sigma_hat, q, steps, 1.0)?, PldParams::coarse())?;
    acct.eps_of_delta(delta)
}

/// Noise multiplier whose single-step GDP parameter matches a target
/// (eps, delta) pair; convenience for experiment setup.
pub fn sigma_for_eps_delta(eps: f64, delta: f64) -> Result<f64> {
    let mu = gdp_mu_for_eps(eps, delta)?;
    if mu <= 0.0 {
        return Err(Error::Domain(format!("eps={eps} gives a degenerate mechanism")));
    }
    Ok(1.0 / mu)
}
