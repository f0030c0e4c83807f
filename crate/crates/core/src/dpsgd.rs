//! Desk-scale DP-SGD trainer with canary auditing hooks and injectable
//! implementation bugs.
//!
//! Each step samples two batches B and B' at rate q, clips and sums
//! per-example gradients, and noises each sum with N(0, (sigma C)^2 I)
//! (sigma is the noise multiplier, C the clip norm). The canary gradient is
//! added to the privatized D'-sum with probability qc and both worlds are
//! scored by the dot product with the canary, rescaled by 1/C^2. The model
//! itself advances only on the D-world gradient, so canary bookkeeping never
//! perturbs training.
//!
//! Bug variants reproduce three classic implementation errors: clipping the
//! aggregate after averaging instead of per example (the canary then flows
//! through the buggy aggregation like a data point, which is what makes the
//! bug observable), drawing noise from a small pool of reused seeds, and
//! adding noise at a smaller scale than the one the accountant was told.

use crate::error::{ensure_positive, ensure_prob, Error, Result};
use crate::mechanisms::{CounterRng, ObservationSet, RngSeed, World};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

// RNG stream tags. The model trajectory consumes only INIT, BATCH_D and
// NOISE_D, so observation capture and canary choices can never perturb it.
const STREAM_INIT: u64 = 0x20;
const STREAM_BATCH_D: u64 = 0x21;
const STREAM_NOISE_D: u64 = 0x22;
const STREAM_BATCH_DP: u64 = 0x23;
const STREAM_NOISE_DP: u64 = 0x24;
const STREAM_CANARY: u64 = 0x25;
const STREAM_CANARY_FLIP: u64 = 0x26;
const STREAM_POOL: u64 = 0x27;
const STREAM_DATA: u64 = 0x28;
const STREAM_BLACKBOX: u64 = 0x29;

/// Raw norm given to gradient canaries entering a buggy aggregation path
/// (per-example clipping would normally cap them at C).
const BUG_CANARY_BOOST: f64 = 1e4;

// ---------------------------------------------------------------------------
// tiny models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    Logistic,
    MlpOneHidden,
}

/// A small differentiable classifier with a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyModel {
    pub arch: Architecture,
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub params: Vec<f64>,
}

impl TinyModel {
    pub fn logistic(input_dim: usize) -> Self {
        TinyModel {
            arch: Architecture::Logistic,
            input_dim,
            hidden: 0,
            classes: 2,
            params: vec![0.0; input_dim + 1],
        }
    }

    pub fn mlp(input_dim: usize, hidden: usize, classes: usize) -> Self {
        let count = hidden * input_dim + hidden + classes * hidden + classes;
        TinyModel {
            arch: Architecture::MlpOneHidden,
            input_dim,
            hidden,
            classes,
            params: vec![0.0; count],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn init_random(&mut self, rng: &mut CounterRng, scale: f64) {
        for p in self.params.iter_mut() {
            *p = scale * rng.next_gaussian();
        }
    }

    /// Probability the model assigns to label y.
    pub fn label_prob(&self, x: &[f64], y: usize) -> f64 {
        match self.arch {
            Architecture::Logistic => {
                let z = self.logit(x);
                let p1 = sigmoid(z);
                if y == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            }
            Architecture::MlpOneHidden => {
                let (_, probs) = self.forward_mlp(x);
                probs[y]
            }
        }
    }

    pub fn loss(&self, x: &[f64], y: usize) -> f64 {
        -self.label_prob(x, y).max(1e-300).ln()
    }

    /// Per-example gradient of the cross-entropy loss.
    pub fn grad(&self, x: &[f64], y: usize) -> Vec<f64> {
        match self.arch {
            Architecture::Logistic => {
                let p1 = sigmoid(self.logit(x));
                let err = p1 - y as f64;
                let mut g = Vec::with_capacity(self.input_dim + 1);
                g.extend(x.iter().map(|xi| err * xi));
                g.push(err);
                g
            }
            Architecture::MlpOneHidden => {
                let (h, probs) = self.forward_mlp(x);
                let (d, hid, k) = (self.input_dim, self.hidden, self.classes);
                let mut dlogits = probs;
                dlogits[y] -= 1.0;
                let w1_len = hid * d;
                let w2 = &self.params[w1_len + hid..w1_len + hid + k * hid];
                let mut g = vec![0.0; self.params.len()];
                // dW2, db2
                for c in 0..k {
                    for j in 0..hid {
                        g[w1_len + hid + c * hid + j] = dlogits[c] * h[j];
                    }
                    g[w1_len + hid + k * hid + c] = dlogits[c];
                }
                // backprop into the hidden layer
                for j in 0..hid {
                    let mut dh = 0.0;
                    for c in 0..k {
                        dh += w2[c * hid + j] * dlogits[c];
                    }
                    let dpre = dh * (1.0 - h[j] * h[j]);
                    for i in 0..d {
                        g[j * d + i] = dpre * x[i];
                    }
                    g[w1_len + j] = dpre;
                }
                g
            }
        }
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let w = &self.params[..self.input_dim];
        let b = self.params[self.input_dim];
        w.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>() + b
    }

    fn forward_mlp(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (d, hid, k) = (self.input_dim, self.hidden, self.classes);
        let w1 = &self.params[..hid * d];
        let b1 = &self.params[hid * d..hid * d + hid];
        let w2 = &self.params[hid * d + hid..hid * d + hid + k * hid];
        let b2 = &self.params[hid * d + hid + k * hid..];
        let mut h = vec![0.0; hid];
        for j in 0..hid {
            let mut z = b1[j];
            for i in 0..d {
                z += w1[j * d + i] * x[i];
            }
            h[j] = z.tanh();
        }
        let mut logits = vec![0.0; k];
        for c in 0..k {
            let mut z = b2[c];
            for j in 0..hid {
                z += w2[c * hid + j] * h[j];
            }
            logits[c] = z;
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
        let s: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= s;
        }
        (h, probs)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// synthetic tasks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<usize>,
    pub input_dim: usize,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// Binary task: two isotropic Gaussians at +/- m in `dim` dimensions.
pub fn two_gaussians(n: usize, dim: usize, seed: RngSeed) -> Dataset {
    let m = 1.5 / (dim as f64).sqrt();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = CounterRng::derive(seed, STREAM_DATA, i as u64);
        let y = i % 2;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let x: Vec<f64> = (0..dim).map(|_| sign * m + rng.next_gaussian()).collect();
        xs.push(x);
        ys.push(y);
    }
    Dataset { xs, ys, input_dim: dim, classes: 2 }
}

/// Three-class spiral in the plane.
pub fn spiral(n: usize, classes: usize, seed: RngSeed) -> Dataset {
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let per = n / classes;
    for i in 0..n {
        let mut rng = CounterRng::derive(seed, STREAM_DATA, i as u64);
        let c = (i / per.max(1)).min(classes - 1);
        let t = (i % per.max(1)) as f64 / per.max(1) as f64;
        let r = 0.2 + 0.8 * t;
        let angle =
            t * 3.0 + c as f64 * std::f64::consts::TAU / classes as f64 + 0.1 * rng.next_gaussian();
        xs.push(vec![r * angle.cos(), r * angle.sin()]);
        ys.push(c);
    }
    Dataset { xs, ys, input_dim: 2, classes }
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Injected implementation bug, if any.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bug {
    None,
    /// Skip per-example clipping; clip the batch average and rescale.
    ClipAfterAverage,
    /// Noise vectors drawn from a pool seeded by only `pool` values.
    BiasedNoise { pool: u32 },
    /// Noise added at `actual` while accounting assumes the configured sigma.
    NoiseScale { actual: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpSgdConfig {
    /// Batch sampling rate.
    pub q: f64,
    /// Learning rate applied to the privatized sum.
    pub eta: f64,
    /// Noise multiplier (noise stdev = sigma * clip).
    pub sigma: f64,
    /// Per-example clip norm C.
    pub clip: f64,
    /// Iterations per training run.
    pub steps: u32,
    /// Canary sampling rate.
    pub qc: f64,
    pub seed: RngSeed,
    pub bug: Bug,
}

impl DpSgdConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_prob(self.q, "q")?;
        ensure_prob(self.qc, "qc")?;
        if self.q == 0.0 {
            return Err(Error::Domain("q must be in (0, 1]".into()));
        }
        if self.qc == 0.0 {
            return Err(Error::Domain("qc must be in (0, 1]".into()));
        }
        ensure_positive(self.eta, "eta")?;
        ensure_positive(self.sigma, "sigma")?;
        ensure_positive(self.clip, "clip")?;
        if self.steps == 0 {
            return Err(Error::Domain("steps must be >= 1".into()));
        }
        inject_bug_check(&self.bug)
    }
}

/// Validate a bug tag (pool size and actual noise scale).
pub fn inject_bug_check(bug: &Bug) -> Result<()> {
    match bug {
        Bug::None | Bug::ClipAfterAverage => Ok(()),
        Bug::BiasedNoise { pool } => {
            if *pool == 0 {
                Err(Error::Domain("biased-noise pool must hold at least one seed".into()))
            } else {
                Ok(())
            }
        }
        Bug::NoiseScale { actual } => {
            ensure_positive(*actual, "actual noise scale")?;
            Ok(())
        }
    }
}

/// Attach a bug to a config, validating its parameters.
pub fn inject_bug(mut cfg: DpSgdConfig, bug: Bug) -> Result<DpSgdConfig> {
    inject_bug_check(&bug)?;
    cfg.bug = bug;
    Ok(cfg)
}

/// How the canary is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CanaryKind {
    /// Zero everywhere except one index set to the clip norm.
    DiracGradient,
    /// All coordinates equal, scaled to the clip norm.
    ConstantGradient,
    /// Gaussian direction, scaled to the clip norm.
    RandomGradient,
    /// A training input; its clipped gradient is the canary.
    Input { x: Vec<f64>, y: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CanaryRefresh {
    Static,
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanarySpec {
    pub kind: CanaryKind,
    pub refresh: CanaryRefresh,
}

impl CanarySpec {
    pub fn dirac() -> Self {
        CanarySpec { kind: CanaryKind::DiracGradient, refresh: CanaryRefresh::Static }
    }

    pub fn mislabeled(data: &Dataset, seed: RngSeed) -> Self {
        let mut rng = CounterRng::derive(seed, STREAM_CANARY, u64::MAX);
        let i = rng.next_index(data.len());
        let wrong = (data.ys[i] + 1 + rng.next_index(data.classes - 1)) % data.classes;
        CanarySpec {
            kind: CanaryKind::Input { x: data.xs[i].clone(), y: wrong },
            refresh: CanaryRefresh::Static,
        }
    }

    pub fn blank(input_dim: usize, y: usize) -> Self {
        CanarySpec {
            kind: CanaryKind::Input { x: vec![0.0; input_dim], y },
            refresh: CanaryRefresh::Static,
        }
    }
}

// ---------------------------------------------------------------------------
// clipping
// ---------------------------------------------------------------------------

/// Project v onto the L2 ball of radius c: v * min(1, c / ||v||).
pub fn clip_vector(v: &[f64], c: f64) -> Result<Vec<f64>> {
    ensure_positive(c, "clip norm")?;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= c || norm == 0.0 {
        return Ok(v.to_vec());
    }
    let s = c / norm;
    Ok(v.iter().map(|x| x * s).collect())
}

fn clip_in_place(v: &mut [f64], c: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > c && norm > 0.0 {
        let s = c / norm;
        for x in v.iter_mut() {
            *x *= s;
        }
    }
}

// ---------------------------------------------------------------------------
// white-box training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct WhiteboxOutput {
    /// Final model of each training run.
    pub models: Vec<TinyModel>,
    pub obs: ObservationSet,
    pub obs_prime: ObservationSet,
    /// Largest per-example contribution norm that entered a pre-noise sum
    /// (instrumentation; equals at most C when per-example clipping is on).
    pub max_contribution_norm: f64,
    /// Distinct noise vectors seen (tracked only under the biased-noise bug).
    pub distinct_noise_vectors: usize,
}

struct NoiseSource {
    sigma_eff: f64,
    pool: Option<Vec<Vec<f64>>>,
    used: std::collections::HashSet<usize>,
}

impl NoiseSource {
    fn new(cfg: &DpSgdConfig, dim: usize) -> Self {
        let sigma_eff = match cfg.bug {
            Bug::NoiseScale { actual } => actual * cfg.clip,
            _ => cfg.sigma * cfg.clip,
        };
        let pool = match cfg.bug {
            Bug::BiasedNoise { pool } => {
                let vecs = (0..pool)
                    .map(|i| {
                        let mut rng = CounterRng::derive(cfg.seed, STREAM_POOL, i as u64);
                        (0..dim).map(|_| sigma_eff * rng.next_gaussian()).collect()
                    })
                    .collect();
                Some(vecs)
            }
            _ => None,
        };
        NoiseSource { sigma_eff, pool, used: std::collections::HashSet::new() }
    }

    fn add_noise(&mut self, v: &mut [f64], rng: &mut CounterRng) {
        match &self.pool {
            Some(pool) => {
                let j = rng.next_index(pool.len());
                self.used.insert(j);
                for (x, n) in v.iter_mut().zip(pool[j].iter()) {
                    *x += n;
                }
            }
            None => {
                for x in v.iter_mut() {
                    *x += self.sigma_eff * rng.next_gaussian();
                }
            }
        }
    }
}

/// Canary gradient for the observation dot product at one step: norm C for
/// gradient canaries, the clipped input gradient for input canaries.
fn canary_gradient(
    spec: &CanarySpec,
    model: &TinyModel,
    cfg: &DpSgdConfig,
    global_step: u64,
) -> Vec<f64> {
    let dim = model.param_count();
    let index = match spec.refresh {
        CanaryRefresh::Static => 0,
        CanaryRefresh::PerStep => global_step,
    };
    match &spec.kind {
        CanaryKind::DiracGradient => {
            let mut g = vec![0.0; dim];
            g[(index as usize) % dim] = cfg.clip;
            g
        }
        CanaryKind::ConstantGradient => {
            let v = cfg.clip / (dim as f64).sqrt();
            vec![v; dim]
        }
        CanaryKind::RandomGradient => {
            let mut rng = CounterRng::derive(cfg.seed, STREAM_CANARY, index);
            let mut g: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in g.iter_mut() {
                *x *= cfg.clip / norm.max(1e-300);
            }
            g
        }
        CanaryKind::Input { x, y } => {
            let mut g = model.grad(x, *y);
            clip_in_place(&mut g, cfg.clip);
            g
        }
    }
}

/// Pre-noise aggregate of one batch under the configured pipeline. Returns
/// the aggregate and the largest single contribution norm.
fn aggregate_batch(
    data: &Dataset,
    model: &TinyModel,
    cfg: &DpSgdConfig,
    batch_rng: &mut CounterRng,
    extra_raw: Option<&[f64]>,
) -> (Vec<f64>, f64) {
    let dim = model.param_count();
    let mut members: Vec<Vec<f64>> = Vec::new();
    for i in 0..data.len() {
        if batch_rng.next_bernoulli(cfg.q) {
            members.push(model.grad(&data.xs[i], data.ys[i]));
        }
    }
    if let Some(raw) = extra_raw {
        members.push(raw.to_vec());
    }
    let mut agg = vec![0.0; dim];
    let mut max_norm = 0.0_f64;
    match cfg.bug {
        Bug::ClipAfterAverage => {
            // the faulty pipeline averages raw gradients, clips the average,
            // and scales back up as if it were a sum of clipped gradients
            let b = members.len();
            if b == 0 {
                return (agg, 0.0);
            }
            for g in &members {
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                max_norm = max_norm.max(norm);
                for (a, x) in agg.iter_mut().zip(g.iter()) {
                    *a += x;
                }
            }
            for a in agg.iter_mut() {
                *a /= b as f64;
            }
            clip_in_place(&mut agg, cfg.clip);
            for a in agg.iter_mut() {
                *a *= b as f64;
            }
            (agg, max_norm)
        }
        _ => {
            for mut g in members {
                clip_in_place(&mut g, cfg.clip);
                let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                max_norm = max_norm.max(norm);
                for (a, x) in agg.iter_mut().zip(g.iter()) {
                    *a += x;
                }
            }
            (agg, max_norm)
        }
    }
}

/// White-box audit: per step, two batches are privatized, the canary joins
/// the D' side with probability qc, and both privatized sums are scored by
/// the canary dot product (rescaled by 1/C^2). Runs are restarted every
/// cfg.steps iterations until `total_obs` observation pairs are collected.
pub fn train_whitebox(
    data: &Dataset,
    cfg: &DpSgdConfig,
    canary: &CanarySpec,
    total_obs: usize,
) -> Result<WhiteboxOutput> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    if total_obs == 0 {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    if matches!(canary.kind, CanaryKind::Input { .. }) && matches!(cfg.bug, Bug::BiasedNoise { .. })
    {
        // the pool would be probed through a moving clipped gradient, which
        // mixes two effects the harness keeps separate
        return Err(Error::InvalidInput(
            "biased-noise runs audit with a gradient canary; input canaries are not supported"
                .into(),
        ));
    }

    let mut model = match data.classes {
        2 => TinyModel::logistic(data.input_dim),
        k => TinyModel::mlp(data.input_dim, 16, k),
    };
    let dim = model.param_count();
    let mut noise = NoiseSource::new(cfg, dim);
    let c2 = cfg.clip * cfg.clip;

    let mut obs = Vec::with_capacity(total_obs);
    let mut obs_prime = Vec::with_capacity(total_obs);
    let mut models = Vec::new();
    let mut max_contribution: f64 = 0.0;

    let mut global: u64 = 0;
    'runs: loop {
        let run = global / cfg.steps as u64;
        let mut rng_init = CounterRng::derive(cfg.seed, STREAM_INIT, run);
        model.init_random(&mut rng_init, 0.1);
        for _ in 0..cfg.steps {
            let g_prime = canary_gradient(canary, &model, cfg, global);

            // world D
            let mut batch_rng = CounterRng::derive(cfg.seed, STREAM_BATCH_D, global);
            let (mut noisy, m1) = aggregate_batch(data, &model, cfg, &mut batch_rng, None);
            let mut noise_rng = CounterRng::derive(cfg.seed, STREAM_NOISE_D, global);
            noise.add_noise(&mut noisy, &mut noise_rng);

            // world D'
            let mut flip_rng = CounterRng::derive(cfg.seed, STREAM_CANARY_FLIP, global);
            let canary_in = flip_rng.next_bernoulli(cfg.qc);
            let mut batch_rng_p = CounterRng::derive(cfg.seed, STREAM_BATCH_DP, global);
            let routed = matches!(cfg.bug, Bug::ClipAfterAverage) && canary_in;
            let boosted: Vec<f64>;
            let extra = if routed {
                let norm = g_prime.iter().map(|x| x * x).sum::<f64>().sqrt();
                boosted = g_prime
                    .iter()
                    .map(|x| x * BUG_CANARY_BOOST * cfg.clip / norm.max(1e-300))
                    .collect();
                Some(boosted.as_slice())
            } else {
                None
            };
            let (mut noisy_p, m2) = aggregate_batch(data, &model, cfg, &mut batch_rng_p, extra);
            let mut noise_rng_p = CounterRng::derive(cfg.seed, STREAM_NOISE_DP, global);
            noise.add_noise(&mut noisy_p, &mut noise_rng_p);
            if canary_in && !routed {
                for (a, g) in noisy_p.iter_mut().zip(g_prime.iter()) {
                    *a += g;
                }
            }

            max_contribution = max_contribution.max(m1).max(m2);
            let dot = |v: &[f64]| v.iter().zip(g_prime.iter()).map(|(a, b)| a * b).sum::<f64>();
            obs.push(dot(&noisy) / c2);
            obs_prime.push(dot(&noisy_p) / c2);

            // model advances on the D-world gradient only
            for (p, g) in model.params.iter_mut().zip(noisy.iter()) {
                *p -= cfg.eta * g;
            }
            global += 1;
            if obs.len() == total_obs {
                models.push(model.clone());
                break 'runs;
            }
        }
        models.push(model.clone());
    }

    Ok(WhiteboxOutput {
        models,
        obs: ObservationSet { world: World::D, seed: cfg.seed, scores: obs },
        obs_prime: ObservationSet { world: World::Dprime, seed: cfg.seed, scores: obs_prime },
        max_contribution_norm: max_contribution,
        distinct_noise_vectors: noise.used.len(),
    })
}

// ---------------------------------------------------------------------------
// black-box training
// ---------------------------------------------------------------------------

/// Train one model with DP-SGD and return it.
pub fn train_model(data: &Dataset, cfg: &DpSgdConfig) -> Result<TinyModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    let mut model = match data.classes {
        2 => TinyModel::logistic(data.input_dim),
        k => TinyModel::mlp(data.input_dim, 16, k),
    };
    let dim = model.param_count();
    let mut noise = NoiseSource::new(cfg, dim);
    let mut rng_init = CounterRng::derive(cfg.seed, STREAM_INIT, 0);
    model.init_random(&mut rng_init, 0.1);
    for t in 0..cfg.steps as u64 {
        let mut batch_rng = CounterRng::derive(cfg.seed, STREAM_BATCH_D, t);
        let (mut noisy, _) = aggregate_batch(data, &model, cfg, &mut batch_rng, None);
        let mut noise_rng = CounterRng::derive(cfg.seed, STREAM_NOISE_D, t);
        noise.add_noise(&mut noisy, &mut noise_rng);
        for (p, g) in model.params.iter_mut().zip(noisy.iter()) {
            *p -= cfg.eta * g;
        }
    }
    Ok(model)
}

/// Black-box audit: trains `runs` model pairs on D and D + canary, scoring
/// each trained model by the canary-label logit ln(p / (1 - p)).
pub fn train_blackbox(
    data: &Dataset,
    cfg: &DpSgdConfig,
    canary_x: &[f64],
    canary_y: usize,
    runs: usize,
) -> Result<(ObservationSet, ObservationSet)> {
    cfg.validate()?;
    if runs == 0 {
        return Err(Error::InvalidInput("need at least one run".into()));
    }
    if canary_y >= data.classes {
        return Err(Error::InvalidInput(format!(
            "canary label {canary_y} out of range for {} classes",
            data.classes
        )));
    }
    let mut with_canary = data.clone();
    with_canary.xs.push(canary_x.to_vec());
    with_canary.ys.push(canary_y);

    let score = |m: &TinyModel| {
        let p = m.label_prob(canary_x, canary_y).clamp(1e-12, 1.0 - 1e-12);
        (p / (1.0 - p)).ln()
    };
    let pairs: Result<Vec<(f64, f64)>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut seed_rng = CounterRng::derive(cfg.seed, STREAM_BLACKBOX, r as u64);
            let mut cfg_d = *cfg;
            cfg_d.seed = RngSeed(seed_rng.next_u64());
            let mut cfg_dp = *cfg;
            cfg_dp.seed = RngSeed(seed_rng.next_u64());
            let m_d = train_model(data, &cfg_d)?;
            let m_dp = train_model(&with_canary, &cfg_dp)?;
            Ok((score(&m_d), score(&m_dp)))
        })
        .collect();
    let pairs = pairs?;
    Ok((
        ObservationSet {
            world: World::D,
            seed: cfg.seed,
            scores: pairs.iter().map(|p| p.0).collect(),
        },
        ObservationSet {
            world: World::Dprime,
            seed: cfg.seed,
            scores: pairs.iter().map(|p| p.1).collect(),
        },
    ))
}

// ---------------------------------------------------------------------------
// input-canary crafting
// ---------------------------------------------------------------------------

/// Craft an input whose gradient is near-orthogonal to the mean distribution
/// gradient: descend |cos(grad(x), mean_grad)| on x with backtracking step
/// acceptance, so the objective never increases.
pub fn craft_input_canary(
    dist_data: &Dataset,
    model: &TinyModel,
    steps: usize,
    eta: f64,
    start_x: &[f64],
    start_y: usize,
) -> Result<Vec<f64>> {
    if dist_data.is_empty() {
        return Err(Error::InvalidInput("distribution dataset is empty".into()));
    }
    ensure_positive(eta, "eta")?;
    let dim = model.param_count();
    let mut g_dist = vec![0.0; dim];
    for i in 0..dist_data.len() {
        let g = model.grad(&dist_data.xs[i], dist_data.ys[i]);
        for (a, x) in g_dist.iter_mut().zip(g.iter()) {
            *a += x;
        }
    }
    let nf = dist_data.len() as f64;
    for a in g_dist.iter_mut() {
        *a /= nf;
    }

    let objective = |x: &[f64]| -> Result<f64> {
        let g = model.grad(x, start_y);
        let dot: f64 = g.iter().zip(g_dist.iter()).map(|(a, b)| a * b).sum();
        let na = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = g_dist.iter().map(|v| v * v).sum::<f64>().sqrt();
        let cos = dot / (na * nb).max(1e-300);
        if !cos.is_finite() {
            return Err(Error::Convergence("non-finite canary objective".into()));
        }
        Ok(cos.abs())
    };

    let mut x = start_x.to_vec();
    let mut f = objective(&x)?;
    for _ in 0..steps {
        // central finite differences on the input
        let mut grad_x = vec![0.0; x.len()];
        for i in 0..x.len() {
            let h = 1e-4 * (1.0 + x[i].abs());
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            grad_x[i] = (objective(&xp)? - objective(&xm)?) / (2.0 * h);
            if !grad_x[i].is_finite() {
                return Err(Error::Convergence("non-finite canary gradient".into()));
            }
        }
        // backtracking: accept only non-increasing steps
        let mut step = eta;
        let mut accepted = false;
        for _ in 0..20 {
            let cand: Vec<f64> =
                x.iter().zip(grad_x.iter()).map(|(xi, gi)| xi - step * gi).collect();
            let fc = objective(&cand)?;
            if fc <= f {
                x = cand;
                f = fc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(x)
}
