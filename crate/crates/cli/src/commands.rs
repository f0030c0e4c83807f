//! Subcommand implementations.

use crate::manifest::ManifestBuilder;
use crate::{
    output_dir, AccountantArgs, AuditArgs, Command, ComposeArgs, SimulateArgs, SweepArgs,
    TradeoffArgs, TrainArgs, VerifyArgs, EXIT_OK, EXIT_VIOLATION,
};
use dpaudit_core::accountant::{pld_build, steps_to_end_eps, MechanismSpec};
use dpaudit_core::attack::{sweep_thresholds, RateCurve};
use dpaudit_core::dpsgd::{
    craft_input_canary, inject_bug, spiral, train_blackbox, train_model, train_whitebox,
    two_gaussians, Bug, CanaryKind, CanaryRefresh, CanarySpec, Dataset, DpSgdConfig,
};
use dpaudit_core::error::{Error, Result};
use dpaudit_core::estimators::{audit_counts, AuditMethod, AuditResult, ErrorCounts};
use dpaudit_core::io::{read_observations, write_observations};
use dpaudit_core::mechanisms::{
    simulate_gaussian_pair, simulate_randomized_response, simulate_subsampled_gaussian_pair,
    RngSeed,
};
use dpaudit_core::tradeoff::{
    approx_tradeoff_from_accountant, tradeoff_eps_delta, tradeoff_gdp, Combiner, TradeoffCurve,
};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

pub fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Train(a) => cmd_train(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Tradeoff(a) => cmd_tradeoff(a),
        Command::Accountant(a) => cmd_accountant(a),
        Command::Compose(a) => cmd_compose(a),
        Command::Pipeline(a) => crate::pipeline::cmd_pipeline(a),
    }
}

fn default_out(name: &str, out: &Option<PathBuf>) -> PathBuf {
    out.clone().unwrap_or_else(|| output_dir().join(name))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(a: SimulateArgs) -> Result<u8> {
    let seed = RngSeed(a.seed);
    let (d, dp) = match a.mechanism.as_str() {
        "gaussian" => simulate_gaussian_pair(a.sigma, a.n, seed)?,
        "subsampled" => simulate_subsampled_gaussian_pair(a.sigma, a.q, a.n, seed)?,
        "rr" => simulate_randomized_response(a.eps, a.n, seed)?,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown mechanism '{other}' (expected gaussian, subsampled, rr)"
            )))
        }
    };
    let out = default_out("observations.csv", &a.out);
    let mut mf = ManifestBuilder::new("simulate", Some(a.seed));
    write_observations(&out, &d, &dp)?;
    mf.output(&out);
    mf.write()?;
    println!("{}", out.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn parse_bug(s: &str) -> Result<Bug> {
    if s == "none" {
        return Ok(Bug::None);
    }
    if s == "clip-after-avg" {
        return Ok(Bug::ClipAfterAverage);
    }
    if let Some(k) = s.strip_prefix("biased-noise:") {
        let pool: u32 = k
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad pool size in '{s}'")))?;
        return Ok(Bug::BiasedNoise { pool });
    }
    if let Some(v) = s.strip_prefix("noise-scale:") {
        let actual: f64 = v
            .parse()
            .map_err(|_| Error::InvalidInput(format!("bad noise scale in '{s}'")))?;
        return Ok(Bug::NoiseScale { actual });
    }
    Err(Error::InvalidInput(format!(
        "unknown bug '{s}' (expected none, clip-after-avg, biased-noise:K, noise-scale:S)"
    )))
}

fn build_dataset(task: &str, size: usize, dim: usize, seed: RngSeed) -> Result<Dataset> {
    match task {
        "logistic" => Ok(two_gaussians(size, dim, seed)),
        "mlp" => Ok(spiral(size, 3, seed)),
        other => Err(Error::InvalidInput(format!("unknown task '{other}' (logistic, mlp)"))),
    }
}

fn build_canary(
    name: &str,
    refresh: &str,
    data: &Dataset,
    cfg: &DpSgdConfig,
) -> Result<CanarySpec> {
    let refresh = match refresh {
        "static" => CanaryRefresh::Static,
        "per-step" => CanaryRefresh::PerStep,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown refresh '{other}' (static, per-step)"
            )))
        }
    };
    let spec = match name {
        "dirac" => CanarySpec { kind: CanaryKind::DiracGradient, refresh },
        "constant" => CanarySpec { kind: CanaryKind::ConstantGradient, refresh },
        "random" => CanarySpec { kind: CanaryKind::RandomGradient, refresh },
        "mislabeled" => CanarySpec { refresh, ..CanarySpec::mislabeled(data, cfg.seed) },
        "blank" => CanarySpec { refresh, ..CanarySpec::blank(data.input_dim, 0) },
        "crafted" => {
            // craft against a briefly trained model so gradients are informative
            let mut warm = *cfg;
            warm.steps = cfg.steps.min(100);
            let model = train_model(data, &warm)?;
            let base = CanarySpec::mislabeled(data, cfg.seed);
            let (x0, y0) = match &base.kind {
                CanaryKind::Input { x, y } => (x.clone(), *y),
                _ => unreachable!(),
            };
            let x = craft_input_canary(data, &model, 50, 0.3, &x0, y0)?;
            CanarySpec { kind: CanaryKind::Input { x, y: y0 }, refresh }
        }
        other => Err(Error::InvalidInput(format!(
            "unknown canary '{other}' (dirac, constant, random, mislabeled, blank, crafted)"
        )))?,
    };
    Ok(spec)
}

fn parse_window(s: &str) -> Result<(usize, usize)> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| Error::InvalidInput(format!("window must be LO:HI, got '{s}'")))?;
    let lo = lo.parse().map_err(|_| Error::InvalidInput(format!("bad window start '{lo}'")))?;
    let hi = hi.parse().map_err(|_| Error::InvalidInput(format!("bad window end '{hi}'")))?;
    if lo >= hi {
        return Err(Error::InvalidInput(format!("empty window {lo}:{hi}")));
    }
    Ok((lo, hi))
}

fn cmd_train(a: TrainArgs) -> Result<u8> {
    let seed = RngSeed(a.seed);
    let data = build_dataset(&a.task, a.data_size, a.dim, RngSeed(a.seed ^ 0xD5))?;
    let cfg = inject_bug(
        DpSgdConfig {
            q: a.q,
            eta: a.eta,
            sigma: a.sigma,
            clip: a.clip,
            steps: a.steps,
            qc: a.qc,
            seed,
            bug: Bug::None,
        },
        parse_bug(&a.bug)?,
    )?;
    let out = default_out("observations.csv", &a.out);
    let mut mf = ManifestBuilder::new("train", Some(a.seed));
    match a.mode.as_str() {
        "whitebox" => {
            let canary = build_canary(&a.canary, &a.canary_refresh, &data, &cfg)?;
            let result = train_whitebox(&data, &cfg, &canary, a.observations)?;
            let (mut d, mut dp) = (result.obs, result.obs_prime);
            if let Some(w) = &a.obs_window {
                let (lo, hi) = parse_window(w)?;
                let keep = |scores: &[f64]| -> Vec<f64> {
                    scores
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| {
                            let step_in_run = i % cfg.steps as usize;
                            step_in_run >= lo && step_in_run < hi
                        })
                        .map(|(_, s)| *s)
                        .collect()
                };
                d.scores = keep(&d.scores);
                dp.scores = keep(&dp.scores);
                if d.scores.is_empty() {
                    return Err(Error::InvalidInput("observation window kept nothing".into()));
                }
            }
            write_observations(&out, &d, &dp)?;
        }
        "blackbox" => {
            // only input-space canaries make sense without update access
            let (x, y) = match a.canary.as_str() {
                "blank" => (vec![0.0; data.input_dim], 0),
                "mislabeled" => match CanarySpec::mislabeled(&data, seed).kind {
                    CanaryKind::Input { x, y } => (x, y),
                    _ => unreachable!(),
                },
                other => {
                    return Err(Error::InvalidInput(format!(
                        "black-box mode takes an input canary (mislabeled, blank), got '{other}'"
                    )))
                }
            };
            let (d, dp) = train_blackbox(&data, &cfg, &x, y, a.runs)?;
            write_observations(&out, &d, &dp)?;
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown mode '{other}' (whitebox, blackbox)"
            )))
        }
    }
    mf.output(&out);
    mf.write()?;
    println!("{}", out.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// audit / verify
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct AuditReport {
    #[serde(flatten)]
    pub result: AuditResult,
    pub n: u64,
    pub fp: u64,
    pub fn_: u64,
    pub threshold: f64,
    pub sweep: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Thresholds the Bayesian methods evaluate during a sweep (the quadrature
/// bounds are costlier than the closed forms).
const ZB_SWEEP_CAP: usize = 512;
/// Thresholds for the sub-sampled curve fit, which rebuilds accountants.
const FIT_SWEEP_CAP: usize = 33;

fn subsample_points(curve: &RateCurve, cap: usize) -> Vec<&dpaudit_core::attack::RatePoint> {
    let pts: Vec<_> = curve.points.iter().collect();
    if pts.len() <= cap {
        return pts;
    }
    let step = (pts.len() - 1) as f64 / (cap - 1) as f64;
    (0..cap).map(|i| pts[(i as f64 * step).round() as usize]).collect()
}

/// Maximize the method's bound over sweep thresholds.
fn best_over_sweep(
    o: &[f64],
    op: &[f64],
    method: AuditMethod,
    delta: f64,
    gamma: f64,
    q: f64,
    steps: u32,
) -> Result<(AuditResult, ErrorCounts, f64)> {
    let curve = sweep_thresholds(o, op)?;
    let cap = match method {
        AuditMethod::FdpZb | AuditMethod::DpZb => ZB_SWEEP_CAP,
        AuditMethod::FdpCp if q < 1.0 => FIT_SWEEP_CAP,
        _ => usize::MAX,
    };
    let mut best: Option<(AuditResult, ErrorCounts, f64)> = None;
    for p in subsample_points(&curve, cap) {
        let counts = ErrorCounts::new(p.fp, p.fn_, curve.n)?;
        let r = audit_counts(method, counts, delta, gamma, q, steps)?;
        if best.as_ref().is_none_or(|(b, _, _)| r.eps_lower > b.eps_lower) {
            best = Some((r, counts, p.threshold));
        }
    }
    best.ok_or_else(|| Error::InvalidInput("sweep produced no thresholds".into()))
}

fn run_audit(a: &AuditArgs) -> Result<AuditReport> {
    let method: AuditMethod = a.method.parse()?;
    let gamma = 1.0 - a.confidence;
    let (d, dp) = read_observations(&a.observations)?;
    if d.len() != dp.len() {
        return Err(Error::InvalidInput(format!(
            "worlds have different sizes ({} vs {}); the estimators assume equal trials",
            d.len(),
            dp.len()
        )));
    }

    if let Some(h) = a.holdout_fraction {
        if !(0.0 < h && h < 1.0) {
            return Err(Error::InvalidInput("holdout fraction must be in (0,1)".into()));
        }
        // choose the threshold on the holdout, bound on the rest
        let cut_d = ((d.len() as f64) * h).round() as usize;
        let (hold_d, rest_d) = d.split_at(cut_d.clamp(1, d.len() - 1));
        let (hold_dp, rest_dp) = dp.split_at(cut_d.clamp(1, dp.len() - 1));
        let (_, _, z) = best_over_sweep(hold_d, hold_dp, method, a.delta, gamma, a.q, a.steps)?;
        let counts = dpaudit_core::attack::compute_error_counts(rest_d, rest_dp, z)?;
        let result = audit_counts(method, counts, a.delta, gamma, a.q, a.steps)?;
        return Ok(AuditReport {
            result,
            n: counts.n,
            fp: counts.fp,
            fn_: counts.fn_,
            threshold: z,
            sweep: true,
            warning: None,
            note: composition_note(a),
        });
    }

    if a.sweep {
        let (result, counts, z) =
            best_over_sweep(&d, &dp, method, a.delta, gamma, a.q, a.steps)?;
        return Ok(AuditReport {
            result,
            n: counts.n,
            fp: counts.fp,
            fn_: counts.fn_,
            threshold: z,
            sweep: true,
            warning: Some(
                "threshold maximized on the audited observations; the bound is exploratory \
                 (use --holdout-fraction for a valid split)"
                    .into(),
            ),
            note: composition_note(a),
        });
    }

    let z = a.threshold.ok_or_else(|| {
        Error::InvalidInput("provide --threshold Z or --sweep (or --holdout-fraction)".into())
    })?;
    let counts = dpaudit_core::attack::compute_error_counts(&d, &dp, z)?;
    let result = audit_counts(method, counts, a.delta, gamma, a.q, a.steps)?;
    Ok(AuditReport {
        result,
        n: counts.n,
        fp: counts.fp,
        fn_: counts.fn_,
        threshold: z,
        sweep: false,
        warning: None,
        note: composition_note(a),
    })
}

fn composition_note(a: &AuditArgs) -> Option<String> {
    if a.steps > 1 || a.q < 1.0 {
        Some(
            "composed bound is an estimate: sub-sampled per-step lower bounds are not \
             certified by tight composition"
                .into(),
        )
    } else {
        None
    }
}

fn cmd_audit(a: AuditArgs) -> Result<u8> {
    let report = run_audit(&a)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    claimed_eps: f64,
    violation: bool,
    margin: f64,
    audit: AuditReport,
}

fn cmd_verify(v: VerifyArgs) -> Result<u8> {
    let audit = run_audit(&v.audit)?;
    let violation = audit.result.eps_lower > v.claimed_eps;
    let report = VerifyReport {
        claimed_eps: v.claimed_eps,
        violation,
        margin: audit.result.eps_lower - v.claimed_eps,
        audit,
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(if violation { EXIT_VIOLATION } else { EXIT_OK })
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

fn cmd_sweep(a: SweepArgs) -> Result<u8> {
    let (d, dp) = read_observations(&a.observations)?;
    let curve = sweep_thresholds(&d, &dp)?;
    let out = default_out("sweep.csv", &a.out);
    let mut mf = ManifestBuilder::new("sweep", None);
    mf.input(&a.observations);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(w, "threshold,alpha,beta")?;
    for p in &curve.points {
        writeln!(w, "{:.9e},{:.9e},{:.9e}", p.threshold, p.alpha, p.beta)?;
    }
    w.flush()?;
    mf.output(&out);
    mf.write()?;
    println!("{}", out.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// tradeoff
// ---------------------------------------------------------------------------

fn cmd_tradeoff(a: TradeoffArgs) -> Result<u8> {
    let curve: TradeoffCurve = match a.family.as_str() {
        "eps-delta" => tradeoff_eps_delta(a.eps, a.delta)?,
        "gdp" => tradeoff_gdp(a.mu)?,
        "pld-approx" => {
            let combiner = match a.combiner.as_str() {
                "min" => Combiner::Min,
                "max" => Combiner::Max,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "unknown combiner '{other}' (min, max)"
                    )))
                }
            };
            let acct = pld_build(MechanismSpec::new(a.sigma, a.q, a.steps, 1.0)?)?;
            approx_tradeoff_from_accountant(|d| acct.eps_of_delta(d), a.lines, a.delta, combiner)?
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown family '{other}' (eps-delta, gdp, pld-approx)"
            )))
        }
    };
    if a.points < 2 {
        return Err(Error::InvalidInput("need at least 2 points".into()));
    }
    let out = default_out("tradeoff.csv", &a.out);
    let mut mf = ManifestBuilder::new("tradeoff", None);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
    writeln!(w, "alpha,beta")?;
    for (alpha, beta) in curve.sample(a.points) {
        writeln!(w, "{alpha:.9e},{beta:.9e}")?;
    }
    w.flush()?;
    mf.output(&out);
    mf.write()?;
    println!("{}", out.display());
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// accountant / compose
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct AccountantReport {
    sigma: f64,
    q: f64,
    steps: u32,
    delta: f64,
    eps: f64,
}

fn cmd_accountant(a: AccountantArgs) -> Result<u8> {
    let acct = pld_build(MechanismSpec::new(a.sigma, a.q, a.steps, 1.0)?)?;
    let eps = acct.eps_of_delta(a.delta)?;
    let report =
        AccountantReport { sigma: a.sigma, q: a.q, steps: a.steps, delta: a.delta, eps };
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    if a.curve {
        if a.points < 2 {
            return Err(Error::InvalidInput("need at least 2 curve points".into()));
        }
        let out = default_out("accountant_curve.csv", &a.out);
        let mut mf = ManifestBuilder::new("accountant", None);
        let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
        writeln!(w, "delta,eps")?;
        for i in 0..a.points {
            let dp = a.delta + (1.0 - 2.0 * a.delta) * i as f64 / (a.points - 1) as f64;
            writeln!(w, "{dp:.9e},{:.9e}", acct.eps_of_delta(dp)?)?;
        }
        w.flush()?;
        mf.output(&out);
        mf.write()?;
        eprintln!("curve: {}", out.display());
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct ComposeReport {
    mu_step: f64,
    steps: u32,
    q: f64,
    delta: f64,
    eps: f64,
    note: String,
}

fn cmd_compose(a: ComposeArgs) -> Result<u8> {
    let eps = steps_to_end_eps(a.mu_step, a.steps, a.q, a.delta)?;
    let note = if a.q < 1.0 {
        "estimate: the sub-sampled per-step bound is composed through the PLD accountant \
         and is not a certified lower bound"
            .to_string()
    } else {
        "tight GDP composition".to_string()
    };
    let report =
        ComposeReport { mu_step: a.mu_step, steps: a.steps, q: a.q, delta: a.delta, eps, note };
    println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
    Ok(EXIT_OK)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value).expect("serializable"))?;
    Ok(())
}
