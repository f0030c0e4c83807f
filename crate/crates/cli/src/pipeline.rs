//! Multi-stage experiments driven by a TOML config: generate observations
//! (simulate or train), sweep, audit with one or more methods, optionally
//! compose, and write every artifact plus a manifest into one directory.

use crate::commands::{parse_bug, write_json};
use crate::manifest::ManifestBuilder;
use crate::{output_dir, PipelineArgs, EXIT_OK};
use dpaudit_core::attack::{compute_error_counts, sweep_thresholds};
use dpaudit_core::dpsgd::{
    inject_bug, spiral, train_whitebox, two_gaussians, Bug, CanaryKind, CanaryRefresh,
    CanarySpec, Dataset, DpSgdConfig,
};
use dpaudit_core::error::{Error, Result};
use dpaudit_core::estimators::{audit_counts, AuditMethod, ErrorCounts};
use dpaudit_core::io::write_observations;
use dpaudit_core::mechanisms::{simulate_gaussian_pair, simulate_subsampled_gaussian_pair, RngSeed};
use dpaudit_core::tradeoff::gdp_mu_for_eps;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Deserialize)]
pub struct PipelineConfig {
    pub pipeline: PipelineMeta,
    #[serde(default)]
    pub simulate: Option<SimulateStage>,
    #[serde(default)]
    pub train: Option<TrainStage>,
    pub audit: AuditStage,
    #[serde(default)]
    pub compose: Option<ComposeStage>,
}

#[derive(Debug, Deserialize)]
pub struct PipelineMeta {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct SimulateStage {
    pub mechanism: String,
    /// GDP parameters; sigma = 1 / mu per cell.
    pub mu_values: Vec<f64>,
    pub n_values: Vec<usize>,
    pub runs: usize,
    #[serde(default)]
    pub q: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct TrainStage {
    pub task: String,
    pub data_size: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub q: f64,
    pub eta: f64,
    pub clip: f64,
    pub steps: u32,
    pub observations: usize,
    #[serde(default = "default_qc")]
    pub qc: f64,
    #[serde(default = "default_canary")]
    pub canary: String,
    /// Noise multiplier the accountant is told; derived from claimed_eps
    /// when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub claimed_eps: Option<f64>,
    /// Noise-scale sweep: actual sigma = sigma * factor (1.0 = honest).
    #[serde(default)]
    pub actual_scale_factors: Option<Vec<f64>>,
    /// Fixed bug tag, mutually exclusive with the scale sweep.
    #[serde(default)]
    pub bug: Option<String>,
}

fn default_dim() -> usize {
    20
}
fn default_qc() -> f64 {
    1.0
}
fn default_canary() -> String {
    "dirac".into()
}

#[derive(Debug, Deserialize)]
pub struct AuditStage {
    pub methods: Vec<String>,
    pub delta: f64,
    pub confidence: f64,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub sweep: bool,
}

#[derive(Debug, Deserialize)]
pub struct ComposeStage {
    pub steps: u32,
    pub q: f64,
}

#[derive(Debug, Serialize)]
struct ResultRow {
    label: String,
    method: String,
    n: u64,
    runs: usize,
    mean_eps_lower: f64,
    min_eps_lower: f64,
    max_eps_lower: f64,
    mean_mu_lower: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    claimed_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    violation_rate: Option<f64>,
}

struct Cell {
    label: String,
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

pub fn cmd_pipeline(args: PipelineArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", args.config.display())))?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
    if args.jobs > 0 {
        // worker count must not change results; it only bounds parallelism
        let _ = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build_global();
    }

    let out_dir: PathBuf = args
        .out_dir
        .clone()
        .or_else(|| cfg.pipeline.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| output_dir().join(&cfg.pipeline.name));
    std::fs::create_dir_all(&out_dir)?;
    let mut mf = ManifestBuilder::new("pipeline", Some(cfg.pipeline.seed));
    mf.input(&args.config);

    // stage 1: observations
    let cells = match (&cfg.simulate, &cfg.train) {
        (Some(s), None) => run_simulate_stage(s, cfg.pipeline.seed)?,
        (None, Some(t)) => run_train_stage(t, &cfg.audit, cfg.pipeline.seed)?,
        _ => {
            return Err(Error::InvalidInput(
                "config needs exactly one of [simulate] or [train]".into(),
            ))
        }
    };
    if cells.is_empty() || cells.iter().any(|c| c.pairs.is_empty()) {
        return Err(Error::InvalidInput("observation stage produced no data".into()));
    }
    for cell in &cells {
        let (d, dp) = &cell.pairs[0];
        if d.is_empty() || dp.is_empty() {
            return Err(Error::InvalidInput(format!(
                "observation stage produced an empty world in cell {}",
                cell.label
            )));
        }
    }

    // representative CSV + sweep per cell (first run)
    for cell in &cells {
        let (d, dp) = &cell.pairs[0];
        let (od, odp) = dpaudit_core::io::to_observation_sets(
            d.clone(),
            dp.clone(),
            RngSeed(cfg.pipeline.seed),
        );
        let obs_path = out_dir.join(format!("obs_{}.csv", cell.label));
        write_observations(&obs_path, &od, &odp)?;
        mf.output(&obs_path);
        let curve = sweep_thresholds(d, dp)?;
        let sweep_path = out_dir.join(format!("sweep_{}.csv", cell.label));
        let mut w = std::io::BufWriter::new(std::fs::File::create(&sweep_path)?);
        writeln!(w, "threshold,alpha,beta")?;
        for p in &curve.points {
            writeln!(w, "{:.9e},{:.9e},{:.9e}", p.threshold, p.alpha, p.beta)?;
        }
        w.flush()?;
        mf.output(&sweep_path);
    }

    // stage 2: audits
    let gamma = 1.0 - cfg.audit.confidence;
    let (comp_steps, comp_q) = cfg.compose.as_ref().map(|c| (c.steps, c.q)).unwrap_or((1, 1.0));
    let claimed = cfg.train.as_ref().and_then(|t| t.claimed_eps);
    let mut rows = Vec::new();
    for cell in &cells {
        for method_name in &cfg.audit.methods {
            let method: AuditMethod = method_name.parse()?;
            // the Katz baseline carries no delta
            let delta = if method == AuditMethod::Katz { 0.0 } else { cfg.audit.delta };
            let mut eps_vals = Vec::new();
            let mut mu_vals = Vec::new();
            let mut n_obs = 0;
            for (d, dp) in &cell.pairs {
                let result = if cfg.audit.sweep {
                    best_effort_sweep(d, dp, method, delta, gamma, comp_q, comp_steps)?
                } else {
                    let z = cfg.audit.threshold.ok_or_else(|| {
                        Error::InvalidInput("audit stage needs threshold or sweep".into())
                    })?;
                    let counts = compute_error_counts(d, dp, z)?;
                    n_obs = counts.n;
                    audit_counts(method, counts, delta, gamma, comp_q, comp_steps)?
                };
                if cfg.audit.sweep {
                    n_obs = d.len() as u64;
                }
                eps_vals.push(result.eps_lower);
                mu_vals.push(result.mu_lower);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            rows.push(ResultRow {
                label: cell.label.clone(),
                method: method_name.clone(),
                n: n_obs,
                runs: eps_vals.len(),
                mean_eps_lower: mean(&eps_vals),
                min_eps_lower: eps_vals.iter().cloned().fold(f64::INFINITY, f64::min),
                max_eps_lower: eps_vals.iter().cloned().fold(0.0, f64::max),
                mean_mu_lower: mean(&mu_vals),
                claimed_eps: claimed,
                violation_rate: claimed.map(|c| {
                    eps_vals.iter().filter(|&&e| e > c).count() as f64 / eps_vals.len() as f64
                }),
            });
        }
    }

    // stage 3: artifacts
    let table_path = out_dir.join("table.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&table_path)?);
    writeln!(w, "label,method,n,runs,mean_eps_lower,min_eps_lower,max_eps_lower,mean_mu_lower")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.label, r.method, r.n, r.runs, r.mean_eps_lower, r.min_eps_lower, r.max_eps_lower,
            r.mean_mu_lower
        )?;
    }
    w.flush()?;
    mf.output(&table_path);
    let results_path = out_dir.join("results.json");
    write_json(&results_path, &rows)?;
    mf.output(&results_path);
    mf.write()?;
    println!("{}", out_dir.display());
    Ok(EXIT_OK)
}

fn best_effort_sweep(
    d: &[f64],
    dp: &[f64],
    method: AuditMethod,
    delta: f64,
    gamma: f64,
    q: f64,
    steps: u32,
) -> Result<dpaudit_core::estimators::AuditResult> {
    let curve = sweep_thresholds(d, dp)?;
    let cap = match method {
        AuditMethod::FdpZb | AuditMethod::DpZb => 512,
        _ => usize::MAX,
    };
    let pts: Vec<_> = curve.points.iter().collect();
    let chosen: Vec<_> = if pts.len() <= cap {
        pts
    } else {
        let step = (pts.len() - 1) as f64 / (cap - 1) as f64;
        (0..cap).map(|i| pts[(i as f64 * step).round() as usize]).collect()
    };
    let mut best: Option<dpaudit_core::estimators::AuditResult> = None;
    for p in chosen {
        let counts = ErrorCounts::new(p.fp, p.fn_, curve.n)?;
        let r = audit_counts(method, counts, delta, gamma, q, steps)?;
        if best.as_ref().is_none_or(|b| r.eps_lower > b.eps_lower) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::InvalidInput("sweep produced no thresholds".into()))
}

fn run_simulate_stage(s: &SimulateStage, seed: u64) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for &mu in &s.mu_values {
        if mu <= 0.0 {
            return Err(Error::InvalidInput("mu values must be positive".into()));
        }
        let sigma = 1.0 / mu;
        for &n in &s.n_values {
            let mut pairs = Vec::with_capacity(s.runs);
            for run in 0..s.runs {
                let cell_seed =
                    RngSeed(seed ^ (mu.to_bits().rotate_left(17)) ^ ((n as u64) << 20) ^ run as u64);
                let (d, dp) = match s.mechanism.as_str() {
                    "gaussian" => simulate_gaussian_pair(sigma, n, cell_seed)?,
                    "subsampled" => simulate_subsampled_gaussian_pair(
                        sigma,
                        s.q.unwrap_or(1.0),
                        n,
                        cell_seed,
                    )?,
                    other => {
                        return Err(Error::InvalidInput(format!(
                            "pipeline simulate supports gaussian/subsampled, got '{other}'"
                        )))
                    }
                };
                pairs.push((d.scores, dp.scores));
            }
            cells.push(Cell { label: format!("mu{mu}_n{n}"), pairs });
        }
    }
    Ok(cells)
}

fn run_train_stage(t: &TrainStage, audit: &AuditStage, seed: u64) -> Result<Vec<Cell>> {
    let data: Dataset = match t.task.as_str() {
        "logistic" => two_gaussians(t.data_size, t.dim, RngSeed(seed ^ 0xD5)),
        "mlp" => spiral(t.data_size, 3, RngSeed(seed ^ 0xD5)),
        other => return Err(Error::InvalidInput(format!("unknown task '{other}'"))),
    };
    let sigma = match (t.sigma, t.claimed_eps) {
        (Some(s), _) => s,
        (None, Some(eps)) => 1.0 / gdp_mu_for_eps(eps, audit.delta)?,
        (None, None) => {
            return Err(Error::InvalidInput("train stage needs sigma or claimed_eps".into()))
        }
    };
    let base = DpSgdConfig {
        q: t.q,
        eta: t.eta,
        sigma,
        clip: t.clip,
        steps: t.steps,
        qc: t.qc,
        seed: RngSeed(seed),
        bug: Bug::None,
    };
    let canary = match t.canary.as_str() {
        "dirac" => CanarySpec::dirac(),
        "constant" => CanarySpec { kind: CanaryKind::ConstantGradient, refresh: CanaryRefresh::Static },
        "random" => CanarySpec { kind: CanaryKind::RandomGradient, refresh: CanaryRefresh::Static },
        other => {
            return Err(Error::InvalidInput(format!(
                "pipeline train uses gradient canaries (dirac/constant/random), got '{other}'"
            )))
        }
    };

    let mut cells = Vec::new();
    match (&t.actual_scale_factors, &t.bug) {
        (Some(factors), None) => {
            for &f in factors {
                let bug = if (f - 1.0).abs() < 1e-12 {
                    Bug::None
                } else {
                    Bug::NoiseScale { actual: sigma * f }
                };
                let cfg = inject_bug(base, bug)?;
                let out = train_whitebox(&data, &cfg, &canary, t.observations)?;
                cells.push(Cell {
                    label: format!("scale{f}"),
                    pairs: vec![(out.obs.scores, out.obs_prime.scores)],
                });
            }
        }
        (None, bug_name) => {
            let bug = parse_bug(bug_name.as_deref().unwrap_or("none"))?;
            let cfg = inject_bug(base, bug)?;
            let out = train_whitebox(&data, &cfg, &canary, t.observations)?;
            cells.push(Cell {
                label: bug_name.clone().unwrap_or_else(|| "none".into()),
                pairs: vec![(out.obs.scores, out.obs_prime.scores)],
            });
        }
        (Some(_), Some(_)) => {
            return Err(Error::InvalidInput(
                "use either actual_scale_factors or bug, not both".into(),
            ))
        }
    }
    Ok(cells)
}
