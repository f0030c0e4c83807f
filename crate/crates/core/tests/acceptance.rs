//! Acceptance suite: one test per criterion, each printing a pass line with
//! the measured quantities (run with --nocapture to see them).

use dpaudit_core::accountant::{pld_build_with, MechanismSpec, PldParams};
use dpaudit_core::attack::{
    compute_error_counts, gdp_plugin_threshold_invariance, ln_h, max_eps_lower_analytic,
    optimal_threshold_dp, sweep_thresholds,
};
use dpaudit_core::dpsgd::{train_whitebox, two_gaussians, Bug, CanarySpec, DpSgdConfig};
use dpaudit_core::estimators::{
    audit_counts, clopper_pearson_lower, clopper_pearson_upper, eps_lower_dp_cp, eps_lower_dp_zb,
    eps_lower_katz, mu_lower_gdp_cp, mu_lower_gdp_zb, mu_to_eps_lower, posterior_density,
    posterior_mass_dp_region, posterior_mass_gdp_region, AuditMethod, ErrorCounts,
};
use dpaudit_core::mechanisms::{
    simulate_gaussian_pair, simulate_subsampled_gaussian_pair, CounterRng, RngSeed,
};
use dpaudit_core::numerics::std_normal_quantile;
use dpaudit_core::tradeoff::{
    approx_tradeoff_from_accountant, gdp_eps_of_delta, gdp_mu_for_eps, privacy_region_contains,
    tradeoff_eps_delta, tradeoff_gdp, Combiner, PrivacyPoint,
};
use rayon::prelude::*;
use std::time::Instant;

const DELTA: f64 = 1e-5;
const GAMMA: f64 = 0.05;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Criterion 1: GDP auditing is nearly tight with 1,000 observations while
/// the DP-region bound lags. The Gaussian mechanism is parameterized on the
/// GDP scale (sigma = 1/eps), and the FDP bound is read on that scale.
#[test]
fn c1_gdp_audit_tightness() {
    let start = Instant::now();
    for eps in [1.0, 2.0, 4.0, 6.0] {
        let sigma = 1.0 / eps;
        let mut mu_bounds = Vec::new();
        let mut eps_fdp = Vec::new();
        let mut eps_dp = Vec::new();
        for run in 0..20u64 {
            let (d, dp) = simulate_gaussian_pair(sigma, 1000, RngSeed(9000 + run)).unwrap();
            let counts = compute_error_counts(&d.scores, &dp.scores, 0.5).unwrap();
            let mu = mu_lower_gdp_cp(counts, GAMMA).unwrap();
            mu_bounds.push(mu);
            eps_fdp.push(mu_to_eps_lower(mu, DELTA).unwrap());
            eps_dp.push(eps_lower_dp_cp(counts, DELTA, GAMMA).unwrap().eps_lower);
        }
        let m = mean(&mu_bounds);
        assert!(
            m >= 0.7 * eps && m <= eps,
            "eps={eps}: mean FDP-CP bound {m} outside [0.7 eps, eps]"
        );
        assert!(
            mean(&eps_fdp) > mean(&eps_dp),
            "eps={eps}: DP-CP ({}) should trail FDP-CP ({})",
            mean(&eps_dp),
            mean(&eps_fdp)
        );
        println!(
            "[C1] eps={eps}: mean FDP-CP {m:.3} in [{:.2}, {eps}]; eps-scale FDP {:.3} > DP {:.3}",
            0.7 * eps,
            mean(&eps_fdp),
            mean(&eps_dp)
        );
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 10.0, "criterion 1 took {dt:?}, budget 10 s");
    println!("[PASS] C1 GDP-audit tightness ({dt:?})");
}

/// Criterion 2: estimator soundness. Over 200 Monte Carlo audits of an
/// honest Gaussian mechanism, each lower bound may exceed the true value in
/// at most gamma + 3 binomial sigmas of the runs.
#[test]
fn c2_estimator_coverage() {
    let start = Instant::now();
    let sigma = 1.0;
    let mu_true = 1.0 / sigma;
    let eps_true = gdp_eps_of_delta(mu_true, DELTA).unwrap();
    let reps = 200;
    let threshold = 0.05 + 3.0 * (0.05_f64 * 0.95 / reps as f64).sqrt();

    let exceed: Vec<[bool; 5]> = (0..reps as u64)
        .into_par_iter()
        .map(|run| {
            let (d, dp) = simulate_gaussian_pair(sigma, 1000, RngSeed(11_000 + run)).unwrap();
            let counts = compute_error_counts(&d.scores, &dp.scores, 0.5).unwrap();
            let fdp_cp = mu_lower_gdp_cp(counts, GAMMA).unwrap();
            let fdp_zb = mu_lower_gdp_zb(counts, GAMMA).unwrap();
            let dp_cp = eps_lower_dp_cp(counts, DELTA, GAMMA).unwrap().eps_lower;
            let dp_zb = eps_lower_dp_zb(counts, DELTA, GAMMA).unwrap();
            let katz = eps_lower_katz(counts, GAMMA).unwrap();
            [
                fdp_cp > mu_true,
                fdp_zb > mu_true,
                dp_cp > eps_true,
                dp_zb > eps_true,
                // the Gaussian mechanism satisfies no finite (eps, 0)-DP, so
                // any finite Katz bound is sound; compare against the
                // delta-level epsilon as the strictest meaningful yardstick
                katz > eps_true,
            ]
        })
        .collect();
    let names = ["FDP-CP", "FDP-ZB", "DP-CP", "DP-ZB", "KATZ"];
    for (i, name) in names.iter().enumerate() {
        let rate = exceed.iter().filter(|e| e[i]).count() as f64 / reps as f64;
        assert!(
            rate <= threshold,
            "{name} exceeded the truth in {rate:.3} of runs (cap {threshold:.3})"
        );
        println!("[C2] {name}: exceedance {rate:.3} <= {threshold:.3}");
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 120.0, "criterion 2 took {dt:?}, budget 2 min");
    println!("[PASS] C2 estimator coverage ({dt:?})");
}

/// Criterion 3: threshold sensitivity. The FDP bound is nearly flat across
/// the central half of the threshold support while the DP bound swings, and
/// the analytic GDP threshold-invariance identity holds to 1e-9.
#[test]
fn c3_threshold_behavior() {
    let sigma = 1.0;
    let (d, dp) = simulate_gaussian_pair(sigma, 5000, RngSeed(12_346)).unwrap();
    let curve = sweep_thresholds(&d.scores, &dp.scores).unwrap();
    let band = curve.central_band(0.5);
    assert!(band.len() > 100, "central band unexpectedly small: {}", band.len());

    // the FDP bound is compared on its native GDP scale (as in criterion 1);
    // the DP bound on its native epsilon scale
    let mut fdp = Vec::new();
    let mut dp_b = Vec::new();
    for p in &band {
        let counts = ErrorCounts::new(p.fp, p.fn_, curve.n).unwrap();
        let mu = mu_lower_gdp_cp(counts, GAMMA).unwrap();
        if mu > 0.0 {
            fdp.push(mu);
        }
        dp_b.push(eps_lower_dp_cp(counts, DELTA, GAMMA).unwrap().eps_lower);
    }
    let ratio = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(0.0_f64, f64::max);
        hi / lo
    };
    let fdp_ratio = ratio(&fdp);
    let dp_ratio = ratio(&dp_b);
    assert!(fdp_ratio <= 1.2, "FDP-CP max/min over the central band is {fdp_ratio}");
    assert!(dp_ratio >= 2.0, "DP-CP max/min over the central band is {dp_ratio}");

    // analytic identity at every tested threshold
    for p in &band {
        let v = gdp_plugin_threshold_invariance(sigma, p.threshold).unwrap();
        assert!((v - 1.0 / sigma).abs() <= 1e-9, "identity broke at z={}", p.threshold);
    }
    let mut z = -10.0;
    while z <= 10.0 {
        for s in [0.5, 1.0, 2.0] {
            let v = gdp_plugin_threshold_invariance(s, z).unwrap();
            assert!((v - 1.0 / s).abs() <= 1e-9, "identity broke at z={z}, sigma={s}");
        }
        z += 0.25;
    }
    println!("[PASS] C3 threshold behavior: FDP ratio {fdp_ratio:.3} <= 1.2, DP ratio {dp_ratio:.3} >= 2.0");
}

/// Criterion 4: the optimal-threshold equation reproduces the grid argmax of
/// ln h and satisfies the closed-form maximum identity.
#[test]
fn c4_optimal_threshold() {
    for sigma in [0.5, 1.0, 2.0] {
        for c in [0.5, 1.0, 2.0] {
            let w = optimal_threshold_dp(sigma, c, DELTA).unwrap();
            let analytic = max_eps_lower_analytic(sigma, c, w).unwrap();
            assert!(
                (ln_h(sigma, c, DELTA, w) - analytic).abs() <= 1e-6,
                "identity violated at sigma={sigma}, c={c}"
            );
            // 1e6-point scan of ln h over the bracket
            let lo = c / 2.0;
            let hi = c / 2.0 + 10.0 * sigma;
            let steps = 1_000_000;
            let mut best = (f64::NEG_INFINITY, lo);
            for i in 0..=steps {
                let z = lo + (hi - lo) * i as f64 / steps as f64;
                let v = ln_h(sigma, c, DELTA, z);
                if v > best.0 {
                    best = (v, z);
                }
            }
            let grid = (hi - lo) / steps as f64;
            assert!(
                (w - best.1).abs() <= grid,
                "root {w} vs grid argmax {} at sigma={sigma}, c={c}",
                best.1
            );
        }
    }
    println!("[PASS] C4 optimal threshold (9 configurations, 1e6-point scans)");
}

/// Criterion 5: PLD accounting agrees with the GDP oracle at q = 1 across
/// composition depths.
#[test]
fn c5_pld_matches_gdp() {
    let start = Instant::now();
    let params = PldParams { cutoff: 30.0, spacing: 2.5e-4, tail_budget: 1e-7 };
    for mu in [0.25, 0.5, 1.0] {
        for steps in [1u32, 4, 16] {
            let spec = MechanismSpec::new(1.0 / mu, 1.0, steps, 1.0).unwrap();
            let acct = pld_build_with(spec, params).unwrap();
            let got = acct.eps_of_delta(DELTA).unwrap();
            let want = gdp_eps_of_delta((steps as f64).sqrt() * mu, DELTA).unwrap();
            assert!(
                (got - want).abs() <= 1e-2,
                "mu={mu}, T={steps}: pld {got} vs gdp {want}"
            );
            println!("[C5] mu={mu} T={steps}: pld {got:.4} ~ gdp {want:.4}");
        }
    }
    let dt = start.elapsed();
    assert!(dt.as_secs_f64() < 30.0, "criterion 5 took {dt:?}, budget 30 s");
    println!("[PASS] C5 PLD correctness at q=1 ({dt:?})");
}

/// Criterion 6: the supporting-line approximation converges: 10 lines are
/// within 0.1 of the 1000-line reference, 100 lines within 0.02
/// (upper-envelope combiner).
#[test]
fn c6_approximation_quality() {
    let acct = |d: f64| gdp_eps_of_delta(1.0, d);
    let reference = approx_tradeoff_from_accountant(acct, 1000, DELTA, Combiner::Max).unwrap();
    let ten = approx_tradeoff_from_accountant(acct, 10, DELTA, Combiner::Max).unwrap();
    let hundred = approx_tradeoff_from_accountant(acct, 100, DELTA, Combiner::Max).unwrap();
    let gap = |a: &dpaudit_core::tradeoff::TradeoffCurve,
               b: &dpaudit_core::tradeoff::TradeoffCurve| {
        (0..=512)
            .map(|i| {
                let x = i as f64 / 512.0;
                (a.eval(x) - b.eval(x)).abs()
            })
            .fold(0.0, f64::max)
    };
    let g10 = gap(&ten, &reference);
    let g100 = gap(&hundred, &reference);
    assert!(g10 <= 0.1, "10-line gap {g10}");
    assert!(g100 <= 0.02, "100-line gap {g100}");
    println!("[PASS] C6 approximation gaps: 10 lines {g10:.4} <= 0.1, 100 lines {g100:.4} <= 0.02");
}

/// Criterion 8: sub-sampled conservatism. The attack never (statistically)
/// beats the accounting: no sweep point falls below the PLD or
/// GDP-equivalent theory curve once Clopper-Pearson slack is granted.
#[test]
fn c8_subsampled_conservatism() {
    let sigma = 0.3_f64.sqrt();
    let q = 0.25;
    let n = 10_000;
    let (d, dp) = simulate_subsampled_gaussian_pair(sigma, q, n, RngSeed(77_001)).unwrap();
    let curve = sweep_thresholds(&d.scores, &dp.scores).unwrap();

    let acct = pld_build_with(
        MechanismSpec::new(sigma, q, 1, 1.0).unwrap(),
        PldParams { cutoff: 30.0, spacing: 5e-4, tail_budget: 1e-9 },
    )
    .unwrap();
    let theory_pld =
        approx_tradeoff_from_accountant(|x| acct.eps_of_delta(x), 256, DELTA, Combiner::Max)
            .unwrap();
    let eps_eq = acct.eps_of_delta(DELTA).unwrap();
    let theory_gdp = tradeoff_gdp(gdp_mu_for_eps(eps_eq, DELTA).unwrap()).unwrap();

    // "at every sweep threshold" is a simultaneous statement: correct the
    // per-threshold confidence so the family-wise slack is still gamma/2
    let conf = 1.0 - GAMMA / 2.0 / curve.points.len() as f64;
    for p in &curve.points {
        let alpha_up = clopper_pearson_upper(p.fp, curve.n, conf).unwrap();
        let beta_up = clopper_pearson_upper(p.fn_, curve.n, conf).unwrap();
        for (name, th) in [("pld", &theory_pld), ("gdp", &theory_gdp)] {
            let floor = th.eval(alpha_up);
            assert!(
                beta_up >= floor,
                "attack beat the {name} curve at z={}: beta_up {beta_up} < {floor}",
                p.threshold
            );
        }
    }
    println!(
        "[PASS] C8 sub-sampled conservatism at {} thresholds (eps_eq {eps_eq:.3})",
        curve.points.len()
    );
}

/// Criterion 9: the Bayesian f-DP bound is at least as tight as
/// Clopper-Pearson on average.
#[test]
fn c9_zb_vs_cp_ordering() {
    for eps in [1.0, 4.0] {
        let sigma = 1.0 / eps;
        let mut cp = Vec::new();
        let mut zb = Vec::new();
        for run in 0..20u64 {
            let (d, dp) = simulate_gaussian_pair(sigma, 1000, RngSeed(13_000 + run)).unwrap();
            let counts = compute_error_counts(&d.scores, &dp.scores, 0.5).unwrap();
            let mu_cp = mu_lower_gdp_cp(counts, GAMMA).unwrap();
            let mu_zb = mu_lower_gdp_zb(counts, GAMMA).unwrap();
            cp.push(mu_to_eps_lower(mu_cp, DELTA).unwrap());
            zb.push(mu_to_eps_lower(mu_zb, DELTA).unwrap());
        }
        assert!(
            mean(&zb) >= mean(&cp),
            "eps={eps}: FDP-ZB mean {} below FDP-CP mean {}",
            mean(&zb),
            mean(&cp)
        );
        println!("[C9] eps={eps}: FDP-ZB {:.3} >= FDP-CP {:.3}", mean(&zb), mean(&cp));
    }
    println!("[PASS] C9 ZB/CP ordering");
}

/// Criterion 10 (library half): module invariants exercised together. The
/// manifest/determinism half lives in the CLI acceptance suite.
#[test]
fn c10_property_battery() {
    // trade-off monotonicity and range for all three families
    let curves = [
        tradeoff_eps_delta(1.3, 1e-4).unwrap(),
        tradeoff_gdp(0.8).unwrap(),
        approx_tradeoff_from_accountant(|d| gdp_eps_of_delta(0.8, d), 64, DELTA, Combiner::Max)
            .unwrap(),
    ];
    for c in &curves {
        let mut prev = f64::INFINITY;
        for i in 0..=512 {
            let a = i as f64 / 512.0;
            let b = c.eval(a);
            assert!((0.0..=1.0).contains(&b) && b <= prev + 1e-12);
            prev = b;
        }
    }
    // GDP dominance over its supporting envelope
    let g = tradeoff_gdp(0.8).unwrap();
    let env = tradeoff_eps_delta(gdp_eps_of_delta(0.8, DELTA).unwrap(), DELTA).unwrap();
    for i in 0..=512 {
        let a = i as f64 / 512.0;
        assert!(g.eval(a) >= env.eval(a) - 1e-9);
    }
    // privacy-region symmetry on a random grid
    let mut rng = CounterRng::new(RngSeed(55));
    for _ in 0..500 {
        let p = PrivacyPoint { alpha: rng.next_f64(), beta: rng.next_f64() };
        let q = PrivacyPoint { alpha: p.beta, beta: p.alpha };
        let eps = 3.0 * rng.next_f64();
        let delta = 0.1 * rng.next_f64();
        assert_eq!(
            privacy_region_contains(eps, delta, p).unwrap(),
            privacy_region_contains(eps, delta, q).unwrap()
        );
    }
    // clipping bound via trainer instrumentation
    let data = two_gaussians(200, 10, RngSeed(56));
    let cfg = DpSgdConfig {
        q: 0.2,
        eta: 0.02,
        sigma: 1.0,
        clip: 0.4,
        steps: 300,
        qc: 1.0,
        seed: RngSeed(57),
        bug: Bug::None,
    };
    let out = train_whitebox(&data, &cfg, &CanarySpec::dirac(), 300).unwrap();
    assert!(out.max_contribution_norm <= cfg.clip + 1e-12);

    // quadrature bounds agree with Monte Carlo posterior sampling within 0.05
    let counts = ErrorCounts::new(260, 300, 1000).unwrap();
    let post = posterior_density(counts);
    let mu_q = mu_lower_gdp_zb(counts, GAMMA).unwrap();
    let eps_q = eps_lower_dp_zb(counts, DELTA, GAMMA).unwrap();
    let mut rng = CounterRng::new(RngSeed(58));
    let m = 100_000;
    let mut mus = Vec::with_capacity(m);
    let mut epss = Vec::with_capacity(m);
    for _ in 0..m {
        let a = beta_sample(&mut rng, post.fpr.a, post.fpr.b);
        let b = beta_sample(&mut rng, post.fnr.a, post.fnr.b);
        mus.push((std_normal_quantile(1.0 - a).unwrap() - std_normal_quantile(b).unwrap()).abs());
        let mut e: f64 = 0.0;
        for t in [
            (1.0 - DELTA - b) / a.max(f64::MIN_POSITIVE),
            (1.0 - DELTA - a) / b.max(f64::MIN_POSITIVE),
            (b - DELTA) / (1.0 - a).max(f64::MIN_POSITIVE),
            (a - DELTA) / (1.0 - b).max(f64::MIN_POSITIVE),
        ] {
            if t > 0.0 {
                e = e.max(t.ln());
            }
        }
        epss.push(e);
    }
    mus.sort_by(|a, b| a.partial_cmp(b).unwrap());
    epss.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mu_mc = mus[(0.025 * m as f64) as usize];
    let eps_mc = epss[(0.025 * m as f64) as usize];
    assert!((mu_q - mu_mc).abs() <= 0.05, "mu: quadrature {mu_q} vs MC {mu_mc}");
    assert!((eps_q - eps_mc).abs() <= 0.05, "eps: quadrature {eps_q} vs MC {eps_mc}");

    // region-mass monotonicity backing the root-finders
    let mut prev = -1.0;
    for mu in [0.1, 0.5, 1.0, 2.0] {
        let mass = posterior_mass_gdp_region(&post, mu).unwrap();
        assert!(mass >= prev);
        prev = mass;
    }
    let mut prev = -1.0;
    for e in [0.0, 0.5, 1.0, 2.0] {
        let mass = posterior_mass_dp_region(&post, e, DELTA).unwrap();
        assert!(mass >= prev);
        prev = mass;
    }

    // estimator sanity as a dispatch: fdp dominates dp on mid-range counts
    let fdp = audit_counts(AuditMethod::FdpCp, counts, DELTA, GAMMA, 1.0, 1).unwrap();
    let dp = audit_counts(AuditMethod::DpCp, counts, DELTA, GAMMA, 1.0, 1).unwrap();
    assert!(fdp.eps_lower > dp.eps_lower);

    // Clopper-Pearson complements
    let up = clopper_pearson_upper(42, 500, 0.975).unwrap();
    let lo = clopper_pearson_lower(500 - 42, 500, 0.975).unwrap();
    assert!((up + lo - 1.0).abs() < 1e-10);

    println!("[PASS] C10 property battery (library half)");
}

/// Test-only Marsaglia-Tsang gamma / beta sampler for the MC oracles.
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
