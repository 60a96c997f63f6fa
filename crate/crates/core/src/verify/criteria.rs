//! The eleven acceptance checks, each at its stated tolerance.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::equilibrium::{
    follower_best_response, kkt_point, solve_ne, threshold_aggregate, verify_concavity,
    verify_concavity_with, LatencySign,
};
use crate::flsim::{aoi_timeline, run_synchronous_rounds};
use crate::harness::{
    self, trailing_stats, Command, ExperimentConfig, ExperimentSpec, OmegaSource, IMMERSION_AWARE,
};
use crate::iom::{average_aoi, PairTerms};
use crate::market::{ChannelMode, PriceMatrix};
use crate::mddr::train;

use super::gradcheck::{mlp_layer_errors, ppo_gradient_errors, random_fixture, random_ppo_fixture};
use super::oracles::{closed_form_utility, grid_follower_max, random_decoupled_pair};
use super::Check;

fn check(id: &str, passed: bool, detail: String) -> Check {
    Check {
        id: id.to_string(),
        passed,
        detail,
    }
}

fn failed(id: &str, err: impl std::fmt::Display) -> Check {
    check(id, false, format!("error: {err}"))
}

/// Closed-form follower against a 200 x 200 grid on 1000 decoupled pairs.
pub fn follower_oracle(seed: u64) -> Check {
    const ID: &str = "C1 follower oracle equivalence";
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    let mut violations = 0;
    let mut coupled = 0;
    for _ in 0..1000 {
        let (market, channel, price) = random_decoupled_pair(&mut rng);
        let t = PairTerms::new(&market, &channel, 0, 0);
        if follower_best_response(&market, &channel, 0, &[price]).coupled {
            coupled += 1;
        }
        let phi = closed_form_utility(&t, price);
        let mu = &market.mus[0];
        let grid = grid_follower_max(&t, price, mu.compute_cap(), mu.bandwidth_cap(), 200);
        let margin = (phi - grid) / phi.abs().max(f64::MIN_POSITIVE);
        if phi > 0.0 || grid > 0.0 {
            worst = worst.min(margin);
        }
        if phi < grid - 1e-3 * phi.abs() {
            violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        ID,
        violations == 0 && coupled == 0 && secs < 30.0,
        format!("{violations} violations, {coupled} coupled, worst relative margin {worst:.3e}, {secs:.2} s"),
    )
}

/// Raw KKT branches on either side of the participation threshold.
pub fn branch_continuity(seed: u64) -> Check {
    const ID: &str = "C2 branch continuity";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (market, channel, _) = random_decoupled_pair(&mut rng);
        let t = PairTerms::new(&market, &channel, 0, 0);
        let threshold = threshold_aggregate(&t);
        let p = threshold * threshold / t.contribution;
        let eps = 1e-9 * p;
        let (below, above) = (kkt_point(&t, p - eps), kkt_point(&t, p + eps));
        worst = worst
            .max((below.f - above.f).abs() / above.f)
            .max((below.bandwidth - above.bandwidth).abs() / above.bandwidth);
    }
    check(
        ID,
        worst < 1e-9,
        format!("max relative jump {worst:.3e} (f and B)"),
    )
}

/// Hessian certificates of both utilities at 100 interior points each,
/// plus the flipped-latency control that must be rejected.
pub fn concavity(cfg: &ExperimentConfig) -> Check {
    const ID: &str = "C3 concavity certificates";
    let inst = match cfg.instance(cfg.seed, OmegaSource::Config) {
        Ok(i) => i,
        Err(e) => return failed(ID, e),
    };
    let report = match verify_concavity(&inst.market, &inst.channel, 100, cfg.seed) {
        Ok(r) => r,
        Err(e) => return failed(ID, e),
    };
    let control_rejected = verify_concavity_with(
        &inst.market,
        &inst.channel,
        100,
        cfg.seed,
        LatencySign::Flipped,
    )
    .is_err();
    let counted = report.mu_points == 100 && report.msp_points == 100;
    check(
        ID,
        counted && control_rejected && report.max_mu_eigenvalue <= 1e-6 && report.max_msp_eigenvalue <= 1e-6,
        format!(
            "{} MU / {} MSP points, max eigenvalues {:.3e} / {:.3e}; flipped-sign control rejected: {control_rejected}",
            report.mu_points, report.msp_points, report.max_mu_eigenvalue, report.max_msp_eigenvalue
        ),
    )
}

/// Five random starts on the default instance reach one fixed point.
pub fn ne_uniqueness(cfg: &ExperimentConfig) -> Check {
    const ID: &str = "C4 NE uniqueness";
    let inst = match cfg.instance(cfg.seed, OmegaSource::Config) {
        Ok(i) => i,
        Err(e) => return failed(ID, e),
    };
    let market = &inst.market;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut solutions = Vec::new();
    let mut slowest: f64 = 0.0;
    for _ in 0..5 {
        let mut start = PriceMatrix::midpoint(market);
        for n in 0..market.num_msps() {
            let msp = &market.msps[n];
            for p in start.p.row_mut(n) {
                *p = rng.random_range(msp.price_min..=msp.price_max);
            }
        }
        let t = Instant::now();
        match solve_ne(
            market,
            &inst.channel,
            &start,
            cfg.solver.tolerance,
            cfg.solver.max_sweeps,
        ) {
            Ok(r) => solutions.push(r.prices),
            Err(e) => return failed(ID, e),
        }
        slowest = slowest.max(t.elapsed().as_secs_f64());
    }
    let mut worst: f64 = 0.0;
    for s in &solutions[1..] {
        for (a, b) in s.p.iter().zip(solutions[0].p.iter()) {
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    check(
        ID,
        worst <= 1e-4 && slowest < 30.0,
        format!("max relative spread {worst:.3e}, slowest solve {slowest:.2} s"),
    )
}

/// Finite-difference V(p) through best responses on the participating
/// interior branch, step 1e-4 p.
pub fn value_monotonicity(seed: u64) -> Check {
    const ID: &str = "C5 monotone concave V(p)";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut checked, mut bad) = (0, 0);
    let (mut min_d1, mut max_d2) = (f64::INFINITY, f64::NEG_INFINITY);
    while checked < 100 {
        let (market, channel, price) = random_decoupled_pair(&mut rng);
        let t = PairTerms::new(&market, &channel, 0, 0);
        let f2 = threshold_aggregate(&t).powi(2);
        // Participation starts at p I = 16 F^2; keep the stencil clear of it.
        if price * t.contribution < 16.0 * f2 * 1.01 {
            continue;
        }
        let v = |p: f64| follower_best_response(&market, &channel, 0, &[p]).responses[0].value(&t);
        let h = 1e-4 * price;
        let (lo, mid, hi) = (v(price - h), v(price), v(price + h));
        let d1 = (hi - lo) / (2.0 * h);
        let d2 = (hi - 2.0 * mid + lo) / (h * h);
        let scale = price / mid;
        min_d1 = min_d1.min(d1 * scale);
        max_d2 = max_d2.max(d2 * scale * price);
        if !(d1 > 0.0 && d2 < 0.0) {
            bad += 1;
        }
        checked += 1;
    }
    check(
        ID,
        bad == 0,
        format!(
            "{bad}/100 failures; min elasticity {min_d1:.3e}, max scaled curvature {max_d2:.3e}"
        ),
    )
}

/// Event-log AoI against the closed form over at least 200 rounds.
pub fn aoi_closed_form(cfg: &ExperimentConfig) -> Check {
    const ID: &str = "C6 AoI closed form";
    const ROUNDS: f64 = 200.0;
    let inst = match cfg.instance(cfg.seed, OmegaSource::Config) {
        Ok(i) => i,
        Err(e) => return failed(ID, e),
    };
    let market = &inst.market;
    let ne = match solve_ne(
        market,
        &inst.channel,
        &PriceMatrix::midpoint(market),
        cfg.solver.tolerance,
        cfg.solver.max_sweeps,
    ) {
        Ok(r) => r,
        Err(e) => return failed(ID, e),
    };
    let horizon = ROUNDS * market.msps.iter().map(|m| m.tau).fold(0.0, f64::max);
    let run = match run_synchronous_rounds(
        market,
        &inst.channel,
        &ne.allocation,
        &inst.tasks,
        &cfg.flsim,
        horizon,
    ) {
        Ok(r) => r,
        Err(e) => return failed(ID, e),
    };
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for n in 0..market.num_msps() {
        // Whole cycles of MSP n only.
        let tau = market.msps[n].tau;
        let h_n = (horizon / tau).floor() * tau;
        let timeline = aoi_timeline(&run.events, market.num_mus(), market.num_msps(), h_n, 0.0);
        for m in 0..market.num_mus() {
            if !ne.allocation.participating[m][n] {
                continue;
            }
            let t = PairTerms::new(market, &inst.channel, m, n);
            let (f, b) = (ne.allocation.f[(m, n)], ne.allocation.bandwidth[(m, n)]);
            let closed = average_aoi(tau, t.training_time(f), t.upload_time(b));
            worst = worst.max((timeline[(m, n)] - closed).abs() / closed);
            pairs += 1;
        }
    }
    check(
        ID,
        pairs > 0 && worst < 0.01,
        format!("{pairs} pairs, max relative error {worst:.3e}"),
    )
}

fn mddr_run(
    cfg: &ExperimentConfig,
    mode: ChannelMode,
) -> Result<(f64, f64, f64, f64, f64), harness::HarnessError> {
    let inst = cfg.instance(cfg.seed, OmegaSource::Config)?;
    let ne = solve_ne(
        &inst.market,
        &inst.channel,
        &PriceMatrix::midpoint(&inst.market),
        cfg.solver.tolerance,
        cfg.solver.max_sweeps,
    )?;
    let start = Instant::now();
    let training = train(
        &inst.market,
        &inst.channel,
        mode,
        cfg.mddr.episodes,
        &cfg.mddr.hyperparams,
        cfg.seed,
    )?;
    let secs = start.elapsed().as_secs_f64();
    let total = training.total_trace();
    let (mean, cv) = trailing_stats(&total, 100);
    let first = total.first().copied().unwrap_or(0.0);
    Ok((mean, cv, ne.total_msp_utility(), first, secs))
}

/// Static channel: final-100 mean total utility at least 97% of the NE.
pub fn mddr_near_optimal(cfg: &ExperimentConfig) -> Check {
    const ID: &str = "C7 MDDR near-optimality";
    match mddr_run(cfg, ChannelMode::Static) {
        Ok((mean, _, ne, first, secs)) => check(
            ID,
            mean >= 0.97 * ne && secs <= 600.0,
            format!(
                "final-100 mean {mean:.2} = {:.3}% of NE {ne:.2} (first episode {:.3}%), {} episodes in {secs:.1} s",
                100.0 * mean / ne,
                100.0 * first / ne,
                cfg.mddr.episodes
            ),
        ),
        Err(e) => failed(ID, e),
    }
}

/// Dynamic channel: coefficient of variation of the final 100 episodes.
pub fn mddr_stability(cfg: &ExperimentConfig) -> Check {
    const ID: &str = "C8 MDDR stability";
    match mddr_run(cfg, ChannelMode::Dynamic) {
        Ok((mean, cv, ne, _, secs)) => check(
            ID,
            cv < 0.1,
            format!(
                "final-100 CV {cv:.3e}, mean {mean:.2} ({:.3}% of static NE), {secs:.1} s",
                100.0 * mean / ne
            ),
        ),
        Err(e) => failed(ID, e),
    }
}

/// Immersion-aware IoM against every scheme, and time to the accuracy
/// target against the fixed scheme, on at least 20 instances.
pub fn benchmark_ordering(cfg: &ExperimentConfig) -> Check {
    const ID: &str = "C9 benchmark ordering";
    let mut cfg = cfg.clone();
    cfg.benchmark.instances = cfg.benchmark.instances.max(20);
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let instances = match harness::benchmark_instances(&cfg, jobs) {
        Ok(b) => b,
        Err(e) => return failed(ID, e),
    };
    let mut iom_failures = Vec::new();
    let mut time_failures = Vec::new();
    let mut min_margin = f64::INFINITY;
    for b in &instances {
        let ia = b.row(IMMERSION_AWARE).expect("immersion-aware row");
        for row in b.rows.iter().filter(|r| r.scheme != IMMERSION_AWARE) {
            min_margin = min_margin.min(ia.total_iom() / row.total_iom() - 1.0);
            if ia.total_iom() < row.total_iom() {
                iom_failures.push(format!("{}:{}", b.index, row.scheme));
            }
        }
        let fixed = b.row("fixed").expect("fixed row");
        let (t_ia, t_fixed) = (ia.mean_time(b.period), fixed.mean_time(b.period));
        if !(t_ia < t_fixed) {
            time_failures.push(format!("{} ({t_ia:.3} s vs {t_fixed:.3} s)", b.index));
        }
    }
    let k = instances.len();
    check(
        ID,
        k >= 20 && iom_failures.is_empty() && time_failures.is_empty(),
        format!(
            "{k} instances; IoM ordering held on {}/{} comparisons (min margin {:.3}%); faster than fixed on {}/{k}{}",
            4 * k - iom_failures.len(),
            4 * k,
            100.0 * min_margin,
            k - time_failures.len(),
            if time_failures.is_empty() && iom_failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", [iom_failures, time_failures].concat().join(", "))
            }
        ),
    )
}

/// Layer-wise and PPO-loss gradients against central differences on 20
/// random fixtures each.
pub fn gradient_correctness(seed: u64) -> Check {
    const ID: &str = "C10 gradient correctness";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_layer: f64 = 0.0;
    let mut worst_ppo: f64 = 0.0;
    for _ in 0..20 {
        let (net, x, c) = random_fixture(&mut rng);
        for e in mlp_layer_errors(&net, &x, &c) {
            worst_layer = worst_layer.max(e);
        }
        let (actor, critic, batch) = random_ppo_fixture(&mut rng);
        let (ea, ec) = ppo_gradient_errors(&actor, &critic, &batch, 0.2, 0.01);
        worst_ppo = worst_ppo.max(ea).max(ec);
    }
    check(
        ID,
        worst_layer < 1e-4 && worst_ppo < 1e-4,
        format!("max relative error: layers {worst_layer:.3e}, PPO loss {worst_ppo:.3e}"),
    )
}

/// Runs `simulate` twice into `scratch` and compares every CSV byte for
/// byte.
pub fn end_to_end_determinism(cfg: &ExperimentConfig, scratch: &Path) -> Check {
    const ID: &str = "C11 end-to-end determinism";
    let run_into = |name: &str| -> Result<Vec<(String, Vec<u8>)>, harness::HarnessError> {
        let dir = scratch.join(name);
        std::fs::create_dir_all(&dir)
            .map_err(|e| harness::HarnessError::Io(dir.display().to_string(), e))?;
        let config_path = dir.join("input.toml");
        std::fs::write(&config_path, cfg.canonical_toml()?)
            .map_err(|e| harness::HarnessError::Io(config_path.display().to_string(), e))?;
        let spec = ExperimentSpec {
            config_path: Some(config_path),
            command: Command::Simulate,
            seed: Some(cfg.seed),
            output_dir: dir.join("out"),
            overrides: Vec::new(),
            jobs: 1,
        };
        let report = harness::run(&spec)?;
        let mut files = Vec::new();
        for f in report.files.iter().filter(|f| f.ends_with(".csv")) {
            let path = spec.output_dir.join(f);
            let bytes = std::fs::read(&path)
                .map_err(|e| harness::HarnessError::Io(path.display().to_string(), e))?;
            files.push((f.clone(), bytes));
        }
        Ok(files)
    };
    let (a, b) = match (run_into("first"), run_into("second")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return failed(ID, e),
    };
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let bytes: usize = a.iter().map(|f| f.1.len()).sum();
    check(
        ID,
        a.len() == b.len() && !a.is_empty() && differing.is_empty(),
        format!(
            "{} CSV files, {bytes} bytes; differing: {differing:?}",
            a.len()
        ),
    )
}

/// All eleven criteria on `cfg`'s default instance.
pub fn all(cfg: &ExperimentConfig, scratch: &Path) -> Vec<Check> {
    vec![
        follower_oracle(cfg.seed),
        branch_continuity(cfg.seed),
        concavity(cfg),
        ne_uniqueness(cfg),
        value_monotonicity(cfg.seed),
        aoi_closed_form(cfg),
        mddr_near_optimal(cfg),
        mddr_stability(cfg),
        benchmark_ordering(cfg),
        gradient_correctness(cfg.seed),
        end_to_end_determinism(cfg, scratch),
    ]
}
