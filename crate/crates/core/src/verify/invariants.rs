//! Per-module invariants exercised by `verify-all` alongside the
//! acceptance criteria.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benchmarks::{scheme_weights, solve_rule, BenchmarkScheme, FollowerRule, SchemeKind};
use crate::equilibrium::{solve_ne, EquilibriumResult};
use crate::flsim::{fedavg_aggregate, run_synchronous_rounds, EventKind, ToyModel};
use crate::harness::{ExperimentConfig, Instance, OmegaSource};
use crate::iom::PairTerms;
use crate::market::{
    db_to_linear, sample_channel, validate_config, Allocation, Matrix, PriceMatrix, TradingConfig,
};
use crate::mddr::{Agent, Hyperparams};
use crate::stream_rng;

use super::oracles::random_decoupled_pair;
use super::Check;

const SEEDS: u64 = 3;

fn check(id: &str, result: Result<String, String>) -> Check {
    match result {
        Ok(detail) => Check {
            id: id.to_string(),
            passed: true,
            detail,
        },
        Err(detail) => Check {
            id: id.to_string(),
            passed: false,
            detail,
        },
    }
}

/// Instances with their solved equilibria.
type Solved = [(Instance, EquilibriumResult)];

fn instances(cfg: &ExperimentConfig) -> Result<Vec<(Instance, EquilibriumResult)>, String> {
    (0..SEEDS)
        .map(|s| {
            let inst = cfg
                .instance(cfg.seed + s, OmegaSource::Config)
                .map_err(|e| e.to_string())?;
            let ne = solve_ne(
                &inst.market,
                &inst.channel,
                &PriceMatrix::midpoint(&inst.market),
                cfg.solver.tolerance,
                cfg.solver.max_sweeps,
            )
            .map_err(|e| e.to_string())?;
            Ok((inst, ne))
        })
        .collect()
}

fn config_round_trip(cfg: &ExperimentConfig) -> Result<String, String> {
    for s in 0..20 {
        let original = crate::generator::generate(&cfg.generator, cfg.seed + s);
        let text = toml::to_string(&original).map_err(|e| e.to_string())?;
        let back: TradingConfig = toml::from_str(&text).map_err(|e| e.to_string())?;
        if back != original {
            return Err(format!("seed {} changed after a round trip", cfg.seed + s));
        }
    }
    Ok("20 generated configs are bit-exact after TOML round trips".into())
}

fn channel_range(cfg: &ExperimentConfig) -> Result<String, String> {
    let tc = crate::generator::generate(&cfg.generator, cfg.seed);
    let [lo, hi] = tc.sinr_db_range;
    let (lo, hi) = (db_to_linear(lo), db_to_linear(hi));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..1000 {
        let ch = sample_channel(&tc, &mut rng);
        let outside = ch.sinr.iter().copied().find(|v| !(lo..=hi).contains(v));
        if let Some(v) = outside {
            return Err(format!("SINR {v} outside [{lo}, {hi}]"));
        }
    }
    Ok("1000 channel draws within the SINR range".into())
}

fn value_increasing(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    while checked < 200 {
        let (market, channel, _) = random_decoupled_pair(&mut rng);
        let t = PairTerms::new(&market, &channel, 0, 0);
        let f = market.mus[0].compute_cap() * rng.random_range(0.01..1.0);
        let b = market.mus[0].bandwidth_cap() * rng.random_range(0.01..1.0);
        let v = t.value(f, b);
        if !(v > 0.0) {
            continue;
        }
        if !(t.value(f * 1.001, b) > v && t.value(f, b * 1.001) > v) {
            return Err(format!("V not increasing at f = {f}, B = {b}"));
        }
        checked += 1;
    }
    Ok("V increases in f and in B at 200 random points".into())
}

fn participation_needs_half_round(solved: &Solved) -> Result<String, String> {
    let mut pairs = 0;
    for (inst, ne) in solved {
        let mut allocations = vec![ne.allocation.clone()];
        for kind in SchemeKind::ALL {
            let rule = FollowerRule::Scheme(BenchmarkScheme::new(kind, inst.seed));
            allocations.push(
                solve_rule(&inst.market, &inst.channel, rule)
                    .outcome
                    .allocation,
            );
        }
        for a in &allocations {
            for m in 0..inst.market.num_mus() {
                for n in 0..inst.market.num_msps() {
                    if !a.participating[m][n] {
                        continue;
                    }
                    let t = PairTerms::new(&inst.market, &inst.channel, m, n);
                    let latency = t.training_time(a.f[(m, n)]) + t.upload_time(a.bandwidth[(m, n)]);
                    if !(latency < t.tau / 2.0) {
                        return Err(format!(
                            "seed {} pair ({m}, {n}) participates with latency {latency}",
                            inst.seed
                        ));
                    }
                    pairs += 1;
                }
            }
        }
    }
    Ok(format!(
        "{pairs} participating pairs all finish within tau/2"
    ))
}

fn fixed_point(cfg: &ExperimentConfig, solved: &Solved) -> Result<String, String> {
    for (inst, ne) in solved {
        let again = solve_ne(
            &inst.market,
            &inst.channel,
            &ne.prices,
            cfg.solver.tolerance,
            cfg.solver.max_sweeps,
        )
        .map_err(|e| e.to_string())?;
        if again.sweeps != 1 {
            return Err(format!(
                "seed {}: restart needed {} sweeps",
                inst.seed, again.sweeps
            ));
        }
    }
    Ok(format!(
        "{} equilibria survive one more sweep unchanged",
        solved.len()
    ))
}

fn currency_scale(cfg: &ExperimentConfig) -> Result<String, String> {
    let k = 7.0;
    let base = crate::generator::generate(&cfg.generator, cfg.seed);
    let channel = crate::market::initial_channel(&base);
    let mut scaled = base.clone();
    for mu in &mut scaled.mus {
        mu.cost_compute *= k;
        mu.cost_bandwidth *= k;
    }
    for msp in &mut scaled.msps {
        msp.profit_coef *= k;
        msp.price_min *= k;
        msp.price_max *= k;
    }
    let solve = |c: TradingConfig| -> Result<EquilibriumResult, String> {
        let market = validate_config(c).map_err(|e| e.to_string())?;
        solve_ne(
            &market,
            &channel,
            &PriceMatrix::midpoint(&market),
            cfg.solver.tolerance,
            cfg.solver.max_sweeps,
        )
        .map_err(|e| e.to_string())
    };
    let (a, b) = (solve(base)?, solve(scaled)?);
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for (x, y) in a.allocation.f.iter().zip(b.allocation.f.iter()) {
        worst = worst.max(rel(*x, *y));
    }
    for (x, y) in a
        .allocation
        .bandwidth
        .iter()
        .zip(b.allocation.bandwidth.iter())
    {
        worst = worst.max(rel(*x, *y));
    }
    for (x, y) in a.msp_utilities.iter().zip(&b.msp_utilities) {
        worst = worst.max(rel(k * x, *y));
    }
    if worst > 1e-4 {
        return Err(format!(
            "relative change {worst:.3e} under a currency scale of {k}"
        ));
    }
    Ok(format!(
        "allocation unchanged and utilities scale by {k} (max deviation {worst:.1e})"
    ))
}

fn allocations_valid(solved: &Solved) -> Result<String, String> {
    for (inst, ne) in solved {
        ne.allocation
            .check(&inst.market, &inst.channel)
            .map_err(|e| format!("seed {}: {e}", inst.seed))?;
    }
    Ok(format!(
        "{} equilibrium allocations satisfy capacity, deadline and basic-service limits",
        solved.len()
    ))
}

fn agent_contract(seed: u64) -> Result<String, String> {
    let hp = Hyperparams {
        hidden: 16,
        buffer: 8,
        minibatch: 4,
        ..Hyperparams::default()
    };
    let (lo, hi) = (0.2, 5.0);
    let mut agent = Agent::new(3, (lo, hi), &hp, stream_rng(seed, 1));
    let frozen_hp = Hyperparams {
        learning_rate: 0.0,
        ..hp.clone()
    };
    let mut frozen = Agent::new(3, (lo, hi), &frozen_hp, stream_rng(seed, 2));
    let before = (
        frozen.actor.params().to_vec(),
        frozen.critic.params().to_vec(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut updates = 0;
    for k in 0..64 {
        let obs: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..10.0)).collect();
        for a in [&mut agent, &mut frozen] {
            let d = a.act(&obs);
            if d.prices.iter().any(|p| !(lo..=hi).contains(p)) {
                return Err(format!("price outside [{lo}, {hi}]: {:?}", d.prices));
            }
            let u = rng.random_range(-5.0..5.0);
            if a.observe(d, u, &obs, k % 8 == 7)
                .map_err(|e| e.to_string())?
                .is_some()
            {
                updates += 1;
                if a.buffer_len() != 0 {
                    return Err("buffer not empty after an update".into());
                }
            }
        }
    }
    if (frozen.actor.params(), frozen.critic.params()) != (before.0.as_slice(), before.1.as_slice())
    {
        return Err("learning rate 0 changed the parameters".into());
    }
    Ok(format!("{updates} updates: actions in bounds, buffer emptied, lr 0 leaves parameters bit-identical"))
}

fn fixed_scheme_deterministic(cfg: &ExperimentConfig) -> Result<String, String> {
    let inst = cfg
        .instance(cfg.seed, OmegaSource::Config)
        .map_err(|e| e.to_string())?;
    let w = |seed| scheme_weights(&BenchmarkScheme::new(SchemeKind::Fixed, seed), &inst.market);
    if w(5) != w(5) {
        return Err("same seed gave different splits".into());
    }
    if w(5) == w(6) {
        return Err("different seeds gave the same split".into());
    }
    Ok("fixed split is a function of its seed".into())
}

fn event_log(cfg: &ExperimentConfig, solved: &Solved) -> Result<String, String> {
    let mut receptions = 0;
    for (inst, ne) in solved {
        let market = &inst.market;
        let run = run_synchronous_rounds(
            market,
            &inst.channel,
            &ne.allocation,
            &inst.tasks,
            &cfg.flsim,
            market.period,
        )
        .map_err(|e| e.to_string())?;
        if !run.events.windows(2).all(|w| w[0].time <= w[1].time) {
            return Err(format!("seed {}: events out of order", inst.seed));
        }
        for m in 0..market.num_mus() {
            for n in 0..market.num_msps() {
                let count = run
                    .events
                    .iter()
                    .filter(|e| e.kind == EventKind::ModelReceived && e.mu == Some(m) && e.msp == n)
                    .count() as u64;
                let expected = if ne.allocation.participating[m][n] {
                    market.rounds(n)
                } else {
                    0
                };
                if count != expected {
                    return Err(format!(
                        "seed {} pair ({m}, {n}): {count} receptions, expected {expected}",
                        inst.seed
                    ));
                }
                receptions += count;
            }
        }
        let late = run
            .events
            .iter()
            .filter(|e| e.kind == EventKind::ModelReceived)
            .find(|e| {
                let tau = market.msps[e.msp].tau;
                e.time - e.round as f64 * tau > tau
            });
        if let Some(e) = late {
            return Err(format!(
                "seed {}: upload of round {} lands after the deadline",
                inst.seed, e.round
            ));
        }
    }
    Ok(format!("{receptions} receptions, time-ordered, floor(T/tau) per participating pair, all within tau"))
}

fn fedavg_hull(seed: u64) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..200 {
        let k = rng.random_range(1..6);
        let d = rng.random_range(1..8);
        let locals: Vec<(ToyModel, f64)> = (0..k)
            .map(|_| {
                let w = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                (ToyModel { weights: w }, rng.random_range(1.0..100.0))
            })
            .collect();
        let avg = fedavg_aggregate(&locals).map_err(|e| e.to_string())?;
        for j in 0..d {
            let lo = locals
                .iter()
                .map(|l| l.0.weights[j])
                .fold(f64::INFINITY, f64::min);
            let hi = locals
                .iter()
                .map(|l| l.0.weights[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
            if avg.weights[j] < lo - tol || avg.weights[j] > hi + tol {
                return Err(format!(
                    "coordinate {j} = {} outside [{lo}, {hi}]",
                    avg.weights[j]
                ));
            }
        }
    }
    Ok("200 random aggregates inside the coordinatewise hull".into())
}

fn omega_falls(cfg: &ExperimentConfig, solved: &Solved) -> Result<String, String> {
    let mean = |m: &Matrix| m.iter().sum::<f64>() / m.as_slice().len() as f64;
    let mut lines = Vec::new();
    for (inst, ne) in solved {
        let market = &inst.market;
        let run = run_synchronous_rounds(
            market,
            &inst.channel,
            &ne.allocation,
            &inst.tasks,
            &cfg.flsim,
            market.period,
        )
        .map_err(|e| e.to_string())?;
        let before = inst.tasks.omega();
        let after = inst.tasks.with_models(run.final_models).omega();
        if before.iter().chain(after.iter()).any(|&w| w < 0.0) {
            return Err("negative potential value".into());
        }
        if !(mean(&after) < mean(&before)) {
            return Err(format!(
                "seed {}: mean omega {} -> {}",
                inst.seed,
                mean(&before),
                mean(&after)
            ));
        }
        lines.push(format!("{:.3}->{:.3}", mean(&before), mean(&after)));
    }
    Ok(format!(
        "omega >= 0 and its mean falls after training: {}",
        lines.join(", ")
    ))
}

fn empty_allocation_is_quiet(cfg: &ExperimentConfig) -> Result<String, String> {
    let inst = cfg
        .instance(cfg.seed, OmegaSource::Config)
        .map_err(|e| e.to_string())?;
    let market = &inst.market;
    let empty = Allocation::empty(market.num_mus(), market.num_msps());
    let run = run_synchronous_rounds(
        market,
        &inst.channel,
        &empty,
        &inst.tasks,
        &cfg.flsim,
        market.period,
    )
    .map_err(|e| e.to_string())?;
    if run
        .events
        .iter()
        .any(|e| e.kind != EventKind::RoundDeadline)
    {
        return Err("uploads without participants".into());
    }
    Ok("no participants, no uploads".into())
}

pub fn all(cfg: &ExperimentConfig) -> Vec<Check> {
    let solved = instances(cfg);
    let with_solved = |id: &str, f: &dyn Fn(&Solved) -> Result<String, String>| match &solved {
        Ok(s) => check(id, f(s)),
        Err(e) => check(id, Err(e.clone())),
    };
    vec![
        check("market: config round trip", config_round_trip(cfg)),
        check("market: channel draws in range", channel_range(cfg)),
        check("iom: V increasing in f and B", value_increasing(cfg.seed)),
        with_solved(
            "iom: participation implies T_c + T_t < tau/2",
            &participation_needs_half_round,
        ),
        with_solved("equilibrium: fixed point", &|s| fixed_point(cfg, s)),
        check(
            "equilibrium: currency-scale invariance",
            currency_scale(cfg),
        ),
        with_solved("equilibrium: allocation constraints", &allocations_valid),
        check("mddr: agent contract", agent_contract(cfg.seed)),
        check(
            "benchmarks: fixed scheme deterministic",
            fixed_scheme_deterministic(cfg),
        ),
        with_solved("flsim: event log", &|s| event_log(cfg, s)),
        check("flsim: empty allocation", empty_allocation_is_quiet(cfg)),
        check("flsim: FedAvg convex hull", fedavg_hull(cfg.seed)),
        with_solved("flsim: potential value falls", &|s| omega_falls(cfg, s)),
    ]
}
