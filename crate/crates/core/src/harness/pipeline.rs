//! The command pipelines.

use rand::Rng;

use crate::benchmarks::{solve_rule, BenchmarkScheme, FollowerRule, SchemeKind};
use crate::equilibrium::{
    evaluate_prices, solve_ne, AnalyticFollower, EquilibriumResult, MarketOutcome,
};
use crate::flsim::{aoi_timeline, run_synchronous_rounds, FlRun};
use crate::iom::{average_aoi, PairTerms};
use crate::market::{Allocation, ChannelMode, Matrix, PriceMatrix};
use crate::mddr::{greedy_rollout, train, write_checkpoint, Env, Training};
use crate::stream_rng;
use crate::verify;

use super::config::{ExperimentConfig, Instance, OmegaSource, Phase1Solver};
use super::output::Cell;
use super::{Artifacts, HarnessError, RunReport};

pub const IMMERSION_AWARE: &str = "immersion_aware";

/// Episodes averaged for the end-of-training statistics.
const TRAILING_EPISODES: usize = 100;

/// Seed of the `index`-th instance derived from `seed`.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    stream_rng(seed, index).random()
}

/// Mean and coefficient of variation (sample standard deviation over the
/// mean) of the last `window` entries of `trace`.
pub fn trailing_stats(trace: &[f64], window: usize) -> (f64, f64) {
    let tail = &trace[trace.len().saturating_sub(window)..];
    if tail.is_empty() {
        return (0.0, 0.0);
    }
    let k = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / k;
    if tail.len() < 2 {
        return (mean, 0.0);
    }
    let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, var.sqrt() / mean.abs())
}

fn equilibrium(cfg: &ExperimentConfig, inst: &Instance) -> Result<EquilibriumResult, HarnessError> {
    let start = PriceMatrix::midpoint(&inst.market);
    Ok(solve_ne(
        &inst.market,
        &inst.channel,
        &start,
        cfg.solver.tolerance,
        cfg.solver.max_sweeps,
    )?)
}

/// Result of the trading phase.
pub struct Phase1Outcome {
    pub prices: PriceMatrix,
    pub outcome: MarketOutcome,
    pub equilibrium: Option<EquilibriumResult>,
    pub training: Option<Training>,
}

/// Phase I with the configured solver. The learned policy is read out by a
/// greedy rollout on the initial channel.
pub fn phase1(cfg: &ExperimentConfig, inst: &Instance) -> Result<Phase1Outcome, HarnessError> {
    match cfg.simulate.phase1 {
        Phase1Solver::Ne => {
            let r = equilibrium(cfg, inst)?;
            let outcome = MarketOutcome {
                allocation: r.allocation.clone(),
                values: r.values.clone(),
                msp_utilities: r.msp_utilities.clone(),
                mu_utilities: r.mu_utilities.clone(),
            };
            Ok(Phase1Outcome {
                prices: r.prices.clone(),
                outcome,
                equilibrium: Some(r),
                training: None,
            })
        }
        Phase1Solver::Mddr => {
            let (training, prices) = train_and_read_out(cfg, inst)?;
            let outcome =
                evaluate_prices(&AnalyticFollower::new(&inst.market, &inst.channel), &prices);
            Ok(Phase1Outcome {
                prices,
                outcome,
                equilibrium: None,
                training: Some(training),
            })
        }
    }
}

fn train_and_read_out(
    cfg: &ExperimentConfig,
    inst: &Instance,
) -> Result<(Training, PriceMatrix), HarnessError> {
    let hp = &cfg.mddr.hyperparams;
    let training = train(
        &inst.market,
        &inst.channel,
        cfg.mddr.channel_mode,
        cfg.mddr.episodes,
        hp,
        inst.seed,
    )?;
    let mut env = Env::new(
        &inst.market,
        inst.channel.clone(),
        ChannelMode::Static,
        stream_rng(inst.seed, 0),
    );
    let (prices, _) = greedy_rollout(&training.agents, &mut env, hp.stages_per_episode.max(1));
    Ok((training, prices))
}

/// One scheme's result on one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SchemeRow {
    pub scheme: &'static str,
    /// Total IoM received by each MSP.
    pub values: Vec<f64>,
    /// Mean reward each MSP posts.
    pub prices: Vec<f64>,
    /// Time each MSP's global model first reaches the accuracy target.
    pub times: Vec<Option<f64>>,
    pub participating: usize,
}

impl SchemeRow {
    pub fn total_iom(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Mean time to target over MSPs, counting an unreached target as
    /// `horizon`.
    pub fn mean_time(&self, horizon: f64) -> f64 {
        self.times.iter().map(|t| t.unwrap_or(horizon)).sum::<f64>()
            / self.times.len().max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkInstance {
    pub index: usize,
    pub seed: u64,
    pub period: f64,
    /// Immersion-aware first, then the schemes in `SchemeKind::ALL` order.
    pub rows: Vec<SchemeRow>,
}

impl BenchmarkInstance {
    pub fn row(&self, scheme: &str) -> Option<&SchemeRow> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }
}

fn scheme_row(
    cfg: &ExperimentConfig,
    inst: &Instance,
    scheme: &'static str,
    allocation: &Allocation,
    values: &Matrix,
    prices: Vec<f64>,
) -> Result<SchemeRow, HarnessError> {
    let market = &inst.market;
    let run = run_synchronous_rounds(
        market,
        &inst.channel,
        allocation,
        &inst.tasks,
        &cfg.flsim,
        market.period,
    )?;
    let target = cfg.flsim.target_accuracy;
    Ok(SchemeRow {
        scheme,
        values: (0..market.num_msps())
            .map(|n| values.column(n).iter().sum())
            .collect(),
        prices,
        times: (0..market.num_msps())
            .map(|n| run.time_to_target(n, target))
            .collect(),
        participating: allocation
            .participating
            .iter()
            .flatten()
            .filter(|&&p| p)
            .count(),
    })
}

/// The immersion-aware equilibrium and the four schemes on instance
/// `seed`, each followed by an FL run over the period.
pub fn benchmark_instance(
    cfg: &ExperimentConfig,
    index: usize,
    seed: u64,
) -> Result<BenchmarkInstance, HarnessError> {
    let inst = cfg.instance(seed, cfg.benchmark.omega)?;
    let ne = equilibrium(cfg, &inst)?;
    let nm = inst.market.num_mus() as f64;
    let ne_prices = (0..inst.market.num_msps())
        .map(|n| ne.prices.msp_row(n).iter().sum::<f64>() / nm)
        .collect();
    let mut rows = vec![scheme_row(
        cfg,
        &inst,
        IMMERSION_AWARE,
        &ne.allocation,
        &ne.values,
        ne_prices,
    )?];
    for kind in SchemeKind::ALL {
        let r = solve_rule(
            &inst.market,
            &inst.channel,
            FollowerRule::Scheme(BenchmarkScheme::new(kind, seed)),
        );
        rows.push(scheme_row(
            cfg,
            &inst,
            kind.name(),
            &r.outcome.allocation,
            &r.outcome.values,
            r.prices,
        )?);
    }
    Ok(BenchmarkInstance {
        index,
        seed,
        period: inst.market.period,
        rows,
    })
}

fn price_rows(prices: &PriceMatrix) -> Vec<Vec<Cell>> {
    let mut rows = Vec::new();
    for n in 0..prices.p.rows() {
        for m in 0..prices.p.cols() {
            rows.push(vec![n.into(), m.into(), prices.get(n, m).into()]);
        }
    }
    rows
}

fn allocation_rows(allocation: &Allocation, values: &Matrix) -> Vec<Vec<Cell>> {
    let mut rows = Vec::new();
    for m in 0..values.rows() {
        for n in 0..values.cols() {
            rows.push(vec![
                m.into(),
                n.into(),
                allocation.f[(m, n)].into(),
                allocation.bandwidth[(m, n)].into(),
                values[(m, n)].into(),
                allocation.participating[m][n].into(),
            ]);
        }
    }
    rows
}

fn utility_rows(msp: &[f64], mu: &[f64]) -> Vec<Vec<Cell>> {
    let msps = msp
        .iter()
        .enumerate()
        .map(|(i, u)| vec!["msp".into(), i.into(), (*u).into()]);
    let mus = mu
        .iter()
        .enumerate()
        .map(|(i, u)| vec!["mu".into(), i.into(), (*u).into()]);
    msps.chain(mus).collect()
}

fn ne_summary_row(r: &EquilibriumResult) -> Vec<Cell> {
    vec![
        r.sweeps.into(),
        r.converged.into(),
        r.total_msp_utility().into(),
        r.total_value().into(),
    ]
}

fn trace_rows(training: &Training) -> Vec<Vec<Cell>> {
    let episodes = training.utility_traces.first().map_or(0, Vec::len);
    let mut rows = Vec::new();
    for e in 0..episodes {
        for (n, trace) in training.utility_traces.iter().enumerate() {
            rows.push(vec![e.into(), n.into(), trace[e].into()]);
        }
    }
    rows
}

pub(super) fn solve_ne_command(
    cfg: &ExperimentConfig,
    out: &mut Artifacts,
) -> Result<RunReport, HarnessError> {
    let inst = cfg.instance(cfg.seed, OmegaSource::Config)?;
    let r = equilibrium(cfg, &inst)?;
    out.csv("prices.csv", "prices", &price_rows(&r.prices))?;
    out.csv(
        "allocation.csv",
        "allocation",
        &allocation_rows(&r.allocation, &r.values),
    )?;
    out.csv(
        "utilities.csv",
        "utilities",
        &utility_rows(&r.msp_utilities, &r.mu_utilities),
    )?;
    out.csv("ne_summary.csv", "ne_summary", &[ne_summary_row(&r)])?;
    Ok(RunReport {
        lines: vec![format!(
            "converged={} after {} sweeps; total MSP utility {}; total IoM {}",
            r.converged,
            r.sweeps,
            super::format_sig9(r.total_msp_utility()),
            super::format_sig9(r.total_value())
        )],
        success: true,
        files: Vec::new(),
    })
}

pub(super) fn train_mddr_command(
    cfg: &ExperimentConfig,
    out: &mut Artifacts,
) -> Result<RunReport, HarnessError> {
    let inst = cfg.instance(cfg.seed, OmegaSource::Config)?;
    let ne = equilibrium(cfg, &inst)?;
    let (training, prices) = train_and_read_out(cfg, &inst)?;
    let greedy = evaluate_prices(&AnalyticFollower::new(&inst.market, &inst.channel), &prices);
    let (mean, cv) = trailing_stats(&training.total_trace(), TRAILING_EPISODES);
    let ratio = mean / ne.total_msp_utility();
    out.csv("utility_trace.csv", "utility_trace", &trace_rows(&training))?;
    out.csv("greedy_prices.csv", "prices", &price_rows(&prices))?;
    out.csv(
        "mddr_summary.csv",
        "mddr_summary",
        &[vec![
            cfg.mddr.episodes.into(),
            ne.total_msp_utility().into(),
            mean.into(),
            ratio.into(),
            cv.into(),
            greedy.total_msp_utility().into(),
        ]],
    )?;
    let mut checkpoint = Vec::new();
    write_checkpoint(&training.agents, &mut checkpoint)?;
    out.text("mddr_checkpoint.txt", "checkpoint", &checkpoint)?;
    Ok(RunReport {
        lines: vec![format!(
            "final mean total utility {} = {}% of equilibrium {}; cv {}",
            super::format_sig9(mean),
            super::format_sig9(100.0 * ratio),
            super::format_sig9(ne.total_msp_utility()),
            super::format_sig9(cv)
        )],
        success: true,
        files: Vec::new(),
    })
}

/// Runs `work(i)` for `i in 0..count` on up to `jobs` threads; results keep
/// index order.
fn parallel_map<T: Send>(count: usize, jobs: usize, work: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let jobs = jobs.clamp(1, count.max(1));
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                let work = &work;
                scope.spawn(move || {
                    (w..count)
                        .step_by(jobs)
                        .map(|i| (i, work(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every index computed"))
        .collect()
}

/// Instances of the benchmark: the explicit market once, or
/// `benchmark.instances` generated ones with split seeds.
pub fn benchmark_instances(
    cfg: &ExperimentConfig,
    jobs: usize,
) -> Result<Vec<BenchmarkInstance>, HarnessError> {
    let count = if cfg.market.is_some() {
        1
    } else {
        cfg.benchmark.instances
    };
    parallel_map(count, jobs, |i| {
        benchmark_instance(cfg, i, split_seed(cfg.seed, i as u64))
    })
    .into_iter()
    .collect()
}

pub(super) fn benchmark_command(
    cfg: &ExperimentConfig,
    jobs: usize,
    out: &mut Artifacts,
) -> Result<RunReport, HarnessError> {
    let instances = benchmark_instances(cfg, jobs)?;
    let mut detail = Vec::new();
    let mut summary = Vec::new();
    for b in &instances {
        for row in &b.rows {
            for n in 0..row.values.len() {
                detail.push(vec![
                    b.index.into(),
                    b.seed.into(),
                    row.scheme.into(),
                    n.into(),
                    row.values[n].into(),
                    row.prices[n].into(),
                    row.times[n].into(),
                    row.times[n].is_some().into(),
                ]);
            }
            summary.push(vec![
                b.index.into(),
                b.seed.into(),
                row.scheme.into(),
                row.total_iom().into(),
                row.mean_time(b.period).into(),
                row.participating.into(),
            ]);
        }
    }
    out.csv("benchmark.csv", "benchmark", &detail)?;
    out.csv("benchmark_summary.csv", "benchmark_summary", &summary)?;
    let mut lines = Vec::new();
    if let Some(first) = instances.first() {
        for row in &first.rows {
            let name = row.scheme;
            let k = instances.len() as f64;
            let iom = instances
                .iter()
                .map(|b| b.row(name).map_or(0.0, SchemeRow::total_iom))
                .sum::<f64>()
                / k;
            let time = instances
                .iter()
                .map(|b| b.row(name).map_or(b.period, |r| r.mean_time(b.period)))
                .sum::<f64>()
                / k;
            lines.push(format!(
                "{name:<16} mean total IoM {:>14}  mean time to target {:>10} s",
                super::format_sig9(iom),
                super::format_sig9(time)
            ));
        }
    }
    Ok(RunReport {
        lines,
        success: true,
        files: Vec::new(),
    })
}

fn fl_rows(run: &FlRun) -> (Vec<Vec<Cell>>, Vec<Vec<Cell>>) {
    let events = run
        .events
        .iter()
        .map(|e| {
            vec![
                e.time.into(),
                e.kind.name().into(),
                e.mu.into(),
                e.msp.into(),
                e.round.into(),
            ]
        })
        .collect();
    let mut accuracy = Vec::new();
    for (n, trace) in run.traces.iter().enumerate() {
        for p in trace {
            accuracy.push(vec![
                n.into(),
                p.round.into(),
                p.time.into(),
                p.accuracy.into(),
            ]);
        }
    }
    (events, accuracy)
}

pub(super) fn simulate_command(
    cfg: &ExperimentConfig,
    out: &mut Artifacts,
) -> Result<RunReport, HarnessError> {
    let inst = cfg.instance(cfg.seed, cfg.simulate.omega)?;
    let market = &inst.market;
    let p1 = phase1(cfg, &inst)?;
    let outcome = &p1.outcome;
    out.csv("prices.csv", "prices", &price_rows(&p1.prices))?;
    out.csv(
        "allocation.csv",
        "allocation",
        &allocation_rows(&outcome.allocation, &outcome.values),
    )?;
    out.csv(
        "utilities.csv",
        "utilities",
        &utility_rows(&outcome.msp_utilities, &outcome.mu_utilities),
    )?;
    if let Some(r) = &p1.equilibrium {
        out.csv("ne_summary.csv", "ne_summary", &[ne_summary_row(r)])?;
    }
    if let Some(t) = &p1.training {
        out.csv("utility_trace.csv", "utility_trace", &trace_rows(t))?;
    }

    let horizon = market.period;
    let run = run_synchronous_rounds(
        market,
        &inst.channel,
        &outcome.allocation,
        &inst.tasks,
        &cfg.flsim,
        horizon,
    )?;
    let (events, accuracy) = fl_rows(&run);
    out.csv("fl_events.csv", "fl_events", &events)?;
    out.csv("fl_accuracy.csv", "fl_accuracy", &accuracy)?;
    let simulated = aoi_timeline(
        &run.events,
        market.num_mus(),
        market.num_msps(),
        horizon,
        0.0,
    );
    let mut aoi = Vec::new();
    for m in 0..market.num_mus() {
        for n in 0..market.num_msps() {
            let closed = outcome.allocation.participating[m][n].then(|| {
                let t = PairTerms::new(market, &inst.channel, m, n);
                let (f, b) = (
                    outcome.allocation.f[(m, n)],
                    outcome.allocation.bandwidth[(m, n)],
                );
                average_aoi(t.tau, t.training_time(f), t.upload_time(b))
            });
            aoi.push(vec![
                m.into(),
                n.into(),
                simulated[(m, n)].into(),
                closed.into(),
            ]);
        }
    }
    out.csv("aoi.csv", "aoi", &aoi)?;

    let target = cfg.flsim.target_accuracy;
    let mut lines = vec![format!(
        "phase I: total MSP utility {}; total IoM {}",
        super::format_sig9(outcome.total_msp_utility()),
        super::format_sig9(outcome.total_value())
    )];
    for n in 0..market.num_msps() {
        let last = run.traces[n].last().map_or(0.0, |p| p.accuracy);
        let reached = run
            .time_to_target(n, target)
            .map_or("not reached".to_string(), |t| {
                format!("{} s", super::format_sig9(t))
            });
        lines.push(format!(
            "phase II: MSP {n} final accuracy {}; target {target} {reached}",
            super::format_sig9(last)
        ));
    }
    Ok(RunReport {
        lines,
        success: true,
        files: Vec::new(),
    })
}

pub(super) fn verify_command(
    cfg: &ExperimentConfig,
    out: &mut Artifacts,
) -> Result<RunReport, HarnessError> {
    let scratch = out.path("verify_scratch");
    let checks = verify::run_all(cfg, &scratch);
    let _ = std::fs::remove_dir_all(&scratch);
    let rows: Vec<Vec<Cell>> = checks
        .iter()
        .map(|c| {
            vec![
                c.id.clone().into(),
                c.passed.into(),
                c.detail.clone().into(),
            ]
        })
        .collect();
    out.csv("verify.csv", "verify", &rows)?;
    let passed = checks.iter().filter(|c| c.passed).count();
    let mut lines: Vec<String> = checks.iter().map(ToString::to_string).collect();
    lines.push(format!("{passed}/{} checks passed", checks.len()));
    Ok(RunReport {
        lines,
        success: passed == checks.len(),
        files: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trailing_stats_of_constant_trace() {
        let (mean, cv) = trailing_stats(&[5.0; 150], 100);
        assert_eq!((mean, cv), (5.0, 0.0));
    }

    #[test]
    fn trailing_stats_use_the_last_window() {
        let mut trace = vec![100.0; 10];
        trace.extend([1.0, 3.0]);
        let (mean, cv) = trailing_stats(&trace, 2);
        assert_eq!(mean, 2.0);
        assert!((cv - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(trailing_stats(&[], 100), (0.0, 0.0));
    }

    #[test]
    fn parallel_map_keeps_order() {
        let serial: Vec<usize> = (0..23).map(|i| i * i).collect();
        for jobs in [1, 2, 5, 40] {
            assert_eq!(parallel_map(23, jobs, |i| i * i), serial);
        }
        assert!(parallel_map(0, 4, |i| i).is_empty());
    }

    #[test]
    fn split_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..100).map(|i| split_seed(42, i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(split_seed(42, 3), split_seed(42, 3));
    }
}
