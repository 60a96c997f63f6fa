//! Comparison schemes: each MSP posts one reward for all MUs, and MUs split
//! their budgets by a fixed weighting rule instead of best-responding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    evaluate_prices, mu_terms, AnalyticFollower, Branch, FollowerOracle, FollowerOutcome,
    FollowerResponse, MarketOutcome,
};
use crate::iom::PairTerms;
use crate::market::{ChannelState, Market, Matrix, MuProfile, PriceMatrix};
use crate::search::grid_golden_max;

/// Share of each budget the schemes hand out, keeping the capacity limits strict.
pub const BUDGET_FACTOR: f64 = 0.999;
const GRID_POINTS: usize = 200;
const BRACKET_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Weight by data volume `x tau_n`.
    XBased,
    /// Weight by potential value `omega_mn`.
    WBased,
    /// Weight by `omega_mn x tau_n`.
    WxBased,
    /// One random split per MU, drawn once from a seed.
    Fixed,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 4] = [
        SchemeKind::XBased,
        SchemeKind::WBased,
        SchemeKind::WxBased,
        SchemeKind::Fixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::XBased => "x_based",
            SchemeKind::WBased => "w_based",
            SchemeKind::WxBased => "w_x_based",
            SchemeKind::Fixed => "fixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkScheme {
    pub kind: SchemeKind,
    /// Seed of the random split; only used by `Fixed`.
    pub fixed_fraction_seed: u64,
}

impl BenchmarkScheme {
    pub fn new(kind: SchemeKind, fixed_fraction_seed: u64) -> Self {
        Self {
            kind,
            fixed_fraction_seed,
        }
    }
}

/// Splitting weights, M x N. Zero weight means the MU never serves that MSP.
pub fn scheme_weights(scheme: &BenchmarkScheme, market: &Market) -> Matrix {
    let (nm, nn) = (market.num_mus(), market.num_msps());
    match scheme.kind {
        SchemeKind::XBased => {
            Matrix::from_fn(nm, nn, |m, n| market.mus[m].data_rate * market.msps[n].tau)
        }
        SchemeKind::WBased => Matrix::from_fn(nm, nn, |m, n| market.omega(m, n)),
        SchemeKind::WxBased => Matrix::from_fn(nm, nn, |m, n| {
            market.omega(m, n) * market.mus[m].data_rate * market.msps[n].tau
        }),
        SchemeKind::Fixed => {
            let mut rng = ChaCha8Rng::seed_from_u64(scheme.fixed_fraction_seed);
            Matrix::from_fn(nm, nn, |_, _| rng.random_range(0.05..1.0))
        }
    }
}

fn withheld() -> FollowerResponse {
    FollowerResponse {
        f: 0.0,
        bandwidth: 0.0,
        branch: Branch::Withheld,
        delta: 0.0,
        threshold: 0.0,
    }
}

/// One MU's scheme allocation at the posted uniform rewards (one per MSP).
///
/// Both budgets are split in proportion to the weights over the active
/// pairs. A pair missing its deadline is scaled up to the deadline if spare
/// budget exists and withheld otherwise. Pairs that would deliver no IoM or
/// run at a loss are dropped and the budgets re-split over the rest.
pub fn allocate(
    mu: &MuProfile,
    terms: &[PairTerms],
    weights: &[f64],
    uniform_prices: &[f64],
) -> FollowerOutcome {
    let nn = terms.len();
    let cap_f = BUDGET_FACTOR * mu.compute_cap();
    let cap_b = BUDGET_FACTOR * mu.bandwidth_cap();
    let mut active: Vec<bool> = weights.iter().map(|&w| w > 0.0 && w.is_finite()).collect();
    loop {
        let mut responses = vec![withheld(); nn];
        let total: f64 = (0..nn).filter(|&n| active[n]).map(|n| weights[n]).sum();
        if total <= 0.0 {
            return FollowerOutcome {
                responses,
                coupled: false,
                compute_multiplier: 0.0,
                bandwidth_multiplier: 0.0,
            };
        }
        for n in (0..nn).filter(|&n| active[n]) {
            let share = weights[n] / total;
            responses[n] = FollowerResponse {
                f: share * cap_f,
                bandwidth: share * cap_b,
                branch: Branch::Interior,
                ..withheld()
            };
        }
        let mut used_f: f64 = responses.iter().map(|r| r.f).sum();
        let mut used_b: f64 = responses.iter().map(|r| r.bandwidth).sum();
        for n in (0..nn).filter(|&n| active[n]) {
            let (f, b) = (responses[n].f, responses[n].bandwidth);
            let elapsed = terms[n].training_time(f) + terms[n].upload_time(b);
            if elapsed <= terms[n].tau {
                continue;
            }
            // Times scale as 1/s when both resources scale by s.
            let s = elapsed / terms[n].tau;
            let (extra_f, extra_b) = (f * (s - 1.0), b * (s - 1.0));
            if used_f + extra_f <= cap_f && used_b + extra_b <= cap_b {
                responses[n].f = f * s;
                responses[n].bandwidth = b * s;
                responses[n].branch = Branch::DeadlineBound;
                used_f += extra_f;
                used_b += extra_b;
            } else {
                responses[n] = withheld();
                used_f -= f;
                used_b -= b;
            }
        }
        let mut dropped = false;
        for n in 0..nn {
            if !active[n] {
                continue;
            }
            let r = &responses[n];
            let keep = r.participating()
                && terms[n].value(r.f, r.bandwidth) > 0.0
                && terms[n].net_utility(uniform_prices[n], r.f, r.bandwidth) > 0.0;
            if !keep {
                active[n] = false;
                dropped = true;
            }
        }
        if !dropped {
            return FollowerOutcome {
                responses,
                coupled: false,
                compute_multiplier: 0.0,
                bandwidth_multiplier: 0.0,
            };
        }
    }
}

/// Followers applying a benchmark scheme's weighting rule.
pub struct SchemeFollower<'a> {
    market: &'a Market,
    terms: Vec<Vec<PairTerms>>,
    weights: Matrix,
}

impl<'a> SchemeFollower<'a> {
    pub fn new(market: &'a Market, channel: &ChannelState, scheme: &BenchmarkScheme) -> Self {
        Self {
            market,
            terms: (0..market.num_mus())
                .map(|m| mu_terms(market, channel, m))
                .collect(),
            weights: scheme_weights(scheme, market),
        }
    }
}

impl FollowerOracle for SchemeFollower<'_> {
    fn market(&self) -> &Market {
        self.market
    }

    fn respond(&self, m: usize, prices_row: &[f64]) -> FollowerOutcome {
        allocate(
            &self.market.mus[m],
            &self.terms[m],
            self.weights.row(m),
            prices_row,
        )
    }

    fn pair_value(&self, m: usize, n: usize, outcome: &FollowerOutcome) -> f64 {
        outcome.responses[n].value(&self.terms[m][n])
    }

    fn pair_utility(&self, m: usize, n: usize, price: f64, outcome: &FollowerOutcome) -> f64 {
        let r = &outcome.responses[n];
        if r.participating() {
            self.terms[m][n].net_utility(price, r.f, r.bandwidth)
        } else {
            0.0
        }
    }
}

/// How MUs answer uniform rewards.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FollowerRule {
    /// Utility-maximizing best response.
    ImmersionAware,
    Scheme(BenchmarkScheme),
}

fn uniform_matrix(market: &Market, prices: &[f64]) -> PriceMatrix {
    PriceMatrix::new(Matrix::from_fn(
        market.num_msps(),
        market.num_mus(),
        |n, _| prices[n],
    ))
}

/// MSP `n`'s best single reward for all MUs, the other MSPs' uniform
/// rewards held fixed. Ties go to the lowest price.
pub fn uniform_reward_search(oracle: &impl FollowerOracle, n: usize, prices: &[f64]) -> f64 {
    let market = oracle.market();
    let msp = &market.msps[n];
    let objective = |p: f64| {
        let mut trial = prices.to_vec();
        trial[n] = p;
        let total: f64 = (0..market.num_mus())
            .map(|m| oracle.pair_value(m, n, &oracle.respond(m, &trial)))
            .sum();
        msp.profit_coef * total.ln_1p() - p * total
    };
    let (lo, hi) = (msp.price_min, msp.price_max);
    grid_golden_max(objective, lo, hi, GRID_POINTS, BRACKET_TOL * (hi - lo)).x
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniformOutcome {
    /// One reward per MSP.
    pub prices: Vec<f64>,
    pub outcome: MarketOutcome,
    pub sweeps: usize,
    pub converged: bool,
}

/// Best-response sweeps over uniform rewards, starting from each MSP's
/// minimum price.
pub fn solve_uniform(
    oracle: &impl FollowerOracle,
    tolerance: f64,
    max_sweeps: usize,
) -> UniformOutcome {
    let market = oracle.market();
    let mut prices: Vec<f64> = market.msps.iter().map(|s| s.price_min).collect();
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut change: f64 = 0.0;
        for n in 0..market.num_msps() {
            let p = uniform_reward_search(oracle, n, &prices);
            change = change.max((p - prices[n]).abs() / prices[n]);
            prices[n] = p;
        }
        if change < tolerance {
            converged = true;
            break;
        }
    }
    let outcome = evaluate_prices(oracle, &uniform_matrix(market, &prices));
    UniformOutcome {
        prices,
        outcome,
        sweeps,
        converged,
    }
}

/// Uniform-reward market under a follower rule.
pub fn solve_rule(market: &Market, channel: &ChannelState, rule: FollowerRule) -> UniformOutcome {
    const TOLERANCE: f64 = 1e-6;
    const MAX_SWEEPS: usize = 50;
    match rule {
        FollowerRule::ImmersionAware => solve_uniform(
            &AnalyticFollower::new(market, channel),
            TOLERANCE,
            MAX_SWEEPS,
        ),
        FollowerRule::Scheme(s) => solve_uniform(
            &SchemeFollower::new(market, channel, &s),
            TOLERANCE,
            MAX_SWEEPS,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{msp_best_response, solve_ne};
    use crate::generator::{generate, GeneratorSpec};
    use crate::market::{initial_channel, validate_config};

    fn default_market(seed: u64) -> (Market, ChannelState) {
        let cfg = generate(&GeneratorSpec::default(), seed);
        let channel = initial_channel(&cfg);
        (validate_config(cfg).unwrap(), channel)
    }

    fn all_schemes() -> Vec<BenchmarkScheme> {
        SchemeKind::ALL
            .iter()
            .map(|&k| BenchmarkScheme::new(k, 17))
            .collect()
    }

    #[test]
    fn equal_weights_split_equally() {
        let (market, channel) = default_market(0);
        let terms = mu_terms(&market, &channel, 0);
        let mu = &market.mus[0];
        let out = allocate(mu, &terms, &[1.0, 1.0, 1.0], &[5.0, 5.0, 5.0]);
        for r in &out.responses {
            assert!(r.participating());
            assert!((r.f - BUDGET_FACTOR * mu.compute_cap() / 3.0).abs() < 1e-6 * r.f);
            assert!(
                (r.bandwidth - BUDGET_FACTOR * mu.bandwidth_cap() / 3.0).abs() < 1e-6 * r.bandwidth
            );
        }
    }

    #[test]
    fn zero_potential_value_is_withheld() {
        let (market, channel) = default_market(1);
        let mut cfg = market.config().clone();
        cfg.omega[(0, 1)] = 0.0;
        let market = validate_config(cfg).unwrap();
        let oracle = SchemeFollower::new(
            &market,
            &channel,
            &BenchmarkScheme::new(SchemeKind::WBased, 0),
        );
        let out = oracle.respond(0, &[5.0, 5.0, 5.0]);
        assert_eq!(out.responses[1].branch, Branch::Withheld);
        assert!(out.responses[0].participating() && out.responses[2].participating());
    }

    #[test]
    fn unprofitable_pairs_release_their_budget() {
        let (market, channel) = default_market(2);
        let terms = mu_terms(&market, &channel, 0);
        let mu = &market.mus[0];
        // A near-zero reward from MSP 0 makes serving it a loss.
        let out = allocate(mu, &terms, &[1.0, 1.0, 1.0], &[1e-9, 5.0, 5.0]);
        assert_eq!(out.responses[0].branch, Branch::Withheld);
        let used: f64 = out.responses.iter().map(|r| r.f).sum();
        assert!((used - BUDGET_FACTOR * mu.compute_cap()).abs() < 1e-6 * used);
    }

    #[test]
    fn fixed_split_is_deterministic_per_seed() {
        let (market, _) = default_market(3);
        let a = scheme_weights(&BenchmarkScheme::new(SchemeKind::Fixed, 5), &market);
        let b = scheme_weights(&BenchmarkScheme::new(SchemeKind::Fixed, 5), &market);
        let c = scheme_weights(&BenchmarkScheme::new(SchemeKind::Fixed, 6), &market);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scheme_allocations_are_feasible() {
        for seed in 0..5 {
            let (market, channel) = default_market(seed);
            for s in all_schemes() {
                let r = solve_rule(&market, &channel, FollowerRule::Scheme(s));
                r.outcome.allocation.check(&market, &channel).unwrap();
                for m in 0..market.num_mus() {
                    for n in 0..market.num_msps() {
                        let v = r.outcome.values[(m, n)];
                        assert_eq!(v > 0.0, r.outcome.allocation.participating[m][n]);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_search_dominates_its_grid() {
        let (market, channel) = default_market(4);
        for s in all_schemes() {
            let oracle = SchemeFollower::new(&market, &channel, &s);
            let prices = vec![1.0; market.num_msps()];
            let psi = |p: f64| {
                let mut trial = prices.clone();
                trial[0] = p;
                evaluate_prices(&oracle, &uniform_matrix(&market, &trial)).msp_utilities[0]
            };
            let best = uniform_reward_search(&oracle, 0, &prices);
            let at_best = psi(best);
            for i in 0..GRID_POINTS {
                let p = 0.2 + 4.8 * i as f64 / (GRID_POINTS - 1) as f64;
                assert!(at_best >= psi(p) - 1e-9 * at_best.abs());
            }
        }
    }

    #[test]
    fn negligible_profit_coefficient_posts_minimum_reward() {
        let (market, channel) = default_market(5);
        let mut cfg = market.config().clone();
        cfg.msps[0].profit_coef = 1e-12;
        let market = validate_config(cfg).unwrap();
        let oracle = SchemeFollower::new(
            &market,
            &channel,
            &BenchmarkScheme::new(SchemeKind::XBased, 0),
        );
        let p = uniform_reward_search(&oracle, 0, &[1.0, 1.0, 1.0]);
        assert_eq!(p, market.msps[0].price_min);
    }

    #[test]
    fn single_mu_uniform_search_matches_coordinate_search() {
        let (market, channel) = default_market(6);
        let mut cfg = market.config().clone();
        cfg.mus.truncate(1);
        cfg.omega = Matrix::from_fn(1, cfg.msps.len(), |_, n| cfg.omega[(0, n)]);
        let market = validate_config(cfg).unwrap();
        let oracle = AnalyticFollower::new(&market, &channel);
        let prices = vec![1.0; market.num_msps()];
        let uniform = uniform_reward_search(&oracle, 0, &prices);
        let matrix = uniform_matrix(&market, &prices);
        let coordinate = msp_best_response(&oracle, 0, &matrix, 1e-10)[0];
        let grid_step = 4.8 / (GRID_POINTS - 1) as f64;
        assert!(
            (uniform - coordinate).abs() <= grid_step,
            "{uniform} vs {coordinate}"
        );
    }

    #[test]
    fn immersion_aware_equilibrium_delivers_the_most_iom() {
        for seed in 0..5 {
            let (market, channel) = default_market(seed);
            let ne = solve_ne(
                &market,
                &channel,
                &PriceMatrix::midpoint(&market),
                1e-6,
                500,
            )
            .unwrap();
            for s in all_schemes() {
                let r = solve_rule(&market, &channel, FollowerRule::Scheme(s));
                assert!(
                    ne.total_value() >= r.outcome.total_value(),
                    "seed {seed} {}: {} < {}",
                    s.kind.name(),
                    ne.total_value(),
                    r.outcome.total_value()
                );
            }
        }
    }
}
