//! Upper level: MSP price search and the Gauss-Seidel equilibrium iteration.

use crate::iom::PairTerms;
use crate::market::{Allocation, ChannelState, Market, Matrix, PriceMatrix};
use crate::search::grid_golden_max;

use super::follower::{best_response_from_terms, mu_terms, FollowerOutcome};
use super::{msp_utility, EquilibriumError};

/// Grid points scanned per price coordinate before golden refinement.
const GRID_POINTS: usize = 48;
/// Golden-section bracket width, relative to the price range.
const BRACKET_TOL: f64 = 1e-8;
const MAX_CYCLES: usize = 200;

/// Anything that can tell an MSP how MUs respond to a price matrix.
pub trait FollowerOracle {
    fn market(&self) -> &Market;

    /// Responses of MU `m` to the prices it sees from every MSP.
    fn respond(&self, m: usize, prices_row: &[f64]) -> FollowerOutcome;

    /// IoM of pair (m, n) under a response (zero when withheld).
    fn pair_value(&self, m: usize, n: usize, outcome: &FollowerOutcome) -> f64;

    /// Net utility of pair (m, n) under a response (zero when withheld).
    fn pair_utility(&self, m: usize, n: usize, price: f64, outcome: &FollowerOutcome) -> f64;
}

/// Followers answering with the closed-form (or exact coupled) best response.
pub struct AnalyticFollower<'a> {
    market: &'a Market,
    terms: Vec<Vec<PairTerms>>,
}

impl<'a> AnalyticFollower<'a> {
    pub fn new(market: &'a Market, channel: &ChannelState) -> Self {
        let terms = (0..market.num_mus())
            .map(|m| mu_terms(market, channel, m))
            .collect();
        Self { market, terms }
    }

    pub fn terms(&self, m: usize, n: usize) -> &PairTerms {
        &self.terms[m][n]
    }
}

impl FollowerOracle for AnalyticFollower<'_> {
    fn market(&self) -> &Market {
        self.market
    }

    fn respond(&self, m: usize, prices_row: &[f64]) -> FollowerOutcome {
        best_response_from_terms(self.market, m, &self.terms[m], prices_row)
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

/// Everything that follows from a price matrix once MUs have responded.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketOutcome {
    pub allocation: Allocation,
    /// IoM per pair, M x N.
    pub values: Matrix,
    pub msp_utilities: Vec<f64>,
    pub mu_utilities: Vec<f64>,
}

impl MarketOutcome {
    pub fn total_msp_utility(&self) -> f64 {
        self.msp_utilities.iter().sum()
    }

    pub fn total_value(&self) -> f64 {
        self.values.iter().sum()
    }
}

pub fn evaluate_prices(oracle: &impl FollowerOracle, prices: &PriceMatrix) -> MarketOutcome {
    let market = oracle.market();
    let (nm, nn) = (market.num_mus(), market.num_msps());
    let mut allocation = Allocation::empty(nm, nn);
    let mut values = Matrix::zeros(nm, nn);
    let mut mu_utilities = vec![0.0; nm];
    for m in 0..nm {
        let row = prices.mu_prices(m);
        let out = oracle.respond(m, &row);
        for n in 0..nn {
            let r = &out.responses[n];
            allocation.f[(m, n)] = r.f;
            allocation.bandwidth[(m, n)] = r.bandwidth;
            allocation.participating[m][n] = r.participating();
            values[(m, n)] = oracle.pair_value(m, n, &out);
            mu_utilities[m] += oracle.pair_utility(m, n, row[n], &out);
        }
    }
    let msp_utilities = (0..nn)
        .map(|n| {
            msp_utility(
                market.msps[n].profit_coef,
                &values.column(n),
                prices.msp_row(n),
            )
        })
        .collect();
    MarketOutcome {
        allocation,
        values,
        msp_utilities,
        mu_utilities,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumResult {
    pub prices: PriceMatrix,
    pub allocation: Allocation,
    pub values: Matrix,
    pub msp_utilities: Vec<f64>,
    pub mu_utilities: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl EquilibriumResult {
    fn new(prices: PriceMatrix, outcome: MarketOutcome, sweeps: usize, converged: bool) -> Self {
        Self {
            prices,
            allocation: outcome.allocation,
            values: outcome.values,
            msp_utilities: outcome.msp_utilities,
            mu_utilities: outcome.mu_utilities,
            sweeps,
            converged,
        }
    }

    pub fn total_msp_utility(&self) -> f64 {
        self.msp_utilities.iter().sum()
    }

    pub fn total_value(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(f64::MIN_POSITIVE)
}

/// Best price row of MSP `n` against the other MSPs' current prices, by
/// cyclic coordinate ascent. Each coordinate is maximized by a grid scan
/// plus golden-section refinement; the scan keeps the search from stalling
/// on the flat region where the MU withholds.
pub fn msp_best_response(
    oracle: &impl FollowerOracle,
    n: usize,
    prices: &PriceMatrix,
    tolerance: f64,
) -> Vec<f64> {
    let market = oracle.market();
    let msp = &market.msps[n];
    let (lo, hi) = (msp.price_min, msp.price_max);
    let nm = market.num_mus();
    let mut columns: Vec<Vec<f64>> = (0..nm).map(|m| prices.mu_prices(m)).collect();
    for col in &mut columns {
        col[n] = col[n].clamp(lo, hi);
    }
    let value_at = |m: usize, col: &[f64]| oracle.pair_value(m, n, &oracle.respond(m, col));
    let mut values: Vec<f64> = (0..nm).map(|m| value_at(m, &columns[m])).collect();

    for _ in 0..MAX_CYCLES {
        let mut change: f64 = 0.0;
        for m in 0..nm {
            let other_value: f64 = values
                .iter()
                .enumerate()
                .filter(|(k, _)| *k != m)
                .map(|(_, v)| v)
                .sum();
            let other_paid: f64 = (0..nm)
                .filter(|&k| k != m)
                .map(|k| values[k] * columns[k][n])
                .sum();
            let mut col = columns[m].clone();
            let objective = |p: f64| {
                let mut c = col.clone();
                c[n] = p;
                let v = value_at(m, &c);
                msp.profit_coef * (other_value + v).ln_1p() - other_paid - p * v
            };
            let best = grid_golden_max(objective, lo, hi, GRID_POINTS, BRACKET_TOL * (hi - lo));
            // The incumbent survives only if strictly better; on a flat
            // objective (MU withholds everywhere) this settles at p_min.
            let current = objective(columns[m][n]);
            if best.value >= current && best.x != columns[m][n] {
                change = change.max(relative_change(columns[m][n], best.x));
                col[n] = best.x;
                values[m] = value_at(m, &col);
                columns[m] = col;
            }
        }
        if change < tolerance {
            break;
        }
    }
    columns.iter().map(|c| c[n]).collect()
}

/// Gauss-Seidel iteration of MSP best responses from `initial` until no
/// price moves by more than `tolerance` (relative) within a sweep.
pub fn solve_ne(
    market: &Market,
    channel: &ChannelState,
    initial: &PriceMatrix,
    tolerance: f64,
    max_sweeps: usize,
) -> Result<EquilibriumResult, EquilibriumError> {
    let oracle = AnalyticFollower::new(market, channel);
    let mut prices = initial.clone();
    for n in 0..market.num_msps() {
        let msp = &market.msps[n];
        for p in prices.p.row_mut(n) {
            *p = p.clamp(msp.price_min, msp.price_max);
        }
    }
    for sweep in 1..=max_sweeps {
        let mut change: f64 = 0.0;
        for n in 0..market.num_msps() {
            let row = msp_best_response(&oracle, n, &prices, 0.1 * tolerance);
            for (old, new) in prices.p.row_mut(n).iter_mut().zip(row) {
                change = change.max(relative_change(*old, new));
                *old = new;
            }
        }
        if change < tolerance {
            let outcome = evaluate_prices(&oracle, &prices);
            return Ok(EquilibriumResult::new(prices, outcome, sweep, true));
        }
    }
    let outcome = evaluate_prices(&oracle, &prices);
    Err(EquilibriumError::NotConverged {
        sweeps: max_sweeps,
        last: Box::new(EquilibriumResult::new(prices, outcome, max_sweeps, false)),
    })
}
