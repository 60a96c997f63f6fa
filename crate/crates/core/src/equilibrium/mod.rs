//! Two-level rewarding game: MU best responses, MSP price search and the
//! Nash-equilibrium iteration between MSPs.

mod concavity;
mod follower;
mod leader;

pub use concavity::{
    max_eigenvalue, msp_utility_hessian, mu_utility_hessian, numerical_hessian, verify_concavity,
    verify_concavity_with, ConcavityReport, LatencySign,
};
pub use follower::{
    coupled_best_response, follower_best_response, kkt_point, mu_terms, participation_filter,
    projected_gradient_follower, threshold_aggregate, Branch, FollowerOutcome, FollowerResponse,
};
pub use leader::{
    evaluate_prices, msp_best_response, solve_ne, AnalyticFollower, EquilibriumResult,
    FollowerOracle, MarketOutcome,
};

use crate::iom::PairTerms;
use crate::market::{check_row, ChannelState, Constraint, Market, MuProfile};

#[derive(Debug, thiserror::Error)]
pub enum EquilibriumError {
    #[error("allocation infeasible under {0}: {1}")]
    InfeasibleAllocation(Constraint, String),
    #[error("MU {0} has an empty feasible set")]
    NoFeasiblePoint(usize),
    #[error("no convergence after {sweeps} sweeps")]
    NotConverged {
        sweeps: usize,
        last: Box<EquilibriumResult>,
    },
    #[error("Hessian eigenvalue {eigenvalue} > 0 at {point:?}")]
    ConcavityViolation { point: Vec<f64>, eigenvalue: f64 },
}

/// `C = c_f ln(1/theta) f + c_B B`.
pub fn mu_cost(mu: &MuProfile, f: f64, bandwidth: f64, theta: f64) -> f64 {
    mu.cost_compute * (1.0 / theta).ln() * f + mu.cost_bandwidth * bandwidth
}

/// MU `m`'s utility `sum_n (p_n V_n - C_n)` for an explicit allocation row.
/// Pairs holding no resources contribute nothing.
pub fn mu_utility(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    prices_row: &[f64],
    f_row: &[f64],
    b_row: &[f64],
) -> Result<f64, EquilibriumError> {
    check_row(market, channel, m, f_row, b_row, None)
        .map_err(|(c, detail)| EquilibriumError::InfeasibleAllocation(c, detail))?;
    Ok((0..market.num_msps())
        .map(|n| {
            PairTerms::new(market, channel, m, n).net_utility(prices_row[n], f_row[n], b_row[n])
        })
        .sum())
}

/// `Psi_n = mu_n ln(1 + sum_m V_m) - sum_m p_m V_m`.
pub fn msp_utility(profit_coef: f64, values: &[f64], prices: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    let paid: f64 = values.iter().zip(prices).map(|(v, p)| v * p).sum();
    profit_coef * total.ln_1p() - paid
}
