//! Finite-difference concavity certificates for both utility levels.
//!
//! Hessians are taken in relative coordinates `x_i = x0_i (1 + u_i)` and
//! divided by `max(1, |g(x0)|)`. Both transformations are a congruence plus a
//! positive scaling, so eigenvalue signs are those of the raw Hessian while the
//! magnitudes become unit-free and comparable to a fixed tolerance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::iom::PairTerms;
use crate::market::{check_row, ChannelState, Market, PriceMatrix};

use super::follower::mu_terms;
use super::leader::{evaluate_prices, AnalyticFollower};
use super::EquilibriumError;

/// Largest Hessian eigenvalue treated as finite-difference noise.
pub const EIGEN_TOLERANCE: f64 = 1e-6;
const REL_STEP: f64 = 1e-4;

/// Sign of the latency penalty `p I (T_c + T_t)` in the MU utility.
/// `Flipped` turns it into a convex bonus and exists as a negative control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatencySign {
    Standard,
    Flipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConcavityReport {
    pub mu_points: usize,
    pub msp_points: usize,
    pub max_mu_eigenvalue: f64,
    pub max_msp_eigenvalue: f64,
}

/// Central-difference Hessian of `g` at `x0` with step `h` per coordinate.
pub fn numerical_hessian(g: impl Fn(&[f64]) -> f64, x0: &[f64], h: f64) -> DMatrix<f64> {
    let d = x0.len();
    let mut x = x0.to_vec();
    let mut hess = DMatrix::zeros(d, d);
    let g0 = g(x0);
    for i in 0..d {
        x[i] = x0[i] + h;
        let gp = g(&x);
        x[i] = x0[i] - h;
        let gm = g(&x);
        x[i] = x0[i];
        hess[(i, i)] = (gp - 2.0 * g0 + gm) / (h * h);
        for j in 0..i {
            let mut at = |si: f64, sj: f64| {
                x[i] = x0[i] + si * h;
                x[j] = x0[j] + sj * h;
                let v = g(&x);
                x[i] = x0[i];
                x[j] = x0[j];
                v
            };
            let mixed =
                (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
            hess[(i, j)] = mixed;
            hess[(j, i)] = mixed;
        }
    }
    hess
}

pub fn max_eigenvalue(hess: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(hess.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn relative_hessian(g: impl Fn(&[f64]) -> f64, x0: &[f64]) -> DMatrix<f64> {
    let scale = g(x0).abs().max(1.0);
    let in_u = |u: &[f64]| {
        let x: Vec<f64> = x0.iter().zip(u).map(|(a, b)| a * (1.0 + b)).collect();
        g(&x) / scale
    };
    numerical_hessian(in_u, &vec![0.0; x0.len()], REL_STEP)
}

fn pair_utility(t: &PairTerms, price: f64, f: f64, b: f64, sign: LatencySign) -> f64 {
    let latency = t.training_time(f) + t.upload_time(b);
    let s = match sign {
        LatencySign::Standard => 1.0,
        LatencySign::Flipped => -1.0,
    };
    price * t.contribution * (0.5 * t.tau - s * latency) - t.cost(f, b)
}

/// Normalized Hessian of MU `m`'s utility in `(f_row, B_row)`.
pub fn mu_utility_hessian(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    prices_row: &[f64],
    f_row: &[f64],
    b_row: &[f64],
    sign: LatencySign,
) -> DMatrix<f64> {
    let terms = mu_terms(market, channel, m);
    let nn = terms.len();
    let g = |x: &[f64]| -> f64 {
        (0..nn)
            .map(|n| pair_utility(&terms[n], prices_row[n], x[n], x[nn + n], sign))
            .sum()
    };
    let x0: Vec<f64> = f_row.iter().chain(b_row).copied().collect();
    relative_hessian(g, &x0)
}

/// Normalized Hessian of MSP `n`'s utility in its own price row, with MUs
/// answering through the analytical follower.
pub fn msp_utility_hessian(
    market: &Market,
    channel: &ChannelState,
    n: usize,
    prices: &PriceMatrix,
) -> DMatrix<f64> {
    let oracle = AnalyticFollower::new(market, channel);
    let g = |row: &[f64]| -> f64 {
        let mut p = prices.clone();
        p.p.row_mut(n).copy_from_slice(row);
        evaluate_prices(&oracle, &p).msp_utilities[n]
    };
    relative_hessian(g, prices.msp_row(n))
}

/// Follower regime at a price matrix: participation and coupling per MU.
fn regime(
    oracle: &AnalyticFollower<'_>,
    market: &Market,
    prices: &PriceMatrix,
) -> Vec<(Vec<bool>, bool)> {
    use super::leader::FollowerOracle;
    (0..market.num_mus())
        .map(|m| {
            let out = oracle.respond(m, &prices.mu_prices(m));
            (
                out.responses.iter().map(|r| r.participating()).collect(),
                out.coupled,
            )
        })
        .collect()
}

/// True when every point of the relative stencil around row `n` stays in the
/// same follower regime, so the utility is smooth over the stencil.
fn stencil_is_smooth(
    oracle: &AnalyticFollower<'_>,
    market: &Market,
    n: usize,
    prices: &PriceMatrix,
) -> bool {
    let base = regime(oracle, market, prices);
    if !base.iter().any(|(flags, _)| flags[n]) {
        return false;
    }
    let row = prices.msp_row(n).to_vec();
    let msp = &market.msps[n];
    for i in 0..row.len() {
        for s in [-2.0, -1.0, 1.0, 2.0] {
            let mut p = prices.clone();
            p.p[(n, i)] = row[i] * (1.0 + s * REL_STEP);
            if p.p[(n, i)] < msp.price_min || p.p[(n, i)] > msp.price_max {
                return false;
            }
            if regime(oracle, market, &p) != base {
                return false;
            }
        }
    }
    true
}

/// Random feasible allocation row with every pair active, or `None` if the
/// draw misses the deadline or basic-service limit.
fn random_interior_row(
    market: &Market,
    channel: &ChannelState,
    m: usize,
    rng: &mut impl Rng,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let nn = market.num_msps();
    let mu = &market.mus[m];
    let fill_f: f64 = rng.random_range(0.2..0.95);
    let fill_b: f64 = rng.random_range(0.2..0.95);
    let wf: Vec<f64> = (0..nn).map(|_| rng.random_range(0.1..1.0)).collect();
    let wb: Vec<f64> = (0..nn).map(|_| rng.random_range(0.1..1.0)).collect();
    let (sf, sb): (f64, f64) = (wf.iter().sum(), wb.iter().sum());
    let f: Vec<f64> = wf
        .iter()
        .map(|w| w / sf * fill_f * mu.compute_cap())
        .collect();
    let b: Vec<f64> = wb
        .iter()
        .map(|w| w / sb * fill_b * mu.bandwidth_cap())
        .collect();
    check_row(market, channel, m, &f, &b, None).ok()?;
    Some((f, b))
}

fn random_prices(market: &Market, rng: &mut impl Rng) -> PriceMatrix {
    let mut p = PriceMatrix::midpoint(market);
    for n in 0..market.num_msps() {
        let msp = &market.msps[n];
        for v in p.p.row_mut(n) {
            *v = rng.random_range(msp.price_min..=msp.price_max);
        }
    }
    p
}

/// Checks both Hessians at `samples` random interior points each.
pub fn verify_concavity(
    market: &Market,
    channel: &ChannelState,
    samples: usize,
    seed: u64,
) -> Result<ConcavityReport, EquilibriumError> {
    verify_concavity_with(market, channel, samples, seed, LatencySign::Standard)
}

pub fn verify_concavity_with(
    market: &Market,
    channel: &ChannelState,
    samples: usize,
    seed: u64,
    sign: LatencySign,
) -> Result<ConcavityReport, EquilibriumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let oracle = AnalyticFollower::new(market, channel);
    let mut report = ConcavityReport {
        mu_points: 0,
        msp_points: 0,
        max_mu_eigenvalue: f64::NEG_INFINITY,
        max_msp_eigenvalue: f64::NEG_INFINITY,
    };
    let max_attempts = 200 * samples.max(1);

    let mut attempts = 0;
    while report.mu_points < samples && attempts < max_attempts {
        attempts += 1;
        let m = rng.random_range(0..market.num_mus());
        let Some((f, b)) = random_interior_row(market, channel, m, &mut rng) else {
            continue;
        };
        let prices = random_prices(market, &mut rng).mu_prices(m);
        let hess = mu_utility_hessian(market, channel, m, &prices, &f, &b, sign);
        let eig = max_eigenvalue(&hess);
        report.max_mu_eigenvalue = report.max_mu_eigenvalue.max(eig);
        report.mu_points += 1;
        if eig > EIGEN_TOLERANCE {
            return Err(EquilibriumError::ConcavityViolation {
                point: f.into_iter().chain(b).collect(),
                eigenvalue: eig,
            });
        }
    }

    attempts = 0;
    while report.msp_points < samples && attempts < max_attempts {
        attempts += 1;
        let n = rng.random_range(0..market.num_msps());
        let prices = random_prices(market, &mut rng);
        if !stencil_is_smooth(&oracle, market, n, &prices) {
            continue;
        }
        let hess = msp_utility_hessian(market, channel, n, &prices);
        let eig = max_eigenvalue(&hess);
        report.max_msp_eigenvalue = report.max_msp_eigenvalue.max(eig);
        report.msp_points += 1;
        if eig > EIGEN_TOLERANCE {
            return Err(EquilibriumError::ConcavityViolation {
                point: prices.msp_row(n).to_vec(),
                eigenvalue: eig,
            });
        }
    }
    Ok(report)
}
