//! Brute-force references for the analytical solvers.

use rand::Rng;

use crate::equilibrium::{kkt_point, participation_filter, threshold_aggregate};
use crate::iom::PairTerms;
use crate::market::{
    validate_config, ChannelMode, ChannelState, Market, Matrix, MspProfile, MuProfile,
    TradingConfig,
};

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// A one-MU, one-MSP market whose budgets are loose enough that the closed
/// form never triggers the coupled solve, together with a price drawn so
/// that `p I / F^2` is log-uniform over `[0.1, 100]`; this covers the
/// withheld, deadline-bound and interior cases.
pub fn random_decoupled_pair(rng: &mut impl Rng) -> (Market, ChannelState, f64) {
    let sinr = log_uniform(rng, 1.0, 10.0);
    let mut cfg = TradingConfig {
        period: 30.0,
        mus: vec![MuProfile {
            id: 0,
            f_max: 1e15,
            bandwidth_max: 1e15,
            cost_compute: log_uniform(rng, 1e-11, 1e-8),
            cost_bandwidth: log_uniform(rng, 1e-8, 1e-5),
            data_rate: log_uniform(rng, 1e7, 2e8),
            theta: rng.random_range(0.1..0.6),
            basic_compute: log_uniform(rng, 1e8, 1e9),
            latency_req: 1.0,
            tx_power: 0.2,
        }],
        msps: vec![MspProfile {
            id: 0,
            tau: rng.random_range(1.0..4.0),
            payload_bits: log_uniform(rng, 1e4, 1e6),
            profit_coef: 100.0,
            epsilon: 1.0,
            eta: 1e-6,
            price_min: 1e-12,
            price_max: 1e12,
        }],
        sinr_db_range: [0.0, 10.0],
        channel_mode: ChannelMode::Static,
        seed: 0,
        omega: Matrix::filled(1, 1, rng.random_range(0.05..0.5)),
        payload_override: None,
    };
    let channel = ChannelState {
        sinr: Matrix::filled(1, 1, sinr),
        mode: ChannelMode::Static,
    };
    let probe = validate_config(cfg.clone()).expect("generated pair is valid");
    let terms = PairTerms::new(&probe, &channel, 0, 0);
    let threshold = threshold_aggregate(&terms);
    let price = log_uniform(rng, 0.1, 100.0) * threshold * threshold / terms.contribution;
    let r = kkt_point(&terms, price);
    let mu = &mut cfg.mus[0];
    mu.f_max = mu.basic_compute / mu.latency_req + r.f * rng.random_range(1.5..4.0);
    mu.bandwidth_max = r.bandwidth * rng.random_range(1.5..4.0);
    let market = validate_config(cfg).expect("generated pair is valid");
    (market, channel, price)
}

/// Largest MU utility over a `grid x grid` lattice of `(f, B)` in
/// `(0, cap_f] x (0, cap_B]`, restricted to points meeting the deadline, or
/// zero (staying out) if that is better.
pub fn grid_follower_max(
    terms: &PairTerms,
    price: f64,
    cap_f: f64,
    cap_b: f64,
    grid: usize,
) -> f64 {
    let mut best: f64 = 0.0;
    for i in 1..=grid {
        let f = cap_f * i as f64 / grid as f64;
        let t_c = terms.training_time(f);
        if t_c >= terms.tau {
            continue;
        }
        for j in 1..=grid {
            let b = cap_b * j as f64 / grid as f64;
            if t_c + terms.upload_time(b) > terms.tau {
                continue;
            }
            best = best.max(terms.net_utility(price, f, b));
        }
    }
    best
}

/// Utility the closed-form follower achieves on a single pair.
pub fn closed_form_utility(terms: &PairTerms, price: f64) -> f64 {
    let r = participation_filter(terms, price, kkt_point(terms, price));
    if r.participating() {
        terms.net_utility(price, r.f, r.bandwidth)
    } else {
        0.0
    }
}
