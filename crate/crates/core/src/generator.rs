//! Seeded random market instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::market::{ChannelMode, Matrix, MspProfile, MuProfile, TradingConfig};

/// Sampling ranges for a random instance. Every `[lo, hi]` pair is drawn
/// uniformly and independently per entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub num_mus: usize,
    pub num_msps: usize,
    pub period: f64,
    /// cycles/s
    pub f_max: [f64; 2],
    /// Hz
    pub bandwidth_max: [f64; 2],
    pub sinr_db: [f64; 2],
    pub cost_compute: [f64; 2],
    pub cost_bandwidth: [f64; 2],
    pub data_rate: [f64; 2],
    pub theta: [f64; 2],
    /// Basic-service workload S (cycles).
    pub basic_compute: [f64; 2],
    pub latency_req: [f64; 2],
    pub tau: [f64; 2],
    pub payload_bits: [f64; 2],
    pub profit_coef: [f64; 2],
    pub epsilon: f64,
    pub eta: f64,
    pub price_min: f64,
    pub price_max: f64,
    pub omega: [f64; 2],
    pub channel_mode: ChannelMode,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            num_mus: 5,
            num_msps: 3,
            period: 30.0,
            f_max: [3e9, 5e9],
            bandwidth_max: [1e6, 4e6],
            sinr_db: [0.0, 10.0],
            cost_compute: [3e-11, 6e-11],
            cost_bandwidth: [2e-8, 4e-8],
            data_rate: [3e7, 6e7],
            theta: [0.2, 0.4],
            basic_compute: [3e8, 8e8],
            latency_req: [1.0, 1.0],
            tau: [1.5, 3.0],
            payload_bits: [5e4, 1e5],
            profit_coef: [800.0, 1200.0],
            epsilon: 1.0,
            eta: 1e-6,
            price_min: 0.2,
            price_max: 5.0,
            omega: [0.05, 0.5],
            channel_mode: ChannelMode::Static,
        }
    }
}

fn draw(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Instance drawn from `spec` with a ChaCha stream seeded by `seed`.
pub fn generate(spec: &GeneratorSpec, seed: u64) -> TradingConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mus = (0..spec.num_mus)
        .map(|id| MuProfile {
            id,
            f_max: draw(&mut rng, spec.f_max),
            bandwidth_max: draw(&mut rng, spec.bandwidth_max),
            cost_compute: draw(&mut rng, spec.cost_compute),
            cost_bandwidth: draw(&mut rng, spec.cost_bandwidth),
            data_rate: draw(&mut rng, spec.data_rate),
            theta: draw(&mut rng, spec.theta),
            basic_compute: draw(&mut rng, spec.basic_compute),
            latency_req: draw(&mut rng, spec.latency_req),
            tx_power: 0.2,
        })
        .collect();
    let msps = (0..spec.num_msps)
        .map(|id| MspProfile {
            id,
            tau: draw(&mut rng, spec.tau),
            payload_bits: draw(&mut rng, spec.payload_bits),
            profit_coef: draw(&mut rng, spec.profit_coef),
            epsilon: spec.epsilon,
            eta: spec.eta,
            price_min: spec.price_min,
            price_max: spec.price_max,
        })
        .collect();
    let omega = Matrix::from_fn(spec.num_mus, spec.num_msps, |_, _| {
        draw(&mut rng, spec.omega)
    });
    TradingConfig {
        period: spec.period,
        mus,
        msps,
        sinr_db_range: spec.sinr_db,
        channel_mode: spec.channel_mode,
        seed,
        omega,
        payload_override: None,
    }
}
