//! Fully distributed multi-agent PPO for dynamic rewards: each MSP learns
//! its price row from its own IoM observations and utilities.

mod checkpoint;
mod env;
mod net;
mod ppo;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use env::{Env, Step};
pub use net::{clip_grad_norm, Adam, ForwardTrace, Mlp};
pub use ppo::{
    actor_forward, compute_gae, from_price, loss_and_grads, to_price, Agent, Decision, Gae,
    Hyperparams, LossStats, RunningNorm, Sample, LOG_STD_MAX, LOG_STD_MIN,
};

pub use crate::stream_rng;

use crate::market::{ChannelMode, ChannelState, Market, Matrix, PriceMatrix};

#[derive(Debug, thiserror::Error)]
pub enum MddrError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite loss (actor {actor}, critic {critic})")]
    NonFiniteLoss { actor: f64, critic: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct Training {
    pub agents: Vec<Agent>,
    /// Mean stage utility per episode, one trace per MSP.
    pub utility_traces: Vec<Vec<f64>>,
    pub final_prices: Option<PriceMatrix>,
}

impl Training {
    /// Sum over MSPs of the per-episode mean utility.
    pub fn total_trace(&self) -> Vec<f64> {
        let episodes = self.utility_traces.first().map_or(0, Vec::len);
        (0..episodes)
            .map(|e| self.utility_traces.iter().map(|t| t[e]).sum())
            .collect()
    }
}

fn joint_prices(rows: &[Vec<f64>], num_mus: usize) -> PriceMatrix {
    PriceMatrix::new(Matrix::from_fn(rows.len(), num_mus, |n, m| rows[n][m]))
}

/// Trains one agent per MSP for `episodes` episodes of
/// `hp.stages_per_episode` stage games.
pub fn train(
    market: &Market,
    channel: &ChannelState,
    mode: ChannelMode,
    episodes: usize,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Training, MddrError> {
    let (nm, nn) = (market.num_mus(), market.num_msps());
    let mut agents: Vec<Agent> = (0..nn)
        .map(|n| {
            let msp = &market.msps[n];
            Agent::new(
                nm,
                (msp.price_min, msp.price_max),
                hp,
                stream_rng(seed, n as u64 + 1),
            )
        })
        .collect();
    let mut env = Env::new(market, channel.clone(), mode, stream_rng(seed, 0));
    let mut traces = vec![Vec::with_capacity(episodes); nn];
    let mut final_prices = None;
    let stages = hp.stages_per_episode.max(1);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut sums = vec![0.0; nn];
        for k in 0..stages {
            let decisions: Vec<Decision> =
                agents.iter_mut().zip(&obs).map(|(a, o)| a.act(o)).collect();
            let rows: Vec<Vec<f64>> = decisions.iter().map(|d| d.prices.clone()).collect();
            let prices = joint_prices(&rows, nm);
            let step = env.step(&prices);
            let end = k + 1 == stages;
            for (n, (agent, d)) in agents.iter_mut().zip(decisions).enumerate() {
                sums[n] += step.utilities[n];
                agent.observe(d, step.utilities[n], &step.observations[n], end)?;
            }
            obs = step.observations;
            final_prices = Some(prices);
        }
        for n in 0..nn {
            traces[n].push(sums[n] / stages as f64);
        }
    }
    Ok(Training {
        agents,
        utility_traces: traces,
        final_prices,
    })
}

/// Prices the trained agents post at their policy means, iterated from the
/// midpoint observation for `stages` stages.
pub fn greedy_rollout(
    agents: &[Agent],
    env: &mut Env<'_>,
    stages: usize,
) -> (PriceMatrix, Vec<f64>) {
    let nm = env.market().num_mus();
    let mut obs = env.reset();
    let mut last = (PriceMatrix::midpoint(env.market()), vec![0.0; agents.len()]);
    for _ in 0..stages {
        let rows: Vec<Vec<f64>> = agents
            .iter()
            .zip(&obs)
            .map(|(a, o)| a.greedy_prices(o))
            .collect();
        let prices = joint_prices(&rows, nm);
        let step = env.step(&prices);
        obs = step.observations;
        last = (prices, step.utilities);
    }
    last
}

#[cfg(test)]
mod tests;
