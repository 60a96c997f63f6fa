//! One MSP's PPO agent: Gaussian policy, critic, GAE and clipped updates.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::net::{clip_grad_norm, Adam, Mlp};
use super::MddrError;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub buffer: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: usize,
    pub stages_per_episode: usize,
    /// Initial log-std bias of the policy head.
    pub init_log_std: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            clip: 0.2,
            gamma: 0.95,
            lambda: 0.95,
            buffer: 128,
            epochs: 4,
            minibatch: 32,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            hidden: 256,
            stages_per_episode: 32,
            init_log_std: -0.5,
        }
    }
}

/// Welford running mean and variance per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningNorm {
    pub count: f64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1.0;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / self.count;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2.0 {
            1.0
        } else {
            (self.m2[i] / (self.count - 1.0)).sqrt().max(1e-6)
        }
    }

    /// Standardized and clipped to `[-5, 5]`.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| ((v - self.mean[i]) / self.std(i)).clamp(-5.0, 5.0))
            .collect()
    }
}

/// Samples an action in normalized coordinates and returns it (before any
/// clipping) with its log-density under the policy.
pub fn actor_forward(net: &Mlp, observation: &[f64], rng: &mut impl Rng) -> (Vec<f64>, f64) {
    let out = net.forward(observation);
    let m = out.len() / 2;
    let mut action = Vec::with_capacity(m);
    let mut log_prob = 0.0;
    for i in 0..m {
        let log_std = out[m + i].clamp(LOG_STD_MIN, LOG_STD_MAX);
        let z: f64 = StandardNormal.sample(rng);
        action.push(out[i] + log_std.exp() * z);
        log_prob += -0.5 * z * z - log_std - 0.5 * LN_2PI;
    }
    (action, log_prob)
}

/// Maps a normalized action coordinate to a price: `[-1, 1]` spans the
/// price range affinely and samples outside it are clipped.
pub fn to_price(u: f64, lo: f64, hi: f64) -> f64 {
    let c = u.clamp(-1.0, 1.0);
    (lo + 0.5 * (c + 1.0) * (hi - lo)).clamp(lo, hi)
}

pub fn from_price(p: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (p - lo) / (hi - lo) - 1.0
}

/// Advantages (normalized and raw) and critic targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Gae {
    pub advantages: Vec<f64>,
    pub raw_advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation over a buffer of transitions.
/// `episode_ends[k]` cuts the recursion after transition `k`; the final
/// transition of a truncated episode still bootstraps from `next_values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    episode_ends: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Gae, MddrError> {
    let n = rewards.len();
    for len in [values.len(), next_values.len(), episode_ends.len()] {
        if len != n {
            return Err(MddrError::LengthMismatch(n, len));
        }
    }
    let mut raw = vec![0.0; n];
    let mut next_adv = 0.0;
    for k in (0..n).rev() {
        if episode_ends[k] {
            next_adv = 0.0;
        }
        let delta = rewards[k] + gamma * next_values[k] - values[k];
        raw[k] = delta + gamma * lambda * next_adv;
        next_adv = raw[k];
    }
    let returns = raw.iter().zip(values).map(|(a, v)| a + v).collect();
    let mean = raw.iter().sum::<f64>() / n.max(1) as f64;
    let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n.max(1) as f64;
    let sd = var.sqrt().max(1e-8);
    let advantages = raw.iter().map(|a| (a - mean) / sd).collect();
    Ok(Gae {
        advantages,
        raw_advantages: raw,
        returns,
    })
}

/// One training example for the clipped objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub old_log_prob: f64,
    pub advantage: f64,
    pub target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    pub actor: f64,
    pub critic: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Mean losses over `batch` and their gradients with respect to the actor
/// and critic parameters.
///
/// Actor loss: `-min(r A, clip(r, 1-eps, 1+eps) A) - c_H H` with entropy
/// `H = sum(log_std) + M/2 ln(2 pi e)`; critic loss `(V(s) - target)^2 / 2`.
pub fn loss_and_grads(
    actor: &Mlp,
    critic: &Mlp,
    batch: &[Sample],
    clip: f64,
    entropy_coef: f64,
) -> (LossStats, Vec<f64>, Vec<f64>) {
    let mut ga = vec![0.0; actor.params().len()];
    let mut gc = vec![0.0; critic.params().len()];
    let mut stats = LossStats::default();
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        let trace = actor.forward_trace(&s.observation);
        let out = trace.output();
        let m = out.len() / 2;
        let mut log_prob = 0.0;
        let mut entropy = 0.0;
        let mut dlp_dmean = vec![0.0; m];
        let mut dlp_dlogstd = vec![0.0; m];
        let mut in_range = vec![false; m];
        for i in 0..m {
            let raw = out[m + i];
            let log_std = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
            in_range[i] = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw);
            let inv_var = (-2.0 * log_std).exp();
            let diff = s.action[i] - out[i];
            log_prob += -0.5 * diff * diff * inv_var - log_std - 0.5 * LN_2PI;
            entropy += log_std + 0.5 * (LN_2PI + 1.0);
            dlp_dmean[i] = diff * inv_var;
            dlp_dlogstd[i] = diff * diff * inv_var - 1.0;
        }
        let ratio = (log_prob - s.old_log_prob).exp();
        let a = s.advantage;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
        let unclipped_obj = ratio * a;
        let clipped_obj = clipped * a;
        // The gradient flows only when the unclipped term is the minimum.
        let active = unclipped_obj <= clipped_obj;
        if !active {
            stats.clip_fraction += scale;
        }
        stats.actor += scale * (-unclipped_obj.min(clipped_obj) - entropy_coef * entropy);
        stats.entropy += scale * entropy;
        let dloss_dlp = if active { -a * ratio } else { 0.0 };
        let mut grad_out = vec![0.0; 2 * m];
        for i in 0..m {
            grad_out[i] = scale * dloss_dlp * dlp_dmean[i];
            if in_range[i] {
                grad_out[m + i] = scale * (dloss_dlp * dlp_dlogstd[i] - entropy_coef);
            }
        }
        actor.backward(&trace, &grad_out, &mut ga);

        let ct = critic.forward_trace(&s.observation);
        let err = ct.output()[0] - s.target;
        stats.critic += scale * 0.5 * err * err;
        critic.backward(&ct, &[scale * err], &mut gc);
    }
    (stats, ga, gc)
}

#[derive(Clone, Debug, PartialEq)]
struct Transition {
    observation: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
    reward: f64,
    value: f64,
    next_observation: Vec<f64>,
    episode_end: bool,
}

/// What an agent did at one stage, kept until the utility comes back.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub prices: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
    value: f64,
    observation: Vec<f64>,
}

/// A single MSP's learner. It only ever sees its own observation and
/// utility stream.
#[derive(Clone, Debug)]
pub struct Agent {
    pub actor: Mlp,
    pub critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
    pub obs_norm: RunningNorm,
    pub utility_norm: RunningNorm,
    buffer: Vec<Transition>,
    price_range: (f64, f64),
    hp: Hyperparams,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(
        num_mus: usize,
        price_range: (f64, f64),
        hp: &Hyperparams,
        mut rng: ChaCha8Rng,
    ) -> Self {
        let mut actor = Mlp::new(&[num_mus, hp.hidden, 2 * num_mus], 0.01, &mut rng);
        for b in &mut actor.bias_mut(1)[num_mus..] {
            *b = hp.init_log_std;
        }
        let critic = Mlp::new(&[num_mus, hp.hidden, 1], 1.0, &mut rng);
        Self::from_nets(actor, critic, price_range, hp, rng)
    }

    pub fn from_nets(
        actor: Mlp,
        critic: Mlp,
        price_range: (f64, f64),
        hp: &Hyperparams,
        rng: ChaCha8Rng,
    ) -> Self {
        let m = actor.sizes()[0];
        Self {
            actor_opt: Adam::new(actor.params().len(), hp.learning_rate),
            critic_opt: Adam::new(critic.params().len(), hp.learning_rate),
            actor,
            critic,
            obs_norm: RunningNorm::new(m),
            utility_norm: RunningNorm::new(1),
            buffer: Vec::with_capacity(hp.buffer),
            price_range,
            hp: hp.clone(),
            rng,
        }
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn price_range(&self) -> (f64, f64) {
        self.price_range
    }

    /// Samples a price row for the raw IoM observation.
    pub fn act(&mut self, observation: &[f64]) -> Decision {
        self.obs_norm.update(observation);
        let obs = self.obs_norm.normalize(observation);
        let (action, log_prob) = actor_forward(&self.actor, &obs, &mut self.rng);
        let (lo, hi) = self.price_range;
        Decision {
            prices: action.iter().map(|&u| to_price(u, lo, hi)).collect(),
            value: self.critic.forward(&obs)[0],
            action,
            log_prob,
            observation: obs,
        }
    }

    /// Price row at the policy mean, without exploration.
    pub fn greedy_prices(&self, observation: &[f64]) -> Vec<f64> {
        let obs = self.obs_norm.normalize(observation);
        let out = self.actor.forward(&obs);
        let (lo, hi) = self.price_range;
        out[..out.len() / 2]
            .iter()
            .map(|&u| to_price(u, lo, hi))
            .collect()
    }

    /// Stores the stage outcome; runs an update once the buffer is full.
    pub fn observe(
        &mut self,
        decision: Decision,
        utility: f64,
        next_observation: &[f64],
        episode_end: bool,
    ) -> Result<Option<LossStats>, MddrError> {
        self.utility_norm.update(&[utility]);
        let reward = (utility - self.utility_norm.mean[0]) / self.utility_norm.std(0);
        self.buffer.push(Transition {
            observation: decision.observation,
            action: decision.action,
            log_prob: decision.log_prob,
            reward,
            value: decision.value,
            next_observation: self.obs_norm.normalize(next_observation),
            episode_end,
        });
        if self.buffer.len() >= self.hp.buffer {
            self.ppo_update().map(Some)
        } else {
            Ok(None)
        }
    }

    /// Clipped-surrogate update over the buffer, then clears it.
    pub fn ppo_update(&mut self) -> Result<LossStats, MddrError> {
        let buffer = std::mem::take(&mut self.buffer);
        if buffer.is_empty() {
            return Ok(LossStats::default());
        }
        let rewards: Vec<f64> = buffer.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = buffer.iter().map(|t| t.value).collect();
        let next_values: Vec<f64> = buffer
            .iter()
            .map(|t| self.critic.forward(&t.next_observation)[0])
            .collect();
        let ends: Vec<bool> = buffer.iter().map(|t| t.episode_end).collect();
        let gae = compute_gae(
            &rewards,
            &values,
            &next_values,
            &ends,
            self.hp.gamma,
            self.hp.lambda,
        )?;
        let samples: Vec<Sample> = buffer
            .into_iter()
            .enumerate()
            .map(|(k, t)| Sample {
                observation: t.observation,
                action: t.action,
                old_log_prob: t.log_prob,
                advantage: gae.advantages[k],
                target: gae.returns[k],
            })
            .collect();

        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut last = LossStats::default();
        for _ in 0..self.hp.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.hp.minibatch.max(1)) {
                let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
                let (stats, mut ga, mut gc) = loss_and_grads(
                    &self.actor,
                    &self.critic,
                    &batch,
                    self.hp.clip,
                    self.hp.entropy_coef,
                );
                if !(stats.actor.is_finite() && stats.critic.is_finite()) {
                    return Err(MddrError::NonFiniteLoss {
                        actor: stats.actor,
                        critic: stats.critic,
                    });
                }
                clip_grad_norm(&mut ga, self.hp.max_grad_norm);
                clip_grad_norm(&mut gc, self.hp.max_grad_norm);
                self.actor_opt.step(self.actor.params_mut(), &ga);
                self.critic_opt.step(self.critic.params_mut(), &gc);
                last = stats;
            }
        }
        Ok(last)
    }
}
