//! Discrete-event synchronous federated learning on a toy task: FedAvg
//! rounds timed by the traded resources, an AoI timeline, and
//! time-to-accuracy measurement.

mod aoi;
mod model;

pub use aoi::aoi_timeline;
pub use model::{
    fedavg_aggregate, local_epochs, local_train, synth_dataset, Blobs, Dataset, ToyModel,
};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::iom::{potential_value, PairTerms};
use crate::market::{Allocation, ChannelState, Market, Matrix};
use crate::stream_rng;

#[derive(Debug, thiserror::Error)]
pub enum FlError {
    #[error("aggregation round with no local models")]
    EmptyRound,
    #[error("model shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("MU {mu} needs {elapsed} s per round for MSP {msp}, deadline {tau} s")]
    DeadlineViolation {
        mu: usize,
        msp: usize,
        elapsed: f64,
        tau: f64,
    },
}

/// Toy-task knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlSettings {
    /// Feature dimension.
    pub dim: usize,
    /// Distance between class means, in noise standard deviations.
    pub separation: f64,
    /// Training samples per unit of collected workload `x tau`.
    pub samples_per_unit: f64,
    pub test_samples: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub target_accuracy: f64,
    /// Range of each MU's share of class-1 samples.
    pub skew_range: [f64; 2],
    /// Standard deviation of the initial global weights.
    pub init_scale: f64,
}

impl Default for FlSettings {
    fn default() -> Self {
        Self {
            dim: 20,
            separation: 4.0,
            samples_per_unit: 5e-7,
            test_samples: 2000,
            learning_rate: 0.001,
            momentum: 0.9,
            target_accuracy: 0.9,
            skew_range: [0.3, 0.7],
            init_scale: 1.0,
        }
    }
}

/// Per-MSP learning tasks and per-MU data skews, all drawn from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct FlTasks {
    pub blobs: Vec<Blobs>,
    pub initial_models: Vec<ToyModel>,
    pub test_sets: Vec<Dataset>,
    /// Probability that an MU's sample is class 1.
    pub skews: Vec<f64>,
    seed: u64,
}

const SETUP_STREAM: u64 = 0;
const TEST_STREAM: u64 = 1 << 62;
const OMEGA_STREAM: u64 = 1 << 61;
const OMEGA_SAMPLES: usize = 1000;

impl FlTasks {
    pub fn new(settings: &FlSettings, num_mus: usize, num_msps: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, SETUP_STREAM);
        let init = Normal::new(0.0, settings.init_scale.max(0.0)).expect("finite scale");
        let blobs: Vec<Blobs> = (0..num_msps)
            .map(|_| Blobs::random(settings.dim, settings.separation, &mut rng))
            .collect();
        let initial_models = (0..num_msps)
            .map(|_| ToyModel {
                weights: (0..=settings.dim).map(|_| init.sample(&mut rng)).collect(),
            })
            .collect();
        let [lo, hi] = settings.skew_range;
        let skews = (0..num_mus).map(|_| rng.random_range(lo..=hi)).collect();
        let test_sets = blobs
            .iter()
            .enumerate()
            .map(|(n, b)| {
                b.sample(
                    settings.test_samples,
                    0.5,
                    &mut stream_rng(seed, TEST_STREAM + n as u64),
                )
            })
            .collect();
        Self {
            blobs,
            initial_models,
            test_sets,
            skews,
            seed,
        }
    }

    /// Potential value of each MU's data for each task: squared error of the
    /// initial global model on a sample of that MU's data (M x N).
    pub fn omega(&self) -> Matrix {
        let (nm, nn) = (self.skews.len(), self.blobs.len());
        Matrix::from_fn(nm, nn, |m, n| {
            let mut rng = stream_rng(self.seed, OMEGA_STREAM + (n * nm + m) as u64);
            let data = self.blobs[n].sample(OMEGA_SAMPLES, self.skews[m], &mut rng);
            let preds = self.initial_models[n].predictions(&data);
            potential_value(&preds, &data.labels).expect("non-empty sample")
        })
    }

    /// The same tasks with different global models, e.g. after training.
    pub fn with_models(&self, models: Vec<ToyModel>) -> Self {
        Self {
            initial_models: models,
            ..self.clone()
        }
    }

    fn round_rng(&self, n: usize, m: usize, round: u64) -> rand_chacha::ChaCha8Rng {
        let stream = 1 + (((n * self.skews.len() + m) as u64) << 32) + round;
        stream_rng(self.seed, stream)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ModelReceived,
    RoundDeadline,
    TrainStart,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::TrainStart => "train_start",
            EventKind::ModelReceived => "model_received",
            EventKind::RoundDeadline => "round_deadline",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlEvent {
    pub time: f64,
    pub kind: EventKind,
    /// `None` for round deadlines.
    pub mu: Option<usize>,
    pub msp: usize,
    /// Zero-based round index.
    pub round: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccuracyPoint {
    pub time: f64,
    /// Rounds completed so far.
    pub round: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlRun {
    /// Time-ordered.
    pub events: Vec<FlEvent>,
    /// Held-out accuracy of each MSP's global model, starting at time 0.
    pub traces: Vec<Vec<AccuracyPoint>>,
    pub final_models: Vec<ToyModel>,
}

impl FlRun {
    /// First time MSP `n`'s global model reaches `target` accuracy.
    pub fn time_to_target(&self, n: usize, target: f64) -> Option<f64> {
        self.traces[n]
            .iter()
            .find(|p| p.accuracy >= target)
            .map(|p| p.time)
    }
}

/// Training samples MU `m` collects per round of MSP `n`.
pub fn round_samples(settings: &FlSettings, market: &Market, m: usize, n: usize) -> usize {
    let units = market.mus[m].data_rate * market.msps[n].tau;
    ((units * settings.samples_per_unit).round() as usize).max(1)
}

/// Runs `floor(horizon / tau_n)` synchronous rounds for every MSP.
///
/// Round `r` of MSP `n` starts at `r tau_n`; each participating MU trains on
/// a fresh batch from the global model it last received and its upload
/// lands `T_c + T_t` later. The global model is aggregated once the
/// slowest upload of the round has arrived, and the next round starts at
/// the deadline. Data and shuffles are drawn per (MSP, MU, round), so two
/// allocations with the same participants see the same samples.
pub fn run_synchronous_rounds(
    market: &Market,
    channel: &ChannelState,
    allocation: &Allocation,
    tasks: &FlTasks,
    settings: &FlSettings,
    horizon: f64,
) -> Result<FlRun, FlError> {
    let (nm, nn) = (market.num_mus(), market.num_msps());
    let mut events = Vec::new();
    let mut traces = Vec::with_capacity(nn);
    let mut final_models = Vec::with_capacity(nn);
    for n in 0..nn {
        let tau = market.msps[n].tau;
        let rounds = (horizon / tau * (1.0 + 1e-12)).floor() as u64;
        let mut participants = Vec::new();
        for m in 0..nm {
            if !allocation.participating[m][n] {
                continue;
            }
            let terms = PairTerms::new(market, channel, m, n);
            let (f, b) = (allocation.f[(m, n)], allocation.bandwidth[(m, n)]);
            let elapsed = terms.training_time(f) + terms.upload_time(b);
            if !(elapsed <= tau) {
                return Err(FlError::DeadlineViolation {
                    mu: m,
                    msp: n,
                    elapsed,
                    tau,
                });
            }
            participants.push((m, elapsed));
        }
        let slowest = participants.iter().map(|p| p.1).fold(0.0, f64::max);
        let mut global = tasks.initial_models[n].clone();
        let test = &tasks.test_sets[n];
        let mut trace = vec![AccuracyPoint {
            time: 0.0,
            round: 0,
            accuracy: global.accuracy(test),
        }];
        for r in 0..rounds {
            let start = r as f64 * tau;
            let mut locals = Vec::with_capacity(participants.len());
            for &(m, elapsed) in &participants {
                events.push(FlEvent {
                    time: start,
                    kind: EventKind::TrainStart,
                    mu: Some(m),
                    msp: n,
                    round: r,
                });
                events.push(FlEvent {
                    time: start + elapsed,
                    kind: EventKind::ModelReceived,
                    mu: Some(m),
                    msp: n,
                    round: r,
                });
                let mut rng = tasks.round_rng(n, m, r);
                let size = round_samples(settings, market, m, n);
                let data = tasks.blobs[n].sample(size, tasks.skews[m], &mut rng);
                let local = local_train(
                    &global,
                    &data,
                    market.mus[m].theta,
                    settings.learning_rate,
                    settings.momentum,
                    &mut rng,
                );
                locals.push((local, size as f64));
            }
            events.push(FlEvent {
                time: start + tau,
                kind: EventKind::RoundDeadline,
                mu: None,
                msp: n,
                round: r,
            });
            // Without participants the global model simply carries over.
            let time = if locals.is_empty() {
                start + tau
            } else {
                global = fedavg_aggregate(&locals)?;
                start + slowest
            };
            trace.push(AccuracyPoint {
                time,
                round: r + 1,
                accuracy: global.accuracy(test),
            });
        }
        traces.push(trace);
        final_models.push(global);
    }
    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.kind.cmp(&b.kind))
            .then(a.msp.cmp(&b.msp))
            .then(a.mu.cmp(&b.mu))
    });
    Ok(FlRun {
        events,
        traces,
        final_models,
    })
}

#[cfg(test)]
mod tests;
