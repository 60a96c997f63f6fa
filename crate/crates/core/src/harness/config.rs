//! Experiment configuration: one TOML file plus `key=value` overrides.
//!
//! ```toml
//! seed = 42
//!
//! [generator]          # random instance; ignored when [market] is given
//! num_mus = 5
//!
//! [market]             # explicit instance (TradingConfig fields)
//! period = 30.0
//! [[market.mus]]
//! f_max = 4e9
//! ...
//!
//! [solver]
//! tolerance = 1e-6
//!
//! [mddr]
//! episodes = 1000
//! learning_rate = 3e-4
//!
//! [flsim]
//! separation = 4.0
//!
//! [benchmark]
//! instances = 20
//!
//! [simulate]
//! phase1 = "ne"
//! ```
//!
//! Every section is optional. Overrides address any key of the fully
//! populated config by dotted path (`mddr.episodes=200`,
//! `market.mus.0.f_max=4e9`) and are applied before validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::flsim::{FlSettings, FlTasks};
use crate::generator::{generate, GeneratorSpec};
use crate::market::{
    initial_channel, validate_config, ChannelMode, ChannelState, Market, TradingConfig,
};
use crate::mddr::Hyperparams;

use super::HarnessError;

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub generator: GeneratorSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub market: Option<TradingConfig>,
    pub solver: SolverSettings,
    pub mddr: MddrSettings,
    pub flsim: FlSettings,
    pub benchmark: BenchmarkSettings,
    pub simulate: SimulateSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            generator: GeneratorSpec::default(),
            market: None,
            solver: SolverSettings::default(),
            mddr: MddrSettings::default(),
            flsim: FlSettings::default(),
            benchmark: BenchmarkSettings::default(),
            simulate: SimulateSettings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Largest relative price change that counts as converged.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_sweeps: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MddrSettings {
    pub episodes: usize,
    pub channel_mode: ChannelMode,
    #[serde(flatten)]
    pub hyperparams: Hyperparams,
}

impl Default for MddrSettings {
    fn default() -> Self {
        Self {
            episodes: 1000,
            channel_mode: ChannelMode::Static,
            hyperparams: Hyperparams::default(),
        }
    }
}

/// Where the potential values of an instance come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSource {
    /// The generator's ranges or the explicit market's matrix.
    Config,
    /// Squared error of each toy task's initial model on the MU's data.
    #[default]
    Task,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSettings {
    /// Generated instances compared; an explicit market is a single instance.
    pub instances: usize,
    pub omega: OmegaSource,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            instances: 20,
            omega: OmegaSource::Task,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase1Solver {
    #[default]
    Ne,
    Mddr,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateSettings {
    pub phase1: Phase1Solver,
    pub omega: OmegaSource,
}

/// A validated instance with its initial channel.
pub struct Instance {
    pub seed: u64,
    pub market: Market,
    pub channel: ChannelState,
    /// Toy learning tasks of the instance, drawn from the same seed.
    pub tasks: FlTasks,
}

impl ExperimentConfig {
    /// Reads `path` (or starts from defaults), applies `overrides`, then
    /// `seed` if given.
    pub fn load(
        path: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
    ) -> Result<Self, HarnessError> {
        let raw = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| HarnessError::Io(p.display().to_string(), e))?;
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
                Value::Table(table)
            }
            None => Value::Table(toml::Table::new()),
        };
        let parsed: ExperimentConfig = raw
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        let mut full = Value::try_from(&parsed).map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(key) = first_unknown_key(&raw, &full, "") {
            return Err(HarnessError::Config(format!("unknown key `{key}`")));
        }
        for item in overrides {
            apply_override(&mut full, item)?;
        }
        let mut cfg: ExperimentConfig = full
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    /// Canonical TOML text of the effective configuration.
    pub fn canonical_toml(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// The instance for `seed`: the explicit market if one is configured,
    /// otherwise a generated one.
    pub fn instance(&self, seed: u64, omega: OmegaSource) -> Result<Instance, HarnessError> {
        let mut cfg = match &self.market {
            Some(m) => m.clone(),
            None => generate(&self.generator, seed),
        };
        let tasks = FlTasks::new(&self.flsim, cfg.num_mus(), cfg.num_msps(), seed);
        if omega == OmegaSource::Task {
            cfg.omega = tasks.omega();
        }
        let channel = initial_channel(&cfg);
        let market = validate_config(cfg)?;
        Ok(Instance {
            seed,
            market,
            channel,
            tasks,
        })
    }
}

/// Finds a key of `raw` that the populated config does not know about.
fn first_unknown_key(raw: &Value, full: &Value, prefix: &str) -> Option<String> {
    let Value::Table(raw) = raw else { return None };
    for (k, v) in raw {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match full.get(k.as_str()) {
            None => return Some(path),
            Some(reference) => {
                if let Some(bad) = first_unknown_key(v, reference, &path) {
                    return Some(bad);
                }
            }
        }
    }
    None
}

fn parse_value(text: &str) -> Value {
    match format!("v = {text}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(text.to_string()),
    }
}

/// Sets `key=value` in `root`. The key must already exist; integers may
/// replace floats.
fn apply_override(root: &mut Value, item: &str) -> Result<(), HarnessError> {
    let bad = |reason: &str| HarnessError::Override {
        item: item.to_string(),
        reason: reason.to_string(),
    };
    let (key, text) = item
        .split_once('=')
        .ok_or_else(|| bad("expected KEY=VALUE"))?;
    let mut slot = &mut *root;
    for part in key.trim().split('.') {
        slot = match slot {
            Value::Table(t) => t.get_mut(part).ok_or_else(|| bad("unknown key"))?,
            Value::Array(a) => {
                let i: usize = part.parse().map_err(|_| bad("expected an array index"))?;
                a.get_mut(i)
                    .ok_or_else(|| bad("array index out of range"))?
            }
            _ => return Err(bad("unknown key")),
        };
    }
    let mut value = parse_value(text.trim());
    if let (Value::Float(_), Value::Integer(i)) = (&*slot, &value) {
        value = Value::Float(*i as f64);
    }
    if std::mem::discriminant(&*slot) != std::mem::discriminant(&value) {
        return Err(bad(&format!("expected a {}", slot.type_str())));
    }
    *slot = value;
    Ok(())
}
