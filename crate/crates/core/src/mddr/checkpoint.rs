//! Plain-text checkpoint of trained agents.
//!
//! ```text
//! iomtrade-mddr 1
//! agents <N>
//! price_range <lo> <hi>          # then, per agent:
//! actor <layer sizes...>
//! <parameters, space separated>
//! critic <layer sizes...>
//! <parameters>
//! obs_norm <count> <mean...> <m2...>
//! utility_norm <count> <mean> <m2>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so reading a file back
//! reproduces every parameter bit for bit. Optimizer moments are not saved.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::net::Mlp;
use super::ppo::{Agent, Hyperparams, RunningNorm};
use super::{stream_rng, MddrError};

const MAGIC: &str = "iomtrade-mddr 1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").expect("write to string");
    }
    s
}

pub fn write_checkpoint(agents: &[Agent], mut out: impl Write) -> Result<(), MddrError> {
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "agents {}", agents.len())?;
    for a in agents {
        let (lo, hi) = a.price_range();
        writeln!(out, "price_range {lo} {hi}")?;
        for (name, net) in [("actor", &a.actor), ("critic", &a.critic)] {
            let sizes: Vec<String> = net.sizes().iter().map(usize::to_string).collect();
            writeln!(out, "{name} {}", sizes.join(" "))?;
            writeln!(out, "{}", join(net.params()))?;
        }
        let o = &a.obs_norm;
        writeln!(
            out,
            "obs_norm {} {} {}",
            o.count,
            join(&o.mean),
            join(&o.m2)
        )?;
        let u = &a.utility_norm;
        writeln!(out, "utility_norm {} {} {}", u.count, u.mean[0], u.m2[0])?;
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String, MddrError> {
        self.line_no += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(MddrError::Checkpoint(format!(
                "unexpected end at line {}",
                self.line_no
            ))),
        }
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>, MddrError> {
        let line = self.next()?;
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(key) {
            return Err(MddrError::Checkpoint(format!(
                "line {}: expected `{key}`",
                self.line_no
            )));
        }
        Ok(tokens.map(str::to_string).collect())
    }

    fn floats(&self, tokens: &[String]) -> Result<Vec<f64>, MddrError> {
        tokens
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| MddrError::Checkpoint(format!("line {}: {e}", self.line_no)))
            })
            .collect()
    }
}

/// Reads agents back; they get fresh optimizers and empty buffers, and their
/// sampling streams are derived from `seed`.
pub fn read_checkpoint(
    input: impl BufRead,
    hp: &Hyperparams,
    seed: u64,
) -> Result<Vec<Agent>, MddrError> {
    let mut lines = Lines {
        inner: input.lines(),
        line_no: 0,
    };
    if lines.next()? != MAGIC {
        return Err(MddrError::Checkpoint("not an agent checkpoint".into()));
    }
    let count: usize = lines
        .keyed("agents")?
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| MddrError::Checkpoint("bad agent count".into()))?;
    let mut agents = Vec::with_capacity(count);
    for n in 0..count {
        let range = lines.keyed("price_range")?;
        let range = lines.floats(&range)?;
        if range.len() != 2 {
            return Err(MddrError::Checkpoint(format!(
                "line {}: price_range needs 2 values",
                lines.line_no
            )));
        }
        let mut nets = Vec::with_capacity(2);
        for name in ["actor", "critic"] {
            let sizes: Vec<usize> = lines
                .keyed(name)?
                .iter()
                .map(|t| {
                    t.parse()
                        .map_err(|_| MddrError::Checkpoint(format!("bad size `{t}`")))
                })
                .collect::<Result<_, _>>()?;
            let line = lines.next()?;
            let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
            let params = lines.floats(&tokens)?;
            nets.push(Mlp::from_parts(sizes, params).ok_or_else(|| {
                MddrError::Checkpoint(format!(
                    "line {}: {name} parameter count mismatch",
                    lines.line_no
                ))
            })?);
        }
        let critic = nets.pop().expect("two nets");
        let actor = nets.pop().expect("two nets");
        let m = actor.sizes()[0];
        let obs = lines.keyed("obs_norm")?;
        let obs = lines.floats(&obs)?;
        if obs.len() != 1 + 2 * m {
            return Err(MddrError::Checkpoint(format!(
                "line {}: obs_norm width",
                lines.line_no
            )));
        }
        let util = lines.keyed("utility_norm")?;
        let util = lines.floats(&util)?;
        if util.len() != 3 {
            return Err(MddrError::Checkpoint(format!(
                "line {}: utility_norm width",
                lines.line_no
            )));
        }
        let mut agent = Agent::from_nets(
            actor,
            critic,
            (range[0], range[1]),
            hp,
            stream_rng(seed, n as u64 + 1),
        );
        agent.obs_norm = RunningNorm {
            count: obs[0],
            mean: obs[1..1 + m].to_vec(),
            m2: obs[1 + m..].to_vec(),
        };
        agent.utility_norm = RunningNorm {
            count: util[0],
            mean: vec![util[1]],
            m2: vec![util[2]],
        };
        agents.push(agent);
    }
    Ok(agents)
}
