//! Experiment parameters and the flat `key = value` config file format.
//!
//! Every parameter has a default. A config file overrides defaults and
//! command-line flags override the config file.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Which speaker protocol the speaker/mover search uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ProtocolChoice {
    /// 11 → AA, 12 → AB, 13 → BA, 14 → BB.
    Standard,
    /// 11 → BB, 12 → BA, 13 → AB, 14 → AA.
    Permuted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Master seed for every sampled quantity.
    pub seed: u64,
    /// Episodes per evaluated cell; `None` picks the command's own default.
    pub episodes: Option<usize>,
    /// Worker threads, 0 for one per core.
    pub workers: usize,
    /// Rounds per repeated RPS episode.
    pub horizon: usize,
    /// Discount on the counter policy's action counts.
    pub gamma: f64,
    /// Co-learning step size.
    pub eta: f64,
    /// Co-learning updates.
    pub steps: usize,
    /// Keep every `every`-th trace row (the last row is always kept).
    pub every: usize,
    pub pi: [f64; 3],
    pub pi_prime: [f64; 3],
    pub lane_length: u8,
    pub fuel_cost: f64,
    pub time_cost: f64,
    pub target_reward: f64,
    /// Noise levels of the speaker/mover sweep (0 is always included).
    pub noise: Vec<f64>,
    pub protocol: ProtocolChoice,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let third = 1.0 / 3.0;
        Self {
            seed: 1,
            episodes: None,
            workers: 0,
            horizon: 100,
            gamma: 1.0,
            eta: 0.01,
            steps: 5000,
            every: 1,
            pi: [0.4, 0.3, 0.3],
            pi_prime: [third; 3],
            lane_length: 8,
            fuel_cost: 1.0,
            time_cost: 0.1,
            target_reward: 10.0,
            noise: vec![0.1, 0.2, 0.3],
            protocol: ProtocolChoice::Standard,
        }
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "seed" => self.seed = parse(&key, v)?,
            "episodes" => self.episodes = Some(parse(&key, v)?),
            "workers" => self.workers = parse(&key, v)?,
            "horizon" => self.horizon = parse(&key, v)?,
            "gamma" => self.gamma = parse(&key, v)?,
            "eta" => self.eta = parse(&key, v)?,
            "steps" => self.steps = parse(&key, v)?,
            "every" => self.every = parse(&key, v)?,
            "pi" => self.pi = parse_triple(&key, v)?,
            "pi_prime" => self.pi_prime = parse_triple(&key, v)?,
            "lane_length" => self.lane_length = parse(&key, v)?,
            "fuel_cost" => self.fuel_cost = parse(&key, v)?,
            "time_cost" => self.time_cost = parse(&key, v)?,
            "target_reward" => self.target_reward = parse(&key, v)?,
            "noise" => self.noise = parse_list(&key, v)?,
            "protocol" => {
                self.protocol = <ProtocolChoice as clap::ValueEnum>::from_str(v, true)
                    .map_err(|_| anyhow::anyhow!("protocol: expected `standard` or `permuted`, got `{v}`"))?
            }
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    /// Applies every setting of a config file's text.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got `{}`", n + 1, raw.trim());
            };
            self.set(key.trim(), value).with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| anyhow::anyhow!("{key}: cannot parse `{v}`: {e}"))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_triple(key: &str, v: &str) -> Result<[f64; 3]> {
    let xs = parse_list(key, v)?;
    match xs[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => bail!("{key}: expected three comma-separated numbers, got `{v}`"),
    }
}
