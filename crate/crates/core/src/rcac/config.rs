use std::fmt;
use std::str::FromStr;

use crate::envs::{EnvConfig, EnvId};
use crate::replay::DEFAULT_CAPACITY;
use crate::sac::SacConfig;
use crate::srl::{RaeHyper, SrlArch};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Task and curious agents; the curious one acts with probability `p_c`.
    Rcac,
    /// Task agent only.
    Baseline,
    /// One agent trained on `r_task + beta * r_cure`.
    Mixed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Rcac, Mode::Baseline, Mode::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rcac => "rcac",
            Mode::Baseline => "baseline",
            Mode::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode '{s}' (expected rcac, baseline or mixed)")))
    }
}

pub const DEFAULT_P_C: f64 = 0.2;

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub mode: Mode,
    /// Probability per step that the curious policy acts. Zero outside rcac mode.
    pub p_c: f64,
    /// Intrinsic weight in mixed mode.
    pub beta: f64,
    /// Environment steps, pretraining included.
    pub total_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub pretrain_transitions: usize,
    pub pretrain_updates: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub arch: SrlArch,
    pub rae: RaeHyper,
    pub sac: SacConfig,
    /// Write observation/reconstruction PNGs every this many RAE updates; 0 disables.
    pub recon_dump_every: u64,
    pub checkpoints: bool,
}

impl RunConfig {
    pub fn new(env: EnvId, mode: Mode) -> Self {
        RunConfig {
            env: EnvConfig::new(env),
            mode,
            p_c: if mode == Mode::Rcac { DEFAULT_P_C } else { 0.0 },
            beta: 0.1,
            total_steps: 100_000,
            eval_interval: 10_000,
            eval_episodes: 10,
            pretrain_transitions: 1000,
            pretrain_updates: 1000,
            seed: 0,
            batch_size: 128,
            buffer_capacity: DEFAULT_CAPACITY,
            arch: SrlArch::default(),
            rae: RaeHyper::default(),
            sac: SacConfig::default(),
            recon_dump_every: 0,
            checkpoints: true,
        }
    }

    /// Every violated constraint, human readable.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if let Err(e) = self.env.validate() {
            bad.push(e.to_string());
        }
        if !(0.0..=1.0).contains(&self.p_c) {
            bad.push(format!("p_c = {} outside [0, 1]", self.p_c));
        } else if self.mode != Mode::Rcac && self.p_c != 0.0 {
            bad.push(format!("mode {} has no curious policy but p_c = {}", self.mode, self.p_c));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            bad.push(format!("beta = {} must be >= 0", self.beta));
        }
        if self.eval_interval == 0 {
            bad.push("eval_interval must be >= 1".into());
        } else if !self.total_steps.is_multiple_of(self.eval_interval) {
            bad.push(format!("eval_interval {} does not divide steps {}", self.eval_interval, self.total_steps));
        }
        if self.total_steps <= self.pretrain_transitions as u64 {
            bad.push(format!(
                "steps {} leave no room after {} pretraining transitions",
                self.total_steps, self.pretrain_transitions
            ));
        }
        if self.eval_episodes == 0 {
            bad.push("eval_episodes must be >= 1".into());
        }
        if self.pretrain_transitions == 0 {
            bad.push("pretrain_transitions must be >= 1".into());
        }
        if self.batch_size == 0 {
            bad.push("batch_size must be >= 1".into());
        }
        if self.buffer_capacity == 0 {
            bad.push("buffer_capacity must be >= 1".into());
        }
        if self.arch.channels == 0 || self.arch.latent_dim == 0 {
            bad.push("encoder_channels and latent_dim must be >= 1".into());
        }
        if let Err(e) = self.rae.validate() {
            bad.push(e.to_string());
        }
        bad.extend(self.sac.violations());
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Evaluation steps in increasing order.
    pub fn eval_steps(&self) -> Vec<u64> {
        (1..=self.total_steps / self.eval_interval.max(1)).map(|k| k * self.eval_interval).collect()
    }

    /// Flat `key = value` rendering, one line per key in a fixed order.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).expect("known key")));
        }
        out
    }

    /// Current value of `key` as text.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.sac;
        Some(match key {
            "env" => self.env.id.to_string(),
            "mode" => self.mode.to_string(),
            "p_c" => self.p_c.to_string(),
            "beta" => self.beta.to_string(),
            "steps" => self.total_steps.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "eval_episodes" => self.eval_episodes.to_string(),
            "pretrain_transitions" => self.pretrain_transitions.to_string(),
            "pretrain_updates" => self.pretrain_updates.to_string(),
            "seed" => self.seed.to_string(),
            "obs_size" => self.env.obs_size.to_string(),
            "frame_stack" => self.env.frame_stack.to_string(),
            "action_repeat" => self.env.action_repeat.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "buffer_capacity" => self.buffer_capacity.to_string(),
            "encoder_channels" => self.arch.channels.to_string(),
            "latent_dim" => self.arch.latent_dim.to_string(),
            "hidden" => s.hidden.to_string(),
            "gamma" => s.gamma.to_string(),
            "tau" => s.tau.to_string(),
            "actor_lr" => s.actor_lr.to_string(),
            "critic_lr" => s.critic_lr.to_string(),
            "alpha_lr" => s.alpha_lr.to_string(),
            "init_alpha" => s.init_alpha.to_string(),
            "log_std_min" => s.log_std_min.to_string(),
            "log_std_max" => s.log_std_max.to_string(),
            "actor_update_freq" => s.actor_update_freq.to_string(),
            "target_update_freq" => s.target_update_freq.to_string(),
            "actor_updates_encoder" => s.actor_updates_encoder.to_string(),
            "rae_lr" => self.rae.lr.to_string(),
            "lambda_z" => self.rae.lambda_z.to_string(),
            "lambda_theta" => self.rae.lambda_theta.to_string(),
            "decoder_update_freq" => self.rae.update_freq.to_string(),
            "recon_dump_every" => self.recon_dump_every.to_string(),
            "checkpoints" => self.checkpoints.to_string(),
            _ => return None,
        })
    }

    /// Sets one key from text. Changing `env` also resets `action_repeat`
    /// to that task's default, so set `env` first.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<V: FromStr>(key: &str, value: &str) -> std::result::Result<V, String> {
            value.parse().map_err(|_| format!("{key}: cannot parse '{value}'"))
        }
        let s = &mut self.sac;
        match key {
            "env" => {
                let id: EnvId = value.parse().map_err(|e: Error| e.to_string())?;
                self.env.id = id;
                self.env.action_repeat = id.default_action_repeat();
            }
            "mode" => self.mode = value.parse().map_err(|e: Error| e.to_string())?,
            "p_c" => self.p_c = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "steps" => self.total_steps = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "pretrain_transitions" => self.pretrain_transitions = num(key, value)?,
            "pretrain_updates" => self.pretrain_updates = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "obs_size" => self.env.obs_size = num(key, value)?,
            "frame_stack" => self.env.frame_stack = num(key, value)?,
            "action_repeat" => self.env.action_repeat = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "buffer_capacity" => self.buffer_capacity = num(key, value)?,
            "encoder_channels" => self.arch.channels = num(key, value)?,
            "latent_dim" => self.arch.latent_dim = num(key, value)?,
            "hidden" => s.hidden = num(key, value)?,
            "gamma" => s.gamma = num(key, value)?,
            "tau" => s.tau = num(key, value)?,
            "actor_lr" => s.actor_lr = num(key, value)?,
            "critic_lr" => s.critic_lr = num(key, value)?,
            "alpha_lr" => s.alpha_lr = num(key, value)?,
            "init_alpha" => s.init_alpha = num(key, value)?,
            "log_std_min" => s.log_std_min = num(key, value)?,
            "log_std_max" => s.log_std_max = num(key, value)?,
            "actor_update_freq" => s.actor_update_freq = num(key, value)?,
            "target_update_freq" => s.target_update_freq = num(key, value)?,
            "actor_updates_encoder" => s.actor_updates_encoder = num(key, value)?,
            "rae_lr" => self.rae.lr = num(key, value)?,
            "lambda_z" => self.rae.lambda_z = num(key, value)?,
            "lambda_theta" => self.rae.lambda_theta = num(key, value)?,
            "decoder_update_freq" => self.rae.update_freq = num(key, value)?,
            "recon_dump_every" => self.recon_dump_every = num(key, value)?,
            "checkpoints" => self.checkpoints = num(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Builds a config from `key = value` pairs on top of the defaults.
    ///
    /// `env` and `mode` are applied first. If `p_c` is absent it follows the
    /// mode (0.2 for rcac, else 0). Every problem is reported at once.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let mut errors = Vec::new();
        let lookup = |k: &str| pairs.iter().rev().find(|(key, _)| *key == k).map(|(_, v)| *v);
        let env = match lookup("env").map(str::parse::<EnvId>) {
            None => EnvId::PendulumSwingup,
            Some(Ok(id)) => id,
            Some(Err(e)) => {
                errors.push(e.to_string());
                EnvId::PendulumSwingup
            }
        };
        let mode = match lookup("mode").map(str::parse::<Mode>) {
            None => Mode::Rcac,
            Some(Ok(m)) => m,
            Some(Err(e)) => {
                errors.push(e.to_string());
                Mode::Rcac
            }
        };
        let mut cfg = RunConfig::new(env, mode);
        for (k, v) in &pairs {
            if *k == "env" || *k == "mode" {
                continue;
            }
            if let Err(e) = cfg.set(k, v) {
                errors.push(e);
            }
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors.join("; ")))
        }
    }

    /// Parses flat `key = value` text; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = parse_kv(text)?;
        RunConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }
}

/// All keys understood by [`RunConfig::set`], in rendering order.
pub const KEYS: [&str; 35] = [
    "env",
    "mode",
    "p_c",
    "beta",
    "steps",
    "eval_interval",
    "eval_episodes",
    "pretrain_transitions",
    "pretrain_updates",
    "seed",
    "obs_size",
    "frame_stack",
    "action_repeat",
    "batch_size",
    "buffer_capacity",
    "encoder_channels",
    "latent_dim",
    "hidden",
    "gamma",
    "tau",
    "actor_lr",
    "critic_lr",
    "alpha_lr",
    "init_alpha",
    "log_std_min",
    "log_std_max",
    "actor_update_freq",
    "target_update_freq",
    "actor_updates_encoder",
    "rae_lr",
    "lambda_z",
    "lambda_theta",
    "decoder_update_freq",
    "recon_dump_every",
    "checkpoints",
];

/// Splits flat `key = value` text into pairs; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => pairs.push((k.trim().to_string(), v.trim().to_string())),
            _ => errors.push(format!("line {}: expected 'key = value', got '{line}'", n + 1)),
        }
    }
    if errors.is_empty() {
        Ok(pairs)
    } else {
        Err(Error::Config(errors.join("; ")))
    }
}
