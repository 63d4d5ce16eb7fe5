//! The training loop: policy mixing, interaction, pretraining, the
//! three-way update (autoencoder, task agent, curious agent), and
//! evaluation.
//!
//! Environment steps are counted globally, pretraining transitions
//! included; actor and target updates run on even step numbers.

mod config;
mod run;

pub use config::{parse_kv, Mode, RunConfig, DEFAULT_P_C, KEYS};
pub use run::{run, RunLayout, RunSummary, METRICS_HEADER};

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcompute::checkpoint::Container;
use crate::diffcompute::Tensor;
use crate::diversity::VisitLog;
use crate::envs::{Env, EnvConfig, PixelObservation};
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{ActionMode, Agent, Role};
use crate::srl::{rae_batch_loss, Rae, RaeStep};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PolicyChoice {
    Task,
    Curious,
}

/// Draws `eps` uniform in `[0, 1)`; the curious policy acts iff `eps < p_c`.
pub fn select_policy<R: Rng + ?Sized>(rng: &mut R, p_c: f64) -> (f64, PolicyChoice) {
    let eps: f64 = rng.gen();
    let choice = if eps < p_c { PolicyChoice::Curious } else { PolicyChoice::Task };
    (eps, choice)
}

/// Independent random streams, so that modes share every draw they have in common.
#[derive(Clone, Debug)]
struct Streams {
    policy: ChaCha8Rng,
    episodes: ChaCha8Rng,
    pretrain: ChaCha8Rng,
    replay: ChaCha8Rng,
    task: ChaCha8Rng,
    curious: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

impl Streams {
    fn new(seed: u64) -> Self {
        Streams {
            policy: stream(seed, 1),
            episodes: stream(seed, 2),
            pretrain: stream(seed, 3),
            replay: stream(seed, 4),
            task: stream(seed, 5),
            curious: stream(seed, 6),
        }
    }
}

/// What happened during one training step, for logging and auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub epsilon: f64,
    pub policy: PolicyChoice,
    pub action: Vec<f32>,
    /// Task reward returned by the environment.
    pub r_task: f64,
    /// Reward written to the replay buffer.
    pub stored_reward: f32,
    /// Return of the episode that ended on this step, if one did.
    pub episode_return: Option<f64>,
    pub rae_loss: f32,
    pub mean_r_cure: f32,
    pub task_critic_loss: f32,
    pub curious_critic_loss: Option<f32>,
    pub task_actor_loss: Option<f32>,
    pub curious_actor_loss: Option<f32>,
    pub alpha_task: f32,
    pub alpha_curious: f32,
    pub rae_updates: u64,
    pub task_critic_updates: u64,
    pub curious_critic_updates: u64,
    pub actor_updates: u64,
    pub target_updates: u64,
    /// Rewards fed to the task critic and, in rcac mode, the curious critic.
    pub task_critic_rewards: Vec<f32>,
    pub curious_critic_rewards: Vec<f32>,
    /// Replay reward column of the sampled batch.
    pub batch_task_rewards: Vec<f32>,
    /// Per-sample autoencoder losses of the batch.
    pub r_cure: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub step: u64,
    pub returns: Vec<f64>,
    pub mean: f64,
}

/// Seed of evaluation episode `i` for a run seeded `seed`; disjoint from
/// training resets, which come from a random stream.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (0xE7A1_0000_0000 + i as u64)
}

/// Runs `episodes` episodes of `policy` side by side on fresh environments
/// seeded by `eval_seed(seed, i)`; returns per-episode returns.
pub fn rollout_returns(
    env: &EnvConfig,
    seed: u64,
    episodes: usize,
    mut policy: impl FnMut(&[&PixelObservation]) -> Result<Vec<Vec<f32>>>,
) -> Result<Vec<f64>> {
    let mut envs: Vec<Env> = (0..episodes).map(|_| Env::new(env.clone())).collect::<Result<_>>()?;
    let mut obs: Vec<PixelObservation> = envs.iter_mut().enumerate().map(|(i, e)| e.reset(eval_seed(seed, i))).collect();
    let mut returns = vec![0.0; episodes];
    for _ in 0..env.episode_length() {
        let refs: Vec<&PixelObservation> = obs.iter().collect();
        let actions = policy(&refs)?;
        for (i, e) in envs.iter_mut().enumerate() {
            let r = e.step(&actions[i])?;
            returns[i] += r.reward;
            obs[i] = r.observation;
        }
    }
    Ok(returns)
}

/// Mean return of the uniform random policy over `episodes` evaluation episodes.
pub fn random_policy_return(env: &EnvConfig, seed: u64, episodes: usize) -> Result<f64> {
    let mut rng = stream(seed, 9);
    let dim = env.id.action_dim();
    let returns = rollout_returns(env, seed, episodes, |obs| {
        Ok(obs.iter().map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect())
    })?;
    Ok(returns.iter().sum::<f64>() / episodes as f64)
}

/// Bytes to a normalized `[n, C, H, W]` batch.
pub fn observations_to_tensor(obs: &[&PixelObservation], shape: [usize; 3]) -> Result<Tensor<f32>> {
    let [c, h, w] = shape;
    let mut data = Vec::with_capacity(obs.len() * c * h * w);
    for o in obs {
        if o.as_bytes().len() != c * h * w {
            return Err(Error::Config(format!("observation of {} bytes for shape {shape:?}", o.as_bytes().len())));
        }
        data.extend(o.as_bytes().iter().map(|&b| f32::from(b) / 255.0));
    }
    Tensor::new(vec![obs.len(), c, h, w], data)
}

/// All training state of one run.
pub struct Trainer {
    config: RunConfig,
    env: Env,
    obs: PixelObservation,
    buffer: ReplayBuffer,
    pub rae: Rae<f32>,
    pub task: Agent<f32>,
    pub curious: Agent<f32>,
    streams: Streams,
    step: u64,
    episode_return: f64,
    pretrained: bool,
    visits: VisitLog,
    recon_dir: Option<PathBuf>,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let shape = config.env.observation_shape();
        let mut init = stream(config.seed, 0);
        let rae = Rae::new(shape, config.arch, config.rae, &mut init)?;
        let latent = rae.encoder().latent_dim();
        let action_dim = config.env.id.action_dim();
        let task = Agent::new(Role::Task, latent, action_dim, config.sac, &mut init)?;
        let curious = Agent::new(Role::Curious, latent, action_dim, config.sac, &mut init)?;
        let mut streams = Streams::new(config.seed);
        let mut env = Env::new(config.env.clone())?;
        let obs = env.reset(streams.episodes.gen());
        let buffer = ReplayBuffer::new(config.buffer_capacity, shape, action_dim)?;
        let visits = VisitLog::for_env(config.env.id);
        Ok(Trainer {
            config,
            env,
            obs,
            buffer,
            rae,
            task,
            curious,
            streams,
            step: 0,
            episode_return: 0.0,
            pretrained: false,
            visits,
            recon_dir: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn visits(&self) -> &VisitLog {
        &self.visits
    }

    pub fn env_state(&self) -> Option<crate::envs::EnvState> {
        self.env.state()
    }

    /// Enables reconstruction PNG dumps (every `recon_dump_every` RAE updates) into `dir`.
    pub fn set_reconstruction_dir(&mut self, dir: PathBuf) {
        self.recon_dir = Some(dir);
    }

    fn effective_p_c(&self) -> f64 {
        if self.config.mode == Mode::Rcac {
            self.config.p_c
        } else {
            0.0
        }
    }

    /// Steps the training environment and records the transition. Returns
    /// the reward, the stored reward, and the return of a finished episode.
    fn interact(&mut self, action: &[f32]) -> Result<(f64, f32, Option<f64>)> {
        let result = self.env.step(action)?;
        self.step += 1;
        let stored = result.reward as f32;
        self.buffer.push(Transition {
            obs: self.obs.as_bytes().to_vec(),
            action: action.to_vec(),
            reward: stored,
            next_obs: result.observation.as_bytes().to_vec(),
            done: result.done,
        })?;
        let state = self.env.state().expect("stepped env has state");
        self.visits.push(self.step, state.to_vec())?;
        self.episode_return += result.reward;
        let finished = if result.truncated || result.done {
            let ret = self.episode_return;
            self.episode_return = 0.0;
            self.obs = self.env.reset(self.streams.episodes.gen());
            Some(ret)
        } else {
            self.obs = result.observation;
            None
        };
        Ok((result.reward, stored, finished))
    }

    /// Collects `pretrain_transitions` uniform-random transitions, then runs
    /// `pretrain_updates` autoencoder-only updates. Calls `on_step` after
    /// every environment step (used for evaluation scheduling).
    pub fn pretrain_with(&mut self, mut on_step: impl FnMut(&mut Trainer) -> Result<()>) -> Result<()> {
        if self.pretrained || !self.buffer.is_empty() {
            return Err(Error::Usage("pretraining requires a fresh trainer".into()));
        }
        let dim = self.config.env.id.action_dim();
        for _ in 0..self.config.pretrain_transitions {
            let action: Vec<f32> = (0..dim).map(|_| self.streams.pretrain.gen_range(-1.0f32..1.0)).collect();
            self.interact(&action)?;
            on_step(self)?;
        }
        for _ in 0..self.config.pretrain_updates {
            let batch = self.buffer.sample::<f32, _>(self.config.batch_size, &mut self.streams.replay)?;
            self.rae.update_rae(&batch.obs)?;
        }
        self.pretrained = true;
        Ok(())
    }

    pub fn pretrain(&mut self) -> Result<()> {
        self.pretrain_with(|_| Ok(()))
    }

    /// One iteration of the training loop.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        if !self.pretrained {
            return Err(Error::Usage("train_step before pretrain".into()));
        }
        let mode = self.config.mode;
        let p_c = self.effective_p_c();
        let (epsilon, policy) = select_policy(&mut self.streams.policy, p_c);
        let z = {
            let o = observations_to_tensor(&[&self.obs], self.config.env.observation_shape())?;
            self.rae.encode(&o)?
        };
        let action = match policy {
            PolicyChoice::Task => self.task.sample_action(&z, ActionMode::Stochastic, &mut self.streams.task)?,
            PolicyChoice::Curious => {
                self.curious.sample_action(&z, ActionMode::Stochastic, &mut self.streams.curious)?
            }
        }
        .actions
        .into_data();
        let (r_task, stored_reward, episode_return) = self.interact(&action)?;
        let t = self.step;

        let batch = self.buffer.sample::<f32, _>(self.config.batch_size, &mut self.streams.replay)?;
        let rae_step = if t.is_multiple_of(self.config.rae.update_freq as u64) {
            self.rae.update_rae(&batch.obs)?
        } else {
            let r_cure = self.rae.per_sample_loss(&batch.obs)?;
            let batch_loss = rae_batch_loss(&r_cure, &self.rae.theta, self.config.rae.lambda_theta);
            RaeStep { r_cure, batch_loss }
        };
        if let (Some(dir), k) = (&self.recon_dir, self.config.recon_dump_every) {
            if k > 0 && self.rae.updates().is_multiple_of(k) {
                self.rae.dump_reconstruction(&batch.obs, self.rae.updates(), dir)?;
            }
        }
        let r_cure = rae_step.r_cure;

        let task_rewards: Vec<f32> = match mode {
            Mode::Mixed => {
                let beta = self.config.beta as f32;
                batch.rewards.iter().zip(&r_cure).map(|(&r, &c)| r + beta * c).collect()
            }
            _ => batch.rewards.clone(),
        };
        let (encoder, phi) = self.rae.encoder_and_phi();
        let task_stats = self.task.update_critic(encoder, phi, &batch, &task_rewards, &mut self.streams.task)?;
        let curious_stats = if mode == Mode::Rcac {
            Some(self.curious.update_critic(encoder, phi, &batch, &r_cure, &mut self.streams.curious)?)
        } else {
            None
        };

        let mut task_actor_loss = None;
        let mut curious_actor_loss = None;
        if t.is_multiple_of(self.config.sac.actor_update_freq as u64) {
            let s = self.task.update_actor_and_temperature(encoder, phi, &batch.obs, &mut self.streams.task)?;
            task_actor_loss = Some(s.actor_loss);
            if mode == Mode::Rcac {
                let s =
                    self.curious.update_actor_and_temperature(encoder, phi, &batch.obs, &mut self.streams.curious)?;
                curious_actor_loss = Some(s.actor_loss);
            }
        }
        if t.is_multiple_of(self.config.sac.target_update_freq as u64) {
            self.task.update_targets()?;
            if mode == Mode::Rcac {
                self.curious.update_targets()?;
            }
        }

        let n = r_cure.len() as f32;
        let (tc, cc) = (self.task.counts(), self.curious.counts());
        Ok(StepMetrics {
            step: t,
            epsilon,
            policy,
            action,
            r_task,
            stored_reward,
            episode_return,
            rae_loss: rae_step.batch_loss,
            mean_r_cure: r_cure.iter().sum::<f32>() / n,
            task_critic_loss: task_stats.loss,
            curious_critic_loss: curious_stats.map(|s| s.loss),
            task_actor_loss,
            curious_actor_loss,
            alpha_task: self.task.alpha(),
            alpha_curious: self.curious.alpha(),
            rae_updates: self.rae.updates(),
            task_critic_updates: tc.critic,
            curious_critic_updates: cc.critic,
            actor_updates: tc.actor + cc.actor,
            target_updates: tc.target + cc.target,
            task_critic_rewards: task_rewards,
            curious_critic_rewards: if mode == Mode::Rcac { r_cure.clone() } else { Vec::new() },
            batch_task_rewards: batch.rewards,
            r_cure,
        })
    }

    /// Deterministic task-policy returns on dedicated evaluation environments.
    pub fn evaluate(&self) -> Result<EvalResult> {
        let returns = evaluate_policy(&self.rae, &self.task, &self.config.env, self.config.seed, self.config.eval_episodes)?;
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        Ok(EvalResult { step: self.step, returns, mean })
    }

    /// Model state (autoencoder, both agents, counters) as a container.
    pub fn checkpoint(&self) -> Container {
        let mut c = Container::new();
        c.set_meta("step", self.step.to_string());
        c.set_meta("config", self.config.to_kv());
        c.set_meta("rae_updates", self.rae.updates().to_string());
        c.param_sets.insert("encoder".into(), self.rae.phi.clone());
        c.param_sets.insert("decoder".into(), self.rae.theta.clone());
        self.task.save_into(&mut c);
        self.curious.save_into(&mut c);
        c
    }
}

/// Runs the deterministic task actor on `episodes` evaluation episodes.
pub fn evaluate_policy(
    rae: &Rae<f32>,
    task: &Agent<f32>,
    env: &EnvConfig,
    seed: u64,
    episodes: usize,
) -> Result<Vec<f64>> {
    let shape = env.observation_shape();
    let mut unused = stream(seed, 10);
    rollout_returns(env, seed, episodes, |obs| {
        let z = rae.encode(&observations_to_tensor(obs, shape)?)?;
        let s = task.sample_action(&z, ActionMode::Deterministic, &mut unused)?;
        Ok((0..obs.len()).map(|i| s.actions.row(i).to_vec()).collect())
    })
}

/// Rebuilds the autoencoder and task agent from a trainer checkpoint.
pub fn load_policy(c: &Container) -> Result<(RunConfig, Rae<f32>, Agent<f32>)> {
    let cfg = RunConfig::from_kv(c.meta("config").ok_or_else(|| Error::Format("checkpoint has no config".into()))?)?;
    let mut init = stream(cfg.seed, 0);
    let mut rae = Rae::new(cfg.env.observation_shape(), cfg.arch, cfg.rae, &mut init)?;
    let mut task = Agent::new(Role::Task, rae.encoder().latent_dim(), cfg.env.id.action_dim(), cfg.sac, &mut init)?;
    for (name, slot) in [("encoder", &mut rae.phi), ("decoder", &mut rae.theta)] {
        let stored = c.param_set(name)?;
        slot.check_compatible(stored)?;
        *slot = stored.clone();
    }
    task.load_from(c)?;
    Ok((cfg, rae, task))
}
