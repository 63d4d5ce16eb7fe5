//! Soft actor-critic over encoder latents: tanh-squashed Gaussian actor,
//! twin critics with Polyak-averaged targets, and a learned temperature.
//!
//! Two agents (task and curious) share one encoder. Critic updates push
//! gradients into the encoder through [`Agent::update_critic`], each agent
//! with its own Adam moments for the encoder parameters. Actor updates
//! treat the latent as a constant unless [`SacConfig::actor_updates_encoder`]
//! is set.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcompute::checkpoint::Container;
use crate::diffcompute::{
    adam_step, adam_step_with, soft_update, AdamConfig, LayerSpec, MomentBank, ParameterSet, Scalar, Sequential,
    Tensor,
};
use crate::replay::Batch;
use crate::srl::Encoder;
use crate::{Error, Result};

const LN_2: f64 = std::f64::consts::LN_2;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SacConfig {
    pub hidden: usize,
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub actor_update_freq: usize,
    pub target_update_freq: usize,
    /// Ablation: let the actor loss update the encoder too.
    pub actor_updates_encoder: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            hidden: 1024,
            gamma: 0.99,
            tau: 0.01,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-4,
            init_alpha: 0.1,
            log_std_min: -10.0,
            log_std_max: 2.0,
            actor_update_freq: 2,
            target_update_freq: 2,
            actor_updates_encoder: false,
        }
    }
}

impl SacConfig {
    /// Every violation, joined.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.hidden == 0 {
            bad.push("hidden must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            bad.push(format!("gamma = {} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            bad.push(format!("tau = {} outside [0, 1]", self.tau));
        }
        for (name, lr) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                bad.push(format!("{name} = {lr} must be > 0"));
            }
        }
        if !(self.init_alpha > 0.0 && self.init_alpha.is_finite()) {
            bad.push(format!("init_alpha = {} must be > 0", self.init_alpha));
        }
        if !(self.log_std_min < self.log_std_max) {
            bad.push(format!("log std bounds [{}, {}] are empty", self.log_std_min, self.log_std_max));
        }
        if self.actor_update_freq == 0 || self.target_update_freq == 0 {
            bad.push("update frequencies must be >= 1".to_string());
        }
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
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Task,
    Curious,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Task => "task",
            Role::Curious => "curious",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "task" => Ok(Role::Task),
            "curious" => Ok(Role::Curious),
            _ => Err(Error::Config(format!("unknown agent role '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    /// `tanh(mean)`, used for evaluation.
    Deterministic,
}

fn mlp(name: &str, input: usize, hidden: usize, output: usize) -> Result<Sequential> {
    Sequential::new(
        name,
        &[input],
        vec![
            LayerSpec::Dense { in_features: input, out_features: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: hidden, out_features: hidden },
            LayerSpec::Relu,
            LayerSpec::Dense { in_features: hidden, out_features: output },
        ],
    )
}

/// Standard normal noise of shape `[batch, action_dim]`.
pub fn gaussian_noise<T: Scalar, R: Rng + ?Sized>(batch: usize, action_dim: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..batch * action_dim).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(vec![batch, action_dim], data).expect("positive shape")
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq<T: Scalar>(u: T) -> T {
    let two = T::of(2.0);
    let m2u = -two * u;
    // softplus(x) = max(x, 0) + log1p(exp(-|x|))
    let softplus = m2u.max(T::zero()) + (-m2u.abs()).exp().ln_1p();
    two * (T::of(LN_2) - u - softplus)
}

/// Squashed-Gaussian sample with everything the backward pass needs.
#[derive(Clone, Debug)]
pub struct PolicySample<T> {
    /// `tanh(u)`, shape `[batch, action_dim]`.
    pub actions: Tensor<T>,
    pub log_probs: Vec<T>,
    pub log_std: Tensor<T>,
    pub noise: Tensor<T>,
    /// Whether the raw log-std was strictly inside the bounds (gradient passes).
    interior: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticStats<T> {
    pub loss: T,
    pub mean_q: T,
    pub mean_target: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorStats<T> {
    pub actor_loss: T,
    pub alpha_loss: T,
    /// Temperature after the step.
    pub alpha: T,
    /// `-mean(log pi)` of the sampled actions.
    pub entropy: T,
}

/// Update counters, exposed for bookkeeping and tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub critic: u64,
    pub actor: u64,
    pub target: u64,
}

#[derive(Clone, Debug)]
pub struct Agent<T> {
    role: Role,
    config: SacConfig,
    latent_dim: usize,
    action_dim: usize,
    actor: Sequential,
    q1: Sequential,
    q2: Sequential,
    pub actor_params: ParameterSet<T>,
    /// Both online critics, under `q1.*` and `q2.*`.
    pub critic_params: ParameterSet<T>,
    pub critic_target: ParameterSet<T>,
    pub log_alpha: ParameterSet<T>,
    /// Critic-optimizer moments for the shared encoder parameters.
    pub encoder_moments: MomentBank<T>,
    counts: UpdateCounts,
}

const LOG_ALPHA: &str = "log_alpha";

impl<T: Scalar> Agent<T> {
    pub fn new<R: Rng + ?Sized>(
        role: Role,
        latent_dim: usize,
        action_dim: usize,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if latent_dim == 0 || action_dim == 0 {
            return Err(Error::Config("agent needs positive latent and action sizes".into()));
        }
        let actor = mlp("actor", latent_dim, config.hidden, 2 * action_dim)?;
        let q1 = mlp("q1", latent_dim + action_dim, config.hidden, 1)?;
        let q2 = mlp("q2", latent_dim + action_dim, config.hidden, 1)?;
        let mut actor_params = ParameterSet::new();
        actor.init_params(&mut actor_params, rng)?;
        let mut critic_params = ParameterSet::new();
        q1.init_params(&mut critic_params, rng)?;
        q2.init_params(&mut critic_params, rng)?;
        let critic_target = critic_params.values_only();
        let mut log_alpha = ParameterSet::new();
        log_alpha.insert(LOG_ALPHA, Tensor::from_vec(vec![T::of(config.init_alpha.ln())]))?;
        Ok(Agent {
            role,
            config,
            latent_dim,
            action_dim,
            actor,
            q1,
            q2,
            actor_params,
            critic_params,
            critic_target,
            log_alpha,
            encoder_moments: MomentBank::new(),
            counts: UpdateCounts::default(),
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn counts(&self) -> UpdateCounts {
        self.counts
    }

    pub fn alpha(&self) -> T {
        self.log_alpha_value().exp()
    }

    fn log_alpha_value(&self) -> T {
        self.log_alpha.value(LOG_ALPHA).expect("log alpha present").data()[0]
    }

    pub fn target_entropy(&self) -> T {
        T::of(-(self.action_dim as f64))
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<usize> {
        if z.shape().len() != 2 || z.shape()[1] != self.latent_dim {
            return Err(Error::Config(format!("expected latents [batch, {}], got {:?}", self.latent_dim, z.shape())));
        }
        Ok(z.shape()[0])
    }

    /// Maps actor outputs and fixed noise to actions and log-probs.
    fn squash(&self, out: &Tensor<T>, noise: &Tensor<T>) -> Result<PolicySample<T>> {
        let a_dim = self.action_dim;
        let batch = out.rows();
        let (lo, hi) = (T::of(self.config.log_std_min), T::of(self.config.log_std_max));
        let mut actions = Vec::with_capacity(batch * a_dim);
        let mut log_std = Vec::with_capacity(batch * a_dim);
        let mut interior = Vec::with_capacity(batch * a_dim);
        let mut log_probs = Vec::with_capacity(batch);
        for b in 0..batch {
            let row = out.row(b);
            let mut lp = T::zero();
            for j in 0..a_dim {
                let raw = row[a_dim + j];
                let ls = raw.max(lo).min(hi);
                let n = noise.data()[b * a_dim + j];
                let u = row[j] + ls.exp() * n;
                lp += T::of(-0.5) * n * n - ls - T::of(HALF_LN_2PI) - log_one_minus_tanh_sq(u);
                actions.push(u.tanh());
                log_std.push(ls);
                interior.push(raw > lo && raw < hi);
            }
            log_probs.push(lp);
        }
        Ok(PolicySample {
            actions: Tensor::new(vec![batch, a_dim], actions)?,
            log_probs,
            log_std: Tensor::new(vec![batch, a_dim], log_std)?,
            noise: noise.clone(),
            interior,
        })
    }

    /// Actions for latents `z`; deterministic mode returns `tanh(mean)` and
    /// the log-density at that point.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        z: &Tensor<T>,
        mode: ActionMode,
        rng: &mut R,
    ) -> Result<PolicySample<T>> {
        let batch = self.check_latent(z)?;
        let noise = match mode {
            ActionMode::Stochastic => gaussian_noise(batch, self.action_dim, rng),
            ActionMode::Deterministic => Tensor::zeros(&[batch, self.action_dim]),
        };
        self.policy_with(&self.actor_params, z, &noise)
    }

    /// Policy sample under explicit actor parameters and noise.
    pub fn policy_with(&self, actor: &ParameterSet<T>, z: &Tensor<T>, noise: &Tensor<T>) -> Result<PolicySample<T>> {
        let batch = self.check_latent(z)?;
        if noise.shape() != [batch, self.action_dim] {
            return Err(Error::Config(format!("noise shape {:?} does not match the batch", noise.shape())));
        }
        let out = self.actor.infer(actor, z)?;
        self.squash(&out, noise)
    }

    fn concat(&self, z: &Tensor<T>, actions: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check_latent(z)?;
        if actions.shape() != [batch, self.action_dim] {
            return Err(Error::Config(format!(
                "expected actions [{batch}, {}], got {:?}",
                self.action_dim,
                actions.shape()
            )));
        }
        let mut data = Vec::with_capacity(batch * (self.latent_dim + self.action_dim));
        for b in 0..batch {
            data.extend_from_slice(z.row(b));
            data.extend_from_slice(actions.row(b));
        }
        Tensor::new(vec![batch, self.latent_dim + self.action_dim], data)
    }

    /// `(Q1, Q2)` under the given critic parameters (online or target).
    pub fn q_values(&self, critic: &ParameterSet<T>, z: &Tensor<T>, actions: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        let x = self.concat(z, actions)?;
        let q1 = self.q1.infer(critic, &x)?.into_data();
        let q2 = self.q2.infer(critic, &x)?.into_data();
        Ok((q1, q2))
    }

    /// Bellman backup `r + gamma (1 - d) (min Q'(z', a') - alpha log pi(a'|z'))`
    /// with `a'` freshly sampled. No gradients flow.
    pub fn critic_target<R: Rng + ?Sized>(
        &self,
        rewards: &[T],
        dones: &[T],
        next_z: &Tensor<T>,
        rng: &mut R,
    ) -> Result<Vec<T>> {
        let next = self.sample_action(next_z, ActionMode::Stochastic, rng)?;
        let (q1, q2) = self.q_values(&self.critic_target, next_z, &next.actions)?;
        let min_q: Vec<T> = q1.iter().zip(&q2).map(|(&a, &b)| a.min(b)).collect();
        bellman_target(rewards, dones, &min_q, &next.log_probs, self.alpha(), T::of(self.config.gamma))
    }

    /// Mean over batch and both critics of `(Q - y)^2`.
    pub fn critic_loss_with(&self, critic: &ParameterSet<T>, z: &Tensor<T>, actions: &Tensor<T>, y: &[T]) -> Result<T> {
        let (q1, q2) = self.q_values(critic, z, actions)?;
        if y.len() != q1.len() {
            return Err(Error::Config(format!("{} targets for a batch of {}", y.len(), q1.len())));
        }
        let sq: T = q1.iter().chain(&q2).zip(y.iter().chain(y)).map(|(&q, &t)| (q - t) * (q - t)).sum();
        Ok(sq / T::of(2.0 * y.len() as f64))
    }

    /// Replaces critic and encoder gradients with those of the critic loss
    /// against fixed targets `y`.
    pub fn critic_gradients(
        &mut self,
        encoder: &Encoder,
        phi: &mut ParameterSet<T>,
        obs: &Tensor<T>,
        actions: &Tensor<T>,
        y: &[T],
    ) -> Result<CriticStats<T>> {
        self.critic_params.zero_grad();
        phi.zero_grad();
        let (z, enc_tape) = encoder.forward(phi, obs)?;
        let x = self.concat(&z, actions)?;
        let batch = z.rows();
        if y.len() != batch {
            return Err(Error::Config(format!("{} targets for a batch of {batch}", y.len())));
        }
        let (q1, t1) = self.q1.forward(&self.critic_params, &x)?;
        let (q2, t2) = self.q2.forward(&self.critic_params, &x)?;
        let scale = T::of(1.0 / batch as f64);
        let grad_of = |q: &Tensor<T>| -> Result<Tensor<T>> {
            Tensor::new(vec![batch, 1], q.data().iter().zip(y).map(|(&q, &t)| scale * (q - t)).collect())
        };
        let (g1, g2) = (grad_of(&q1)?, grad_of(&q2)?);
        let dx1 = self.q1.backward(&mut self.critic_params, t1, &g1, true)?.expect("input grad");
        let dx2 = self.q2.backward(&mut self.critic_params, t2, &g2, true)?.expect("input grad");
        let dz = self.latent_part(&dx1, Some(&dx2))?;
        encoder.backward(phi, enc_tape, &dz)?;

        let sq: T = q1.data().iter().chain(q2.data()).zip(y.iter().chain(y)).map(|(&q, &t)| (q - t) * (q - t)).sum();
        let n = T::of(batch as f64);
        Ok(CriticStats {
            loss: sq / (n + n),
            mean_q: (q1.data().iter().copied().sum::<T>() + q2.data().iter().copied().sum::<T>()) / (n + n),
            mean_target: y.iter().copied().sum::<T>() / n,
        })
    }

    /// Latent columns of critic input gradients, summed.
    fn latent_part(&self, a: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let batch = a.rows();
        let mut dz = Vec::with_capacity(batch * self.latent_dim);
        for r in 0..batch {
            let ra = &a.row(r)[..self.latent_dim];
            match b {
                Some(b) => dz.extend(ra.iter().zip(&b.row(r)[..self.latent_dim]).map(|(&x, &y)| x + y)),
                None => dz.extend_from_slice(ra),
            }
        }
        Tensor::new(vec![batch, self.latent_dim], dz)
    }

    /// One critic step: targets from `rewards`, then Adam on both critics
    /// and on the shared encoder (with this agent's encoder moments).
    pub fn update_critic<R: Rng + ?Sized>(
        &mut self,
        encoder: &Encoder,
        phi: &mut ParameterSet<T>,
        batch: &Batch<T>,
        rewards: &[T],
        rng: &mut R,
    ) -> Result<CriticStats<T>> {
        if rewards.len() != batch.len() {
            return Err(Error::Config(format!("{} rewards for a batch of {}", rewards.len(), batch.len())));
        }
        let next_z = encoder.encode(phi, &batch.next_obs)?;
        let y = self.critic_target(rewards, &batch.dones, &next_z, rng)?;
        let stats = self.critic_gradients(encoder, phi, &batch.obs, &batch.actions, &y)?;
        let cfg = AdamConfig::with_lr(self.config.critic_lr);
        adam_step(&mut self.critic_params, &cfg)?;
        adam_step_with(phi, &mut self.encoder_moments, &cfg)?;
        self.critic_params.zero_grad();
        phi.zero_grad();
        self.counts.critic += 1;
        Ok(stats)
    }

    /// `mean(alpha log pi(a|z) - min(Q1, Q2)(z, a))` with `a` from fixed noise.
    pub fn actor_loss_with(&self, actor: &ParameterSet<T>, z: &Tensor<T>, noise: &Tensor<T>, alpha: T) -> Result<T> {
        let s = self.policy_with(actor, z, noise)?;
        let (q1, q2) = self.q_values(&self.critic_params, z, &s.actions)?;
        let total: T = (0..z.rows()).map(|b| alpha * s.log_probs[b] - q1[b].min(q2[b])).sum();
        Ok(total / T::of(z.rows() as f64))
    }

    /// Replaces actor gradients with those of the actor loss at fixed noise;
    /// returns the loss, the sample, and `dL/dz`.
    pub fn actor_gradients(&mut self, z: &Tensor<T>, noise: &Tensor<T>) -> Result<(T, PolicySample<T>, Tensor<T>)> {
        let batch = self.check_latent(z)?;
        let a_dim = self.action_dim;
        self.actor_params.zero_grad();
        let (out, actor_tape) = self.actor.forward(&self.actor_params, z)?;
        let s = self.squash(&out, noise)?;
        let x = self.concat(z, &s.actions)?;
        let (q1, t1) = self.q1.forward(&self.critic_params, &x)?;
        let (q2, t2) = self.q2.forward(&self.critic_params, &x)?;
        let alpha = self.alpha();
        let scale = T::of(1.0 / batch as f64);
        // route each sample through its smaller critic; ties go to q1
        let pick1: Vec<bool> = q1.data().iter().zip(q2.data()).map(|(a, b)| a <= b).collect();
        let g1 = Tensor::new(vec![batch, 1], pick1.iter().map(|&p| if p { -scale } else { T::zero() }).collect())?;
        let g2 = Tensor::new(vec![batch, 1], pick1.iter().map(|&p| if p { T::zero() } else { -scale }).collect())?;
        let dx1 = self.q1.input_grad(&self.critic_params, t1, &g1)?;
        let dx2 = self.q2.input_grad(&self.critic_params, t2, &g2)?;

        let mut d_out = vec![T::zero(); batch * 2 * a_dim];
        let two = T::of(2.0);
        let one = T::one();
        for b in 0..batch {
            for j in 0..a_dim {
                let k = b * a_dim + j;
                let a = s.actions.data()[k];
                let std = s.log_std.data()[k].exp();
                let n = noise.data()[k];
                let dq_da = dx1.row(b)[self.latent_dim + j] + dx2.row(b)[self.latent_dim + j];
                let dq_du = dq_da * (one - a * a);
                // log pi depends on u through the squash term (+2a) and on log std directly (-1)
                d_out[b * 2 * a_dim + j] = scale * alpha * two * a + dq_du;
                if s.interior[k] {
                    d_out[b * 2 * a_dim + a_dim + j] = scale * alpha * (two * a * std * n - one) + dq_du * std * n;
                }
            }
        }
        let d_out = Tensor::new(vec![batch, 2 * a_dim], d_out)?;
        let dz_actor = self.actor.backward(&mut self.actor_params, actor_tape, &d_out, true)?.expect("input grad");
        let dz_critic = self.latent_part(&dx1, Some(&dx2))?;
        let dz = Tensor::new(
            vec![batch, self.latent_dim],
            dz_actor.data().iter().zip(dz_critic.data()).map(|(&a, &c)| a + c).collect(),
        )?;
        let total: T = (0..batch).map(|b| alpha * s.log_probs[b] - q1.data()[b].min(q2.data()[b])).sum();
        Ok((total * scale, s, dz))
    }

    /// `mean(-alpha (log pi + target entropy))` as a function of `log alpha`.
    pub fn temperature_loss(&self, log_alpha: T, log_probs: &[T]) -> T {
        let h = self.target_entropy();
        let n = T::of(log_probs.len() as f64);
        -log_alpha.exp() * log_probs.iter().map(|&lp| lp + h).sum::<T>() / n
    }

    /// Replaces the temperature gradient; returns the loss.
    pub fn temperature_gradients(&mut self, log_probs: &[T]) -> Result<T> {
        let la = self.log_alpha_value();
        let loss = self.temperature_loss(la, log_probs);
        let e = self.log_alpha.entry_mut(LOG_ALPHA)?;
        // d/d(log alpha) of -alpha * c is -alpha * c, i.e. the loss itself
        e.grad.data_mut()[0] = loss;
        Ok(loss)
    }

    /// Actor step on the latents of `obs`, then the temperature step on the
    /// same sample.
    pub fn update_actor_and_temperature<R: Rng + ?Sized>(
        &mut self,
        encoder: &Encoder,
        phi: &mut ParameterSet<T>,
        obs: &Tensor<T>,
        rng: &mut R,
    ) -> Result<ActorStats<T>> {
        let noise = gaussian_noise(obs.rows(), self.action_dim, rng);
        let actor_cfg = AdamConfig::with_lr(self.config.actor_lr);
        let (actor_loss, sample) = if self.config.actor_updates_encoder {
            phi.zero_grad();
            let (z, tape) = encoder.forward(phi, obs)?;
            let (loss, sample, dz) = self.actor_gradients(&z, &noise)?;
            encoder.backward(phi, tape, &dz)?;
            adam_step_with(phi, &mut self.encoder_moments, &actor_cfg)?;
            phi.zero_grad();
            (loss, sample)
        } else {
            let z = encoder.encode(phi, obs)?;
            let (loss, sample, _) = self.actor_gradients(&z, &noise)?;
            (loss, sample)
        };
        adam_step(&mut self.actor_params, &actor_cfg)?;
        self.actor_params.zero_grad();

        let alpha_loss = self.temperature_gradients(&sample.log_probs)?;
        adam_step(&mut self.log_alpha, &AdamConfig::with_lr(self.config.alpha_lr))?;
        self.log_alpha.zero_grad();
        self.counts.actor += 1;
        let n = T::of(sample.log_probs.len() as f64);
        Ok(ActorStats {
            actor_loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy: -sample.log_probs.iter().copied().sum::<T>() / n,
        })
    }

    /// Polyak-averages both target critics toward the online critics.
    pub fn update_targets(&mut self) -> Result<()> {
        soft_update(&mut self.critic_target, &self.critic_params, self.config.tau)?;
        self.counts.target += 1;
        Ok(())
    }
}

/// `y = r + gamma (1 - d) (minQ' - alpha log pi')`, elementwise.
pub fn bellman_target<T: Scalar>(
    rewards: &[T],
    dones: &[T],
    min_next_q: &[T],
    next_log_probs: &[T],
    alpha: T,
    gamma: T,
) -> Result<Vec<T>> {
    let n = rewards.len();
    if dones.len() != n || min_next_q.len() != n || next_log_probs.len() != n {
        return Err(Error::Config("bellman target inputs differ in length".into()));
    }
    let y: Vec<T> = (0..n)
        .map(|i| rewards[i] + gamma * (T::one() - dones[i]) * (min_next_q[i] - alpha * next_log_probs[i]))
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite critic target".into()));
    }
    Ok(y)
}

impl Agent<f32> {
    /// Adds this agent's parameters and optimizer state under `{role}.*`.
    pub fn save_into(&self, c: &mut Container) {
        let p = self.role.as_str();
        c.set_meta(format!("{p}.role"), p);
        c.set_meta(format!("{p}.critic_updates"), self.counts.critic.to_string());
        c.set_meta(format!("{p}.actor_updates"), self.counts.actor.to_string());
        c.set_meta(format!("{p}.target_updates"), self.counts.target.to_string());
        c.param_sets.insert(format!("{p}.actor"), self.actor_params.clone());
        c.param_sets.insert(format!("{p}.critic"), self.critic_params.clone());
        c.param_sets.insert(format!("{p}.critic_target"), self.critic_target.clone());
        c.param_sets.insert(format!("{p}.log_alpha"), self.log_alpha.clone());
        c.moment_banks.insert(format!("{p}.encoder_moments"), self.encoder_moments.clone());
    }

    /// Restores state written by [`Agent::save_into`] for the same role and shapes.
    pub fn load_from(&mut self, c: &Container) -> Result<()> {
        let p = self.role.as_str();
        if c.meta(&format!("{p}.role")) != Some(p) {
            return Err(Error::Format(format!("checkpoint has no {p} agent")));
        }
        let take = |name: &str, into: &ParameterSet<f32>| -> Result<ParameterSet<f32>> {
            let stored = c.param_set(&format!("{p}.{name}"))?;
            into.check_compatible(stored)?;
            Ok(stored.clone())
        };
        self.actor_params = take("actor", &self.actor_params)?;
        self.critic_params = take("critic", &self.critic_params)?;
        self.critic_target = take("critic_target", &self.critic_target)?;
        self.log_alpha = take("log_alpha", &self.log_alpha)?;
        self.encoder_moments = c.moment_bank(&format!("{p}.encoder_moments"))?.clone();
        let count = |k: &str| -> Result<u64> {
            c.meta(&format!("{p}.{k}"))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {p}.{k}")))
        };
        self.counts = UpdateCounts {
            critic: count("critic_updates")?,
            actor: count("actor_updates")?,
            target: count("target_updates")?,
        };
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcompute::gradcheck::check_gradients;
    use crate::srl::SrlArch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> SacConfig {
        SacConfig { hidden: 8, ..SacConfig::default() }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(shape: &[usize], lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
    }

    fn jitter(p: &mut ParameterSet<f64>, r: &mut ChaCha8Rng) {
        for (_, e) in p.iter_mut() {
            for v in e.value.data_mut() {
                *v += r.gen_range(-0.2..0.2);
            }
        }
    }

    #[test]
    fn bellman_target_examples() {
        let y = bellman_target(&[1.0f64], &[0.0], &[2.0], &[-1.0], 0.1, 0.99).unwrap();
        assert!((y[0] - 3.079).abs() < 1e-12);
        assert_eq!(bellman_target(&[0.7f64], &[1.0], &[5.0], &[-3.0], 0.1, 0.99).unwrap(), vec![0.7]);
        assert_eq!(bellman_target(&[0.7f64], &[0.0], &[5.0], &[-3.0], 0.1, 0.0).unwrap(), vec![0.7]);
    }

    #[test]
    fn target_uses_the_smaller_target_critic() {
        let mut r = rng(0);
        let mut agent = Agent::<f64>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        // make q2 a large constant so the minimum is always q1
        for (name, e) in agent.critic_target.iter_mut() {
            if name == "q2.4.bias" {
                e.value.data_mut()[0] = 1e3;
            }
        }
        let z = random(&[4, 3], -1.0, 1.0, &mut r);
        let y = agent.critic_target(&[0.0; 4], &[0.0; 4], &z, &mut rng(9)).unwrap();
        let next = agent.sample_action(&z, ActionMode::Stochastic, &mut rng(9)).unwrap();
        let (q1, q2) = agent.q_values(&agent.critic_target, &z, &next.actions).unwrap();
        for b in 0..4 {
            assert!(q1[b] < q2[b]);
            let want = 0.99 * (q1[b] - agent.alpha() * next.log_probs[b]);
            assert!((y[b] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn actions_stay_inside_the_open_box() {
        let mut r = rng(1);
        let mut agent = Agent::<f32>::new(Role::Task, 4, 2, tiny(), &mut r).unwrap();
        // push the means far out so saturation is exercised
        for (_, e) in agent.actor_params.iter_mut() {
            for v in e.value.data_mut() {
                *v *= 3.0;
            }
        }
        let z = random(&[1000, 4], -1.0, 1.0, &mut r).cast::<f32>();
        for _ in 0..50 {
            let s = agent.sample_action(&z, ActionMode::Stochastic, &mut r).unwrap();
            assert!(s.actions.data().iter().all(|a| a.abs() <= 1.0));
            assert!(s.log_probs.iter().all(|l| l.is_finite()));
            assert!(s.log_std.data().iter().all(|&l| (-10.0..=2.0).contains(&l)));
        }
    }

    #[test]
    fn log_prob_matches_change_of_variables_density() {
        let mut r = rng(2);
        let agent = Agent::<f64>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        let z = random(&[64, 3], -1.0, 1.0, &mut r);
        let s = agent.sample_action(&z, ActionMode::Stochastic, &mut r).unwrap();
        let out = agent.actor.infer(&agent.actor_params, &z).unwrap();
        for b in 0..64 {
            let (mu, sigma) = (out.row(b)[0], s.log_std.data()[b].exp());
            let a = s.actions.data()[b];
            let u = a.atanh();
            let gauss = (-(u - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
            let density = gauss / (1.0 - a * a);
            assert!((density.ln() - s.log_probs[b]).abs() < 1e-5, "sample {b}");
        }
    }

    #[test]
    fn vanishing_std_collapses_to_the_mean_action() {
        let mut r = rng(3);
        let mut agent = Agent::<f64>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        // pin log std at its lower bound
        agent.actor_params.entry_mut("actor.4.bias").unwrap().value.data_mut()[1] = -1e6;
        let z = random(&[16, 3], -1.0, 1.0, &mut r);
        let s = agent.sample_action(&z, ActionMode::Stochastic, &mut r).unwrap();
        let d = agent.sample_action(&z, ActionMode::Deterministic, &mut r).unwrap();
        for (a, b) in s.actions.data().iter().zip(d.actions.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn critic_loss_vanishes_when_q_equals_target() {
        let mut r = rng(4);
        let agent = Agent::<f64>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        let z = random(&[5, 3], -1.0, 1.0, &mut r);
        let a = random(&[5, 1], -1.0, 1.0, &mut r);
        let (q1, _) = agent.q_values(&agent.critic_params, &z, &a).unwrap();
        // q2 differs from q1, so only a matched twin gives zero
        let mut twin = agent.critic_params.clone();
        for name in agent.q1.layers().iter().enumerate().filter(|(_, l)| l.has_params()).map(|(i, _)| i) {
            for suffix in ["weight", "bias"] {
                let v = agent.critic_params.value(&format!("q1.{name}.{suffix}")).unwrap().clone();
                twin.entry_mut(&format!("q2.{name}.{suffix}")).unwrap().value = v;
            }
        }
        assert_eq!(agent.critic_loss_with(&twin, &z, &a, &q1).unwrap(), 0.0);
    }

    #[test]
    fn temperature_stationary_at_target_entropy() {
        let mut r = rng(5);
        let mut agent = Agent::<f64>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        assert_eq!(agent.target_entropy(), -1.0);
        let g = agent.temperature_gradients(&[1.5, 0.5]).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(6);
        let arch = SrlArch { channels: 2, latent_dim: 3 };
        let encoder = Encoder::new([3, 16, 16], arch).unwrap();
        let mut phi = encoder.init_params::<f64, _>(&mut r).unwrap();
        jitter(&mut phi, &mut r);
        let mut agent = Agent::<f64>::new(Role::Curious, 3, 2, tiny(), &mut r).unwrap();
        jitter(&mut agent.actor_params, &mut r);
        jitter(&mut agent.critic_params, &mut r);
        let obs = random(&[3, 3, 16, 16], 0.0, 1.0, &mut r);
        let actions = random(&[3, 2], -0.9, 0.9, &mut r);
        let y = vec![0.3, -0.2, 1.1];

        agent.critic_gradients(&encoder, &mut phi, &obs, &actions, &y).unwrap();
        let z = encoder.encode(&phi, &obs).unwrap();
        let critic = check_gradients(&agent.critic_params, 1e-5, |c| agent.critic_loss_with(c, &z, &actions, &y)).unwrap();
        assert!(critic.max_relative_error < 1e-4, "{critic:?}");
        let enc = check_gradients(&phi, 1e-5, |p| {
            let z = encoder.encode(p, &obs)?;
            agent.critic_loss_with(&agent.critic_params, &z, &actions, &y)
        })
        .unwrap();
        assert!(enc.max_relative_error < 1e-4, "{enc:?}");

        let noise = gaussian_noise(3, 2, &mut r);
        let (_, sample, dz) = agent.actor_gradients(&z, &noise).unwrap();
        let alpha = agent.alpha();
        let actor = check_gradients(&agent.actor_params, 1e-5, |p| agent.actor_loss_with(p, &z, &noise, alpha)).unwrap();
        assert!(actor.max_relative_error < 1e-4, "{actor:?}");
        for k in 0..z.len() {
            let h = 1e-5;
            let mut zp = z.clone();
            zp.data_mut()[k] += h;
            let mut zm = z.clone();
            zm.data_mut()[k] -= h;
            let numeric = (agent.actor_loss_with(&agent.actor_params, &zp, &noise, alpha).unwrap()
                - agent.actor_loss_with(&agent.actor_params, &zm, &noise, alpha).unwrap())
                / (2.0 * h);
            let rel = crate::diffcompute::gradcheck::relative_error(dz.data()[k], numeric);
            assert!(rel < 1e-4, "dz[{k}]");
        }

        agent.temperature_gradients(&sample.log_probs).unwrap();
        let lp = sample.log_probs.clone();
        let temp = check_gradients(&agent.log_alpha, 1e-5, |p| {
            Ok(agent.temperature_loss(p.value(LOG_ALPHA)?.data()[0], &lp))
        })
        .unwrap();
        assert!(temp.max_relative_error < 1e-4, "{temp:?}");
    }

    fn single_transition_batch(r: &mut ChaCha8Rng) -> Batch<f32> {
        let obs = random(&[1, 3, 16, 16], 0.0, 1.0, r).cast::<f32>();
        Batch {
            next_obs: obs.clone(),
            obs,
            actions: Tensor::new(vec![1, 1], vec![0.4]).unwrap(),
            rewards: vec![0.75],
            dones: vec![1.0],
            indices: vec![0],
        }
    }

    #[test]
    fn critic_fits_a_terminal_reward() {
        let mut r = rng(7);
        let encoder = Encoder::new([3, 16, 16], SrlArch { channels: 4, latent_dim: 6 }).unwrap();
        let mut phi = encoder.init_params::<f32, _>(&mut r).unwrap();
        let mut agent = Agent::<f32>::new(Role::Task, 6, 1, SacConfig { hidden: 32, ..SacConfig::default() }, &mut r)
            .unwrap();
        let batch = single_transition_batch(&mut r);
        for _ in 0..200 {
            agent.update_critic(&encoder, &mut phi, &batch, &batch.rewards, &mut r).unwrap();
        }
        let z = encoder.encode(&phi, &batch.obs).unwrap();
        let (q1, q2) = agent.q_values(&agent.critic_params, &z, &batch.actions).unwrap();
        assert!((q1[0] - 0.75).abs() < 0.05 && (q2[0] - 0.75).abs() < 0.05, "{q1:?} {q2:?}");
    }

    #[test]
    fn critic_updates_move_the_encoder_and_actor_updates_do_not() {
        let mut r = rng(8);
        let encoder = Encoder::new([3, 16, 16], SrlArch { channels: 2, latent_dim: 3 }).unwrap();
        let mut phi = encoder.init_params::<f32, _>(&mut r).unwrap();
        let mut agent = Agent::<f32>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        let mut batch = single_transition_batch(&mut r);
        batch.dones = vec![0.0];
        let before = phi.values_only();
        agent.update_critic(&encoder, &mut phi, &batch, &batch.rewards, &mut r).unwrap();
        assert!(!phi.values_equal(&before));
        assert_eq!(agent.encoder_moments.len(), phi.len());

        let after_critic = phi.values_only();
        let actor_before = agent.actor_params.values_only();
        let alpha_before = agent.alpha();
        agent.update_actor_and_temperature(&encoder, &mut phi, &batch.obs, &mut r).unwrap();
        assert!(phi.values_equal(&after_critic));
        assert!(!agent.actor_params.values_equal(&actor_before));
        assert_ne!(agent.alpha(), alpha_before);
        assert!(agent.alpha() > 0.0);

        let mut ablated =
            Agent::<f32>::new(Role::Task, 3, 1, SacConfig { actor_updates_encoder: true, ..tiny() }, &mut r).unwrap();
        ablated.update_actor_and_temperature(&encoder, &mut phi, &batch.obs, &mut r).unwrap();
        assert!(!phi.values_equal(&after_critic));
    }

    #[test]
    fn optimizers_keep_separate_state() {
        let mut r = rng(9);
        let encoder = Encoder::new([3, 16, 16], SrlArch { channels: 2, latent_dim: 3 }).unwrap();
        let mut phi = encoder.init_params::<f32, _>(&mut r).unwrap();
        let mut task = Agent::<f32>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        let mut curious = Agent::<f32>::new(Role::Curious, 3, 1, tiny(), &mut r).unwrap();
        let batch = single_transition_batch(&mut r);
        task.update_critic(&encoder, &mut phi, &batch, &batch.rewards, &mut r).unwrap();
        task.update_critic(&encoder, &mut phi, &batch, &batch.rewards, &mut r).unwrap();
        curious.update_critic(&encoder, &mut phi, &batch, &[5.0], &mut r).unwrap();
        let name = phi.names().next().unwrap().to_owned();
        assert_eq!(task.encoder_moments.get(&name).unwrap().step, 2);
        assert_eq!(curious.encoder_moments.get(&name).unwrap().step, 1);
        // the autoencoder's own moments (in the entries) were never touched
        assert_eq!(phi.entry(&name).unwrap().moments.step, 0);
        assert!(task.actor_params.iter().all(|(_, e)| e.moments.step == 0));
    }

    #[test]
    fn soft_update_tracks_one_percent_of_the_gap() {
        let mut r = rng(10);
        let mut agent = Agent::<f64>::new(Role::Task, 3, 1, tiny(), &mut r).unwrap();
        assert!(agent.critic_target.values_equal(&agent.critic_params));
        agent.update_targets().unwrap();
        assert!(agent.critic_target.values_equal(&agent.critic_params));
        let old = agent.critic_target.values_only();
        for (_, e) in agent.critic_params.iter_mut() {
            for v in e.value.data_mut() {
                *v += 1.0;
            }
        }
        agent.update_targets().unwrap();
        for (name, e) in agent.critic_target.iter() {
            for (t, o) in e.value.data().iter().zip(old.value(name).unwrap().data()) {
                assert!((t - o - 0.01).abs() < 1e-12);
            }
        }
        assert_eq!(SacConfig::default().tau, 0.01);
    }

    #[test]
    fn checkpoint_round_trip_restores_agent() {
        let mut r = rng(11);
        let agent = Agent::<f32>::new(Role::Curious, 3, 2, tiny(), &mut r).unwrap();
        let mut c = Container::new();
        agent.save_into(&mut c);
        let mut fresh = Agent::<f32>::new(Role::Curious, 3, 2, tiny(), &mut rng(99)).unwrap();
        fresh.load_from(&c).unwrap();
        assert!(fresh.actor_params.values_equal(&agent.actor_params));
        let mut other = Agent::<f32>::new(Role::Task, 3, 2, tiny(), &mut r).unwrap();
        assert!(matches!(other.load_from(&c), Err(Error::Format(_))));
    }

    #[test]
    fn invalid_config_lists_every_problem() {
        let cfg = SacConfig { gamma: 1.5, tau: -0.1, alpha_lr: 0.0, ..SacConfig::default() };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("gamma") && msg.contains("tau") && msg.contains("alpha_lr"), "{msg}");
    }
}
