//! Pixel-observation continuous-control tasks with ground-truth state access.
//!
//! | id                     | action dim | reward per physics step | default repeat |
//! |------------------------|-----------:|-------------------------|---------------:|
//! | `pendulum_swingup`     | 1          | dense, in `[0, 1]`      | 4              |
//! | `point_reacher_sparse` | 2          | sparse, in `{0, 1}`     | 2              |
//!
//! One environment step applies the action for `action_repeat` physics
//! steps and sums their rewards, so a step reward lies in
//! `[0, action_repeat]`. Episodes never terminate; they are truncated after
//! `1000 / action_repeat` steps.

pub mod pendulum;
mod raster;
pub mod reacher;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use pendulum::PendulumState;
pub use raster::{save_rgb_png, Frame, CHANNELS, VIEW_EXTENT};
pub use reacher::ReacherState;

use crate::error::{Error, Result};

/// Physics steps per episode before truncation, shared by all tasks.
pub const PHYSICS_STEPS_PER_EPISODE: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvId {
    PendulumSwingup,
    PointReacherSparse,
}

impl EnvId {
    pub const ALL: [EnvId; 2] = [EnvId::PendulumSwingup, EnvId::PointReacherSparse];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvId::PendulumSwingup => "pendulum_swingup",
            EnvId::PointReacherSparse => "point_reacher_sparse",
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            EnvId::PendulumSwingup => 1,
            EnvId::PointReacherSparse => 2,
        }
    }

    pub fn default_action_repeat(self) -> usize {
        match self {
            EnvId::PendulumSwingup => 4,
            EnvId::PointReacherSparse => 2,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown environment '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnvConfig {
    pub id: EnvId,
    /// Frame side length in pixels.
    pub obs_size: usize,
    pub frame_stack: usize,
    pub action_repeat: usize,
}

impl EnvConfig {
    /// Desk-scale defaults: 48px frames, 3-frame stack, per-task action repeat.
    pub fn new(id: EnvId) -> Self {
        EnvConfig { id, obs_size: 48, frame_stack: 3, action_repeat: id.default_action_repeat() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_size < 16 {
            return Err(Error::Config(format!("observation size {} below 16", self.obs_size)));
        }
        if self.frame_stack == 0 {
            return Err(Error::Config("frame stack must be positive".into()));
        }
        if self.action_repeat == 0 || !PHYSICS_STEPS_PER_EPISODE.is_multiple_of(self.action_repeat) {
            return Err(Error::Config(format!(
                "action repeat {} must divide {PHYSICS_STEPS_PER_EPISODE}",
                self.action_repeat
            )));
        }
        Ok(())
    }

    /// `[frame_stack * 3, size, size]`.
    pub fn observation_shape(&self) -> [usize; 3] {
        [self.frame_stack * CHANNELS, self.obs_size, self.obs_size]
    }

    pub fn observation_len(&self) -> usize {
        self.observation_shape().iter().product()
    }

    pub fn episode_length(&self) -> usize {
        PHYSICS_STEPS_PER_EPISODE / self.action_repeat
    }
}

/// Ground-truth simulator state, exposed for diagnostics only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvState {
    Pendulum(PendulumState),
    Reacher(ReacherState),
}

impl EnvState {
    /// Pendulum: `[theta, omega]`; reacher: `[x, y, vx, vy, goal_x, goal_y]`.
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            EnvState::Pendulum(s) => s.to_vec(),
            EnvState::Reacher(s) => s.to_vec(),
        }
    }

    pub fn render(&self, size: usize) -> Frame {
        match self {
            EnvState::Pendulum(s) => s.render(size),
            EnvState::Reacher(s) => s.render(size),
        }
    }
}

/// Stack of the `K` most recent frames, oldest first, as raw bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelObservation {
    frames: usize,
    size: usize,
    data: Vec<u8>,
}

impl PixelObservation {
    fn filled(frame: &Frame, frames: usize) -> Self {
        let mut data = Vec::with_capacity(frame.data().len() * frames);
        for _ in 0..frames {
            data.extend_from_slice(frame.data());
        }
        PixelObservation { frames, size: frame.size(), data }
    }

    fn push(&mut self, frame: &Frame) {
        let n = frame.data().len();
        self.data.copy_within(n.., 0);
        let len = self.data.len();
        self.data[len - n..].copy_from_slice(frame.data());
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    /// Bytes of frame `k` (0 = oldest).
    pub fn frame(&self, k: usize) -> &[u8] {
        let n = CHANNELS * self.size * self.size;
        &self.data[k * n..(k + 1) * n]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: PixelObservation,
    /// Task reward summed over the action repeat.
    pub reward: f64,
    /// True terminal state; the built-in tasks never set it.
    pub done: bool,
    /// Time limit reached.
    pub truncated: bool,
}

/// A task instance owning its state, frame stack and step counter.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    state: Option<EnvState>,
    frames: Option<PixelObservation>,
    steps: usize,
    finished: bool,
}

impl Env {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Env { config, state: None, frames: None, steps: 0, finished: false })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn id(&self) -> EnvId {
        self.config.id
    }

    pub fn action_dim(&self) -> usize {
        self.config.id.action_dim()
    }

    pub fn episode_length(&self) -> usize {
        self.config.episode_length()
    }

    /// Largest possible reward of a single environment step.
    pub fn max_step_reward(&self) -> f64 {
        self.config.action_repeat as f64
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Draws an initial state deterministically from `seed` and fills the
    /// frame stack with its rendering.
    pub fn reset(&mut self, seed: u64) -> PixelObservation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = match self.config.id {
            EnvId::PendulumSwingup => EnvState::Pendulum(PendulumState::sample(&mut rng)),
            EnvId::PointReacherSparse => EnvState::Reacher(ReacherState::sample(&mut rng)),
        };
        self.reset_to(state)
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: EnvState) -> PixelObservation {
        let obs = PixelObservation::filled(&state.render(self.config.obs_size), self.config.frame_stack);
        self.state = Some(state);
        self.frames = Some(obs.clone());
        self.steps = 0;
        self.finished = false;
        obs
    }

    /// Applies `action` (components clamped to `[-1, 1]`) for `action_repeat`
    /// physics steps.
    pub fn step(&mut self, action: &[f32]) -> Result<StepResult> {
        if action.len() != self.action_dim() {
            return Err(Error::Config(format!(
                "{} expects {} action components, got {}",
                self.config.id,
                self.action_dim(),
                action.len()
            )));
        }
        if self.finished {
            return Err(Error::Usage("step called on a finished episode; reset first".into()));
        }
        let Some(state) = self.state.as_mut() else {
            return Err(Error::Usage("step called before reset".into()));
        };
        let a: Vec<f64> = action
            .iter()
            .map(|&v| if v.is_nan() { 0.0 } else { f64::from(v).clamp(-1.0, 1.0) })
            .collect();
        let mut reward = 0.0;
        for _ in 0..self.config.action_repeat {
            reward += match state {
                EnvState::Pendulum(s) => s.step(a[0]),
                EnvState::Reacher(s) => s.step(&a),
            };
        }
        let frame = state.render(self.config.obs_size);
        let frames = self.frames.as_mut().expect("frames exist once state does");
        frames.push(&frame);
        self.steps += 1;
        let truncated = self.steps >= self.config.episode_length();
        self.finished = truncated;
        Ok(StepResult { observation: frames.clone(), reward, done: false, truncated })
    }

    pub fn state(&self) -> Option<EnvState> {
        self.state
    }

    /// Rendering of the current state (the newest frame of the stack).
    pub fn render(&self) -> Option<Frame> {
        self.state.map(|s| s.render(self.config.obs_size))
    }

    /// Writes the current frame as PNG.
    pub fn dump_frame(&self, path: &Path) -> Result<()> {
        self.render()
            .ok_or_else(|| Error::Usage("nothing to render before reset".into()))?
            .save_png(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn env(id: EnvId) -> Env {
        Env::new(EnvConfig::new(id)).unwrap()
    }

    #[test]
    fn ids_round_trip_through_strings() {
        for id in EnvId::ALL {
            assert_eq!(id.as_str().parse::<EnvId>().unwrap(), id);
        }
        assert!("cartpole".parse::<EnvId>().is_err());
    }

    #[test]
    fn same_seed_gives_identical_observation_bytes() {
        for id in EnvId::ALL {
            let (mut a, mut b) = (env(id), env(id));
            assert_eq!(a.reset(17), b.reset(17));
            assert_ne!(a.reset(17), a.clone().reset(18));
        }
    }

    #[test]
    fn reset_fills_all_frame_slots_with_initial_frame() {
        let mut e = env(EnvId::PendulumSwingup);
        let obs = e.reset(1);
        assert_eq!(obs.as_bytes().len(), e.config().observation_len());
        for k in 1..obs.frames() {
            assert_eq!(obs.frame(k), obs.frame(0));
        }
    }

    #[test]
    fn frame_stack_shifts_by_one_each_step() {
        let mut e = env(EnvId::PointReacherSparse);
        let mut prev = e.reset(2);
        for _ in 0..5 {
            let next = e.step(&[1.0, -0.5]).unwrap().observation;
            for k in 0..prev.frames() - 1 {
                assert_eq!(next.frame(k), prev.frame(k + 1));
            }
            assert_eq!(next.frame(next.frames() - 1), e.render().unwrap().data());
            prev = next;
        }
    }

    #[test]
    fn episode_length_divides_physics_horizon() {
        for (repeat, len) in [(4, 250), (1, 1000), (2, 500)] {
            let mut cfg = EnvConfig::new(EnvId::PendulumSwingup);
            cfg.action_repeat = repeat;
            assert_eq!(Env::new(cfg).unwrap().episode_length(), len);
        }
        let mut cfg = EnvConfig::new(EnvId::PendulumSwingup);
        cfg.action_repeat = 3;
        assert!(Env::new(cfg).is_err());
    }

    #[test]
    fn episode_truncates_and_then_refuses_to_step() {
        let mut e = env(EnvId::PendulumSwingup);
        e.reset(0);
        for t in 1..=e.episode_length() {
            let r = e.step(&[0.3]).unwrap();
            assert!(!r.done);
            assert_eq!(r.truncated, t == e.episode_length());
        }
        assert!(matches!(e.step(&[0.0]), Err(Error::Usage(_))));
        e.reset(1);
        assert!(e.step(&[0.0]).is_ok());
    }

    #[test]
    fn stepping_before_reset_is_a_usage_error() {
        assert!(matches!(env(EnvId::PendulumSwingup).step(&[0.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn wrong_action_dimension_is_rejected() {
        let mut e = env(EnvId::PointReacherSparse);
        e.reset(0);
        assert!(matches!(e.step(&[0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn identical_action_sequences_reproduce_trajectories() {
        for id in EnvId::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let actions: Vec<Vec<f32>> =
                (0..60).map(|_| (0..id.action_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let run = || {
                let mut e = env(id);
                let mut out = vec![e.reset(4).into_bytes()];
                for a in &actions {
                    let r = e.step(a).unwrap();
                    out.push(r.observation.into_bytes());
                    out.push(r.reward.to_le_bytes().to_vec());
                }
                out
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn rewards_stay_within_bounds_on_random_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for id in EnvId::ALL {
            let mut cfg = EnvConfig::new(id);
            cfg.obs_size = 16;
            let mut e = Env::new(cfg).unwrap();
            e.reset(0);
            let max = e.max_step_reward();
            for i in 0..100_000 {
                let a: Vec<f32> = (0..id.action_dim()).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let r = e.step(&a).unwrap();
                assert!((0.0..=max).contains(&r.reward), "{id}: reward {}", r.reward);
                if id == EnvId::PointReacherSparse {
                    assert_eq!(r.reward.fract(), 0.0);
                }
                if r.truncated {
                    e.reset(i as u64);
                }
            }
        }
    }

    #[test]
    fn background_pixels_are_state_independent() {
        let corner = |e: &Env| e.render().unwrap().pixel(0, 0);
        let mut a = env(EnvId::PendulumSwingup);
        a.reset(0);
        let mut b = env(EnvId::PendulumSwingup);
        b.reset(123);
        assert_eq!(corner(&a), corner(&b));
    }

    #[test]
    fn frame_dump_writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let mut e = env(EnvId::PointReacherSparse);
        e.reset(3);
        let path = dir.path().join("f.png");
        e.dump_frame(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
    }
}
