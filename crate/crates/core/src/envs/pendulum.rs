//! Torque-limited pendulum swing-up with a dense reward.
//!
//! Angle 0 is upright. Dynamics per physics step (`dt = 0.05`):
//! `omega += (3g/(2l) sin(theta) + 3/(m l^2) u) dt`, clamped to `[-8, 8]`,
//! then `theta += omega dt`, wrapped to `(-pi, pi]`. Torque `u` is the action
//! scaled by 2. The per-step cost `theta^2 + 0.1 omega^2 + 0.001 u^2`
//! (at most 16.2736) is mapped to a reward in `[0, 1]`.

use std::f64::consts::PI;

use rand::Rng;

use super::raster::{Frame, Rgb};

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_COST: f64 = PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE;

const BACKGROUND: Rgb = [24, 24, 32];
const ROD: Rgb = [200, 90, 40];
const BOB: Rgb = [240, 210, 70];

/// Maps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t + 2.0 * PI
    } else {
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub omega: f64,
}

impl PendulumState {
    pub fn new(theta: f64, omega: f64) -> Self {
        PendulumState { theta: wrap_angle(theta), omega: omega.clamp(-MAX_SPEED, MAX_SPEED) }
    }

    /// Angle uniform in `(-pi, pi]`, velocity uniform in `[-1, 1]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // (-pi, pi] is the reflection of [-pi, pi)
        let theta = -rng.gen_range(-PI..PI);
        let omega = rng.gen_range(-1.0..=1.0);
        PendulumState { theta, omega }
    }

    /// Semi-implicit Euler step under normalized action `a` in `[-1, 1]`.
    /// Returns the reward in `[0, 1]` for the state-action pair before the step.
    pub fn step(&mut self, a: f64) -> f64 {
        let u = a.clamp(-1.0, 1.0) * MAX_TORQUE;
        let cost = self.theta * self.theta + 0.1 * self.omega * self.omega + 0.001 * u * u;
        let accel = 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.omega = (self.omega + accel * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta = wrap_angle(self.theta + self.omega * DT);
        (1.0 - cost / MAX_COST).clamp(0.0, 1.0)
    }

    /// Conserved quantity of the torque-free dynamics (per unit inertia).
    pub fn energy(&self) -> f64 {
        0.5 * self.omega * self.omega + 3.0 * GRAVITY / (2.0 * LENGTH) * self.theta.cos()
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.theta, self.omega]
    }

    pub fn render(&self, size: usize) -> Frame {
        let mut frame = Frame::new(size, BACKGROUND);
        let tip = (self.theta.sin() * 0.8, self.theta.cos() * 0.8);
        frame.segment((0.0, 0.0), tip, 0.07, ROD);
        frame.disc(tip.0, tip.1, 0.17, BOB);
        frame
    }
}
