//! Point mass that must reach a small goal disc; sparse reward.
//!
//! The agent starts at rest at the origin; the goal is uniform (by area) in
//! the annulus `0.5 <= r <= 0.9`. Actions are accelerations scaled by
//! [`ACCEL`] with linear damping; the arena is the square `[-1, 1]^2` and
//! walls absorb the normal velocity. Reward is 1 per physics step spent
//! within [`GOAL_RADIUS`] of the goal, else 0.

use std::f64::consts::PI;

use rand::Rng;

use super::raster::{Frame, Rgb};

pub const DT: f64 = 0.05;
pub const ACCEL: f64 = 4.0;
pub const DAMPING: f64 = 1.0;
pub const MAX_SPEED: f64 = 2.0;
pub const ARENA: f64 = 1.0;
pub const GOAL_RADIUS: f64 = 0.05;
pub const GOAL_MIN_DIST: f64 = 0.5;
pub const GOAL_MAX_DIST: f64 = 0.9;

const BACKGROUND: Rgb = [24, 24, 32];
const GOAL: Rgb = [220, 50, 50];
const AGENT: Rgb = [60, 140, 240];
const GOAL_DRAW_RADIUS: f64 = 0.1;
const AGENT_DRAW_RADIUS: f64 = 0.09;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReacherState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub goal: [f64; 2],
}

impl ReacherState {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let r2 = rng.gen_range(GOAL_MIN_DIST.powi(2)..=GOAL_MAX_DIST.powi(2));
        let angle = rng.gen_range(-PI..PI);
        let r = f64::sqrt(r2);
        ReacherState { pos: [0.0; 2], vel: [0.0; 2], goal: [r * angle.cos(), r * angle.sin()] }
    }

    pub fn distance_to_goal(&self) -> f64 {
        ((self.pos[0] - self.goal[0]).powi(2) + (self.pos[1] - self.goal[1]).powi(2)).sqrt()
    }

    pub fn reward(&self) -> f64 {
        if self.distance_to_goal() < GOAL_RADIUS {
            1.0
        } else {
            0.0
        }
    }

    /// Semi-implicit Euler step; returns the reward of the resulting state.
    pub fn step(&mut self, action: &[f64]) -> f64 {
        for axis in 0..2 {
            let a = action[axis].clamp(-1.0, 1.0) * ACCEL - DAMPING * self.vel[axis];
            let v = (self.vel[axis] + a * DT).clamp(-MAX_SPEED, MAX_SPEED);
            let p = self.pos[axis] + v * DT;
            if p.abs() > ARENA {
                self.pos[axis] = p.clamp(-ARENA, ARENA);
                self.vel[axis] = 0.0;
            } else {
                self.pos[axis] = p;
                self.vel[axis] = v;
            }
        }
        self.reward()
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1]]
    }

    pub fn render(&self, size: usize) -> Frame {
        let mut frame = Frame::new(size, BACKGROUND);
        frame.disc(self.goal[0], self.goal[1], GOAL_DRAW_RADIUS, GOAL);
        frame.disc(self.pos[0], self.pos[1], AGENT_DRAW_RADIUS, AGENT);
        frame
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reset_places_agent_at_origin_and_goal_in_annulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10_000 {
            let s = ReacherState::sample(&mut rng);
            assert_eq!(s.pos, [0.0, 0.0]);
            assert_eq!(s.vel, [0.0, 0.0]);
            let r = (s.goal[0].powi(2) + s.goal[1].powi(2)).sqrt();
            assert!((GOAL_MIN_DIST - 1e-12..=GOAL_MAX_DIST + 1e-12).contains(&r));
        }
    }

    #[test]
    fn agent_on_goal_is_rewarded() {
        let mut s = ReacherState { pos: [0.6, 0.2], vel: [0.0; 2], goal: [0.6, 0.2] };
        assert_eq!(s.reward(), 1.0);
        assert_eq!(s.step(&[0.0, 0.0]), 1.0);
        s.pos = [0.0, 0.0];
        assert_eq!(s.reward(), 0.0);
    }

    #[test]
    fn walls_stop_the_agent() {
        let mut s = ReacherState { pos: [0.99, 0.0], vel: [MAX_SPEED, 0.0], goal: [0.0, 0.7] };
        s.step(&[1.0, 0.0]);
        assert_eq!(s.pos[0], ARENA);
        assert_eq!(s.vel[0], 0.0);
    }

    #[test]
    fn goal_and_agent_use_distinct_colors() {
        let s = ReacherState { pos: [-0.5, 0.0], vel: [0.0; 2], goal: [0.5, 0.0] };
        let f = s.render(48);
        let at = |x: f64, y: f64| {
            let col = ((x + 1.2) / 2.4 * 48.0) as usize;
            let row = ((1.2 - y) / 2.4 * 48.0) as usize;
            f.pixel(row, col)
        };
        assert_eq!(at(0.5, 0.0), GOAL);
        assert_eq!(at(-0.5, 0.0), AGENT);
        assert_eq!(at(0.0, 1.0), BACKGROUND);
    }
}
