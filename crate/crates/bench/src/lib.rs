//! Fixtures shared by the benchmarks.

use rcac_core::envs::EnvId;
use rcac_core::rcac::{Mode, RunConfig};

/// Full-size training config with a short schedule, so a trainer reaches the
/// RL phase after `pretrain_transitions` steps.
pub fn full_scale(env: EnvId) -> RunConfig {
    let mut c = RunConfig::new(env, Mode::Rcac);
    c.pretrain_transitions = 256;
    c.pretrain_updates = 1;
    c.total_steps = 100_000;
    c.checkpoints = false;
    c
}
