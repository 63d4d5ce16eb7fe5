//! Representation-curious actor-critic (RCAC) for pixel-based continuous control.
//!
//! A regularized autoencoder learns the state representation shared by two
//! soft actor-critic agents. The task agent learns from environment reward;
//! the curious agent learns from the autoencoder's per-sample loss and is
//! used to act with probability `p_c`, steering data collection toward
//! observations the representation handles poorly.

pub mod diffcompute;
pub mod diversity;
pub mod envs;
pub mod error;
pub mod rcac;
pub mod replay;
pub mod sac;
pub mod srl;

pub use error::{Error, Result};
