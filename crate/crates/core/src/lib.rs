//! Recurrent meta-RL agents viewed as belief-state estimators.
//!
//! * [`pomdp`]: multi-task POMDPs with trial/episode resets, the exact task
//!   belief filter, and brute-force Bayes-optimal and known-task baselines.
//! * [`envs`]: the dependent two-armed bandit and the two-goal corridor.
//! * [`net`]: LSTM agent, hand-written BPTT and finite-difference checking.
//! * [`a2c`]: returns, actor-critic loss, clipping and Adam.
//! * [`regimes`]: RL² (memory kept across episodes) and RL¹ (memory wiped,
//!   task identity revealed after the first episode).
//! * [`harness`]: rollouts, training runs, evaluation and aggregation.
//! * [`probe`]: linear decoding of exact beliefs from hidden activity.

pub mod a2c;
pub mod checkpoint;
pub mod config;
pub mod envs;
pub mod error;
pub mod harness;
pub mod net;
pub mod pomdp;
pub mod probe;
pub mod regimes;

pub use error::{Error, Result};
