//! The training loop.
//!
//! Each collected episode is followed by `train_interval` gradient phases on
//! batches of whole episodes. With an exploration function the phase
//! updates the goal function on extrinsic rewards, then computes the bonus
//! and updates its module, then trains the exploration function on the
//! mixed reward. The exploration function only decides which data is
//! collected; evaluation always uses the goal function greedily.

mod config;
mod eval;
mod run;
mod state;

pub use config::{epsilon_at, Algo, TrainConfig};
pub use eval::{evaluate, EvalResult};
pub use run::{run_training, Counters, GoalGradients, MetricsRow, PhaseStats, Trainer};
