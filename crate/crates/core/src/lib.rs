//! Cooperative multi-agent value-decomposition learning with
//! strangeness-driven exploration.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: tensors, a recording autodiff tape, dense/GRU layers, optimizers
//!   and the checkpoint container.
//! * [`envs`]: the Dec-POMDP kernel, the K-step payoff matrix game and
//!   PressurePlate.
//! * [`replay`]: episode-granular replay memory and padded minibatches.
//! * [`marl`]: recurrent agent Q networks, VDN/QMIX mixers and the goal and
//!   exploration TD losses.
//! * [`exploration`]: the strangeness bonus plus RND and ICM baselines.
//! * [`trainer`]: the end-to-end training loop, evaluation and run state.

pub mod envs;
pub mod error;
pub mod exploration;
pub mod marl;
pub mod nn;
pub mod replay;
pub mod trainer;

pub use error::{Error, NnError, Result};
pub use nn::{Rng, Tensor};
