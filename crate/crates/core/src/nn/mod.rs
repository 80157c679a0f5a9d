//! Deterministic tensor and neural-network substrate.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, check_gradients_for, GradCheckReport};
pub use layers::{gru_step, linear_forward, Gru, Linear, Mlp};
pub use optim::{clip_global_norm, OptimizerKind, OptimizerState};
pub use params::{ParamId, ParamSet};
pub use rng::{Rng, RngState};
pub use tape::{activation, Activation, Bound, Gradients, Tape, Var};
pub use tensor::{linear, mse, mse_mean, Tensor};

/// Global-norm gradient clip applied before every optimizer step.
pub const GRAD_CLIP_NORM: f32 = 10.0;
