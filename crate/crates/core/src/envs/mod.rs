//! Dec-POMDP environment kernel and the two didactic tasks.

mod matrix_game;
mod pressure_plate;

pub use matrix_game::{MatrixGame, MatrixGameConfig};
pub use pressure_plate::{Cell, Move, PressurePlate, PressurePlateConfig, PressurePlateLayout, DEFAULT_LAYOUT, SMALL_LAYOUT, TWO_ROOM_LAYOUT, VIEW};

use crate::error::Result;
use crate::nn::Rng;

/// Sizes of a task: `N` agents, per-agent observation width, global state
/// width, per-agent action count and the episode horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub max_steps: usize,
}

/// Joint observation, global state and shared reward after a reset or step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f32>>,
    pub state: Vec<f32>,
    pub reward: f32,
    pub terminal: bool,
    pub step_index: usize,
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;

    /// Starts a new episode. Both tasks are deterministic; `rng` is accepted
    /// so stochastic tasks can share the interface.
    fn reset(&mut self, rng: &mut Rng) -> StepResult;

    /// Applies one joint action. Errors once the episode is terminal.
    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;

    /// Global state of the current step.
    fn state(&self) -> Vec<f32>;

    /// Whether the current episode reached the task's success condition.
    fn solved(&self) -> bool;
}

/// Which task to build, with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvConfig {
    MatrixGame(MatrixGameConfig),
    PressurePlate(PressurePlateConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment + Send>> {
        Ok(match self {
            EnvConfig::MatrixGame(c) => Box::new(MatrixGame::new(c.clone())?),
            EnvConfig::PressurePlate(c) => Box::new(PressurePlate::new(c.clone())?),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::MatrixGame(_) => "matrix_game",
            EnvConfig::PressurePlate(_) => "pressureplate",
        }
    }
}

pub(crate) fn one_hot(n: usize, idx: usize) -> Vec<f32> {
    let mut v = vec![0.0; n];
    v[idx] = 1.0;
    v
}
