use super::{one_hot, EnvSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::nn::Rng;

/// K-step repeated 2x2 coordination game for two agents.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGameConfig {
    pub k: usize,
    /// `payoff[a1][a2]`, entries in {0, 1}.
    pub payoff: [[f32; 2]; 2],
}

impl MatrixGameConfig {
    /// Only the joint action (0, 0) pays and continues the game.
    pub fn new(k: usize) -> Self {
        MatrixGameConfig { k, payoff: [[1.0, 0.0], [0.0, 0.0]] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("matrix game horizon k must be >= 1".into()));
        }
        let cells = self.payoff.iter().flatten();
        if cells.clone().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Config("payoff entries must be 0 or 1".into()));
        }
        if !cells.clone().any(|&v| v == 1.0) || !cells.clone().any(|&v| v == 0.0) {
            return Err(Error::Config("payoff needs at least one 1-entry and one 0-entry".into()));
        }
        Ok(())
    }
}

pub struct MatrixGame {
    config: MatrixGameConfig,
    step: usize,
    episode_return: f32,
    done: bool,
}

impl MatrixGame {
    pub fn new(config: MatrixGameConfig) -> Result<Self> {
        config.validate()?;
        Ok(MatrixGame { config, step: 0, episode_return: 0.0, done: false })
    }

    pub fn config(&self) -> &MatrixGameConfig {
        &self.config
    }

    /// One-hot of the step count, length `k + 1`.
    fn encode(&self) -> Vec<f32> {
        one_hot(self.config.k + 1, self.step)
    }

    fn result(&self, reward: f32) -> StepResult {
        StepResult {
            observations: vec![self.encode(); 2],
            state: self.encode(),
            reward,
            terminal: self.done,
            step_index: self.step,
        }
    }
}

impl Environment for MatrixGame {
    fn spec(&self) -> EnvSpec {
        EnvSpec {
            n_agents: 2,
            obs_dim: self.config.k + 1,
            state_dim: self.config.k + 1,
            n_actions: 2,
            max_steps: self.config.k,
        }
    }

    fn reset(&mut self, _rng: &mut Rng) -> StepResult {
        self.step = 0;
        self.episode_return = 0.0;
        self.done = false;
        self.result(0.0)
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EnvUsage("step called on a terminal matrix game".into()));
        }
        if joint_action.len() != 2 || joint_action.iter().any(|&a| a > 1) {
            return Err(Error::EnvUsage(format!("invalid joint action {joint_action:?}")));
        }
        let reward = self.config.payoff[joint_action[0]][joint_action[1]];
        self.step += 1;
        self.episode_return += reward;
        self.done = reward == 0.0 || self.step >= self.config.k;
        Ok(self.result(reward))
    }

    fn state(&self) -> Vec<f32> {
        self.encode()
    }

    fn solved(&self) -> bool {
        self.episode_return >= self.config.k as f32
    }
}
