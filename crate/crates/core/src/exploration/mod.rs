//! Exploration bonuses: the strangeness index module plus RND and ICM
//! baselines adapted to local observations.
//!
//! Bonuses are evaluated on replayed batches with the module's current
//! parameters, then the module takes one optimizer step on the batch-mean
//! of its loss.

mod icm;
mod rnd;
mod sim;

pub use icm::{Icm, ICM_FORWARD_WEIGHT};
pub use rnd::Rnd;
pub use sim::{strangeness, Sim, SimAgentNets};

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, ParamSet, Rng, Tape, Tensor, Var};
use crate::replay::MiniBatch;

/// Which bonus drives exploration, and how it is consumed.
///
/// `SimWoEq` uses the strangeness bonus directly in the goal TD target
/// instead of training a separate exploration action-value function.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusKind {
    Sim,
    SimWoEq,
    Rnd,
    Icm,
    None,
}

impl BonusKind {
    pub fn name(self) -> &'static str {
        match self {
            BonusKind::Sim => "sim",
            BonusKind::SimWoEq => "sim_wo_eq",
            BonusKind::Rnd => "rnd",
            BonusKind::Icm => "icm",
            BonusKind::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [BonusKind::Sim, BonusKind::SimWoEq, BonusKind::Rnd, BonusKind::Icm, BonusKind::None]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BonusConfig {
    /// Weight of the observation term against the state term.
    pub rho: f32,
    /// Scale of the intrinsic reward in the mixed reward.
    pub beta: f32,
    /// Width of every bonus sub-network.
    pub d: usize,
    /// One observation autoencoder for all agents (with an id input) when
    /// true; one per agent otherwise.
    pub shared_sim: bool,
}

impl Default for BonusConfig {
    fn default() -> Self {
        BonusConfig { rho: 0.5, beta: 0.1, d: 32, shared_sim: true }
    }
}

impl BonusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho = {} must lie in [0, 1]", self.rho)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta = {} must be positive", self.beta)));
        }
        if self.d == 0 {
            return Err(Error::Config("bonus width d must be positive".into()));
        }
        Ok(())
    }
}

/// Pre-update bonuses per `(t, b)` (zero on padding) and the loss value.
#[derive(Clone, Debug, PartialEq)]
pub struct BonusUpdate {
    pub r_int: Vec<f32>,
    pub loss: f32,
}

/// `r_ext + beta * r_int`.
pub fn mixed_reward(r_ext: f32, r_int: f32, beta: f32) -> f32 {
    r_ext + beta * r_int
}

/// `scale * mean` over the columns of `errs: [R x N]`, as `[R x 1]`.
pub(crate) fn agent_mean(tape: &mut Tape<'_>, errs: Var, scale: f32) -> Result<Var> {
    let (rows, n) = (tape.value(errs).rows(), tape.value(errs).cols());
    let w = tape.constant(Tensor::full(&[rows, n], scale / n as f32));
    Ok(tape.row_dot(errs, w)?)
}

/// A trainable bonus generator.
#[derive(Clone, Debug)]
pub enum BonusModule {
    Sim(Sim),
    Rnd(Rnd),
    Icm(Icm),
}

impl BonusModule {
    /// The module for `kind`, or `None` when no bonus is used.
    pub fn new(kind: BonusKind, spec: &EnvSpec, cfg: &BonusConfig, optimizer: OptimizerKind, rng: &mut Rng) -> Option<Self> {
        match kind {
            BonusKind::Sim | BonusKind::SimWoEq => Some(BonusModule::Sim(Sim::new(spec, cfg, optimizer, rng))),
            BonusKind::Rnd => Some(BonusModule::Rnd(Rnd::new(spec, cfg, optimizer, rng))),
            BonusKind::Icm => Some(BonusModule::Icm(Icm::new(spec, cfg, optimizer, rng))),
            BonusKind::None => None,
        }
    }

    pub fn update(&mut self, batch: &MiniBatch, lr: f32) -> Result<BonusUpdate> {
        match self {
            BonusModule::Sim(m) => m.update(batch, lr),
            BonusModule::Rnd(m) => m.update(batch, lr),
            BonusModule::Icm(m) => m.update(batch, lr),
        }
    }

    pub fn bonuses(&self, batch: &MiniBatch) -> Result<Vec<f32>> {
        match self {
            BonusModule::Sim(m) => m.bonuses(batch),
            BonusModule::Rnd(m) => m.bonuses(batch),
            BonusModule::Icm(m) => m.bonuses(batch),
        }
    }

    /// Trainable parameters.
    pub fn params(&self) -> &ParamSet {
        match self {
            BonusModule::Sim(m) => &m.params,
            BonusModule::Rnd(m) => &m.params,
            BonusModule::Icm(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            BonusModule::Sim(m) => &mut m.params,
            BonusModule::Rnd(m) => &mut m.params,
            BonusModule::Icm(m) => &mut m.params,
        }
    }

    pub fn optimizer(&self) -> &crate::nn::OptimizerState {
        match self {
            BonusModule::Sim(m) => &m.opt,
            BonusModule::Rnd(m) => &m.opt,
            BonusModule::Icm(m) => &m.opt,
        }
    }

    pub fn optimizer_mut(&mut self) -> &mut crate::nn::OptimizerState {
        match self {
            BonusModule::Sim(m) => &mut m.opt,
            BonusModule::Rnd(m) => &mut m.opt,
            BonusModule::Icm(m) => &mut m.opt,
        }
    }

    /// Frozen parameters (the RND target), if any.
    pub fn frozen_params(&self) -> Option<&ParamSet> {
        match self {
            BonusModule::Rnd(m) => Some(&m.target_params),
            _ => None,
        }
    }

    pub fn frozen_params_mut(&mut self) -> Option<&mut ParamSet> {
        match self {
            BonusModule::Rnd(m) => Some(&mut m.target_params),
            _ => None,
        }
    }
}
