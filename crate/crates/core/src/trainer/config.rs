use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exploration::{BonusConfig, BonusKind};
use crate::marl::MixerKind;
use crate::nn::OptimizerKind;

/// A mixer paired with an exploration scheme, written `qmix+sim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Algo {
    pub mixer: MixerKind,
    pub bonus: BonusKind,
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mixer = match self.mixer {
            MixerKind::Qmix => "qmix",
            MixerKind::Vdn => "vdn",
        };
        write!(f, "{mixer}+{}", self.bonus.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (m, b) = s.split_once('+').unwrap_or((s, "none"));
        let mixer = match m {
            "qmix" => MixerKind::Qmix,
            "vdn" => MixerKind::Vdn,
            _ => return Err(Error::Config(format!("unknown mixer {m:?} (expected qmix or vdn)"))),
        };
        let bonus = BonusKind::parse(b)
            .ok_or_else(|| Error::Config(format!("unknown exploration {b:?} (expected sim, sim_wo_eq, rnd, icm or none)")))?;
        Ok(Algo { mixer, bonus })
    }
}

/// Every knob of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mixer: MixerKind,
    pub bonus: BonusKind,
    /// Collect with a separate exploration action-value function trained on
    /// the mixed reward. `None` picks the default for `bonus`: on for `sim`,
    /// off otherwise.
    pub use_exploration_q: Option<bool>,
    pub alpha: f32,
    pub gamma: f32,
    pub beta: f32,
    pub rho: f32,
    /// Width of the bonus networks.
    pub bonus_width: usize,
    pub shared_sim: bool,
    /// GRU width of the agent networks.
    pub hidden: usize,
    pub mixer_embed: usize,
    pub optimizer: OptimizerKind,
    pub epsilon_start: f32,
    pub epsilon_end: f32,
    pub epsilon_anneal_steps: u64,
    pub batch_size: usize,
    /// Replay capacity in episodes.
    pub buffer_capacity: usize,
    /// Episodes between target-network copies.
    pub target_sync_interval: u64,
    /// Gradient phases per collected episode.
    pub train_interval: usize,
    pub total_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mixer: MixerKind::Qmix,
            bonus: BonusKind::Sim,
            use_exploration_q: None,
            alpha: 5e-4,
            gamma: 0.99,
            beta: 0.1,
            rho: 0.5,
            bonus_width: 32,
            shared_sim: true,
            hidden: 32,
            mixer_embed: 32,
            optimizer: OptimizerKind::Adam,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            batch_size: 32,
            buffer_capacity: 5000,
            target_sync_interval: 200,
            train_interval: 1,
            total_env_steps: 200_000,
            eval_interval: 5000,
            eval_episodes: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn algo(&self) -> Algo {
        Algo { mixer: self.mixer, bonus: self.bonus }
    }

    pub fn set_algo(&mut self, algo: Algo) {
        self.mixer = algo.mixer;
        self.bonus = algo.bonus;
    }

    /// Whether collection uses the exploration action-value function.
    pub fn exploration_q(&self) -> bool {
        self.use_exploration_q.unwrap_or(self.bonus == BonusKind::Sim)
    }

    pub fn bonus_config(&self) -> BonusConfig {
        BonusConfig { rho: self.rho, beta: self.beta, d: self.bonus_width, shared_sim: self.shared_sim }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha = {} must be positive", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} must lie in [0, 1)", self.gamma));
        }
        // beta = 0 is accepted so the bonus can be switched off without
        // changing the network layout
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be non-negative", self.beta));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho = {} must lie in [0, 1]", self.rho));
        }
        for (name, e) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} = {e} must lie in [0, 1]"));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return bad(format!("epsilon_end = {} exceeds epsilon_start = {}", self.epsilon_end, self.epsilon_start));
        }
        let counts = [
            ("bonus_width", self.bonus_width as u64),
            ("hidden", self.hidden as u64),
            ("mixer_embed", self.mixer_embed as u64),
            ("epsilon_anneal_steps", self.epsilon_anneal_steps),
            ("batch_size", self.batch_size as u64),
            ("buffer_capacity", self.buffer_capacity as u64),
            ("target_sync_interval", self.target_sync_interval),
            ("train_interval", self.train_interval as u64),
            ("total_env_steps", self.total_env_steps),
            ("eval_interval", self.eval_interval),
            ("eval_episodes", self.eval_episodes as u64),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.batch_size > self.buffer_capacity {
            return bad(format!("batch_size {} exceeds buffer_capacity {}", self.batch_size, self.buffer_capacity));
        }
        if self.bonus == BonusKind::SimWoEq && self.use_exploration_q == Some(true) {
            return bad("sim_wo_eq trains the goal function on the mixed reward; use_exploration_q must be off".into());
        }
        Ok(())
    }
}

/// Linear anneal from `epsilon_start` to `epsilon_end` over
/// `epsilon_anneal_steps`, then constant.
pub fn epsilon_at(config: &TrainConfig, env_steps: u64) -> f32 {
    if env_steps >= config.epsilon_anneal_steps {
        return config.epsilon_end;
    }
    let frac = env_steps as f64 / config.epsilon_anneal_steps as f64;
    (config.epsilon_start as f64 + frac * (config.epsilon_end as f64 - config.epsilon_start as f64)) as f32
}
