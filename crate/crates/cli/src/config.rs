//! Run configuration files.
//!
//! A config is TOML with three optional sections. Every key is optional;
//! unknown keys are errors.
//!
//! ```toml
//! [env]
//! name = "pressureplate"   # or "matrix_game" (with k = ...)
//! layout = "two_room"      # "default", "two_room", "small" or a layout file path
//! max_steps = 250
//!
//! [algo]
//! name = "qmix+sim"
//! beta = 1.0
//!
//! [train]
//! total_env_steps = 300000
//! seed = 3
//! ```
//!
//! `beta` and `buffer_capacity` default per environment: 0.1 and 5000 for
//! the matrix game, 1.0 and 2000 for PressurePlate.

use std::path::Path;

use serde::{Deserialize, Serialize};
use strange_marl::envs::{EnvConfig, MatrixGameConfig, PressurePlateConfig, PressurePlateLayout};
use strange_marl::exploration::BonusConfig;
use strange_marl::nn::OptimizerKind;
use strange_marl::trainer::{Algo, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum EnvSection {
    #[serde(rename = "matrix_game")]
    MatrixGame {
        #[serde(default = "default_k")]
        k: usize,
    },
    #[serde(rename = "pressureplate")]
    PressurePlate {
        #[serde(default = "default_layout")]
        layout: String,
        #[serde(default = "default_max_steps")]
        max_steps: usize,
    },
}

fn default_k() -> usize {
    16
}

fn default_layout() -> String {
    "default".into()
}

fn default_max_steps() -> usize {
    250
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection::MatrixGame { k: default_k() }
    }
}

impl EnvSection {
    /// Parses the `--env` flag: `matrix_game[:K]` or
    /// `pressureplate[:LAYOUT[:MAX_STEPS]]`.
    pub fn from_flag(flag: &str) -> Result<Self> {
        let bad = |why: &str| CliError::Config(format!("--env {flag:?}: {why}"));
        let mut parts = flag.splitn(3, ':');
        match parts.next().unwrap_or_default() {
            "matrix_game" => {
                let k = match parts.next() {
                    Some(k) => k.parse().map_err(|_| bad("K must be a positive integer"))?,
                    None => default_k(),
                };
                if parts.next().is_some() {
                    return Err(bad("matrix_game takes only K"));
                }
                Ok(EnvSection::MatrixGame { k })
            }
            "pressureplate" => {
                let layout = parts.next().map_or_else(default_layout, str::to_string);
                let max_steps = match parts.next() {
                    Some(m) => m.parse().map_err(|_| bad("MAX_STEPS must be a positive integer"))?,
                    None => default_max_steps(),
                };
                Ok(EnvSection::PressurePlate { layout, max_steps })
            }
            _ => Err(bad("expected matrix_game[:K] or pressureplate[:LAYOUT[:MAX_STEPS]]")),
        }
    }

    fn is_matrix_game(&self) -> bool {
        matches!(self, EnvSection::MatrixGame { .. })
    }

    pub fn build(&self) -> Result<EnvConfig> {
        Ok(match self {
            EnvSection::MatrixGame { k } => {
                let c = MatrixGameConfig::new(*k);
                c.validate()?;
                EnvConfig::MatrixGame(c)
            }
            EnvSection::PressurePlate { layout, max_steps } => {
                let mut c = match layout.as_str() {
                    "default" => PressurePlateConfig::default_layout(),
                    "small" => PressurePlateConfig::small_layout(*max_steps),
                    "two_room" => PressurePlateConfig::two_room_layout(*max_steps),
                    path => PressurePlateConfig {
                        layout: PressurePlateLayout::load(Path::new(path))?,
                        max_steps: *max_steps,
                    },
                };
                c.max_steps = *max_steps;
                if *max_steps == 0 {
                    return Err(CliError::Config("pressureplate max_steps must be >= 1".into()));
                }
                EnvConfig::PressurePlate(c)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoSection {
    /// `mixer+exploration`, e.g. `qmix+sim` or `vdn+none`.
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_exploration_q: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub rho: f64,
    pub bonus_width: usize,
    pub shared_sim: bool,
}

impl Default for AlgoSection {
    fn default() -> Self {
        AlgoSection {
            name: "qmix+sim".into(),
            use_exploration_q: None,
            beta: None,
            rho: 0.5,
            bonus_width: 32,
            shared_sim: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub alpha: f64,
    pub gamma: f64,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
    pub mixer_embed: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub batch_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub buffer_capacity: Option<usize>,
    pub target_sync_interval: u64,
    pub train_interval: usize,
    pub total_env_steps: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            alpha: 5e-4,
            gamma: 0.99,
            optimizer: OptimizerKind::Adam,
            hidden: 32,
            mixer_embed: 32,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            batch_size: 32,
            buffer_capacity: None,
            target_sync_interval: 200,
            train_interval: 1,
            total_env_steps: 200_000,
            eval_interval: 5000,
            eval_episodes: 8,
            seed: 0,
        }
    }
}

/// A full run description: environment, algorithm and training knobs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub algo: AlgoSection,
    #[serde(default)]
    pub train: TrainSection,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub algo: Option<String>,
    pub env: Option<String>,
}

impl RunConfig {
    /// Parses TOML text without resolving environment-dependent defaults.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads a config file without resolving it.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(a) = &o.algo {
            self.algo.name = a.clone();
        }
        if let Some(e) = &o.env {
            self.env = EnvSection::from_flag(e)?;
        }
        Ok(())
    }

    /// Fills every environment-dependent default and checks the result.
    pub fn resolve(mut self) -> Result<Self> {
        let mg = self.env.is_matrix_game();
        self.algo.beta.get_or_insert(if mg { 0.1 } else { 1.0 });
        self.train.buffer_capacity.get_or_insert(if mg { 5000 } else { 2000 });
        let algo = self.algo()?;
        let mut probe = self.train_config()?;
        probe.set_algo(algo);
        self.algo.use_exploration_q = Some(probe.exploration_q());
        self.train_config()?.validate()?;
        self.env.build()?;
        Ok(self)
    }

    pub fn algo(&self) -> Result<Algo> {
        Ok(self.algo.name.parse()?)
    }

    /// The trainer configuration. Call on a resolved config.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let (a, t) = (&self.algo, &self.train);
        let unresolved = || CliError::Config("config used before defaults were resolved".into());
        let mut c = TrainConfig {
            use_exploration_q: a.use_exploration_q,
            alpha: t.alpha as f32,
            gamma: t.gamma as f32,
            beta: a.beta.ok_or_else(unresolved)? as f32,
            rho: a.rho as f32,
            bonus_width: a.bonus_width,
            shared_sim: a.shared_sim,
            hidden: t.hidden,
            mixer_embed: t.mixer_embed,
            optimizer: t.optimizer,
            epsilon_start: t.epsilon_start as f32,
            epsilon_end: t.epsilon_end as f32,
            epsilon_anneal_steps: t.epsilon_anneal_steps,
            batch_size: t.batch_size,
            buffer_capacity: t.buffer_capacity.ok_or_else(unresolved)?,
            target_sync_interval: t.target_sync_interval,
            train_interval: t.train_interval,
            total_env_steps: t.total_env_steps,
            eval_interval: t.eval_interval,
            eval_episodes: t.eval_episodes,
            seed: t.seed,
            ..TrainConfig::default()
        };
        c.set_algo(self.algo()?);
        Ok(c)
    }

    pub fn bonus_config(&self) -> Result<BonusConfig> {
        Ok(self.train_config()?.bonus_config())
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        self.env.build()
    }
}

/// Reads, resolves and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    RunConfig::read(path)?.resolve()
}
