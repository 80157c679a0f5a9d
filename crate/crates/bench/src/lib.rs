//! Fixtures shared by the benchmarks.

use strange_marl::envs::{EnvConfig, MatrixGameConfig, PressurePlateConfig};
use strange_marl::replay::MiniBatch;
use strange_marl::trainer::{TrainConfig, Trainer};
use strange_marl::{Rng, Tensor};

pub fn matrix_game(k: usize) -> EnvConfig {
    EnvConfig::MatrixGame(MatrixGameConfig::new(k))
}

pub fn pressureplate_small(max_steps: usize) -> EnvConfig {
    EnvConfig::PressurePlate(PressurePlateConfig::small_layout(max_steps))
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// A trainer whose replay memory holds `episodes` exploratory episodes,
/// plus one batch sampled from it.
pub fn filled_trainer(algo: &str, env: EnvConfig, episodes: usize, batch_size: usize) -> (Trainer, MiniBatch) {
    let mut config = TrainConfig { batch_size, seed: 1, ..TrainConfig::default() };
    config.set_algo(algo.parse().expect("known algorithm"));
    let mut trainer = Trainer::new(config, env).expect("valid config");
    for _ in 0..episodes {
        trainer.collect_episode().expect("collection succeeds");
    }
    let batch = trainer.replay().sample(batch_size, &mut Rng::new(2)).expect("enough episodes");
    (trainer, batch)
}
