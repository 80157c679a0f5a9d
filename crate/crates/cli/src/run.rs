//! The `train`, `resume`, `eval` and `sweep` commands.
//!
//! A run directory holds `config.toml` (the resolved config),
//! `manifest.json`, `metrics.csv` and `checkpoint.smc`. A sweep directory
//! holds one run directory per seed (`seed-<n>`) plus `aggregate.csv`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use strange_marl::trainer::{evaluate, EvalResult, MetricsRow, Trainer};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{RunManifest, RunStatus};
use crate::metrics::{aggregate_csv, write_metrics};

#[derive(Clone, Debug)]
pub struct RunDir(PathBuf);

impl RunDir {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        RunDir(path.into())
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn config(&self) -> PathBuf {
        self.0.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.0.join("manifest.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.0.join("metrics.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.0.join("checkpoint.smc")
    }

    fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.0).map_err(CliError::io(&self.0))
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Also checkpoint every this many env steps; a checkpoint is always
    /// written at the end.
    pub checkpoint_interval: Option<u64>,
}

/// Called with the seed and each new metrics row.
pub type Progress<'a> = &'a mut dyn FnMut(u64, &MetricsRow);

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let tmp = path.with_extension("smc.partial");
    let file = File::create(&tmp).map_err(CliError::io(&tmp))?;
    trainer.save(BufWriter::new(file))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn load_checkpoint(path: &Path, config: &RunConfig) -> Result<Trainer> {
    let file = File::open(path).map_err(CliError::io(path))?;
    Ok(Trainer::load(BufReader::new(file), config.env_config()?)?)
}

/// Trains a resolved config from scratch into `dir`.
pub fn train(config: &RunConfig, dir: &RunDir, opts: &TrainOptions, progress: Progress<'_>) -> Result<Vec<MetricsRow>> {
    dir.create()?;
    let text = config.to_toml();
    std::fs::write(dir.config(), &text).map_err(CliError::io(dir.config()))?;
    let manifest = RunManifest::new("train", text, vec![config.train.seed], dir.path(), vec![dir.metrics()]);
    manifest.write(&dir.manifest())?;
    let trainer = Trainer::new(config.train_config()?, config.env_config()?)?;
    drive(trainer, dir, manifest, opts, progress)
}

/// Continues the run in `dir` from its checkpoint, optionally with a new
/// step budget.
pub fn resume(dir: &RunDir, total_env_steps: Option<u64>, opts: &TrainOptions, progress: Progress<'_>) -> Result<Vec<MetricsRow>> {
    let mut config = RunConfig::read(&dir.config())?.resolve()?;
    let mut trainer = load_checkpoint(&dir.checkpoint(), &config)?;
    if trainer.config() != &config.train_config()? {
        return Err(CliError::Config(format!(
            "{} does not match the configuration stored in {}",
            dir.config().display(),
            dir.checkpoint().display()
        )));
    }
    if let Some(total) = total_env_steps {
        trainer.set_total_env_steps(total)?;
        config.train.total_env_steps = total;
    }
    let text = config.to_toml();
    std::fs::write(dir.config(), &text).map_err(CliError::io(dir.config()))?;
    let manifest = RunManifest::new("resume", text, vec![config.train.seed], dir.path(), vec![dir.metrics()]);
    manifest.write(&dir.manifest())?;
    drive(trainer, dir, manifest, opts, progress)
}

fn drive(
    mut trainer: Trainer,
    dir: &RunDir,
    mut manifest: RunManifest,
    opts: &TrainOptions,
    progress: Progress<'_>,
) -> Result<Vec<MetricsRow>> {
    let seed = trainer.config().seed;
    let mut outcome = (|| -> Result<Vec<MetricsRow>> {
        let every = opts.checkpoint_interval.filter(|&k| k > 0);
        let mut next_ckpt = every.map(|k| (trainer.counters().env_steps / k + 1) * k);
        while !trainer.is_done() {
            let before = trainer.rows().len();
            trainer.run_episode()?;
            if trainer.rows().len() > before {
                write_metrics(trainer.rows(), &dir.metrics())?;
                for row in &trainer.rows()[before..] {
                    progress(seed, row);
                }
            }
            if let (Some(k), Some(n)) = (every, next_ckpt) {
                if trainer.counters().env_steps >= n && !trainer.is_done() {
                    save_checkpoint(&trainer, &dir.checkpoint())?;
                    next_ckpt = Some((trainer.counters().env_steps / k + 1) * k);
                }
            }
        }
        write_metrics(trainer.rows(), &dir.metrics())?;
        save_checkpoint(&trainer, &dir.checkpoint())?;
        Ok(trainer.rows().to_vec())
    })();
    let status = match &outcome {
        Ok(_) => RunStatus::Completed,
        Err(e) => RunStatus::Failed { seeds: vec![seed], error: e.to_string() },
    };
    manifest.finish(status);
    if let Err(e) = manifest.write(&dir.manifest()) {
        outcome = outcome.and(Err(e));
    }
    outcome
}

/// Greedy evaluation of the goal function stored in `dir`'s checkpoint.
pub fn eval(dir: &RunDir, episodes: Option<usize>) -> Result<EvalResult> {
    let config = RunConfig::read(&dir.config())?.resolve()?;
    let trainer = load_checkpoint(&dir.checkpoint(), &config)?;
    let n = episodes.unwrap_or(trainer.config().eval_episodes);
    let mut env = config.env_config()?.build()?;
    Ok(evaluate(trainer.goal(), env.as_mut(), n)?)
}

pub fn seed_dir(sweep: &Path, seed: u64) -> RunDir {
    RunDir::new(sweep.join(format!("seed-{seed}")))
}

/// Runs one independent training run per seed, then aggregates. A failing
/// seed does not stop the others; the sweep then reports failure with the
/// completed runs and the aggregate over them left on disk.
pub fn sweep(
    config: &RunConfig,
    seeds: &[u64],
    out: &Path,
    opts: &TrainOptions,
    progress: Progress<'_>,
) -> Result<Vec<Vec<MetricsRow>>> {
    if seeds.len() < 2 {
        return Err(CliError::Config(format!("a sweep needs at least two seeds, got {seeds:?}")));
    }
    let mut sorted = seeds.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != seeds.len() {
        return Err(CliError::Config(format!("duplicate seeds in {seeds:?}")));
    }
    let dir = RunDir::new(out);
    dir.create()?;
    let text = config.to_toml();
    std::fs::write(dir.config(), &text).map_err(CliError::io(dir.config()))?;
    let files = seeds.iter().map(|&s| seed_dir(out, s).metrics()).collect();
    let mut manifest = RunManifest::new("sweep", text, seeds.to_vec(), out, files);
    manifest.write(&dir.manifest())?;

    let (mut runs, mut failed) = (Vec::new(), Vec::new());
    for &seed in seeds {
        let mut c = config.clone();
        c.train.seed = seed;
        match train(&c, &seed_dir(out, seed), opts, progress) {
            Ok(rows) => runs.push(rows),
            Err(e) => failed.push((seed, e)),
        }
    }
    let agg = out.join("aggregate.csv");
    std::fs::write(&agg, aggregate_csv(&runs)).map_err(CliError::io(&agg))?;
    if failed.is_empty() {
        manifest.finish(RunStatus::Completed);
        manifest.write(&dir.manifest())?;
        return Ok(runs);
    }
    let seeds: Vec<u64> = failed.iter().map(|(s, _)| *s).collect();
    let first = failed.swap_remove(0).1;
    manifest.finish(RunStatus::Failed { seeds: seeds.clone(), error: first.to_string() });
    manifest.write(&dir.manifest())?;
    Err(CliError::Sweep { seeds, first: Box::new(first) })
}
