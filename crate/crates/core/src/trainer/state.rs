//! Run-state checkpoints: everything needed to continue a run bitwise.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::run::{Counters, MetricsRow, Trainer, Window};
use crate::envs::EnvConfig;
use crate::error::{Error, NnError, Result};
use crate::nn::checkpoint::{read_sections, restore_params, CheckpointWriter, Section};
use crate::nn::{OptimizerState, ParamSet, Rng, RngState, Tensor};
use crate::replay::{EpisodeRecord, ReplayMemory};

#[derive(Serialize, Deserialize)]
struct RunMeta {
    config: TrainConfig,
    counters: Counters,
    window: Window,
    rows: Vec<MetricsRow>,
    act_rng: RngState,
    sample_rng: RngState,
    optimizer_steps: Vec<u64>,
    replay_capacity: usize,
    replay_inserted: u64,
}

fn corrupt(msg: impl Into<String>) -> Error {
    NnError::Checkpoint(msg.into()).into()
}

fn write_optimizer<W: Write>(w: &mut CheckpointWriter<W>, module: &str, opt: &OptimizerState) -> Result<()> {
    let names: Vec<String> = (0..opt.first.len()).flat_map(|k| [format!("m{k}"), format!("v{k}")]).collect();
    let entries: Vec<(&str, &Tensor)> = names
        .iter()
        .map(String::as_str)
        .zip(opt.first.iter().zip(&opt.second).flat_map(|(m, v)| [m, v]))
        .collect();
    Ok(w.write_tensors(module, &entries)?)
}

fn read_optimizer(section: &Section, module: &str, opt: &mut OptimizerState) -> Result<()> {
    let Section::Tensors { module: m, entries } = section else {
        return Err(corrupt(format!("expected tensor section {module}")));
    };
    if m != module || entries.len() != 2 * opt.first.len() {
        return Err(corrupt(format!("optimizer table mismatch for {module}")));
    }
    for (k, pair) in entries.chunks_exact(2).enumerate() {
        let (m, v) = (&pair[0].1, &pair[1].1);
        if m.shape() != opt.first[k].shape() || v.shape() != opt.second[k].shape() {
            return Err(corrupt(format!("optimizer shape mismatch for {module} tensor {k}")));
        }
        opt.first[k] = m.clone();
        opt.second[k] = v.clone();
    }
    Ok(())
}

/// Replay episodes flattened into six tensors; integers and flags are
/// exact in f32 at these sizes.
fn write_replay<W: Write>(w: &mut CheckpointWriter<W>, replay: &ReplayMemory) -> Result<()> {
    let (mut lens, mut obs, mut states, mut actions, mut rewards, mut terminal) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for e in replay.episodes() {
        let (o, s, a, r, t) = e.raw();
        lens.push(e.len() as f32);
        obs.extend_from_slice(o);
        states.extend_from_slice(s);
        actions.extend(a.iter().map(|&x| x as f32));
        rewards.extend_from_slice(r);
        terminal.extend(t.iter().map(|&x| x as u8 as f32));
    }
    let v = |d: Vec<f32>| Tensor::vector(d);
    let tensors = [v(lens), v(obs), v(states), v(actions), v(rewards), v(terminal)];
    let names = ["lengths", "obs", "states", "actions", "rewards", "terminal"];
    let entries: Vec<(&str, &Tensor)> = names.into_iter().zip(tensors.iter()).collect();
    Ok(w.write_tensors("replay", &entries)?)
}

fn read_replay(section: &Section, trainer: &Trainer, capacity: usize, inserted: u64) -> Result<ReplayMemory> {
    let Section::Tensors { module, entries } = section else {
        return Err(corrupt("expected replay tensors"));
    };
    if module != "replay" || entries.len() != 6 {
        return Err(corrupt("replay table mismatch"));
    }
    let get = |k: usize| entries[k].1.data();
    let spec = trainer.spec;
    let (n, od, sd) = (spec.n_agents, spec.obs_dim, spec.state_dim);
    let (mut o, mut s, mut a, mut r) = (0, 0, 0, 0);
    let mut episodes = Vec::with_capacity(get(0).len());
    for &len in get(0) {
        let t = len as usize;
        let take = |data: &[f32], at: &mut usize, count: usize| -> Result<Vec<f32>> {
            let out = data.get(*at..*at + count).ok_or_else(|| corrupt("replay buffers truncated"))?.to_vec();
            *at += count;
            Ok(out)
        };
        let obs = take(get(1), &mut o, (t + 1) * n * od)?;
        let states = take(get(2), &mut s, (t + 1) * sd)?;
        let actions = take(get(3), &mut a, t * n)?.into_iter().map(|x| x as usize).collect();
        let mut rr = r;
        let rewards = take(get(4), &mut rr, t)?;
        let terminal = take(get(5), &mut r, t)?.into_iter().map(|x| x != 0.0).collect();
        episodes.push(EpisodeRecord::from_raw(&spec, obs, states, actions, rewards, terminal)?);
    }
    if episodes.len() > capacity {
        return Err(corrupt("replay holds more episodes than its capacity"));
    }
    Ok(ReplayMemory::restore(capacity, episodes, inserted))
}

fn restore_set(sections: &mut impl Iterator<Item = Section>, module: &str, params: &mut ParamSet) -> Result<()> {
    let s = sections.next().ok_or_else(|| corrupt(format!("missing section {module}")))?;
    Ok(restore_params(&s, module, params)?)
}

fn restore_opt(sections: &mut impl Iterator<Item = Section>, module: &str, opt: &mut OptimizerState) -> Result<()> {
    let s = sections.next().ok_or_else(|| corrupt(format!("missing section {module}")))?;
    read_optimizer(&s, module, opt)
}

impl Trainer {
    /// Writes the full run state. Taken between episodes, a restored run
    /// continues exactly as the original would have.
    pub fn save(&self, out: impl Write) -> Result<()> {
        let mut optimizer_steps = vec![self.theta_opt.step];
        if let Some((_, o)) = &self.omega {
            optimizer_steps.push(o.step);
        }
        if let Some(b) = &self.bonus {
            optimizer_steps.push(b.optimizer().step);
        }
        let meta = RunMeta {
            config: self.config.clone(),
            counters: self.counters.clone(),
            window: self.window.clone(),
            rows: self.rows.clone(),
            act_rng: self.act_rng.state(),
            sample_rng: self.sample_rng.state(),
            optimizer_steps,
            replay_capacity: self.replay.capacity(),
            replay_inserted: self.replay.inserted(),
        };
        let json = serde_json::to_vec(&meta).map_err(|e| corrupt(e.to_string()))?;
        let mut w = CheckpointWriter::new(out);
        w.write_json("run", &json)?;
        w.write_params("goal", &self.theta.params)?;
        w.write_params("target", &self.target.params)?;
        write_optimizer(&mut w, "goal_opt", &self.theta_opt)?;
        if let Some((q, o)) = &self.omega {
            w.write_params("exploration", &q.params)?;
            write_optimizer(&mut w, "exploration_opt", o)?;
        }
        if let Some(b) = &self.bonus {
            w.write_params("bonus", b.params())?;
            write_optimizer(&mut w, "bonus_opt", b.optimizer())?;
            if let Some(f) = b.frozen_params() {
                w.write_params("bonus_frozen", f)?;
            }
        }
        write_replay(&mut w, &self.replay)?;
        w.into_inner().flush()?;
        Ok(())
    }

    /// Reads only the configuration stored in a checkpoint.
    pub fn checkpoint_config(input: impl BufRead) -> Result<TrainConfig> {
        let sections = read_sections(input)?;
        Ok(Self::meta(sections.first())?.config)
    }

    fn meta(first: Option<&Section>) -> Result<RunMeta> {
        match first {
            Some(Section::Json { name, bytes }) if name == "run" => {
                serde_json::from_slice(bytes).map_err(|e| corrupt(format!("run metadata: {e}")))
            }
            _ => Err(corrupt("checkpoint does not start with run metadata")),
        }
    }

    /// Rebuilds a trainer from [`Trainer::save`] output. `env` must describe
    /// the environment the run was started with.
    pub fn load(input: impl BufRead, env: EnvConfig) -> Result<Trainer> {
        let sections = read_sections(input)?;
        let meta = Self::meta(sections.first())?;
        let mut t = Trainer::new(meta.config, env)?;
        let mut it = sections.into_iter().skip(1);
        let mut steps = meta.optimizer_steps.iter().copied();
        let mut next_step = || steps.next().ok_or_else(|| corrupt("optimizer step counters missing"));
        restore_set(&mut it, "goal", &mut t.theta.params)?;
        restore_set(&mut it, "target", &mut t.target.params)?;
        restore_opt(&mut it, "goal_opt", &mut t.theta_opt)?;
        t.theta_opt.step = next_step()?;
        if let Some((q, o)) = t.omega.as_mut() {
            restore_set(&mut it, "exploration", &mut q.params)?;
            restore_opt(&mut it, "exploration_opt", o)?;
            o.step = next_step()?;
        }
        if let Some(b) = t.bonus.as_mut() {
            restore_set(&mut it, "bonus", b.params_mut())?;
            restore_opt(&mut it, "bonus_opt", b.optimizer_mut())?;
            b.optimizer_mut().step = next_step()?;
            if let Some(f) = b.frozen_params_mut() {
                restore_set(&mut it, "bonus_frozen", f)?;
            }
        }
        let replay = it.next().ok_or_else(|| corrupt("missing replay section"))?;
        t.replay = read_replay(&replay, &t, meta.replay_capacity, meta.replay_inserted)?;
        if it.next().is_some() {
            return Err(corrupt("unexpected trailing sections"));
        }
        let rng = |s: &RngState| Rng::from_state(s).ok_or_else(|| corrupt("bad random stream state"));
        t.act_rng = rng(&meta.act_rng)?;
        t.sample_rng = rng(&meta.sample_rng)?;
        t.counters = meta.counters;
        t.window = meta.window;
        t.rows = meta.rows;
        Ok(t)
    }
}
