use serde::{Deserialize, Serialize};

use super::config::{epsilon_at, TrainConfig};
use super::eval::{evaluate, EvalResult};
use crate::envs::{EnvConfig, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::exploration::{mixed_reward, BonusModule};
use crate::marl::{exp_td_loss_with, td_loss_on, JointQFunction, LossOutput, Role, TargetValues};
use crate::nn::{OptimizerState, Rng, Tape, Tensor};
use crate::replay::{EpisodeRecord, MiniBatch, ReplayMemory};

const INIT_STREAM: u64 = 1;
const ACT_STREAM: u64 = 2;
const SAMPLE_STREAM: u64 = 3;

/// One logged evaluation point. Training statistics are means over the
/// gradient phases since the previous row and are `None` when no phase
/// ran or the quantity does not exist for the algorithm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub episodes: u64,
    pub train_loss_goal: Option<f64>,
    pub train_loss_exp: Option<f64>,
    pub mean_r_int: Option<f64>,
    pub epsilon: f64,
    pub eval_return_mean: f64,
    pub eval_episode_length_mean: f64,
    pub eval_win_or_solve_rate: f64,
    /// Batch mean of the goal function's `Q_tot` at the taken actions.
    pub q_goal_mean: Option<f64>,
    /// The same for the exploration function.
    pub q_exp_mean: Option<f64>,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 11] = [
        "env_steps",
        "episodes",
        "train_loss_goal",
        "train_loss_exp",
        "mean_r_int",
        "epsilon",
        "eval_return_mean",
        "eval_episode_length_mean",
        "eval_win_or_solve_rate",
        "q_goal_mean",
        "q_exp_mean",
    ];

    /// Values in [`MetricsRow::COLUMNS`] order.
    pub fn values(&self) -> [Option<f64>; 11] {
        [
            Some(self.env_steps as f64),
            Some(self.episodes as f64),
            self.train_loss_goal,
            self.train_loss_exp,
            self.mean_r_int,
            Some(self.epsilon),
            Some(self.eval_return_mean),
            Some(self.eval_episode_length_mean),
            Some(self.eval_win_or_solve_rate),
            self.q_goal_mean,
            self.q_exp_mean,
        ]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Mean {
    sum: f64,
    count: u64,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn get(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// Running sums between two metrics rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Window {
    goal: Mean,
    exp: Mean,
    r_int: Mean,
    q_goal: Mean,
    q_exp: Mean,
}

/// Counters that advance with collection and training.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub env_steps: u64,
    pub episodes: u64,
    pub gradient_phases: u64,
    pub next_eval: u64,
}

/// Summary of one gradient phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseStats {
    pub loss_goal: f32,
    pub q_goal: f32,
    pub loss_exp: Option<f32>,
    pub q_exp: Option<f32>,
    /// Masked mean of the pre-update bonus over the batch.
    pub r_int_mean: Option<f32>,
}

/// Goal-loss gradients read from one tape on which the goal, exploration
/// and bonus parameters are all bound.
#[derive(Clone, Debug)]
pub struct GoalGradients {
    pub loss: f32,
    pub q_taken_mean: f32,
    pub theta: Vec<Tensor>,
    pub omega: Option<Vec<Tensor>>,
    pub psi: Option<Vec<Tensor>>,
}

/// The whole learner: goal function θ and its target θ⁻, the optional
/// exploration function ω, the optional bonus module ψ, replay, random
/// streams and counters.
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) env_config: EnvConfig,
    env: Box<dyn Environment + Send>,
    eval_env: Box<dyn Environment + Send>,
    pub(crate) spec: EnvSpec,
    pub(crate) theta: JointQFunction,
    pub(crate) target: JointQFunction,
    pub(crate) theta_opt: OptimizerState,
    pub(crate) omega: Option<(JointQFunction, OptimizerState)>,
    pub(crate) bonus: Option<BonusModule>,
    pub(crate) replay: ReplayMemory,
    pub(crate) act_rng: Rng,
    pub(crate) sample_rng: Rng,
    pub(crate) counters: Counters,
    pub(crate) window: Window,
    pub(crate) rows: Vec<MetricsRow>,
}

fn finite(what: &str, v: f32, counters: &Counters) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} = {v} at env step {} (episode {}, gradient phase {})",
            counters.env_steps, counters.episodes, counters.gradient_phases
        )))
    }
}

fn check_grads(what: &str, grads: &[Tensor], counters: &Counters) -> Result<()> {
    if grads.iter().all(Tensor::is_finite) {
        Ok(())
    } else {
        finite(what, f32::NAN, counters)
    }
}

fn masked_mean(values: &[f32], mask: &[f32]) -> f32 {
    let (s, n) = values
        .iter()
        .zip(mask)
        .fold((0.0f64, 0.0f64), |(s, n), (&v, &m)| (s + v as f64 * m as f64, n + m as f64));
    (s / n) as f32
}

impl Trainer {
    pub fn new(config: TrainConfig, env_config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let env = env_config.build()?;
        let eval_env = env_config.build()?;
        let spec = env.spec();
        let root = Rng::new(config.seed);
        let mut init = root.fork(INIT_STREAM);
        let theta = JointQFunction::new(Role::Goal, &spec, config.mixer, config.hidden, config.mixer_embed, &mut init);
        let target = theta.clone_as(Role::Target);
        let theta_opt = OptimizerState::new(config.optimizer, &theta.params);
        let omega = config.exploration_q().then(|| {
            let q = JointQFunction::new(Role::Exploration, &spec, config.mixer, config.hidden, config.mixer_embed, &mut init);
            let opt = OptimizerState::new(config.optimizer, &q.params);
            (q, opt)
        });
        let bonus = BonusModule::new(config.bonus, &spec, &config.bonus_config(), config.optimizer, &mut init);
        Ok(Trainer {
            replay: ReplayMemory::new(config.buffer_capacity),
            act_rng: root.fork(ACT_STREAM),
            sample_rng: root.fork(SAMPLE_STREAM),
            counters: Counters { next_eval: config.eval_interval, ..Counters::default() },
            window: Window::default(),
            rows: Vec::new(),
            config,
            env_config,
            env,
            eval_env,
            spec,
            theta,
            target,
            theta_opt,
            omega,
            bonus,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env_config
    }

    pub fn spec(&self) -> EnvSpec {
        self.spec
    }

    pub fn goal(&self) -> &JointQFunction {
        &self.theta
    }

    pub fn target(&self) -> &JointQFunction {
        &self.target
    }

    pub fn exploration(&self) -> Option<&JointQFunction> {
        self.omega.as_ref().map(|(q, _)| q)
    }

    pub fn bonus(&self) -> Option<&BonusModule> {
        self.bonus.as_ref()
    }

    pub fn replay(&self) -> &ReplayMemory {
        &self.replay
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    /// Changes the step budget. The budget does not enter the dynamics, so
    /// a run extended this way matches one started with the larger budget.
    pub fn set_total_env_steps(&mut self, total: u64) -> Result<()> {
        if total == 0 {
            return Err(Error::Config("total_env_steps must be positive".into()));
        }
        self.config.total_env_steps = total;
        Ok(())
    }

    pub fn is_done(&self) -> bool {
        self.counters.env_steps >= self.config.total_env_steps
    }

    /// Fingerprint of every parameter and optimizer tensor.
    pub fn fingerprint(&self) -> u64 {
        let mut sets = vec![self.theta.params.fingerprint(), self.target.params.fingerprint()];
        if let Some((q, _)) = &self.omega {
            sets.push(q.params.fingerprint());
        }
        if let Some(b) = &self.bonus {
            sets.push(b.params().fingerprint());
            if let Some(f) = b.frozen_params() {
                sets.push(f.fingerprint());
            }
        }
        sets.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &v| (h ^ v).wrapping_mul(0x0100_0000_01b3))
    }

    /// Plays one episode with the behaviour policy (ε-greedy over ω, or over
    /// θ without an exploration function) and stores it.
    pub fn collect_episode(&mut self) -> Result<EpisodeRecord> {
        let n = self.spec.n_agents;
        let behaviour = match &self.omega {
            Some((q, _)) => q,
            None => &self.theta,
        };
        let mut step = self.env.reset(&mut self.act_rng);
        let mut record = EpisodeRecord::start(&self.spec, &step.observations, &step.state)?;
        let mut hidden = behaviour.initial_hidden();
        let mut last: Vec<Option<usize>> = vec![None; n];
        while !step.terminal {
            let eps = epsilon_at(&self.config, self.counters.env_steps);
            let (actions, h) =
                behaviour.epsilon_greedy_joint_action(&step.observations, &last, &hidden, eps, &mut self.act_rng)?;
            step = self.env.step(&actions)?;
            record.push_step(&actions, step.reward, &step.observations, &step.state, step.terminal)?;
            self.counters.env_steps += 1;
            hidden = h;
            last = actions.into_iter().map(Some).collect();
        }
        self.replay.push_episode(record.clone())?;
        self.counters.episodes += 1;
        Ok(record)
    }

    /// Rewards for the goal loss: extrinsic when an exploration function
    /// exists, otherwise mixed with the bonus (if any).
    pub fn goal_rewards(&self, batch: &MiniBatch, r_int: Option<&[f32]>) -> Vec<f32> {
        match (&self.omega, r_int) {
            (None, Some(r)) => self.mix(batch, r),
            _ => batch.rewards.clone(),
        }
    }

    fn mix(&self, batch: &MiniBatch, r_int: &[f32]) -> Vec<f32> {
        batch.rewards.iter().zip(r_int).map(|(&e, &i)| mixed_reward(e, i, self.config.beta)).collect()
    }

    /// Gradients of the goal TD loss on `batch` with the given rewards.
    pub fn goal_gradients(&self, tv: &TargetValues<'_>, rewards: &[f32]) -> Result<GoalGradients> {
        let batch = tv.batch();
        let y = tv.goal(rewards, self.config.gamma)?;
        let mut tape = Tape::new();
        let p_theta = tape.bind(&self.theta.params);
        let p_omega = self.omega.as_ref().map(|(q, _)| tape.bind(&q.params));
        let p_psi = self.bonus.as_ref().map(|b| tape.bind(b.params()));
        let (loss, q_tot) = td_loss_on(&mut tape, &p_theta, &self.theta, batch, &y)?;
        let grads = tape.backward(loss)?;
        Ok(GoalGradients {
            loss: tape.value(loss).item(),
            q_taken_mean: masked_mean(tape.value(q_tot).data(), &batch.mask),
            theta: grads.for_bound(&p_theta),
            omega: p_omega.map(|p| grads.for_bound(&p)),
            psi: p_psi.map(|p| grads.for_bound(&p)),
        })
    }

    fn goal_step(&mut self, tv: &TargetValues<'_>, rewards: &[f32]) -> Result<GoalGradients> {
        let g = self.goal_gradients(tv, rewards)?;
        finite("goal loss", g.loss, &self.counters)?;
        check_grads("goal gradient", &g.theta, &self.counters)?;
        self.theta_opt.clipped_step(&mut self.theta.params, g.theta.clone(), self.config.alpha)?;
        Ok(g)
    }

    fn bonus_step(&mut self, batch: &MiniBatch) -> Result<Option<Vec<f32>>> {
        let Some(bonus) = self.bonus.as_mut() else {
            return Ok(None);
        };
        let update = bonus.update(batch, self.config.alpha)?;
        finite("bonus loss", update.loss, &self.counters)?;
        if !bonus.params().is_finite() {
            finite("bonus parameters", f32::NAN, &self.counters)?;
        }
        Ok(Some(update.r_int))
    }

    fn exp_step(&mut self, tv: &TargetValues<'_>, rewards: &[f32]) -> Result<Option<LossOutput>> {
        let Some((omega, opt)) = self.omega.as_mut() else {
            return Ok(None);
        };
        let out = exp_td_loss_with(omega, tv, rewards, self.config.gamma)?;
        finite("exploration loss", out.loss, &self.counters)?;
        check_grads("exploration gradient", &out.grads, &self.counters)?;
        opt.clipped_step(&mut omega.params, out.grads.clone(), self.config.alpha)?;
        Ok(Some(out))
    }

    /// One gradient phase on `batch`. With an exploration function the
    /// order is: goal update on extrinsic rewards, bonus computation and
    /// update, exploration update on mixed rewards. Without one, the bonus
    /// comes first and the goal function takes the mixed reward.
    pub fn train_on(&mut self, batch: &MiniBatch) -> Result<PhaseStats> {
        let target = self.target.clone();
        let tv = TargetValues::new(&target, batch)?;
        let (goal, r_int, exp) = if self.omega.is_some() {
            let goal = self.goal_step(&tv, &batch.rewards)?;
            let r_int = self.bonus_step(batch)?;
            let mixed = match &r_int {
                Some(r) => self.mix(batch, r),
                None => batch.rewards.clone(),
            };
            let exp = self.exp_step(&tv, &mixed)?;
            (goal, r_int, exp)
        } else {
            let r_int = self.bonus_step(batch)?;
            let rewards = self.goal_rewards(batch, r_int.as_deref());
            let goal = self.goal_step(&tv, &rewards)?;
            (goal, r_int, None)
        };
        self.counters.gradient_phases += 1;
        let stats = PhaseStats {
            loss_goal: goal.loss,
            q_goal: goal.q_taken_mean,
            loss_exp: exp.as_ref().map(|e| e.loss),
            q_exp: exp.as_ref().map(|e| e.q_taken_mean),
            r_int_mean: r_int.as_ref().map(|r| masked_mean(r, &batch.mask)),
        };
        self.window.goal.add(stats.loss_goal as f64);
        self.window.q_goal.add(stats.q_goal as f64);
        if let (Some(l), Some(q)) = (stats.loss_exp, stats.q_exp) {
            self.window.exp.add(l as f64);
            self.window.q_exp.add(q as f64);
        }
        if let Some(r) = stats.r_int_mean {
            self.window.r_int.add(r as f64);
        }
        Ok(stats)
    }

    /// Greedy evaluation of the goal function on a separate environment
    /// instance.
    pub fn evaluate(&mut self) -> Result<EvalResult> {
        evaluate(&self.theta, self.eval_env.as_mut(), self.config.eval_episodes)
    }

    /// Collects one episode, runs the gradient phases, syncs the target and
    /// logs a row when an evaluation point was crossed.
    pub fn run_episode(&mut self) -> Result<()> {
        self.collect_episode()?;
        for _ in 0..self.config.train_interval {
            match self.replay.sample(self.config.batch_size, &mut self.sample_rng) {
                Some(batch) => {
                    self.train_on(&batch)?;
                }
                None => break,
            }
        }
        if self.counters.episodes % self.config.target_sync_interval == 0 {
            self.target.sync_from(&self.theta)?;
        }
        if self.counters.env_steps >= self.counters.next_eval {
            self.log_row()?;
            let k = self.config.eval_interval;
            self.counters.next_eval = (self.counters.env_steps / k + 1) * k;
        }
        Ok(())
    }

    fn log_row(&mut self) -> Result<()> {
        let e = self.evaluate()?;
        let w = std::mem::take(&mut self.window);
        self.rows.push(MetricsRow {
            env_steps: self.counters.env_steps,
            episodes: self.counters.episodes,
            train_loss_goal: w.goal.get(),
            train_loss_exp: w.exp.get(),
            mean_r_int: w.r_int.get(),
            epsilon: epsilon_at(&self.config, self.counters.env_steps) as f64,
            eval_return_mean: e.mean_return,
            eval_episode_length_mean: e.mean_length,
            eval_win_or_solve_rate: e.solve_rate,
            q_goal_mean: w.q_goal.get(),
            q_exp_mean: w.q_exp.get(),
        });
        Ok(())
    }

    /// Runs whole episodes until at least `env_steps` steps were taken or
    /// the budget is spent.
    pub fn run_until(&mut self, env_steps: u64) -> Result<()> {
        let stop = env_steps.min(self.config.total_env_steps);
        while self.counters.env_steps < stop {
            self.run_episode()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<&[MetricsRow]> {
        self.run_until(self.config.total_env_steps)?;
        Ok(&self.rows)
    }
}

/// Trains from scratch and returns the logged rows.
pub fn run_training(config: TrainConfig, env: EnvConfig) -> Result<Vec<MetricsRow>> {
    let mut t = Trainer::new(config, env)?;
    t.run()?;
    Ok(t.rows)
}
