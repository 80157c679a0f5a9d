use serde::{Deserialize, Serialize};

use super::agent::AgentNet;
use super::mixer::{Mixer, MixerKind};
use crate::envs::EnvSpec;
use crate::error::{Error, NnError, Result};
use crate::nn::{Bound, ParamSet, Rng, Tape, Tensor, Var};
use crate::replay::MiniBatch;

/// Which of the three joint action-value functions an instance plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Goal,
    Target,
    Exploration,
}

impl Role {
    pub fn tag(self) -> &'static str {
        match self {
            Role::Goal => "goal",
            Role::Target => "target",
            Role::Exploration => "exploration",
        }
    }
}

/// Shared recurrent agent network plus a mixer, with all parameters in one set.
#[derive(Clone, Debug)]
pub struct JointQFunction {
    pub role: Role,
    pub params: ParamSet,
    pub agent: AgentNet,
    pub mixer: Mixer,
    pub spec: EnvSpec,
}

impl JointQFunction {
    pub fn new(role: Role, spec: &EnvSpec, mixer: MixerKind, hidden: usize, embed: usize, rng: &mut Rng) -> Self {
        let mut params = ParamSet::default();
        let agent = AgentNet::new(&mut params, spec, hidden, rng);
        let mixer = Mixer::new(mixer, &mut params, spec.n_agents, spec.state_dim, embed, rng);
        JointQFunction { role, params, agent, mixer, spec: *spec }
    }

    /// A bitwise copy playing another role (used to create `θ⁻` from `θ`).
    pub fn clone_as(&self, role: Role) -> Self {
        JointQFunction { role, ..self.clone() }
    }

    /// Makes this function a bitwise copy of `source`'s parameters.
    pub fn sync_from(&mut self, source: &JointQFunction) -> Result<()> {
        Ok(self.params.copy_from(&source.params)?)
    }

    pub fn initial_hidden(&self) -> Tensor {
        Tensor::zeros(&[self.spec.n_agents, self.agent.hidden])
    }

    /// One decentralized step for all agents: returns Q-values `[N x A]`
    /// and the next hidden states `[N x d]`.
    pub fn agent_q_step(
        &self,
        observations: &[Vec<f32>],
        last_actions: &[Option<usize>],
        hidden: &Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let n = self.spec.n_agents;
        if observations.len() != n || last_actions.len() != n {
            return Err(NnError::dim("agent count", n, observations.len().max(last_actions.len())).into());
        }
        let width = self.agent.input_dim();
        let mut data = vec![0.0f32; n * width];
        for i in 0..n {
            if observations[i].len() != self.spec.obs_dim {
                return Err(NnError::dim("observation", self.spec.obs_dim, observations[i].len()).into());
            }
            if let Some(a) = last_actions[i] {
                if a >= self.spec.n_actions {
                    return Err(NnError::dim("last action", format!("< {}", self.spec.n_actions), a).into());
                }
            }
            self.agent.write_input(&mut data[i * width..(i + 1) * width], &observations[i], last_actions[i], i);
        }
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let x = tape.constant(Tensor::matrix(n, width, data)?);
        let h = tape.constant(hidden.clone());
        let (q, h) = self.agent.step(&mut tape, &p, x, h)?;
        Ok((tape.value(q).clone(), tape.value(h).clone()))
    }

    pub fn greedy_joint_action(
        &self,
        observations: &[Vec<f32>],
        last_actions: &[Option<usize>],
        hidden: &Tensor,
    ) -> Result<(Vec<usize>, Tensor)> {
        let (q, h) = self.agent_q_step(observations, last_actions, hidden)?;
        Ok((greedy_actions(&q), h))
    }

    pub fn epsilon_greedy_joint_action(
        &self,
        observations: &[Vec<f32>],
        last_actions: &[Option<usize>],
        hidden: &Tensor,
        epsilon: f32,
        rng: &mut Rng,
    ) -> Result<(Vec<usize>, Tensor)> {
        let (q, h) = self.agent_q_step(observations, last_actions, hidden)?;
        Ok((epsilon_greedy_actions(&q, epsilon, rng), h))
    }

    /// Mixes per-agent values picked by `actions` from `qs: [R*N x A]`
    /// using `states: [R x state_dim]`. Returns `[R x 1]`.
    pub fn mix_chosen(&self, tape: &mut Tape<'_>, p: &Bound, qs: Var, actions: &[usize], states: &[f32]) -> Result<Var> {
        let n = self.spec.n_agents;
        let picked = tape.gather(qs, actions)?;
        let rows = actions.len() / n;
        let picked = tape.reshape(picked, &[rows, n])?;
        let s = match self.mixer {
            Mixer::Vdn { .. } => None,
            Mixer::Qmix(_) => Some(tape.constant(Tensor::matrix(rows, self.spec.state_dim, states.to_vec())?)),
        };
        self.mixer.forward(tape, p, picked, s)
    }

    /// Per-agent Q-values over steps `0..steps` of a batch as a plain tensor.
    pub fn batch_q_values(&self, batch: &MiniBatch, steps: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let q = self.agent.unroll(&mut tape, &p, batch, steps)?;
        Ok(tape.value(q).clone())
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Per-agent argmax over `q: [N x A]`.
pub fn greedy_actions(q: &Tensor) -> Vec<usize> {
    (0..q.rows()).map(|i| argmax(q.row(i))).collect()
}

/// Each agent independently acts uniformly at random with probability
/// `epsilon`, otherwise greedily. One uniform draw per agent, plus one
/// action draw for agents that explore.
pub fn epsilon_greedy_actions(q: &Tensor, epsilon: f32, rng: &mut Rng) -> Vec<usize> {
    let n_actions = q.cols();
    (0..q.rows())
        .map(|i| {
            if rng.uniform() < epsilon {
                rng.below(n_actions)
            } else {
                argmax(q.row(i))
            }
        })
        .collect()
}

fn check_rewards(batch: &MiniBatch, rewards: &[f32]) -> Result<()> {
    if rewards.len() != batch.rewards.len() {
        return Err(NnError::dim("rewards", batch.rewards.len(), rewards.len()).into());
    }
    if batch.valid_steps() == 0.0 {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

fn bootstrap(batch: &MiniBatch, rewards: &[f32], gamma: f32, next: &[f32]) -> Vec<f32> {
    rewards
        .iter()
        .zip(&batch.terminal)
        .zip(next)
        .map(|((&r, &term), &v)| r + gamma * (1.0 - term) * v)
        .collect()
}

/// `θ⁻`'s per-agent values at steps `1..=T` of one batch. Both targets of a
/// gradient phase read them, so the unroll runs once.
pub struct TargetValues<'a> {
    target: &'a JointQFunction,
    batch: &'a MiniBatch,
    next: Tensor,
}

impl<'a> TargetValues<'a> {
    pub fn new(target: &'a JointQFunction, batch: &'a MiniBatch) -> Result<Self> {
        if batch.valid_steps() == 0.0 {
            return Err(Error::EmptyBatch);
        }
        let rows = batch.batch * batch.n_agents;
        let all = target.batch_q_values(batch, batch.max_len + 1)?;
        let next = Tensor::new(&[batch.max_len * rows, all.cols()], all.data()[rows * all.cols()..].to_vec())?;
        Ok(TargetValues { target, batch, next })
    }

    pub fn batch(&self) -> &'a MiniBatch {
        self.batch
    }

    /// `Q_tot(τ', û'; θ⁻)` where `û'` is the per-agent argmax of `chooser`.
    fn mixed(&self, chooser: &Tensor) -> Result<Vec<f32>> {
        if chooser.rows() != self.next.rows() {
            return Err(NnError::dim("selector rows", self.next.rows(), chooser.rows()).into());
        }
        let actions: Vec<usize> = (0..chooser.rows()).map(|r| argmax(chooser.row(r))).collect();
        let mut tape = Tape::new();
        let p = tape.bind(&self.target.params);
        let qs = tape.constant_ref(&self.next);
        let v = self.target.mix_chosen(&mut tape, &p, qs, &actions, self.batch.states_range(1, self.batch.max_len))?;
        Ok(tape.value(v).data().to_vec())
    }

    /// Goal target `y = r + γ·Q_tot(τ', argmax θ⁻; θ⁻)`, cut at terminals.
    pub fn goal(&self, rewards: &[f32], gamma: f32) -> Result<Vec<f32>> {
        check_rewards(self.batch, rewards)?;
        Ok(bootstrap(self.batch, rewards, gamma, &self.mixed(&self.next)?))
    }

    /// Decoupled target: next actions are the per-agent argmax of
    /// `selector` (next-step values `[T*B*N x A]`), evaluated by `θ⁻`.
    pub fn decoupled(&self, selector: &Tensor, rewards: &[f32], gamma: f32) -> Result<Vec<f32>> {
        check_rewards(self.batch, rewards)?;
        Ok(bootstrap(self.batch, rewards, gamma, &self.mixed(selector)?))
    }
}

/// Goal target `y = r + γ·Q_tot(τ', argmax θ⁻; θ⁻)`, masked at terminals.
pub fn goal_td_target(target: &JointQFunction, batch: &MiniBatch, rewards: &[f32], gamma: f32) -> Result<Vec<f32>> {
    check_rewards(batch, rewards)?;
    TargetValues::new(target, batch)?.goal(rewards, gamma)
}

/// Decoupled target: next actions chosen by `ω`, evaluated by `θ⁻`.
pub fn exp_td_target(
    omega: &JointQFunction,
    target: &JointQFunction,
    batch: &MiniBatch,
    rewards: &[f32],
    gamma: f32,
) -> Result<Vec<f32>> {
    check_rewards(batch, rewards)?;
    let rows = batch.batch * batch.n_agents;
    let q = omega.batch_q_values(batch, batch.max_len + 1)?;
    let sel = Tensor::new(&[batch.max_len * rows, q.cols()], q.data()[rows * q.cols()..].to_vec())?;
    TargetValues::new(target, batch)?.decoupled(&sel, rewards, gamma)
}

/// Records the masked mean squared TD error of `online` against the
/// constant targets `y` on `tape`. Returns `(loss, Q_tot at chosen actions)`.
pub fn td_loss_on<'a>(
    tape: &mut Tape<'a>,
    p: &Bound,
    online: &JointQFunction,
    batch: &MiniBatch,
    y: &[f32],
) -> Result<(Var, Var)> {
    let t_len = batch.max_len;
    let qs = online.agent.unroll(tape, p, batch, t_len)?;
    let q_tot = online.mix_chosen(tape, p, qs, &batch.actions, batch.states_range(0, t_len))?;
    let target = Tensor::matrix(y.len(), 1, y.to_vec())?;
    let sq = tape.row_sq_err(q_tot, &target)?;
    let loss = tape.weighted_sum(sq, &batch.mask, batch.valid_steps())?;
    Ok((loss, q_tot))
}

/// Loss value, its gradients for the trained function's parameters, and
/// the masked mean of `Q_tot` at the chosen actions.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub loss: f32,
    pub q_taken_mean: f32,
    pub grads: Vec<Tensor>,
}

fn masked_mean(values: &[f32], mask: &[f32]) -> f32 {
    let (s, n) = values
        .iter()
        .zip(mask)
        .fold((0.0f64, 0.0f64), |(s, n), (&v, &m)| (s + v as f64 * m as f64, n + m as f64));
    (s / n) as f32
}

fn td_loss(online: &JointQFunction, batch: &MiniBatch, y: &[f32]) -> Result<LossOutput> {
    let mut tape = Tape::new();
    let p = tape.bind(&online.params);
    let (loss, q_tot) = td_loss_on(&mut tape, &p, online, batch, y)?;
    let grads = tape.backward(loss)?.for_bound(&p);
    Ok(LossOutput {
        loss: tape.value(loss).item(),
        q_taken_mean: masked_mean(tape.value(q_tot).data(), &batch.mask),
        grads,
    })
}

/// Squared TD error of `θ` against the `θ⁻` max target, averaged over
/// valid steps. `rewards` are per `(t, b)` (extrinsic, or mixed without
/// the exploration function).
pub fn goal_td_loss(
    theta: &JointQFunction,
    target: &JointQFunction,
    batch: &MiniBatch,
    rewards: &[f32],
    gamma: f32,
) -> Result<LossOutput> {
    goal_td_loss_with(theta, &TargetValues::new(target, batch)?, rewards, gamma)
}

pub fn goal_td_loss_with(theta: &JointQFunction, tv: &TargetValues<'_>, rewards: &[f32], gamma: f32) -> Result<LossOutput> {
    let y = tv.goal(rewards, gamma)?;
    td_loss(theta, tv.batch(), &y)
}

/// Squared TD error of `ω` against the decoupled target with mixed rewards.
pub fn exp_td_loss(
    omega: &JointQFunction,
    target: &JointQFunction,
    batch: &MiniBatch,
    mixed_rewards: &[f32],
    gamma: f32,
) -> Result<LossOutput> {
    exp_td_loss_with(omega, &TargetValues::new(target, batch)?, mixed_rewards, gamma)
}

/// As [`exp_td_loss`]. `ω` is unrolled once over `T + 1` steps: the last
/// `T` steps select the next actions, the first `T` carry the loss.
pub fn exp_td_loss_with(
    omega: &JointQFunction,
    tv: &TargetValues<'_>,
    mixed_rewards: &[f32],
    gamma: f32,
) -> Result<LossOutput> {
    let batch = tv.batch();
    check_rewards(batch, mixed_rewards)?;
    let (t_len, rows) = (batch.max_len, batch.batch * batch.n_agents);
    let mut tape = Tape::new();
    let p = tape.bind(&omega.params);
    let all = omega.agent.unroll(&mut tape, &p, batch, t_len + 1)?;
    let sel = {
        let v = tape.value(all);
        Tensor::new(&[t_len * rows, v.cols()], v.data()[rows * v.cols()..].to_vec())?
    };
    let y = tv.decoupled(&sel, mixed_rewards, gamma)?;
    let qs = tape.slice_rows(all, 0, t_len * rows)?;
    let q_tot = omega.mix_chosen(&mut tape, &p, qs, &batch.actions, batch.states_range(0, t_len))?;
    let target = Tensor::matrix(y.len(), 1, y)?;
    let sq = tape.row_sq_err(q_tot, &target)?;
    let loss = tape.weighted_sum(sq, &batch.mask, batch.valid_steps())?;
    let grads = tape.backward(loss)?.for_bound(&p);
    Ok(LossOutput {
        loss: tape.value(loss).item(),
        q_taken_mean: masked_mean(tape.value(q_tot).data(), &batch.mask),
        grads,
    })
}
