//! Episode-granular replay memory and padded minibatches.
//!
//! Agent networks and the strangeness module are recurrent, so every
//! sample is a whole episode that is unrolled from its first step.

use std::collections::VecDeque;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::nn::Rng;

/// One environment step as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<Vec<f32>>,
    pub state: Vec<f32>,
    pub actions: Vec<usize>,
    pub r_ext: f32,
    pub next_obs: Vec<Vec<f32>>,
    pub next_state: Vec<f32>,
    pub terminal: bool,
}

/// A chained sequence of transitions, stored compactly: observations and
/// states for steps `0..=T`, actions/rewards/terminal flags for `0..T`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    obs: Vec<f32>,
    states: Vec<f32>,
    actions: Vec<usize>,
    rewards: Vec<f32>,
    terminal: Vec<bool>,
}

impl EpisodeRecord {
    /// Starts an episode from its initial joint observation and state.
    pub fn start(spec: &EnvSpec, obs: &[Vec<f32>], state: &[f32]) -> Result<Self> {
        let mut e = EpisodeRecord {
            n_agents: spec.n_agents,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            n_actions: spec.n_actions,
            obs: Vec::new(),
            states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminal: Vec::new(),
        };
        e.push_frame(obs, state)?;
        Ok(e)
    }

    fn push_frame(&mut self, obs: &[Vec<f32>], state: &[f32]) -> Result<()> {
        if obs.len() != self.n_agents || obs.iter().any(|o| o.len() != self.obs_dim) {
            return Err(Error::Episode(format!("joint observation must be {} x {}", self.n_agents, self.obs_dim)));
        }
        if state.len() != self.state_dim {
            return Err(Error::Episode(format!("state must have {} entries", self.state_dim)));
        }
        for o in obs {
            self.obs.extend_from_slice(o);
        }
        self.states.extend_from_slice(state);
        Ok(())
    }

    /// Appends the outcome of one joint action.
    pub fn push_step(
        &mut self,
        actions: &[usize],
        reward: f32,
        next_obs: &[Vec<f32>],
        next_state: &[f32],
        terminal: bool,
    ) -> Result<()> {
        if self.terminal.last() == Some(&true) {
            return Err(Error::Episode("only the final transition may be terminal".into()));
        }
        if actions.len() != self.n_agents || actions.iter().any(|&a| a >= self.n_actions) {
            return Err(Error::Episode(format!("invalid joint action {actions:?}")));
        }
        if !reward.is_finite() {
            return Err(Error::Episode("non-finite reward".into()));
        }
        self.push_frame(next_obs, next_state)?;
        self.actions.extend_from_slice(actions);
        self.rewards.push(reward);
        self.terminal.push(terminal);
        Ok(())
    }

    /// Builds a record from explicit transitions, rejecting broken chains.
    pub fn from_transitions(spec: &EnvSpec, transitions: &[Transition]) -> Result<Self> {
        let first = transitions.first().ok_or_else(|| Error::Episode("episode has no transitions".into()))?;
        let mut e = Self::start(spec, &first.obs, &first.state)?;
        for (t, tr) in transitions.iter().enumerate() {
            if t > 0 {
                let prev = &transitions[t - 1];
                if prev.next_obs != tr.obs || prev.next_state != tr.state {
                    return Err(Error::Episode(format!("transition {t} does not chain from transition {}", t - 1)));
                }
            }
            e.push_step(&tr.actions, tr.r_ext, &tr.next_obs, &tr.next_state, tr.terminal)?;
        }
        Ok(e)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Observation of `agent` at step `t` (`t <= len`).
    pub fn obs(&self, t: usize, agent: usize) -> &[f32] {
        let base = (t * self.n_agents + agent) * self.obs_dim;
        &self.obs[base..base + self.obs_dim]
    }

    pub fn state(&self, t: usize) -> &[f32] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn actions(&self, t: usize) -> &[usize] {
        &self.actions[t * self.n_agents..(t + 1) * self.n_agents]
    }

    pub fn reward(&self, t: usize) -> f32 {
        self.rewards[t]
    }

    pub fn terminal(&self, t: usize) -> bool {
        self.terminal[t]
    }

    pub fn episode_return(&self) -> f32 {
        self.rewards.iter().sum()
    }

    pub fn transition(&self, t: usize) -> Transition {
        let joint = |s: usize| (0..self.n_agents).map(|i| self.obs(s, i).to_vec()).collect();
        Transition {
            obs: joint(t),
            state: self.state(t).to_vec(),
            actions: self.actions(t).to_vec(),
            r_ext: self.rewards[t],
            next_obs: joint(t + 1),
            next_state: self.state(t + 1).to_vec(),
            terminal: self.terminal[t],
        }
    }

    pub fn transitions(&self) -> Vec<Transition> {
        (0..self.len()).map(|t| self.transition(t)).collect()
    }

    /// Raw storage, used by the run-state checkpoint.
    pub fn raw(&self) -> (&[f32], &[f32], &[usize], &[f32], &[bool]) {
        (&self.obs, &self.states, &self.actions, &self.rewards, &self.terminal)
    }

    pub fn from_raw(
        spec: &EnvSpec,
        obs: Vec<f32>,
        states: Vec<f32>,
        actions: Vec<usize>,
        rewards: Vec<f32>,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        let t = rewards.len();
        let ok = t > 0
            && obs.len() == (t + 1) * spec.n_agents * spec.obs_dim
            && states.len() == (t + 1) * spec.state_dim
            && actions.len() == t * spec.n_agents
            && terminal.len() == t
            && terminal[..t - 1].iter().all(|&x| !x)
            && actions.iter().all(|&a| a < spec.n_actions);
        if !ok {
            return Err(Error::Episode("raw episode buffers are inconsistent".into()));
        }
        Ok(EpisodeRecord {
            n_agents: spec.n_agents,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            n_actions: spec.n_actions,
            obs,
            states,
            actions,
            rewards,
            terminal,
        })
    }
}

/// FIFO store of whole episodes.
#[derive(Clone, Debug)]
pub struct ReplayMemory {
    capacity: usize,
    episodes: VecDeque<EpisodeRecord>,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory { capacity, episodes: VecDeque::with_capacity(capacity.min(4096)), inserted: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn episodes(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.episodes.iter()
    }

    pub fn push_episode(&mut self, episode: EpisodeRecord) -> Result<()> {
        if episode.is_empty() {
            return Err(Error::Episode("cannot store an empty episode".into()));
        }
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
        self.inserted += 1;
        Ok(())
    }

    /// Uniform sample without replacement; `None` until enough episodes exist.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Option<MiniBatch> {
        if batch_size == 0 || self.episodes.len() < batch_size {
            return None;
        }
        let idx = rng.sample_indices(self.episodes.len(), batch_size);
        let picked: Vec<&EpisodeRecord> = idx.iter().map(|&i| &self.episodes[i]).collect();
        Some(MiniBatch::from_episodes(&picked))
    }

    pub(crate) fn restore(capacity: usize, episodes: Vec<EpisodeRecord>, inserted: u64) -> Self {
        ReplayMemory { capacity, episodes: episodes.into(), inserted }
    }
}

/// Time-major, zero-padded batch of `B` episodes.
///
/// Observations and states cover steps `0..=T` (`T` = longest episode);
/// per-step arrays cover `0..T`. Row order inside a step is episode-major,
/// agent-minor: `b * N + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MiniBatch {
    pub batch: usize,
    pub max_len: usize,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub lengths: Vec<usize>,
    /// `[(T+1) x B x N x obs_dim]`
    pub obs: Vec<f32>,
    /// `[(T+1) x B x state_dim]`
    pub states: Vec<f32>,
    /// `[T x B x N]`, zero on padding.
    pub actions: Vec<usize>,
    /// `[T x B]`
    pub rewards: Vec<f32>,
    /// `[T x B]`, 1 on the terminal step.
    pub terminal: Vec<f32>,
    /// `[T x B]`, 1 on real steps and 0 on padding.
    pub mask: Vec<f32>,
}

impl MiniBatch {
    pub fn from_episodes(episodes: &[&EpisodeRecord]) -> Self {
        let first = episodes[0];
        let (b, n, od, sd) = (episodes.len(), first.n_agents, first.obs_dim, first.state_dim);
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let mut mb = MiniBatch {
            batch: b,
            max_len: t_max,
            n_agents: n,
            obs_dim: od,
            state_dim: sd,
            n_actions: first.n_actions,
            lengths: episodes.iter().map(|e| e.len()).collect(),
            obs: vec![0.0; (t_max + 1) * b * n * od],
            states: vec![0.0; (t_max + 1) * b * sd],
            actions: vec![0; t_max * b * n],
            rewards: vec![0.0; t_max * b],
            terminal: vec![0.0; t_max * b],
            mask: vec![0.0; t_max * b],
        };
        for (bi, e) in episodes.iter().enumerate() {
            for t in 0..=e.len() {
                for i in 0..n {
                    let dst = ((t * b + bi) * n + i) * od;
                    mb.obs[dst..dst + od].copy_from_slice(e.obs(t, i));
                }
                let dst = (t * b + bi) * sd;
                mb.states[dst..dst + sd].copy_from_slice(e.state(t));
            }
            for t in 0..e.len() {
                let k = t * b + bi;
                mb.actions[k * n..(k + 1) * n].copy_from_slice(e.actions(t));
                mb.rewards[k] = e.reward(t);
                mb.terminal[k] = if e.terminal(t) { 1.0 } else { 0.0 };
                mb.mask[k] = 1.0;
            }
        }
        mb
    }

    /// Rows `b * N + i` of step `t`, `[B*N x obs_dim]` flattened.
    pub fn obs_at(&self, t: usize) -> &[f32] {
        let w = self.batch * self.n_agents * self.obs_dim;
        &self.obs[t * w..(t + 1) * w]
    }

    /// `[B x state_dim]` flattened, step `t`.
    pub fn states_at(&self, t: usize) -> &[f32] {
        let w = self.batch * self.state_dim;
        &self.states[t * w..(t + 1) * w]
    }

    /// States for steps `from..from+len` stacked, `[len*B x state_dim]`.
    pub fn states_range(&self, from: usize, len: usize) -> &[f32] {
        let w = self.batch * self.state_dim;
        &self.states[from * w..(from + len) * w]
    }

    pub fn actions_at(&self, t: usize) -> &[usize] {
        let w = self.batch * self.n_agents;
        &self.actions[t * w..(t + 1) * w]
    }

    pub fn valid_steps(&self) -> f64 {
        self.mask.iter().map(|&m| m as f64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> EnvSpec {
        EnvSpec { n_agents: 2, obs_dim: 3, state_dim: 2, n_actions: 2, max_steps: 10 }
    }

    fn frame(v: f32) -> (Vec<Vec<f32>>, Vec<f32>) {
        (vec![vec![v; 3], vec![v + 0.5; 3]], vec![v, -v])
    }

    pub(crate) fn episode(len: usize, tag: f32) -> EpisodeRecord {
        let (o, s) = frame(tag);
        let mut e = EpisodeRecord::start(&spec(), &o, &s).unwrap();
        for t in 0..len {
            let (o, s) = frame(tag + t as f32 + 1.0);
            e.push_step(&[t % 2, 1], 1.0, &o, &s, t + 1 == len).unwrap();
        }
        e
    }

    #[test]
    fn push_and_fifo_eviction() {
        let mut m = ReplayMemory::new(2);
        m.push_episode(episode(1, 1.0)).unwrap();
        assert_eq!(m.len(), 1);
        m.push_episode(episode(2, 2.0)).unwrap();
        m.push_episode(episode(3, 3.0)).unwrap();
        let lens: Vec<usize> = m.episodes().map(|e| e.len()).collect();
        assert_eq!(lens, vec![2, 3]);
        assert_eq!(m.inserted(), 3);
    }

    #[test]
    fn broken_chain_rejected() {
        let e = episode(3, 0.0);
        let mut tr = e.transitions();
        assert_eq!(EpisodeRecord::from_transitions(&spec(), &tr).unwrap(), e);
        tr[2].obs[1][0] += 1.0;
        assert!(matches!(EpisodeRecord::from_transitions(&spec(), &tr), Err(Error::Episode(_))));
    }

    #[test]
    fn terminal_only_last() {
        let mut e = episode(1, 0.0);
        let (o, s) = frame(9.0);
        assert!(e.push_step(&[0, 0], 0.0, &o, &s, false).is_err());
        let mut tr = episode(3, 0.0).transitions();
        tr[0].terminal = true;
        assert!(EpisodeRecord::from_transitions(&spec(), &tr).is_err());
    }

    #[test]
    fn full_batch_returns_each_episode_once() {
        let mut m = ReplayMemory::new(10);
        for k in 0..4 {
            m.push_episode(episode(k + 1, k as f32 * 10.0)).unwrap();
        }
        let mb = m.sample(4, &mut Rng::new(1)).unwrap();
        let mut lens = mb.lengths.clone();
        lens.sort();
        assert_eq!(lens, vec![1, 2, 3, 4]);
        assert_eq!(mb.max_len, 4);
        assert_eq!(mb.valid_steps(), 10.0);
        assert!(m.sample(5, &mut Rng::new(1)).is_none());
    }

    #[test]
    fn padding_layout() {
        let a = episode(1, 0.0);
        let b = episode(3, 100.0);
        let mb = MiniBatch::from_episodes(&[&a, &b]);
        assert_eq!(mb.mask, vec![1.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(mb.terminal, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        // final next-obs of the short episode is kept at t = 1
        assert_eq!(&mb.obs_at(1)[..3], a.obs(1, 0));
        assert_eq!(&mb.obs_at(2)[..6], &[0.0; 6]);
        assert_eq!(&mb.obs_at(3)[6..9], b.obs(3, 0));
        assert_eq!(mb.states_at(2), &[0.0, 0.0, 102.0, -102.0]);
    }

    #[test]
    fn sampling_is_seeded() {
        let mut m = ReplayMemory::new(10);
        for k in 0..10 {
            m.push_episode(episode(1 + k % 3, k as f32)).unwrap();
        }
        let a = m.sample(4, &mut Rng::new(5)).unwrap();
        let b = m.sample(4, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut m = ReplayMemory::new(10);
        for k in 0..10 {
            m.push_episode(episode(1, k as f32 * 10.0)).unwrap();
        }
        let mut rng = Rng::new(77);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let mb = m.sample(1, &mut rng).unwrap();
            let tag = mb.states[0] / 10.0;
            counts[tag.round() as usize] += 1;
        }
        // chi-square with 9 degrees of freedom, p = 0.001 critical value
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 27.88, "{counts:?} chi2 = {chi2}");
    }
}
