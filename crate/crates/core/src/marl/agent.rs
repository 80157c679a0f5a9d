use crate::envs::EnvSpec;
use crate::error::Result;
use crate::nn::{Bound, Gru, Linear, ParamSet, Rng, Tape, Tensor, Var};
use crate::replay::MiniBatch;

/// Recurrent per-agent Q network shared by all agents:
/// `[obs, last action one-hot, agent id one-hot] -> relu(fc) -> GRU -> Q`.
#[derive(Clone, Debug)]
pub struct AgentNet {
    pub fc: Linear,
    pub gru: Gru,
    pub head: Linear,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub hidden: usize,
}

impl AgentNet {
    pub fn new(set: &mut ParamSet, spec: &EnvSpec, hidden: usize, rng: &mut Rng) -> Self {
        let input = spec.obs_dim + spec.n_actions + spec.n_agents;
        AgentNet {
            fc: Linear::new(set, "agent.fc", input, hidden, rng),
            gru: Gru::new(set, "agent.gru", hidden, hidden, rng),
            head: Linear::new(set, "agent.head", hidden, spec.n_actions, rng),
            obs_dim: spec.obs_dim,
            n_actions: spec.n_actions,
            n_agents: spec.n_agents,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions + self.n_agents
    }

    /// Writes one input row. `last_action` is `None` on the first step.
    pub fn write_input(&self, out: &mut [f32], obs: &[f32], last_action: Option<usize>, agent: usize) {
        out.fill(0.0);
        out[..self.obs_dim].copy_from_slice(obs);
        if let Some(a) = last_action {
            out[self.obs_dim + a] = 1.0;
        }
        out[self.obs_dim + self.n_actions + agent] = 1.0;
    }

    /// One recurrent step for `rows` agent rows: returns `(q, h')`.
    pub fn step(&self, tape: &mut Tape<'_>, p: &Bound, x: Var, h: Var) -> Result<(Var, Var)> {
        let e = self.fc.forward(tape, p, x)?;
        let e = tape.relu(e);
        let h = self.gru.forward(tape, p, e, h)?;
        let q = self.head.forward(tape, p, h)?;
        Ok((q, h))
    }

    /// Inputs for steps `0..steps` of a batch, rows ordered `(t, b, i)`.
    pub fn batch_inputs(&self, batch: &MiniBatch, steps: usize) -> Result<Tensor> {
        let (n, width) = (batch.n_agents, self.input_dim());
        let rows = batch.batch * n;
        let mut data = vec![0.0f32; steps * rows * width];
        for t in 0..steps {
            let obs = batch.obs_at(t);
            for r in 0..rows {
                let last = if t == 0 { None } else { Some(batch.actions_at(t - 1)[r]) };
                let k = t * rows + r;
                self.write_input(
                    &mut data[k * width..(k + 1) * width],
                    &obs[r * self.obs_dim..(r + 1) * self.obs_dim],
                    last,
                    r % n,
                );
            }
        }
        Ok(Tensor::matrix(steps * rows, width, data)?)
    }

    /// Unrolls the network from a zero hidden state over steps `0..steps`,
    /// returning Q-values `[steps*B*N x n_actions]` in `(t, b, i)` row order.
    pub fn unroll(&self, tape: &mut Tape<'_>, p: &Bound, batch: &MiniBatch, steps: usize) -> Result<Var> {
        let rows = batch.batch * batch.n_agents;
        let x = tape.constant(self.batch_inputs(batch, steps)?);
        // the input layer has no recurrence, so it runs once over all steps
        let e = self.fc.forward(tape, p, x)?;
        let e = tape.relu(e);
        let mut h = tape.constant(Tensor::zeros(&[rows, self.hidden]));
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let et = tape.slice_rows(e, t * rows, rows)?;
            h = self.gru.forward(tape, p, et, h)?;
            hs.push(h);
        }
        let all = tape.concat_rows(&hs)?;
        Ok(self.head.forward(tape, p, all)?)
    }
}
