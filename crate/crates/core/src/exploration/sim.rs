use super::{agent_mean, BonusConfig, BonusUpdate};
use crate::envs::EnvSpec;
use crate::error::{Error, NnError, Result};
use crate::nn::{Bound, Gru, Mlp, OptimizerKind, OptimizerState, ParamSet, Rng, Tape, Tensor, Var};
use crate::replay::MiniBatch;

/// Per-agent observation autoencoder: encoder, GRU, decoder.
#[derive(Clone, Debug)]
pub struct SimAgentNets {
    pub encoder: Mlp,
    pub gru: Gru,
    pub decoder: Mlp,
}

/// Strangeness index module.
///
/// Each agent's next observation `z` is encoded (`m = f_oe(z)`), folded
/// into a recurrent state (`h' = f_gru(m, h)`) and reconstructed
/// (`z~ = f_og(h')`). The concatenated hiddens of all agents predict the
/// next global state (`s~ = f_sg(f_se([h^1..h^N]))`). The bonus is
///
/// ```text
/// r_int = rho * mean_i |z~^i - z^i|^2 + (1 - rho) * |s~ - s|^2
/// ```
///
/// With `shared` set, one autoencoder serves every agent and receives the
/// agent id as a one-hot suffix of its input.
#[derive(Clone, Debug)]
pub struct Sim {
    pub params: ParamSet,
    pub opt: OptimizerState,
    pub agents: Vec<SimAgentNets>,
    pub state_encoder: Mlp,
    pub state_decoder: Mlp,
    pub rho: f32,
    pub shared: bool,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub d: usize,
}

impl Sim {
    pub fn new(spec: &EnvSpec, cfg: &BonusConfig, optimizer: OptimizerKind, rng: &mut Rng) -> Self {
        let (n, d) = (spec.n_agents, cfg.d);
        let mut params = ParamSet::default();
        let nets = if cfg.shared_sim { 1 } else { n };
        let in_dim = spec.obs_dim + if cfg.shared_sim { n } else { 0 };
        let agents = (0..nets)
            .map(|i| {
                let tag = if cfg.shared_sim { "sim.agent".to_string() } else { format!("sim.agent{i}") };
                SimAgentNets {
                    encoder: Mlp::new(&mut params, &format!("{tag}.f_oe"), in_dim, d, d, rng),
                    gru: Gru::new(&mut params, &format!("{tag}.f_gru"), d, d, rng),
                    decoder: Mlp::new(&mut params, &format!("{tag}.f_og"), d, d, spec.obs_dim, rng),
                }
            })
            .collect();
        let state_encoder = Mlp::new(&mut params, "sim.f_se", n * d, d, d, rng);
        let state_decoder = Mlp::new(&mut params, "sim.f_sg", d, d, spec.state_dim, rng);
        let opt = OptimizerState::new(optimizer, &params);
        Sim {
            params,
            opt,
            agents,
            state_encoder,
            state_decoder,
            rho: cfg.rho,
            shared: cfg.shared_sim,
            n_agents: n,
            obs_dim: spec.obs_dim,
            state_dim: spec.state_dim,
            d,
        }
    }

    fn nets(&self, agent: usize) -> &SimAgentNets {
        &self.agents[if self.shared { 0 } else { agent }]
    }

    fn encoder_input(&self, out: &mut Vec<f32>, obs: &[f32], agent: usize) {
        out.extend_from_slice(obs);
        if self.shared {
            out.extend((0..self.n_agents).map(|k| if k == agent { 1.0 } else { 0.0 }));
        }
    }

    fn in_dim(&self) -> usize {
        self.obs_dim + if self.shared { self.n_agents } else { 0 }
    }

    /// Records Eq.-style bonuses for every `(t, b)` of the batch: the
    /// observation at step `t + 1` is fed to the recurrent encoders whose
    /// hiddens start at zero. Returns `(masked mean loss, r_int [T*B x 1])`.
    pub fn forward_on(&self, tape: &mut Tape<'_>, p: &Bound, batch: &MiniBatch) -> Result<(Var, Var)> {
        let (t_len, b, n) = (batch.max_len, batch.batch, self.n_agents);
        if batch.n_agents != n || batch.obs_dim != self.obs_dim || batch.state_dim != self.state_dim {
            return Err(NnError::dim("sim batch", format!("{n} agents"), batch.n_agents).into());
        }
        let denom = batch.valid_steps();
        if denom == 0.0 {
            return Err(Error::EmptyBatch);
        }
        let od = self.obs_dim;
        // per network: encoder inputs and reconstruction targets, rows (t, b[, i])
        let groups: Vec<Vec<usize>> = if self.shared { vec![(0..n).collect()] } else { (0..n).map(|i| vec![i]).collect() };
        let mut hidden_parts = Vec::with_capacity(groups.len());
        let mut err_parts = Vec::with_capacity(groups.len());
        for (g, agents) in groups.iter().enumerate() {
            let nets = &self.agents[g];
            let rows = b * agents.len();
            let mut x = Vec::with_capacity(t_len * rows * self.in_dim());
            let mut z = Vec::with_capacity(t_len * rows * od);
            for t in 0..t_len {
                let obs = batch.obs_at(t + 1);
                for bi in 0..b {
                    for &i in agents {
                        let o = &obs[(bi * n + i) * od..(bi * n + i + 1) * od];
                        self.encoder_input(&mut x, o, i);
                        z.extend_from_slice(o);
                    }
                }
            }
            let xv = tape.constant(Tensor::matrix(t_len * rows, self.in_dim(), x)?);
            let m = nets.encoder.forward(tape, p, xv)?;
            let mut h = tape.constant(Tensor::zeros(&[rows, self.d]));
            let mut hs = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let mt = tape.slice_rows(m, t * rows, rows)?;
                h = nets.gru.forward(tape, p, mt, h)?;
                hs.push(h);
            }
            let hall = tape.concat_rows(&hs)?;
            let recon = nets.decoder.forward(tape, p, hall)?;
            let err = tape.row_sq_err(recon, &Tensor::matrix(t_len * rows, od, z)?)?;
            // regroup as one row per (t, b)
            hidden_parts.push(tape.reshape(hall, &[t_len * b, agents.len() * self.d])?);
            err_parts.push(tape.reshape(err, &[t_len * b, agents.len()])?);
        }
        let hcat = if hidden_parts.len() == 1 { hidden_parts[0] } else { tape.concat_cols(&hidden_parts)? };
        let errs = if err_parts.len() == 1 { err_parts[0] } else { tape.concat_cols(&err_parts)? };
        let obs_term = agent_mean(tape, errs, self.rho)?;
        let se = self.state_encoder.forward(tape, p, hcat)?;
        let s_pred = self.state_decoder.forward(tape, p, se)?;
        let s_target = Tensor::matrix(t_len * b, self.state_dim, batch.states_range(1, t_len).to_vec())?;
        let s_err = tape.row_sq_err(s_pred, &s_target)?;
        let s_term = tape.scale(s_err, 1.0 - self.rho);
        let r = tape.add(obs_term, s_term)?;
        let loss = tape.weighted_sum(r, &batch.mask, denom)?;
        Ok((loss, r))
    }

    /// Bonuses per `(t, b)` with the current parameters; zero on padding.
    pub fn bonuses(&self, batch: &MiniBatch) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let (_, r) = self.forward_on(&mut tape, &p, batch)?;
        Ok(masked(tape.value(r).data(), &batch.mask))
    }

    /// Computes the batch bonuses, then takes one optimizer step on their
    /// masked mean. Returned values are pre-update.
    pub fn update(&mut self, batch: &MiniBatch, lr: f32) -> Result<BonusUpdate> {
        let (r_int, loss, grads) = {
            let mut tape = Tape::new();
            let p = tape.bind(&self.params);
            let (loss, r) = self.forward_on(&mut tape, &p, batch)?;
            let grads = tape.backward(loss)?.for_bound(&p);
            (masked(tape.value(r).data(), &batch.mask), tape.value(loss).item(), grads)
        };
        self.opt.clipped_step(&mut self.params, grads, lr)?;
        Ok(BonusUpdate { r_int, loss })
    }

    /// One autoencoder step for `agent`: returns the reconstruction, the
    /// next hidden state and the encoder output.
    pub fn observe_step(&self, agent: usize, next_obs: &[f32], hidden: &[f32]) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
        if agent >= self.n_agents {
            return Err(NnError::dim("sim agent", format!("< {}", self.n_agents), agent).into());
        }
        if next_obs.len() != self.obs_dim {
            return Err(NnError::dim("sim observation", self.obs_dim, next_obs.len()).into());
        }
        if hidden.len() != self.d {
            return Err(NnError::dim("sim hidden", self.d, hidden.len()).into());
        }
        let nets = self.nets(agent);
        let mut x = Vec::with_capacity(self.in_dim());
        self.encoder_input(&mut x, next_obs, agent);
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let xv = tape.constant(Tensor::matrix(1, x.len(), x)?);
        let hv = tape.constant(Tensor::matrix(1, self.d, hidden.to_vec())?);
        let m = nets.encoder.forward(&mut tape, &p, xv)?;
        let h = nets.gru.forward(&mut tape, &p, m, hv)?;
        let recon = nets.decoder.forward(&mut tape, &p, h)?;
        Ok((tape.value(recon).data().to_vec(), tape.value(h).data().to_vec(), tape.value(m).data().to_vec()))
    }

    /// Predicts the global state from the agents' hiddens, in agent order.
    pub fn predict_state(&self, hiddens: &[Vec<f32>]) -> Result<Vec<f32>> {
        if hiddens.len() != self.n_agents {
            return Err(NnError::dim("sim hiddens", self.n_agents, hiddens.len()).into());
        }
        let mut cat = Vec::with_capacity(self.n_agents * self.d);
        for h in hiddens {
            if h.len() != self.d {
                return Err(NnError::dim("sim hidden", self.d, h.len()).into());
            }
            cat.extend_from_slice(h);
        }
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let x = tape.constant(Tensor::matrix(1, cat.len(), cat)?);
        let se = self.state_encoder.forward(&mut tape, &p, x)?;
        let s = self.state_decoder.forward(&mut tape, &p, se)?;
        Ok(tape.value(s).data().to_vec())
    }

    pub fn initial_hidden(&self) -> Vec<Vec<f32>> {
        vec![vec![0.0; self.d]; self.n_agents]
    }

    /// Bonus of one transition given the agents' hiddens before it.
    /// Only the next joint observation and next state enter.
    pub fn bonus_step(
        &self,
        next_obs: &[Vec<f32>],
        next_state: &[f32],
        hidden_in: &[Vec<f32>],
    ) -> Result<(f32, Vec<Vec<f32>>)> {
        if next_obs.len() != self.n_agents || hidden_in.len() != self.n_agents {
            return Err(NnError::dim("sim agents", self.n_agents, next_obs.len()).into());
        }
        if next_state.len() != self.state_dim {
            return Err(NnError::dim("sim state", self.state_dim, next_state.len()).into());
        }
        let mut obs_err = Vec::with_capacity(self.n_agents);
        let mut hidden_out = Vec::with_capacity(self.n_agents);
        for i in 0..self.n_agents {
            let (recon, h, _) = self.observe_step(i, &next_obs[i], &hidden_in[i])?;
            obs_err.push(crate::nn::tensor::sq_err_sum(&recon, &next_obs[i]) as f32);
            hidden_out.push(h);
        }
        let s_pred = self.predict_state(&hidden_out)?;
        let s_err = crate::nn::tensor::sq_err_sum(&s_pred, next_state) as f32;
        Ok((strangeness(&obs_err, s_err, self.rho), hidden_out))
    }
}

/// `rho * mean(obs_errors) + (1 - rho) * state_error`.
pub fn strangeness(obs_errors: &[f32], state_error: f32, rho: f32) -> f32 {
    let mean = obs_errors.iter().map(|&e| e as f64).sum::<f64>() / obs_errors.len() as f64;
    (rho as f64 * mean + (1.0 - rho as f64) * state_error as f64) as f32
}

pub(crate) fn masked(values: &[f32], mask: &[f32]) -> Vec<f32> {
    values.iter().zip(mask).map(|(&v, &m)| if m > 0.0 { v } else { 0.0 }).collect()
}
