use super::sim::masked;
use super::{agent_mean, BonusConfig, BonusUpdate};
use crate::envs::EnvSpec;
use crate::error::{Error, NnError, Result};
use crate::nn::{Bound, Mlp, OptimizerKind, OptimizerState, ParamSet, Rng, Tape, Tensor, Var};
use crate::replay::MiniBatch;

/// Weight of the forward loss in the module's training objective; the
/// inverse loss gets the remainder.
pub const ICM_FORWARD_WEIGHT: f32 = 0.2;

/// Intrinsic curiosity on local observations: a shared encoder feeds a
/// forward model (predicts the next encoding from the current one and the
/// agent's action) and an inverse model (predicts the action from both
/// encodings). The bonus is the forward error; the encoder is trained by
/// the inverse loss only.
#[derive(Clone, Debug)]
pub struct Icm {
    pub params: ParamSet,
    pub opt: OptimizerState,
    pub encoder: Mlp,
    pub forward_model: Mlp,
    pub inverse_model: Mlp,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub d: usize,
}

impl Icm {
    pub fn new(spec: &EnvSpec, cfg: &BonusConfig, optimizer: OptimizerKind, rng: &mut Rng) -> Self {
        let d = cfg.d;
        let mut params = ParamSet::default();
        let encoder = Mlp::new(&mut params, "icm.encoder", spec.obs_dim, d, d, rng);
        let forward_model = Mlp::new(&mut params, "icm.forward", d + spec.n_actions, d, d, rng);
        let inverse_model = Mlp::new(&mut params, "icm.inverse", 2 * d, d, spec.n_actions, rng);
        let opt = OptimizerState::new(optimizer, &params);
        Icm {
            params,
            opt,
            encoder,
            forward_model,
            inverse_model,
            n_agents: spec.n_agents,
            obs_dim: spec.obs_dim,
            n_actions: spec.n_actions,
            d,
        }
    }

    /// Per-row forward errors and inverse cross-entropies, both `[rows x 1]`,
    /// for `rows` (obs, action, next obs) triples.
    fn heads(&self, tape: &mut Tape<'_>, p: &Bound, obs: Vec<f32>, actions: &[usize], next: Vec<f32>) -> Result<(Var, Var)> {
        let rows = actions.len();
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.n_actions) {
            return Err(NnError::dim("icm action", format!("< {}", self.n_actions), bad).into());
        }
        let x = tape.constant(Tensor::matrix(rows, self.obs_dim, obs)?);
        let x1 = tape.constant(Tensor::matrix(rows, self.obs_dim, next)?);
        let phi = self.encoder.forward(tape, p, x)?;
        let phi1 = self.encoder.forward(tape, p, x1)?;
        let mut onehot = vec![0.0f32; rows * self.n_actions];
        for (r, &a) in actions.iter().enumerate() {
            onehot[r * self.n_actions + a] = 1.0;
        }
        let u = tape.constant(Tensor::matrix(rows, self.n_actions, onehot)?);
        let phi_in = tape.detach(phi);
        let fin = tape.concat_cols(&[phi_in, u])?;
        let pred = self.forward_model.forward(tape, p, fin)?;
        let target = tape.value(phi1).clone();
        let fwd = tape.row_sq_err(pred, &target)?;
        let both = tape.concat_cols(&[phi, phi1])?;
        let logits = self.inverse_model.forward(tape, p, both)?;
        let inv = tape.softmax_xent(logits, actions)?;
        Ok((fwd, inv))
    }

    /// Masked means of the forward and inverse losses plus `r_int [T*B x 1]`.
    pub fn losses_on(&self, tape: &mut Tape<'_>, p: &Bound, batch: &MiniBatch) -> Result<(Var, Var, Var)> {
        let denom = batch.valid_steps();
        if denom == 0.0 {
            return Err(Error::EmptyBatch);
        }
        if batch.obs_dim != self.obs_dim || batch.n_agents != self.n_agents {
            return Err(NnError::dim("icm batch", self.obs_dim, batch.obs_dim).into());
        }
        let width = batch.batch * self.n_agents * self.obs_dim;
        let t_len = batch.max_len;
        let obs = batch.obs[..t_len * width].to_vec();
        let next = batch.obs[width..(t_len + 1) * width].to_vec();
        let (fwd, inv) = self.heads(tape, p, obs, &batch.actions, next)?;
        let rows = t_len * batch.batch;
        let fwd = tape.reshape(fwd, &[rows, self.n_agents])?;
        let inv = tape.reshape(inv, &[rows, self.n_agents])?;
        let r = agent_mean(tape, fwd, 1.0)?;
        let inv_mean = agent_mean(tape, inv, 1.0)?;
        let fwd_loss = tape.weighted_sum(r, &batch.mask, denom)?;
        let inv_loss = tape.weighted_sum(inv_mean, &batch.mask, denom)?;
        Ok((fwd_loss, inv_loss, r))
    }

    /// Returns `(weighted training loss, r_int [T*B x 1])`.
    pub fn forward_on(&self, tape: &mut Tape<'_>, p: &Bound, batch: &MiniBatch) -> Result<(Var, Var)> {
        let (fwd, inv, r) = self.losses_on(tape, p, batch)?;
        let a = tape.scale(fwd, ICM_FORWARD_WEIGHT);
        let b = tape.scale(inv, 1.0 - ICM_FORWARD_WEIGHT);
        Ok((tape.add(a, b)?, r))
    }

    pub fn bonuses(&self, batch: &MiniBatch) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let (_, r) = self.forward_on(&mut tape, &p, batch)?;
        Ok(masked(tape.value(r).data(), &batch.mask))
    }

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

    /// Mean over agents of the forward-model error for one joint step.
    pub fn bonus(&self, obs: &[Vec<f32>], actions: &[usize], next_obs: &[Vec<f32>]) -> Result<f32> {
        let n = self.n_agents;
        if obs.len() != n || actions.len() != n || next_obs.len() != n {
            return Err(NnError::dim("icm agents", n, obs.len()).into());
        }
        if obs.iter().chain(next_obs).any(|o| o.len() != self.obs_dim) {
            return Err(NnError::dim("icm observation", self.obs_dim, obs[0].len()).into());
        }
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let (fwd, _) = self.heads(&mut tape, &p, obs.concat(), actions, next_obs.concat())?;
        let fwd = tape.reshape(fwd, &[1, n])?;
        let r = agent_mean(&mut tape, fwd, 1.0)?;
        Ok(tape.value(r).item())
    }
}
