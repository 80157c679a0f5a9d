use super::sim::masked;
use super::{agent_mean, BonusConfig, BonusUpdate};
use crate::envs::EnvSpec;
use crate::error::{Error, NnError, Result};
use crate::nn::{Bound, Mlp, OptimizerKind, OptimizerState, ParamSet, Rng, Tape, Tensor, Var};
use crate::replay::MiniBatch;

/// Random network distillation on each agent's next local observation.
/// The target network is drawn once and never trained.
#[derive(Clone, Debug)]
pub struct Rnd {
    pub target_params: ParamSet,
    pub target: Mlp,
    pub params: ParamSet,
    pub predictor: Mlp,
    pub opt: OptimizerState,
    pub n_agents: usize,
    pub obs_dim: usize,
}

impl Rnd {
    pub fn new(spec: &EnvSpec, cfg: &BonusConfig, optimizer: OptimizerKind, rng: &mut Rng) -> Self {
        let mut target_params = ParamSet::default();
        let target = Mlp::new(&mut target_params, "rnd.target", spec.obs_dim, cfg.d, cfg.d, rng);
        let mut params = ParamSet::default();
        let predictor = Mlp::new(&mut params, "rnd.predictor", spec.obs_dim, cfg.d, cfg.d, rng);
        let opt = OptimizerState::new(optimizer, &params);
        Rnd { target_params, target, params, predictor, opt, n_agents: spec.n_agents, obs_dim: spec.obs_dim }
    }

    fn target_features(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = tape.bind(&self.target_params);
        let xv = tape.constant(x.clone());
        let f = self.target.forward(&mut tape, &p, xv)?;
        Ok(tape.value(f).clone())
    }

    /// Rows `[rows x N]` of per-agent distillation errors on `x: [rows*N x obs]`.
    fn errors_on(&self, tape: &mut Tape<'_>, p: &Bound, x: Tensor) -> Result<Var> {
        let rows = x.rows() / self.n_agents;
        let target = self.target_features(&x)?;
        let xv = tape.constant(x);
        let pred = self.predictor.forward(tape, p, xv)?;
        let err = tape.row_sq_err(pred, &target)?;
        Ok(tape.reshape(err, &[rows, self.n_agents])?)
    }

    /// Returns `(masked mean loss, r_int [T*B x 1])`.
    pub fn forward_on(&self, tape: &mut Tape<'_>, p: &Bound, batch: &MiniBatch) -> Result<(Var, Var)> {
        let denom = batch.valid_steps();
        if denom == 0.0 {
            return Err(Error::EmptyBatch);
        }
        if batch.obs_dim != self.obs_dim || batch.n_agents != self.n_agents {
            return Err(NnError::dim("rnd batch", self.obs_dim, batch.obs_dim).into());
        }
        let width = batch.batch * self.n_agents * self.obs_dim;
        let next = batch.obs[width..(batch.max_len + 1) * width].to_vec();
        let x = Tensor::matrix(batch.max_len * batch.batch * self.n_agents, self.obs_dim, next)?;
        let errs = self.errors_on(tape, p, x)?;
        let r = agent_mean(tape, errs, 1.0)?;
        let loss = tape.weighted_sum(r, &batch.mask, denom)?;
        Ok((loss, r))
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

    /// Mean over agents of the distillation error on their next observations.
    pub fn bonus(&self, next_obs: &[Vec<f32>]) -> Result<f32> {
        if next_obs.len() != self.n_agents || next_obs.iter().any(|o| o.len() != self.obs_dim) {
            return Err(NnError::dim("rnd observation", self.obs_dim, next_obs.len()).into());
        }
        let x = Tensor::matrix(self.n_agents, self.obs_dim, next_obs.concat())?;
        let mut tape = Tape::new();
        let p = tape.bind(&self.params);
        let errs = self.errors_on(&mut tape, &p, x)?;
        let r = agent_mean(&mut tape, errs, 1.0)?;
        Ok(tape.value(r).item())
    }
}
