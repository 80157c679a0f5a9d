use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::NnError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    RmsProp,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RMS_ALPHA: f32 = 0.99;
const RMS_EPS: f32 = 1e-5;

/// Moment accumulators mirroring a [`ParamSet`] tensor-for-tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// Adam first moments (unused by RMSProp).
    pub first: Vec<Tensor>,
    /// Adam second moments, or RMSProp mean squares.
    pub second: Vec<Tensor>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        OptimizerState { kind, first: zeros(), second: zeros(), step: 0 }
    }

    /// Applies one update in place and increments the step counter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor], lr: f32) -> Result<(), NnError> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(NnError::dim("optimizer", params.len(), grads.len()));
        }
        for (p, g) in params.tensors().iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(NnError::dim("optimizer grad", format!("{:?}", p.shape()), format!("{:?}", g.shape())));
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, p) in params.tensors_mut().iter_mut().enumerate() {
                    let g = grads[i].data();
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (k, pv) in p.data_mut().iter_mut().enumerate() {
                        let gk = g[k] as f64;
                        let mk = ADAM_BETA1 * m[k] as f64 + (1.0 - ADAM_BETA1) * gk;
                        let vk = ADAM_BETA2 * v[k] as f64 + (1.0 - ADAM_BETA2) * gk * gk;
                        m[k] = mk as f32;
                        v[k] = vk as f32;
                        let upd = lr as f64 * (mk / c1) / ((vk / c2).sqrt() + ADAM_EPS);
                        *pv = (*pv as f64 - upd) as f32;
                    }
                }
            }
            OptimizerKind::RmsProp => {
                for (i, p) in params.tensors_mut().iter_mut().enumerate() {
                    let g = grads[i].data();
                    let v = self.second[i].data_mut();
                    for (k, pv) in p.data_mut().iter_mut().enumerate() {
                        v[k] = RMS_ALPHA * v[k] + (1.0 - RMS_ALPHA) * g[k] * g[k];
                        *pv -= lr * g[k] / (v[k].sqrt() + RMS_EPS);
                    }
                }
            }
        }
        Ok(())
    }

    /// Clips `grads` to [`super::GRAD_CLIP_NORM`] and applies one step.
    /// Returns the pre-clip gradient norm.
    pub fn clipped_step(&mut self, params: &mut ParamSet, mut grads: Vec<Tensor>, lr: f32) -> Result<f32, NnError> {
        let norm = clip_global_norm(&mut grads, super::GRAD_CLIP_NORM);
        self.step(params, &grads, lr)?;
        Ok(norm)
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f32) -> f32 {
    let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|&v| v as f64 * v as f64).sum();
    let norm = sq.sqrt();
    if norm > max_norm as f64 {
        let s = (max_norm as f64 / (norm + 1e-6)) as f32;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm as f32
}
