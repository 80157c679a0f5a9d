use super::params::{ParamId, ParamSet};
use super::rng::Rng;
use super::tape::{Bound, Tape, Var};
use super::tensor::Tensor;
use crate::error::NnError;

/// Dense layer `y = x W^T + b` with `W: [out x in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(set: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        let w = set.add_uniform(format!("{name}.w"), &[out_dim, in_dim], bound, rng);
        let b = set.add_uniform(format!("{name}.b"), &[out_dim], bound, rng);
        Linear { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var, NnError> {
        tape.linear(x, p.var(self.w), Some(p.var(self.b)))
    }
}

/// One hidden relu layer: `in -> hidden -> out`, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(set: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Mlp {
            hidden: Linear::new(set, &format!("{name}.fc1"), in_dim, hidden, rng),
            out: Linear::new(set, &format!("{name}.fc2"), hidden, out_dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var) -> Result<Var, NnError> {
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, p, h)
    }

    pub fn in_dim(&self) -> usize {
        self.hidden.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }
}

/// Gated recurrent unit. Each gate maps `[x, h]` (or `[x, r*h]` for the
/// candidate) to the hidden width:
///
/// ```text
/// r  = sigmoid(W_r [x, h] + b_r)
/// z  = sigmoid(W_z [x, h] + b_z)
/// n  = tanh(W_n [x, r*h] + b_n)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Clone, Debug)]
pub struct Gru {
    pub reset: Linear,
    pub update: Linear,
    pub candidate: Linear,
    pub in_dim: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(set: &mut ParamSet, name: &str, in_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let cat = in_dim + hidden;
        Gru {
            reset: Linear::new(set, &format!("{name}.reset"), cat, hidden, rng),
            update: Linear::new(set, &format!("{name}.update"), cat, hidden, rng),
            candidate: Linear::new(set, &format!("{name}.candidate"), cat, hidden, rng),
            in_dim,
            hidden,
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, x: Var, h: Var) -> Result<Var, NnError> {
        let (xs, hs) = (tape.value(x).cols(), tape.value(h).cols());
        if xs != self.in_dim {
            return Err(NnError::dim("gru input", self.in_dim, xs));
        }
        if hs != self.hidden {
            return Err(NnError::dim("gru hidden", self.hidden, hs));
        }
        let xh = tape.concat_cols(&[x, h])?;
        let r = self.reset.forward(tape, p, xh)?;
        let r = tape.sigmoid(r);
        let z = self.update.forward(tape, p, xh)?;
        let z = tape.sigmoid(z);
        let rh = tape.mul(r, h)?;
        let xrh = tape.concat_cols(&[x, rh])?;
        let n = self.candidate.forward(tape, p, xrh)?;
        let n = tape.tanh(n);
        let keep = tape.one_minus(z);
        let a = tape.mul(keep, n)?;
        let b = tape.mul(z, h)?;
        tape.add(a, b)
    }
}

/// Single GRU step on plain tensors (`x: [d_in]` or `[rows x d_in]`).
pub fn gru_step(set: &ParamSet, gru: &Gru, x: &Tensor, h_prev: &Tensor) -> Result<Tensor, NnError> {
    let mut tape = Tape::new();
    let p = tape.bind(set);
    let xv = tape.constant(x.clone());
    let hv = tape.constant(h_prev.clone());
    let out = gru.forward(&mut tape, &p, xv, hv)?;
    tape.value(out).clone().reshape(h_prev.shape())
}

/// Dense layer on plain tensors.
pub fn linear_forward(set: &ParamSet, layer: &Linear, x: &Tensor) -> Result<Tensor, NnError> {
    super::tensor::linear(x, set.get(layer.w), Some(set.get(layer.b)))
}
