use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::nn::{Activation, Bound, Linear, ParamSet, Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    Vdn,
    Qmix,
}

/// Monotone two-layer mixing network whose weights come from hypernetworks
/// on the global state:
///
/// ```text
/// hidden = elu(q . |W1(s)| + b1(s))        W1(s): [N x e]
/// Q_tot  = hidden . |w2(s)| + V(s)         V(s) = v2(relu(v1(s)))
/// ```
#[derive(Clone, Debug)]
pub struct Qmix {
    pub hyper_w1: Linear,
    pub hyper_b1: Linear,
    pub hyper_w2: Linear,
    pub v1: Linear,
    pub v2: Linear,
    pub n_agents: usize,
    pub embed: usize,
}

#[derive(Clone, Debug)]
pub enum Mixer {
    Vdn { n_agents: usize },
    Qmix(Qmix),
}

impl Mixer {
    pub fn new(kind: MixerKind, set: &mut ParamSet, n_agents: usize, state_dim: usize, embed: usize, rng: &mut Rng) -> Self {
        match kind {
            MixerKind::Vdn => Mixer::Vdn { n_agents },
            MixerKind::Qmix => Mixer::Qmix(Qmix {
                hyper_w1: Linear::new(set, "mixer.hyper_w1", state_dim, n_agents * embed, rng),
                hyper_b1: Linear::new(set, "mixer.hyper_b1", state_dim, embed, rng),
                hyper_w2: Linear::new(set, "mixer.hyper_w2", state_dim, embed, rng),
                v1: Linear::new(set, "mixer.v1", state_dim, embed, rng),
                v2: Linear::new(set, "mixer.v2", embed, 1, rng),
                n_agents,
                embed,
            }),
        }
    }

    pub fn kind(&self) -> MixerKind {
        match self {
            Mixer::Vdn { .. } => MixerKind::Vdn,
            Mixer::Qmix(_) => MixerKind::Qmix,
        }
    }

    pub fn n_agents(&self) -> usize {
        match self {
            Mixer::Vdn { n_agents } => *n_agents,
            Mixer::Qmix(m) => m.n_agents,
        }
    }

    /// Mixes chosen per-agent values `q: [R x N]` into `Q_tot: [R x 1]`.
    /// VDN ignores the state; QMIX requires it.
    pub fn forward(&self, tape: &mut Tape<'_>, p: &Bound, q: Var, state: Option<Var>) -> Result<Var> {
        let (rows, n) = (tape.value(q).rows(), tape.value(q).cols());
        if n != self.n_agents() {
            return Err(NnError::dim("mixer agents", self.n_agents(), n).into());
        }
        match self {
            Mixer::Vdn { .. } => {
                let ones = tape.constant(Tensor::full(&[rows, n], 1.0));
                Ok(tape.row_dot(q, ones)?)
            }
            Mixer::Qmix(m) => {
                let s = state.ok_or_else(|| NnError::Usage("qmix mixing requires the global state".into()))?;
                let w1 = m.hyper_w1.forward(tape, p, s)?;
                let w1 = tape.activation(Activation::Abs, w1);
                let b1 = m.hyper_b1.forward(tape, p, s)?;
                let hidden = tape.row_vec_mat(q, w1)?;
                let hidden = tape.add(hidden, b1)?;
                let hidden = tape.activation(Activation::Elu, hidden);
                let w2 = m.hyper_w2.forward(tape, p, s)?;
                let w2 = tape.activation(Activation::Abs, w2);
                let mixed = tape.row_dot(hidden, w2)?;
                let v = m.v1.forward(tape, p, s)?;
                let v = tape.relu(v);
                let v = m.v2.forward(tape, p, v)?;
                Ok(tape.add(mixed, v)?)
            }
        }
    }
}

/// Mixes a single point on plain values.
pub fn mix(mixer: &Mixer, params: &ParamSet, q: &[f32], state: Option<&[f32]>) -> Result<f32> {
    let mut tape = Tape::new();
    let p = tape.bind(params);
    let qv = tape.constant(Tensor::matrix(1, q.len(), q.to_vec())?);
    let sv = match state {
        Some(s) => Some(tape.constant(Tensor::matrix(1, s.len(), s.to_vec())?)),
        None => None,
    };
    let out = mixer.forward(&mut tape, &p, qv, sv)?;
    Ok(tape.value(out).item())
}
