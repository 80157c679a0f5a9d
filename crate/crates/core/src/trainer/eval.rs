use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::marl::JointQFunction;
use crate::nn::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub mean_return: f64,
    pub mean_length: f64,
    pub solve_rate: f64,
}

/// Runs `n_episodes` greedy episodes of the goal policy. Nothing is
/// stored and no parameter changes.
pub fn evaluate(goal_q: &JointQFunction, env: &mut dyn Environment, n_episodes: usize) -> Result<EvalResult> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let n = goal_q.spec.n_agents;
    let mut rng = Rng::new(0);
    let (mut ret, mut len, mut solved) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..n_episodes {
        let mut step = env.reset(&mut rng);
        let mut hidden = goal_q.initial_hidden();
        let mut last: Vec<Option<usize>> = vec![None; n];
        while !step.terminal {
            let (actions, h) = goal_q.greedy_joint_action(&step.observations, &last, &hidden)?;
            step = env.step(&actions)?;
            ret += step.reward as f64;
            len += 1.0;
            hidden = h;
            last = actions.into_iter().map(Some).collect();
        }
        solved += env.solved() as usize;
    }
    let k = n_episodes as f64;
    Ok(EvalResult { mean_return: ret / k, mean_length: len / k, solve_rate: solved as f64 / k })
}
