//! Recurrent agent Q networks, VDN/QMIX mixing and the two TD objectives:
//! the goal function trained on its own target-network max, and the
//! exploration function whose target picks next actions with its own
//! greedy choice but evaluates them with the goal target network.

mod agent;
mod joint;
mod mixer;

pub use agent::AgentNet;
pub use joint::{
    argmax, epsilon_greedy_actions, exp_td_loss, exp_td_loss_with, exp_td_target, goal_td_loss, goal_td_loss_with,
    goal_td_target, greedy_actions, td_loss_on, JointQFunction, LossOutput, Role, TargetValues,
};
pub use mixer::{mix, Mixer, MixerKind, Qmix};
