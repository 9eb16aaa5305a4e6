//! Comparison methods: frozen IL, IL retraining, plain lifelong learning,
//! linear MPC and demonstration-initialized actor-critic.

mod learners;
mod mpc;
mod rl;

pub use learners::{FrozenLearner, LllLearner, RetrainLearner};
pub use mpc::{
    condensed_gain, continuous_error_dynamics, linearize_error_dynamics, mpc_control, ErrorState,
    MpcConfig, MpcController,
};
pub use rl::{
    actor_loss_grad, critic_loss_grad, demonstration_transitions, rl_actor_update,
    rl_critic_update, step_reward, ActorCritic, RlConfig, RlController, RlLearner, RlUpdateReport,
    Transition,
};
