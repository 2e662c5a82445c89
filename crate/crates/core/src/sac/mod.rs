//! Soft actor-critic machinery shared by every algorithm variant: the
//! multi-stream n-step replay buffer, first-order optimizers with target
//! tracking, and the critic/actor/temperature losses assembled on the tape.

pub mod buffer;
pub mod losses;
pub mod optim;

pub use buffer::{Batch, JointTransition, ReplayBuffer};
pub use losses::{
    actor_step, critic_step, sample_policy_values, ActorStepOut, CriticNet, CriticStepOut,
    LogpMode, RewardSource,
};
pub use optim::{entropy_gradient, polyak_update, EntropyCoefficient, Opt, OptKind};
