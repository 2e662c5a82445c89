//! Multi-agent environments: the common interface, the drone escort and
//! surveillance tasks, and the particle spread task.
//!
//! All environments are deterministic given a reset seed, expose per-agent
//! continuous actions in [-1, 1], and report both per-agent and team
//! rewards along with a per-component breakdown for diagnostics.

pub mod api;
pub mod drone;
pub mod spread;

pub use api::{
    make_env, make_env_with, Env, EnvOverrides, RewardBreakdown, SpaceSpec, StepResult, ENV_NAMES,
};
pub use drone::{DroneConfig, DroneEnv, DroneTask, DroneWorld};
pub use spread::{SpreadEnv, SpreadWorld};
