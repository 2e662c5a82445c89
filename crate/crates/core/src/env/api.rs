//! The partially observable Markov game interface implemented by every
//! shipped environment and consumed by every trainer, plus the name registry.

use crate::error::{CoreError, Result};

/// Static description of an environment's agent count and per-agent spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceSpec {
    /// Number of agents N.
    pub n_agents: usize,
    /// Per-agent observation vector lengths.
    pub obs_dims: Vec<usize>,
    /// Per-agent continuous action vector lengths.
    pub act_dims: Vec<usize>,
    /// Per-agent, per-dimension action lower bounds.
    pub act_low: Vec<Vec<f64>>,
    /// Per-agent, per-dimension action upper bounds.
    pub act_high: Vec<Vec<f64>>,
}

impl SpaceSpec {
    /// A spec where every agent shares one obs dim and one act dim and all
    /// action dimensions are bounded to [-1, 1].
    pub fn uniform(n_agents: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(n_agents >= 1 && obs_dim >= 1 && act_dim >= 1);
        SpaceSpec {
            n_agents,
            obs_dims: vec![obs_dim; n_agents],
            act_dims: vec![act_dim; n_agents],
            act_low: vec![vec![-1.0; act_dim]; n_agents],
            act_high: vec![vec![1.0; act_dim]; n_agents],
        }
    }
}

/// Per-component reward diagnostics attached to every step result.
///
/// Components that do not apply to the environment are left empty. Values
/// are post-normalization; `r_scalar` reflects any termination override.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardBreakdown {
    /// Escort/Surveillance: per-agent distance-to-target component.
    pub r_distance: Vec<f64>,
    /// Escort/Surveillance: per-agent formation component.
    pub r_formation: Vec<f64>,
    /// Surveillance: per-agent relative-altitude-above-target component.
    pub r_height: Vec<f64>,
    /// Surveillance: per-agent horizontal torus-band component.
    pub r_torus: Vec<f64>,
    /// Surveillance: per-agent altitude-spread component.
    pub r_rel_height: Vec<f64>,
    /// Spread: shared global minimum-distance term.
    pub r_global: f64,
    /// Spread: per-agent collision penalties.
    pub r_local: Vec<f64>,
    /// Per-agent scalar reward (after any termination override).
    pub r_scalar: Vec<f64>,
    /// Team reward (sum of the scalars).
    pub r_team: f64,
}

/// Everything an environment emits from one step.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// Per-agent observations o^i_{t+1}.
    pub observations: Vec<Vec<f64>>,
    /// Per-agent scalar rewards r^i.
    pub local_rewards: Vec<f64>,
    /// Team reward (sum of per-agent scalars).
    pub team_reward: f64,
    /// Episode ended early by collision.
    pub terminated: bool,
    /// Episode ended by reaching the step limit.
    pub truncated: bool,
    /// Per-component reward diagnostics; never consumed by trainers.
    pub info: RewardBreakdown,
}

/// A partially observable Markov game with continuous actions.
///
/// For any fixed seed and action sequence the full trajectory is bitwise
/// reproducible. Instances are single-threaded; separate instances share no
/// mutable state and may be stepped concurrently.
pub trait Env: Send {
    /// The environment's stable registry name.
    fn name(&self) -> &str;

    /// Agent count and space dimensions.
    fn space(&self) -> &SpaceSpec;

    /// Episode step limit.
    fn max_steps(&self) -> usize;

    /// Starts a fresh episode. All stochastic initialization is a pure
    /// function of `seed`.
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;

    /// Advances the world by one step. Out-of-range action entries are
    /// clipped to the declared bounds. Stepping a finished episode is a
    /// usage error.
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult>;
}

/// Optional per-run environment overrides.
#[derive(Debug, Clone, Default)]
pub struct EnvOverrides {
    /// Replaces the task's termination reward (death-penalty ablations).
    pub termination_reward: Option<f64>,
    /// Caps how many nearest teammates each drone observes (partial-view
    /// ablations); only meaningful for the drone tasks.
    pub neighbor_limit: Option<usize>,
}

/// Stable environment names accepted by [`make_env`].
pub const ENV_NAMES: &[&str] = &[
    "escort3",
    "escort5",
    "escort8",
    "escort8_partial2",
    "escort8_partial4",
    "surveillance4",
    "simple_spread",
];

/// Instantiates a registered environment by name with default settings.
pub fn make_env(name: &str) -> Result<Box<dyn Env>> {
    make_env_with(name, &EnvOverrides::default())
}

/// Instantiates a registered environment by name, applying overrides.
pub fn make_env_with(name: &str, overrides: &EnvOverrides) -> Result<Box<dyn Env>> {
    use super::drone::{DroneConfig, DroneEnv, DroneTask};
    use super::spread::SpreadEnv;

    let mut cfg = match name {
        "escort3" => DroneConfig::named(DroneTask::Escort, 3, None, -200.0, name),
        "escort5" => DroneConfig::named(DroneTask::Escort, 5, None, -200.0, name),
        "escort8" => DroneConfig::named(DroneTask::Escort, 8, None, -500.0, name),
        "escort8_partial2" => DroneConfig::named(DroneTask::Escort, 8, Some(2), -500.0, name),
        "escort8_partial4" => DroneConfig::named(DroneTask::Escort, 8, Some(4), -500.0, name),
        "surveillance4" => DroneConfig::named(DroneTask::Surveillance, 4, None, -200.0, name),
        "simple_spread" => {
            if overrides.termination_reward.is_some() || overrides.neighbor_limit.is_some() {
                return Err(CoreError::Config(
                    "termination_reward/neighbor_limit overrides only apply to drone tasks"
                        .into(),
                ));
            }
            return Ok(Box::new(SpreadEnv::new()));
        }
        _ => {
            return Err(CoreError::UnknownName {
                kind: "environment",
                name: name.to_string(),
                available: ENV_NAMES.join(", "),
            })
        }
    };
    if let Some(tr) = overrides.termination_reward {
        cfg.termination_reward = tr;
    }
    if let Some(k) = overrides.neighbor_limit {
        if k == 0 || k >= cfg.n_agents {
            return Err(CoreError::Config(format!(
                "neighbor_limit must be in 1..{} for {name}",
                cfg.n_agents
            )));
        }
        cfg.neighbor_limit = Some(k);
    }
    Ok(Box::new(DroneEnv::new(cfg)?))
}
