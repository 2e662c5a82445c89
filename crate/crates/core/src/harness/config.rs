//! Run configuration: per-environment defaults, config-file loading, and
//! `key=value` overrides.
//!
//! Resolution is layered: environment-family defaults, then an optional TOML
//! file, then explicit overrides, then the `env`/`algo`/`seed` selectors.
//! The fully resolved struct is serialized into the artifact directory and is
//! sufficient on its own to re-run the experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::ENV_NAMES;
use crate::error::{CoreError, Result};
use crate::trainer::{TrainerConfig, VariantSpec};

/// Everything a training run needs, fully resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Environment registry name.
    pub env: String,
    /// Algorithm preset name.
    pub algo: String,
    /// Master seed; every random stream derives from it.
    pub seed: u64,

    /// Total environment steps summed across the parallel instances.
    pub total_env_steps: u64,
    /// Steps collected with uniform-random actions before any gradients.
    pub warmup_steps: u64,
    /// One train step per this many collected env steps (aggregate count).
    pub train_interval: u64,
    /// Evaluation cadence in aggregate env steps.
    pub eval_interval: u64,
    /// Deterministic-policy episodes per evaluation.
    pub eval_episodes: usize,
    /// Parallel environment instances (P).
    pub parallel_envs: usize,
    /// Checkpoint cadence in env steps; 0 saves only the final checkpoint.
    pub checkpoint_interval: u64,

    /// Replay capacity in transitions.
    pub buffer_capacity: usize,
    /// n-step return horizon.
    pub n_step: usize,
    /// Frames stacked into each observation; fixed per environment.
    pub obs_history: usize,

    pub gamma: f64,
    pub tau: f64,
    /// Minibatch size; defaults to 256·parallel_envs.
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Learning rate of centralized/group critics.
    pub lead_lr: f64,
    pub alpha_lr: f64,
    /// Tune entropy coefficients toward the target entropy.
    pub auto_alpha: bool,
    pub alpha_init: f64,
    /// Gradient steps per train step (presets may pin their own).
    pub g_steps: usize,
    /// Actor pass every F-th gradient step (presets may pin their own).
    pub f_interval: usize,

    /// Hidden widths of MLP actors.
    pub actor_hidden: Vec<usize>,
    /// Hidden widths of local and concat critics.
    pub critic_hidden: Vec<usize>,
    /// Embedding width of encoder critics.
    pub lead_embed: usize,
    /// Attention heads of encoder critics.
    pub lead_heads: usize,
    /// Encoder feed-forward width; `None` picks the preset family default.
    pub lead_ffn: Option<usize>,
    /// Encoder blocks.
    pub lead_blocks: usize,

    /// Replaces the task's termination reward (death-penalty ablations).
    pub termination_reward: Option<f64>,
    /// Caps how many nearest teammates each drone observes.
    pub neighbor_limit: Option<usize>,

    /// Artifact directory; `None` derives `runs/{env}_{algo}_seed{seed}`.
    pub out_dir: Option<String>,
}

/// The same fields with every value optional: the shape of config files and
/// accumulated overrides before resolution.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialRunConfig {
    pub env: Option<String>,
    pub algo: Option<String>,
    pub seed: Option<u64>,
    pub total_env_steps: Option<u64>,
    pub warmup_steps: Option<u64>,
    pub train_interval: Option<u64>,
    pub eval_interval: Option<u64>,
    pub eval_episodes: Option<usize>,
    pub parallel_envs: Option<usize>,
    pub checkpoint_interval: Option<u64>,
    pub buffer_capacity: Option<usize>,
    pub n_step: Option<usize>,
    pub obs_history: Option<usize>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub batch_size: Option<usize>,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub lead_lr: Option<f64>,
    pub alpha_lr: Option<f64>,
    pub auto_alpha: Option<bool>,
    pub alpha_init: Option<f64>,
    pub g_steps: Option<usize>,
    pub f_interval: Option<usize>,
    pub actor_hidden: Option<Vec<usize>>,
    pub critic_hidden: Option<Vec<usize>>,
    pub lead_embed: Option<usize>,
    pub lead_heads: Option<usize>,
    pub lead_ffn: Option<usize>,
    pub lead_blocks: Option<usize>,
    pub termination_reward: Option<f64>,
    pub neighbor_limit: Option<usize>,
    pub out_dir: Option<String>,
}

fn usage(msg: impl Into<String>) -> CoreError {
    CoreError::Config(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| usage(format!("override {key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|p| parse(key, p.trim())).collect()
}

impl PartialRunConfig {
    /// Loads a TOML config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("override {spec:?} is not of the form key=value")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "env" => self.env = Some(value.to_string()),
            "algo" => self.algo = Some(value.to_string()),
            "seed" => self.seed = Some(parse(key, value)?),
            "total_env_steps" => self.total_env_steps = Some(parse(key, value)?),
            "warmup_steps" => self.warmup_steps = Some(parse(key, value)?),
            "train_interval" => self.train_interval = Some(parse(key, value)?),
            "eval_interval" => self.eval_interval = Some(parse(key, value)?),
            "eval_episodes" => self.eval_episodes = Some(parse(key, value)?),
            "parallel_envs" => self.parallel_envs = Some(parse(key, value)?),
            "checkpoint_interval" => self.checkpoint_interval = Some(parse(key, value)?),
            "buffer_capacity" => self.buffer_capacity = Some(parse(key, value)?),
            "n_step" => self.n_step = Some(parse(key, value)?),
            "obs_history" => self.obs_history = Some(parse(key, value)?),
            "gamma" => self.gamma = Some(parse(key, value)?),
            "tau" => self.tau = Some(parse(key, value)?),
            "batch_size" => self.batch_size = Some(parse(key, value)?),
            "actor_lr" => self.actor_lr = Some(parse(key, value)?),
            "critic_lr" => self.critic_lr = Some(parse(key, value)?),
            "lead_lr" => self.lead_lr = Some(parse(key, value)?),
            "alpha_lr" => self.alpha_lr = Some(parse(key, value)?),
            "auto_alpha" => self.auto_alpha = Some(parse(key, value)?),
            "alpha_init" => self.alpha_init = Some(parse(key, value)?),
            "g_steps" => self.g_steps = Some(parse(key, value)?),
            "f_interval" => self.f_interval = Some(parse(key, value)?),
            "actor_hidden" => self.actor_hidden = Some(parse_list(key, value)?),
            "critic_hidden" => self.critic_hidden = Some(parse_list(key, value)?),
            "lead_embed" => self.lead_embed = Some(parse(key, value)?),
            "lead_heads" => self.lead_heads = Some(parse(key, value)?),
            "lead_ffn" => self.lead_ffn = Some(parse(key, value)?),
            "lead_blocks" => self.lead_blocks = Some(parse(key, value)?),
            "termination_reward" => self.termination_reward = Some(parse(key, value)?),
            "neighbor_limit" => self.neighbor_limit = Some(parse(key, value)?),
            "out_dir" => self.out_dir = Some(value.to_string()),
            _ => return Err(usage(format!("unknown override key {key:?}"))),
        }
        Ok(())
    }
}

/// Frames stacked by each environment implementation.
fn builtin_obs_history(env: &str) -> usize {
    if env == "simple_spread" {
        1
    } else {
        2
    }
}

impl RunConfig {
    /// Per-environment defaults for a validated (env, algo, seed) triple.
    pub fn defaults(env: &str, algo: &str, seed: u64) -> Result<RunConfig> {
        if !ENV_NAMES.contains(&env) {
            return Err(CoreError::UnknownName {
                kind: "environment",
                name: env.to_string(),
                available: ENV_NAMES.join(", "),
            });
        }
        VariantSpec::preset(algo)?;
        let particle = env == "simple_spread";
        let parallel_envs = 10;
        Ok(RunConfig {
            env: env.to_string(),
            algo: algo.to_string(),
            seed,
            total_env_steps: if particle { 2_000_000 } else { 500_000 },
            warmup_steps: if particle { 10_000 } else { 5_000 },
            train_interval: if particle { 50 } else { 20 },
            eval_interval: 2_000,
            eval_episodes: 10,
            parallel_envs,
            checkpoint_interval: 100_000,
            buffer_capacity: 1_000_000,
            n_step: if particle { 2 } else { 5 },
            obs_history: builtin_obs_history(env),
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256 * parallel_envs,
            actor_lr: if particle { 5e-4 } else { 3e-4 },
            critic_lr: if particle { 5e-4 } else { 1e-3 },
            lead_lr: if particle { 5e-4 } else { 1e-3 },
            alpha_lr: if particle { 5e-4 } else { 3e-4 },
            auto_alpha: !particle,
            alpha_init: if particle { 0.2 } else { 1.0 },
            g_steps: if particle { 2 } else { 4 },
            f_interval: 2,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            lead_embed: 128,
            lead_heads: 4,
            lead_ffn: None,
            lead_blocks: 2,
            termination_reward: None,
            neighbor_limit: None,
            out_dir: None,
        })
    }

    /// Layers `file` then `overrides` over the per-env defaults. `env`,
    /// `algo`, and `seed` may come from explicit arguments or from the
    /// layered partials; they must be present somewhere.
    pub fn resolve(
        env: Option<&str>,
        algo: Option<&str>,
        seed: Option<u64>,
        file: Option<PartialRunConfig>,
        overrides: &[String],
    ) -> Result<RunConfig> {
        let mut part = file.unwrap_or_default();
        for spec in overrides {
            part.apply_override(spec)?;
        }
        let env = env
            .map(str::to_string)
            .or_else(|| part.env.clone())
            .ok_or_else(|| usage("no environment given (--env or config file)"))?;
        let algo = algo
            .map(str::to_string)
            .or_else(|| part.algo.clone())
            .ok_or_else(|| usage("no algorithm given (--algo or config file)"))?;
        let seed = seed
            .or(part.seed)
            .ok_or_else(|| usage("no seed given (--seed or config file)"))?;

        let mut cfg = RunConfig::defaults(&env, &algo, seed)?;
        macro_rules! overlay {
            ($($f:ident),* $(,)?) => {
                $(if let Some(v) = part.$f { cfg.$f = v; })*
            };
        }
        overlay!(
            total_env_steps,
            warmup_steps,
            train_interval,
            eval_interval,
            eval_episodes,
            parallel_envs,
            checkpoint_interval,
            buffer_capacity,
            n_step,
            obs_history,
            gamma,
            tau,
            actor_lr,
            critic_lr,
            lead_lr,
            alpha_lr,
            auto_alpha,
            alpha_init,
            g_steps,
            f_interval,
            actor_hidden,
            critic_hidden,
            lead_embed,
            lead_heads,
            lead_blocks,
        );
        if part.lead_ffn.is_some() {
            cfg.lead_ffn = part.lead_ffn;
        }
        if part.termination_reward.is_some() {
            cfg.termination_reward = part.termination_reward;
        }
        if part.neighbor_limit.is_some() {
            cfg.neighbor_limit = part.neighbor_limit;
        }
        if part.out_dir.is_some() {
            cfg.out_dir = part.out_dir;
        }
        cfg.batch_size = part.batch_size.unwrap_or(256 * cfg.parallel_envs);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every cross-field constraint.
    pub fn validate(&self) -> Result<()> {
        let variant = VariantSpec::preset(&self.algo)?;
        variant.validate()?;
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return Err(CoreError::UnknownName {
                kind: "environment",
                name: self.env.clone(),
                available: ENV_NAMES.join(", "),
            });
        }
        let positive = [
            ("total_env_steps", self.total_env_steps),
            ("train_interval", self.train_interval),
            ("eval_interval", self.eval_interval),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        if self.eval_episodes == 0 || self.parallel_envs == 0 || self.batch_size == 0 {
            return Err(usage("eval_episodes, parallel_envs, batch_size must be positive"));
        }
        if self.buffer_capacity < self.parallel_envs {
            return Err(usage("buffer_capacity must cover at least one step per env"));
        }
        if self.n_step == 0 || self.g_steps == 0 || self.f_interval == 0 {
            return Err(usage("n_step, g_steps, f_interval must be positive"));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) || !(0.0 < self.tau && self.tau <= 1.0) {
            return Err(usage("gamma and tau must lie in (0, 1]"));
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("lead_lr", self.lead_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        if !self.alpha_init.is_finite() || self.alpha_init <= 0.0 {
            return Err(usage("alpha_init must be positive"));
        }
        if self.obs_history != builtin_obs_history(&self.env) {
            return Err(usage(format!(
                "obs_history is fixed at {} for {}",
                builtin_obs_history(&self.env),
                self.env
            )));
        }
        if self.warmup_steps >= self.total_env_steps {
            return Err(usage("warmup_steps must be smaller than total_env_steps"));
        }
        Ok(())
    }

    /// The artifact directory, derived when not set explicitly.
    pub fn resolved_out_dir(&self) -> std::path::PathBuf {
        match &self.out_dir {
            Some(d) => d.into(),
            None => format!("runs/{}_{}_seed{}", self.env, self.algo, self.seed).into(),
        }
    }

    /// The trainer-facing slice of this configuration.
    pub fn trainer_config(&self) -> TrainerConfig {
        let variant = VariantSpec::preset(&self.algo).expect("validated algo");
        TrainerConfig {
            gamma: self.gamma,
            tau: self.tau,
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            lead_lr: self.lead_lr,
            alpha_lr: self.alpha_lr,
            auto_alpha: self.auto_alpha,
            alpha_init: self.alpha_init,
            g_steps: self.g_steps,
            f_interval: self.f_interval,
            batch_size: self.batch_size,
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            lead_embed: self.lead_embed,
            lead_heads: self.lead_heads,
            lead_ffn: self.lead_ffn.unwrap_or_else(|| variant.default_lead_ffn()),
            lead_blocks: self.lead_blocks,
        }
    }

    /// Serializes the snapshot written into the artifact directory.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a snapshot back.
    pub fn from_snapshot(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
