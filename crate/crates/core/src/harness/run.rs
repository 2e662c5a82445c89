//! The experiment loop: parallel collection, warmup, train/eval scheduling,
//! checkpoints, and the artifact directory.
//!
//! Reproducibility contract: every random draw comes from a stream derived
//! from the master seed (`seedstream::tags`), environment instances are
//! stepped in fixed index order, and evaluation pauses collection. Given the
//! same (config, seed) the metrics file is byte-identical across runs.
//!
//! Draw-order contract per collection iteration: warmup actions draw
//! env-major/agent-major/dimension-major from the COLLECT stream; policy
//! collection draws per-agent noise over the stacked P-row batch (agents
//! ascending) from the same stream. Each parallel env owns an ENV+i child
//! stream that yields its episode seeds, so one env finishing an episode
//! never shifts another env's draws. Evaluation derives a fresh stream per
//! (EVAL, env_step) pair, independent of collection history.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;

use crate::env::{make_env_with, Env, EnvOverrides};
use crate::error::{CoreError, Result};
use crate::nn::checkpoint;
use crate::sac::{JointTransition, ReplayBuffer};
use crate::seedstream::{stream_rng, substream, tags};
use crate::trainer::{TrainStats, Trainer, VariantSpec};

use super::config::RunConfig;
use super::metrics::{MetricsRow, MetricsWriter};

/// Summary of a finished training run.
#[derive(Debug)]
pub struct RunOutcome {
    /// Artifact directory.
    pub dir: PathBuf,
    /// Evaluation rows written.
    pub eval_rows: usize,
    /// Gradient-bearing train steps executed.
    pub train_steps: u64,
    /// Final aggregate env-step count (total rounded up to a multiple of P).
    pub env_steps: u64,
    /// Wall-clock duration.
    pub wall_seconds: f64,
}

/// Mean team return, episode length, and per-agent returns of one
/// deterministic evaluation.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub return_mean: f64,
    pub return_std: f64,
    pub len_mean: f64,
    pub len_std: f64,
    pub agent_returns: Vec<f64>,
}

fn env_overrides(cfg: &RunConfig) -> EnvOverrides {
    EnvOverrides {
        termination_reward: cfg.termination_reward,
        neighbor_limit: cfg.neighbor_limit,
    }
}

fn to_f32_rows(obs: &[Vec<f64>]) -> Vec<Vec<f32>> {
    obs.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect()
}

fn mean_and_sample_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs `eval_episodes` deterministic-policy episodes on freshly seeded
/// environments drawn from the given stream.
pub fn evaluate(
    trainer: &Trainer<f32>,
    cfg: &RunConfig,
    eval_parent: u64,
    point: u64,
) -> Result<EvalSummary> {
    let overrides = env_overrides(cfg);
    let mut rng = stream_rng(eval_parent, point);
    let mut returns = Vec::with_capacity(cfg.eval_episodes);
    let mut lengths = Vec::with_capacity(cfg.eval_episodes);
    let mut agent_sums: Vec<f64> = Vec::new();
    for _ in 0..cfg.eval_episodes {
        let mut env = make_env_with(&cfg.env, &overrides)?;
        let n = env.space().n_agents;
        if agent_sums.is_empty() {
            agent_sums = vec![0.0; n];
        }
        let mut obs = env.reset(rng.gen());
        let mut team = 0.0;
        let mut steps = 0u64;
        loop {
            let rows: Vec<Array2<f32>> = obs
                .iter()
                .map(|o| {
                    Array2::from_shape_vec((1, o.len()), o.iter().map(|&x| x as f32).collect())
                        .expect("row shape")
                })
                .collect();
            let acts = trainer.act_deterministic(&rows);
            let act_vecs: Vec<Vec<f64>> = acts
                .iter()
                .map(|a| a.row(0).iter().map(|&x| x as f64).collect())
                .collect();
            let step = env.step(&act_vecs)?;
            team += step.team_reward;
            for (s, r) in agent_sums.iter_mut().zip(&step.local_rewards) {
                *s += r;
            }
            steps += 1;
            if step.terminated || step.truncated {
                break;
            }
            obs = step.observations;
        }
        returns.push(team);
        lengths.push(steps as f64);
    }
    let (return_mean, return_std) = mean_and_sample_std(&returns);
    let (len_mean, len_std) = mean_and_sample_std(&lengths);
    let agent_returns = agent_sums
        .iter()
        .map(|s| s / cfg.eval_episodes as f64)
        .collect();
    Ok(EvalSummary {
        return_mean,
        return_std,
        len_mean,
        len_std,
        agent_returns,
    })
}

fn manifest_json(
    cfg: &RunConfig,
    started_unix_ms: u128,
    outcome: Option<(&RunOutcome, &[String])>,
) -> String {
    let mut m = serde_json::Map::new();
    m.insert("env".into(), cfg.env.clone().into());
    m.insert("algo".into(), cfg.algo.clone().into());
    m.insert("seed".into(), cfg.seed.into());
    m.insert("total_env_steps".into(), cfg.total_env_steps.into());
    m.insert("started_unix_ms".into(), (started_unix_ms as u64).into());
    m.insert(
        "crate_version".into(),
        env!("CARGO_PKG_VERSION").to_string().into(),
    );
    if let Some((out, ckpts)) = outcome {
        m.insert("completed_env_steps".into(), out.env_steps.into());
        m.insert("train_steps".into(), out.train_steps.into());
        m.insert("eval_rows".into(), (out.eval_rows as u64).into());
        m.insert("wall_seconds".into(), out.wall_seconds.into());
        m.insert(
            "checkpoints".into(),
            ckpts.iter().cloned().map(serde_json::Value::from).collect::<Vec<_>>().into(),
        );
        m.insert("finished".into(), true.into());
    } else {
        m.insert("finished".into(), false.into());
    }
    serde_json::to_string_pretty(&serde_json::Value::Object(m)).expect("manifest serializes")
}

/// Trains per the config and fills an artifact directory: `config.toml`,
/// append-only `metrics.csv`, `manifest.json`, and `checkpoints/`.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let started_unix_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);

    let dir = cfg.resolved_out_dir();
    std::fs::create_dir_all(dir.join("checkpoints"))?;
    let overrides = env_overrides(cfg);
    // Probe the env first so config/env errors surface before any files.
    let probe = make_env_with(&cfg.env, &overrides)?;
    let space = probe.space().clone();
    drop(probe);

    let mut metrics = MetricsWriter::create(&dir.join("metrics.csv"), space.n_agents)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    std::fs::write(dir.join("manifest.json"), manifest_json(cfg, started_unix_ms, None))?;

    let variant = VariantSpec::preset(&cfg.algo)?;
    let mut init_rng = stream_rng(cfg.seed, tags::INIT);
    let mut trainer = Trainer::<f32>::new(
        variant,
        &space.obs_dims,
        &space.act_dims,
        &cfg.trainer_config(),
        &mut init_rng,
    )?;
    let mut buffer = ReplayBuffer::new(
        cfg.buffer_capacity,
        cfg.parallel_envs,
        cfg.n_step,
        cfg.gamma,
    );
    let mut collect_rng = stream_rng(cfg.seed, tags::COLLECT);
    let mut train_rng = stream_rng(cfg.seed, tags::TRAIN);
    let eval_parent = substream(cfg.seed, tags::EVAL);

    let p = cfg.parallel_envs;
    let mut envs: Vec<Box<dyn Env>> = Vec::with_capacity(p);
    let mut env_rngs = Vec::with_capacity(p);
    for i in 0..p {
        envs.push(make_env_with(&cfg.env, &overrides)?);
        env_rngs.push(stream_rng(cfg.seed, tags::ENV + i as u64));
    }
    let mut obs: Vec<Vec<Vec<f64>>> = envs
        .iter_mut()
        .zip(env_rngs.iter_mut())
        .map(|(e, r)| e.reset(r.gen()))
        .collect();

    let n_agents = space.n_agents;
    let mut env_step = 0u64;
    let mut since_train = 0u64;
    let mut since_eval = 0u64;
    let mut eval_point = 0u64;
    let mut next_ckpt = if cfg.checkpoint_interval > 0 {
        cfg.checkpoint_interval
    } else {
        u64::MAX
    };
    let mut train_steps = 0u64;
    let mut eval_rows = 0usize;
    let mut last_stats: Option<TrainStats> = None;
    let mut checkpoints: Vec<String> = Vec::new();

    let save_ckpt = |trainer: &Trainer<f32>, dir: &Path, name: &str| -> Result<String> {
        let rel = format!("checkpoints/{name}.bin");
        let entries = trainer.param_entries();
        checkpoint::save(&dir.join(&rel), &entries)?;
        Ok(rel)
    };

    while env_step < cfg.total_env_steps {
        // Select one action vector per env, per agent.
        let warmup = env_step < cfg.warmup_steps;
        let actions: Vec<Vec<Vec<f64>>> = if warmup {
            obs.iter()
                .map(|_| {
                    (0..n_agents)
                        .map(|a| {
                            (0..space.act_dims[a])
                                .map(|d| {
                                    let lo = space.act_low[a][d];
                                    let hi = space.act_high[a][d];
                                    collect_rng.gen_range(lo..=hi)
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        } else {
            // Stack P rows per agent so one batched forward serves all envs.
            let stacked: Vec<Array2<f32>> = (0..n_agents)
                .map(|a| {
                    let d = space.obs_dims[a];
                    Array2::from_shape_fn((p, d), |(e, j)| obs[e][a][j] as f32)
                })
                .collect();
            let acts = trainer.act_stochastic(&stacked, &mut collect_rng);
            (0..p)
                .map(|e| {
                    (0..n_agents)
                        .map(|a| acts[a].row(e).iter().map(|&x| x as f64).collect())
                        .collect()
                })
                .collect()
        };

        // Step every env in index order; reset finished episodes from each
        // env's own seed stream.
        for e in 0..p {
            let step = envs[e].step(&actions[e])?;
            buffer.store(
                e,
                JointTransition {
                    obs: to_f32_rows(&obs[e]),
                    act: actions[e]
                        .iter()
                        .map(|a| a.iter().map(|&x| x as f32).collect())
                        .collect(),
                    local_rewards: step.local_rewards.clone(),
                    team_reward: step.team_reward,
                    next_obs: to_f32_rows(&step.observations),
                    terminated: step.terminated,
                    truncated: step.truncated,
                },
            );
            if step.terminated || step.truncated {
                obs[e] = envs[e].reset(env_rngs[e].gen());
            } else {
                obs[e] = step.observations;
            }
        }
        env_step += p as u64;

        // Warmup collects data but never counts toward the train cadence.
        if env_step <= cfg.warmup_steps {
            since_train = 0;
        } else {
            since_train += p as u64;
        }
        while since_train >= cfg.train_interval {
            since_train -= cfg.train_interval;
            let stats = trainer.train_step(&buffer, &mut train_rng)?;
            train_steps += 1;
            last_stats = Some(stats);
        }

        since_eval += p as u64;
        while since_eval >= cfg.eval_interval {
            since_eval -= cfg.eval_interval;
            eval_point += cfg.eval_interval;
            let s = evaluate(&trainer, cfg, eval_parent, eval_point)?;
            let nanf = f64::NAN;
            let st = last_stats.as_ref();
            let row = MetricsRow {
                env_step: eval_point,
                return_mean: s.return_mean,
                return_std: s.return_std,
                len_mean: s.len_mean,
                len_std: s.len_std,
                agent_returns: s.agent_returns,
                lead_critic_loss: st.map_or(nanf, |t| t.lead_critic_loss),
                local_critic_loss: st.map_or(nanf, |t| t.local_critic_loss),
                actor_loss: st.map_or(nanf, |t| t.actor_loss),
                alpha: st.map_or(nanf, |t| t.mean_alpha),
                alpha_lc: st.map_or(nanf, |t| t.mean_alpha_lc),
            };
            metrics.append(&row)?;
            eval_rows += 1;
            eprintln!(
                "[{}] step {:>9} return {:>9.2} len {:>6.1} trains {}",
                cfg.algo, eval_point, row.return_mean, row.len_mean, train_steps
            );
        }

        if env_step >= next_ckpt {
            let name = format!("ckpt_{env_step}");
            checkpoints.push(save_ckpt(&trainer, &dir, &name)?);
            next_ckpt += cfg.checkpoint_interval;
        }
    }

    checkpoints.push(save_ckpt(&trainer, &dir, "ckpt_final")?);
    let outcome = RunOutcome {
        dir: dir.clone(),
        eval_rows,
        train_steps,
        env_steps: env_step,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        manifest_json(cfg, started_unix_ms, Some((&outcome, &checkpoints))),
    )?;
    Ok(outcome)
}

/// Rebuilds the trainer from an artifact directory and loads a checkpoint
/// (`ckpt_final` unless another name is given).
pub fn load_trained(dir: &Path, ckpt: Option<&str>) -> Result<(RunConfig, Trainer<f32>)> {
    let cfg = RunConfig::from_snapshot(&dir.join("config.toml"))?;
    let overrides = env_overrides(&cfg);
    let probe = make_env_with(&cfg.env, &overrides)?;
    let space = probe.space().clone();
    drop(probe);
    let mut init_rng = stream_rng(cfg.seed, tags::INIT);
    let mut trainer = Trainer::<f32>::new(
        VariantSpec::preset(&cfg.algo)?,
        &space.obs_dims,
        &space.act_dims,
        &cfg.trainer_config(),
        &mut init_rng,
    )?;
    let name = ckpt.unwrap_or("ckpt_final");
    let path = dir.join("checkpoints").join(format!("{name}.bin"));
    if !path.exists() {
        return Err(CoreError::Checkpoint(format!("{} not found", path.display())));
    }
    let entries = checkpoint::load::<f32>(&path)?;
    trainer.load_params(&entries)?;
    Ok((cfg, trainer))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_run_config(dir: &Path, seed: u64) -> RunConfig {
        let mut cfg = RunConfig::defaults("escort3", "isac", seed).unwrap();
        cfg.total_env_steps = 800;
        cfg.warmup_steps = 300;
        cfg.train_interval = 100;
        cfg.eval_interval = 400;
        cfg.eval_episodes = 2;
        cfg.parallel_envs = 2;
        cfg.batch_size = 32;
        cfg.checkpoint_interval = 0;
        cfg.actor_hidden = vec![16];
        cfg.critic_hidden = vec![16];
        cfg.out_dir = Some(dir.to_string_lossy().into_owned());
        cfg
    }

    #[test]
    fn a_short_run_fills_the_artifact_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let cfg = tiny_run_config(&dir, 0);
        let out = run_training(&cfg).unwrap();
        assert_eq!(out.env_steps, 800);
        assert_eq!(out.eval_rows, 2); // evals at 400 and 800
        // Warmup 300 → cadence counts from there: trains at 400, 500, ...
        assert_eq!(out.train_steps, 5);
        assert!(dir.join("config.toml").exists());
        assert!(dir.join("metrics.csv").exists());
        assert!(dir.join("checkpoints/ckpt_final.bin").exists());
        let manifest = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"finished\": true"));

        let rows = super::super::metrics::read_metrics(&dir.join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].env_step, 400);
        assert_eq!(rows[1].env_step, 800);
        assert!(rows[0].return_mean.is_finite());
        assert!(rows[1].actor_loss.is_finite());
    }

    #[test]
    fn identical_seeds_give_byte_identical_metrics() {
        let tmp = tempfile::tempdir().unwrap();
        let (d1, d2, d3) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
        run_training(&tiny_run_config(&d1, 7)).unwrap();
        run_training(&tiny_run_config(&d2, 7)).unwrap();
        run_training(&tiny_run_config(&d3, 8)).unwrap();
        let m1 = std::fs::read(d1.join("metrics.csv")).unwrap();
        let m2 = std::fs::read(d2.join("metrics.csv")).unwrap();
        let m3 = std::fs::read(d3.join("metrics.csv")).unwrap();
        assert_eq!(m1, m2, "same seed must reproduce the byte stream");
        assert_ne!(m1, m3, "different seeds must differ");
    }

    #[test]
    fn checkpoints_reload_into_a_matching_policy() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        run_training(&tiny_run_config(&dir, 3)).unwrap();
        let (cfg, trainer) = load_trained(&dir, None).unwrap();
        assert_eq!(cfg.seed, 3);
        // The reloaded policy evaluates identically to a fresh evaluation
        // with the same stream.
        let parent = substream(cfg.seed, tags::EVAL);
        let a = evaluate(&trainer, &cfg, parent, 123).unwrap();
        let b = evaluate(&trainer, &cfg, parent, 123).unwrap();
        assert_eq!(a.return_mean, b.return_mean);
        assert!(load_trained(&dir, Some("missing")).is_err());
    }

    #[test]
    fn warmup_runs_contain_zero_gradient_updates() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        let mut cfg = tiny_run_config(&dir, 1);
        cfg.total_env_steps = 400;
        cfg.warmup_steps = 398;
        let out = run_training(&cfg).unwrap();
        assert_eq!(out.train_steps, 0);
        let rows = super::super::metrics::read_metrics(&dir.join("metrics.csv")).unwrap();
        assert!(rows[0].actor_loss.is_nan(), "no training happened yet");
    }
}
