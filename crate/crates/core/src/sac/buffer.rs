//! n-step replay buffer over joint transitions from parallel environment
//! workers, keeping one lane per worker so lookahead never mixes streams.
//!
//! Rewards are aggregated per stream (each agent's local stream and the team
//! stream) as `Σ_{j<h'} γ^j r_{t+j}` with the horizon `h'` cut at episode
//! boundaries: termination stops bootstrapping, truncation only stops the
//! accumulation.

use ndarray::Array2;
use rand::Rng;
use std::collections::VecDeque;

use crate::error::{CoreError, Result};
use crate::nn::Scalar;

/// One joint step from a single environment instance.
#[derive(Debug, Clone)]
pub struct JointTransition {
    /// Per-agent observations o_t.
    pub obs: Vec<Vec<f32>>,
    /// Per-agent actions a_t.
    pub act: Vec<Vec<f32>>,
    /// Per-agent scalar rewards.
    pub local_rewards: Vec<f64>,
    /// Team reward.
    pub team_reward: f64,
    /// Per-agent observations o_{t+1}.
    pub next_obs: Vec<Vec<f32>>,
    /// Episode ended by collision (no bootstrapping past this step).
    pub terminated: bool,
    /// Episode ended by the step limit (bootstrapping continues).
    pub truncated: bool,
}

/// Internal storage: next_obs is kept only on episode-ending records, since
/// mid-episode successors equal the following record's observations.
struct Record {
    obs: Vec<Vec<f32>>,
    act: Vec<Vec<f32>>,
    local_rewards: Vec<f64>,
    team_reward: f64,
    terminated: bool,
    truncated: bool,
    end_obs: Option<Vec<Vec<f32>>>,
}

impl Record {
    fn ends_episode(&self) -> bool {
        self.terminated || self.truncated
    }
}

struct Lane {
    records: VecDeque<Record>,
    /// Length of the trailing run of records after the last episode end.
    trailing_run: usize,
}

impl Lane {
    /// Bases whose n-step window can be completed: every record except the
    /// last min(trailing_run, h) of an unfinished episode.
    fn sampleable(&self, h: usize) -> usize {
        self.records.len() - self.trailing_run.min(h)
    }
}

/// A sampled minibatch with per-stream aggregated rewards, shaped for
/// matrix-based losses over a generic scalar type.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    /// Per agent: (B, obs_dim) observations at the window start.
    pub obs: Vec<Array2<F>>,
    /// Per agent: (B, act_dim) stored actions at the window start.
    pub act: Vec<Array2<F>>,
    /// Per agent: (B, obs_dim) observations h' steps ahead.
    pub next_obs: Vec<Array2<F>>,
    /// Per agent: (B, 1) aggregated local-stream rewards.
    pub local_r: Vec<Array2<F>>,
    /// (B, 1) aggregated team-stream rewards.
    pub team_r: Array2<F>,
    /// (B, 1) discount carried to the bootstrap state: γ^{h'}.
    pub gamma_eff: Array2<F>,
    /// (B, 1) bootstrap mask: 0 when the window hit a termination, else 1.
    pub not_done: Array2<F>,
}

impl<F> Batch<F> {
    pub fn size(&self) -> usize {
        self.team_r.nrows()
    }

    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }
}

/// Replay buffer with parallel-lane storage and n-step sampling.
pub struct ReplayBuffer {
    lanes: Vec<Lane>,
    capacity: usize,
    len: usize,
    h: usize,
    gamma: f64,
}

impl ReplayBuffer {
    /// `capacity` is the total stored transition count across all `n_lanes`
    /// worker lanes; `h` is the n-step horizon; `gamma` the discount.
    pub fn new(capacity: usize, n_lanes: usize, h: usize, gamma: f64) -> Self {
        assert!(capacity >= n_lanes && n_lanes >= 1 && h >= 1);
        ReplayBuffer {
            lanes: (0..n_lanes)
                .map(|_| Lane {
                    records: VecDeque::new(),
                    trailing_run: 0,
                })
                .collect(),
            capacity,
            len: 0,
            h,
            gamma,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Appends one transition from worker `lane`.
    pub fn store(&mut self, lane: usize, tr: JointTransition) {
        let ends = tr.terminated || tr.truncated;
        let rec = Record {
            obs: tr.obs,
            act: tr.act,
            local_rewards: tr.local_rewards,
            team_reward: tr.team_reward,
            terminated: tr.terminated,
            truncated: tr.truncated,
            end_obs: if ends { Some(tr.next_obs) } else { None },
        };
        let l = &mut self.lanes[lane];
        l.records.push_back(rec);
        l.trailing_run = if ends { 0 } else { l.trailing_run + 1 };
        self.len += 1;
        if self.len > self.capacity {
            // Evict the oldest record of the fullest lane.
            let big = (0..self.lanes.len())
                .max_by_key(|&i| self.lanes[i].records.len())
                .unwrap();
            let l = &mut self.lanes[big];
            l.records.pop_front();
            l.trailing_run = l.trailing_run.min(l.records.len());
            self.len -= 1;
        }
    }

    /// Draws `batch_size` n-step windows uniformly over all sampleable base
    /// positions and aggregates their rewards.
    pub fn sample<F: Scalar, R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Batch<F>> {
        let counts: Vec<usize> = self.lanes.iter().map(|l| l.sampleable(self.h)).collect();
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(CoreError::Config(
                "cannot sample from a replay buffer with no completed windows".into(),
            ));
        }
        let first = self
            .lanes
            .iter()
            .find(|l| !l.records.is_empty())
            .expect("nonzero total implies a non-empty lane");
        let n_agents = first.records[0].obs.len();
        let obs_dims: Vec<usize> = first.records[0].obs.iter().map(|o| o.len()).collect();
        let act_dims: Vec<usize> = first.records[0].act.iter().map(|a| a.len()).collect();

        let b = batch_size;
        let mut obs: Vec<Array2<F>> = obs_dims.iter().map(|&d| Array2::zeros((b, d))).collect();
        let mut act: Vec<Array2<F>> = act_dims.iter().map(|&d| Array2::zeros((b, d))).collect();
        let mut next_obs: Vec<Array2<F>> =
            obs_dims.iter().map(|&d| Array2::zeros((b, d))).collect();
        let mut local_r: Vec<Array2<F>> = (0..n_agents).map(|_| Array2::zeros((b, 1))).collect();
        let mut team_r = Array2::zeros((b, 1));
        let mut gamma_eff = Array2::zeros((b, 1));
        let mut not_done = Array2::zeros((b, 1));

        for row in 0..b {
            let mut pick = rng.gen_range(0..total);
            let mut lane_idx = 0;
            while pick >= counts[lane_idx] {
                pick -= counts[lane_idx];
                lane_idx += 1;
            }
            let records = &self.lanes[lane_idx].records;
            let t = pick;

            let mut local_acc = vec![0.0f64; n_agents];
            let mut team_acc = 0.0f64;
            let mut discount = 1.0f64;
            let mut h_prime = 0;
            let mut terminated = false;
            for j in 0..self.h {
                let r = &records[t + j];
                for (acc, &lr) in local_acc.iter_mut().zip(&r.local_rewards) {
                    *acc += discount * lr;
                }
                team_acc += discount * r.team_reward;
                discount *= self.gamma;
                h_prime = j + 1;
                if r.ends_episode() {
                    terminated = r.terminated;
                    break;
                }
            }
            let last = &records[t + h_prime - 1];
            let bootstrap_obs: &Vec<Vec<f32>> = match &last.end_obs {
                Some(o) => o,
                None => &records[t + h_prime].obs,
            };

            for (a, dst) in obs.iter_mut().enumerate() {
                for (c, &v) in records[t].obs[a].iter().enumerate() {
                    dst[[row, c]] = F::from_f64(v as f64);
                }
            }
            for (a, dst) in act.iter_mut().enumerate() {
                for (c, &v) in records[t].act[a].iter().enumerate() {
                    dst[[row, c]] = F::from_f64(v as f64);
                }
            }
            for (a, dst) in next_obs.iter_mut().enumerate() {
                for (c, &v) in bootstrap_obs[a].iter().enumerate() {
                    dst[[row, c]] = F::from_f64(v as f64);
                }
            }
            for (a, dst) in local_r.iter_mut().enumerate() {
                dst[[row, 0]] = F::from_f64(local_acc[a]);
            }
            team_r[[row, 0]] = F::from_f64(team_acc);
            gamma_eff[[row, 0]] = F::from_f64(self.gamma.powi(h_prime as i32));
            not_done[[row, 0]] = F::from_f64(if terminated { 0.0 } else { 1.0 });
        }

        Ok(Batch {
            obs,
            act,
            next_obs,
            local_r,
            team_r,
            gamma_eff,
            not_done,
        })
    }
}
