//! Minimal continuous-action particle spread world: N agents cover N
//! landmarks under a shared minimum-distance reward, with local collision
//! penalties and double-integrator physics.

use rand::Rng;

use crate::env::api::{Env, RewardBreakdown, SpaceSpec, StepResult};
use crate::error::{CoreError, Result};
use crate::seedstream;

pub const N_AGENTS: usize = 3;
pub const MAX_STEPS: usize = 25;
pub const DAMPING: f64 = 0.25;
pub const DT: f64 = 0.1;
pub const ACCEL_GAIN: f64 = 5.0;
pub const AGENT_RADIUS: f64 = 0.15;

/// Sub-stream tag for initial placement draws.
const TAG_PLACEMENT: u64 = 0x01;

/// Positions and velocities of all particles.
#[derive(Debug, Clone)]
pub struct SpreadWorld {
    pub agent_pos: Vec<[f64; 2]>,
    pub agent_vel: Vec<[f64; 2]>,
    pub landmark_pos: Vec<[f64; 2]>,
    pub step_count: usize,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

/// Shared coverage term: negated sum over landmarks of the distance to the
/// closest agent.
pub fn global_coverage(world: &SpreadWorld) -> f64 {
    -world
        .landmark_pos
        .iter()
        .map(|&l| {
            world
                .agent_pos
                .iter()
                .map(|&a| dist2(a, l))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>()
}

/// Per-agent collision penalties: -1 for every other agent within two radii.
pub fn local_collisions(world: &SpreadWorld) -> Vec<f64> {
    let n = world.agent_pos.len();
    let mut local = vec![0.0; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dist2(world.agent_pos[i], world.agent_pos[j]) < 2.0 * AGENT_RADIUS {
                local[i] -= 1.0;
                local[j] -= 1.0;
            }
        }
    }
    local
}

/// Particle spread environment with N agents and N landmarks.
pub struct SpreadEnv {
    space: SpaceSpec,
    world: SpreadWorld,
    done: bool,
}

impl SpreadEnv {
    pub fn new() -> Self {
        // [own vel (2) ‖ own pos (2) ‖ landmarks (2N) ‖ others (2(N-1))]
        let obs_dim = 4 + 2 * N_AGENTS + 2 * (N_AGENTS - 1);
        SpreadEnv {
            space: SpaceSpec::uniform(N_AGENTS, obs_dim, 2),
            world: SpreadWorld {
                agent_pos: vec![[0.0; 2]; N_AGENTS],
                agent_vel: vec![[0.0; 2]; N_AGENTS],
                landmark_pos: vec![[0.0; 2]; N_AGENTS],
                step_count: 0,
            },
            done: true, // force a reset before the first step
        }
    }

    /// Wraps an existing world; used by tests to script exact scenarios.
    pub fn from_world(world: SpreadWorld) -> Self {
        let mut env = SpreadEnv::new();
        env.world = world;
        env.done = false;
        env
    }

    /// Read access to the world for inspection in tests and diagnostics.
    pub fn world(&self) -> &SpreadWorld {
        &self.world
    }

    /// Current per-agent observations.
    pub fn observe(&self) -> Vec<Vec<f64>> {
        (0..N_AGENTS)
            .map(|i| {
                let me = self.world.agent_pos[i];
                let mut o = Vec::with_capacity(self.space.obs_dims[i]);
                o.extend_from_slice(&self.world.agent_vel[i]);
                o.extend_from_slice(&me);
                for l in &self.world.landmark_pos {
                    o.push(l[0] - me[0]);
                    o.push(l[1] - me[1]);
                }
                for (j, p) in self.world.agent_pos.iter().enumerate() {
                    if j != i {
                        o.push(p[0] - me[0]);
                        o.push(p[1] - me[1]);
                    }
                }
                o
            })
            .collect()
    }
}

impl Default for SpreadEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Env for SpreadEnv {
    fn name(&self) -> &str {
        "simple_spread"
    }

    fn space(&self) -> &SpaceSpec {
        &self.space
    }

    fn max_steps(&self) -> usize {
        MAX_STEPS
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seedstream::stream_rng(seed, TAG_PLACEMENT);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
        };
        self.world.agent_pos = (0..N_AGENTS).map(|_| draw(&mut rng)).collect();
        self.world.landmark_pos = (0..N_AGENTS).map(|_| draw(&mut rng)).collect();
        self.world.agent_vel = vec![[0.0; 2]; N_AGENTS];
        self.world.step_count = 0;
        self.done = false;
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult> {
        if self.done {
            return Err(CoreError::EpisodeOver);
        }
        if actions.len() != N_AGENTS {
            return Err(CoreError::Dimension(format!(
                "expected {} action vectors, got {}",
                N_AGENTS,
                actions.len()
            )));
        }
        for (i, a) in actions.iter().enumerate() {
            if a.len() != 2 {
                return Err(CoreError::Dimension(format!(
                    "agent {i}: expected a 2-dimensional action, got {}",
                    a.len()
                )));
            }
        }

        for ((pos, vel), act) in self
            .world
            .agent_pos
            .iter_mut()
            .zip(&mut self.world.agent_vel)
            .zip(actions)
        {
            for k in 0..2 {
                let force = act[k].clamp(-1.0, 1.0);
                vel[k] = (1.0 - DAMPING) * vel[k] + force * DT * ACCEL_GAIN;
                pos[k] += vel[k] * DT;
            }
        }
        self.world.step_count += 1;

        let g = global_coverage(&self.world);
        let local = local_collisions(&self.world);
        let r_scalar: Vec<f64> = local.iter().map(|&l| 0.5 * g + 0.5 * l).collect();
        let r_team: f64 = r_scalar.iter().sum();

        let truncated = self.world.step_count >= MAX_STEPS;
        self.done = truncated;

        Ok(StepResult {
            observations: self.observe(),
            local_rewards: r_scalar.clone(),
            team_reward: r_team,
            terminated: false,
            truncated,
            info: RewardBreakdown {
                r_global: g,
                r_local: local,
                r_scalar,
                r_team,
                ..RewardBreakdown::default()
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_world<R: Rng>(rng: &mut R) -> SpreadWorld {
        let draw =
            |rng: &mut R| -> Vec<[f64; 2]> {
                (0..N_AGENTS)
                    .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                    .collect()
            };
        SpreadWorld {
            agent_pos: draw(rng),
            agent_vel: vec![[0.0; 2]; N_AGENTS],
            landmark_pos: draw(rng),
            step_count: 0,
        }
    }

    #[test]
    fn coverage_matches_naive_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for _ in 0..1000 {
            let w = random_world(&mut rng);
            let mut expect = 0.0;
            for l in &w.landmark_pos {
                let mut best = f64::INFINITY;
                for a in &w.agent_pos {
                    let d = ((a[0] - l[0]).powi(2) + (a[1] - l[1]).powi(2)).sqrt();
                    if d < best {
                        best = d;
                    }
                }
                expect -= best;
            }
            assert!((global_coverage(&w) - expect).abs() < 1e-12);
            assert!(global_coverage(&w) <= 0.0);
        }
    }

    #[test]
    fn agents_on_landmarks_without_collisions_score_zero() {
        let pts = vec![[0.0, 0.0], [0.9, 0.0], [0.0, 0.9]];
        let w = SpreadWorld {
            agent_pos: pts.clone(),
            agent_vel: vec![[0.0; 2]; 3],
            landmark_pos: pts,
            step_count: 0,
        };
        let mut env = SpreadEnv::from_world(w);
        let r = env.step(&vec![vec![0.0; 2]; 3]).unwrap();
        assert_eq!(r.local_rewards, vec![0.0; 3]);
        assert_eq!(r.team_reward, 0.0);
    }

    #[test]
    fn overlapping_agents_each_take_a_collision_penalty() {
        let w = SpreadWorld {
            agent_pos: vec![[0.0, 0.0], [0.2, 0.0], [0.9, 0.9]],
            agent_vel: vec![[0.0; 2]; 3],
            landmark_pos: vec![[0.0, 0.0], [0.2, 0.0], [0.9, 0.9]],
            step_count: 0,
        };
        let local = local_collisions(&w);
        assert_eq!(local, vec![-1.0, -1.0, 0.0]);

        // Through the env: reward composition r = g/2 + local/2.
        let mut env = SpreadEnv::from_world(w);
        let r = env.step(&vec![vec![0.0; 2]; 3]).unwrap();
        let g = r.info.r_global;
        assert!((r.local_rewards[0] - (0.5 * g - 0.5)).abs() < 1e-12);
        assert!((r.local_rewards[2] - 0.5 * g).abs() < 1e-12);
        let team: f64 = r.local_rewards.iter().sum();
        assert_eq!(r.team_reward, team);
    }

    #[test]
    fn permuting_agents_permutes_local_terms_and_keeps_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(201);
        for _ in 0..100 {
            let w = random_world(&mut rng);
            let mut p = w.clone();
            p.agent_pos.rotate_left(1);
            assert!((global_coverage(&w) - global_coverage(&p)).abs() < 1e-12);
            let (a, b) = (local_collisions(&w), local_collisions(&p));
            let mut a_rot = a.clone();
            a_rot.rotate_left(1);
            assert_eq!(a_rot, b);
        }
    }

    #[test]
    fn physics_follows_the_damped_double_integrator() {
        let w = SpreadWorld {
            agent_pos: vec![[0.0, 0.0], [0.5, 0.5], [-0.5, 0.5]],
            agent_vel: vec![[0.0; 2]; 3],
            landmark_pos: vec![[0.9, 0.9], [-0.9, 0.9], [0.9, -0.9]],
            step_count: 0,
        };
        let mut env = SpreadEnv::from_world(w);
        let mut acts = vec![vec![0.0; 2]; 3];
        acts[0] = vec![1.0, 0.0];
        env.step(&acts).unwrap();
        // vel = 0.75*0 + 1*0.1*5 = 0.5; pos = 0 + 0.5*0.1 = 0.05
        assert_eq!(env.world().agent_vel[0], [0.5, 0.0]);
        assert_eq!(env.world().agent_pos[0], [0.05, 0.0]);
        env.step(&vec![vec![0.0; 2]; 3]).unwrap();
        // vel = 0.75*0.5 = 0.375; pos = 0.05 + 0.0375
        assert_eq!(env.world().agent_vel[0], [0.375, 0.0]);
        assert!((env.world().agent_pos[0][0] - 0.0875).abs() < 1e-15);
    }

    #[test]
    fn observation_layout_matches_documented_order() {
        let w = SpreadWorld {
            agent_pos: vec![[0.1, 0.2], [0.5, 0.5], [-0.5, 0.5]],
            agent_vel: vec![[0.3, -0.3], [0.0, 0.0], [0.0, 0.0]],
            landmark_pos: vec![[0.9, 0.9], [-0.9, 0.9], [0.9, -0.9]],
            step_count: 0,
        };
        let env = SpreadEnv::from_world(w);
        let obs = env.observe();
        assert_eq!(obs[0].len(), 14);
        let expect = [
            0.3, -0.3, // own velocity
            0.1, 0.2, // own position
            0.8, 0.7, -1.0, 0.7, 0.8, -1.1, // landmarks relative
            0.4, 0.3, -0.6, 0.3, // other agents relative
        ];
        for (got, want) in obs[0].iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn episode_truncates_at_twenty_five_steps_and_never_terminates() {
        let mut env = SpreadEnv::new();
        env.reset(4);
        for t in 1..=MAX_STEPS {
            let r = env.step(&vec![vec![0.1; 2]; 3]).unwrap();
            assert!(!r.terminated);
            assert_eq!(r.truncated, t == MAX_STEPS);
        }
        assert!(matches!(
            env.step(&vec![vec![0.0; 2]; 3]),
            Err(CoreError::EpisodeOver)
        ));
    }

    #[test]
    fn reset_is_deterministic_in_the_seed() {
        let mut env = SpreadEnv::new();
        let a = env.reset(42);
        let b = env.reset(42);
        assert_eq!(a, b);
        assert_ne!(a, env.reset(43));
    }
}
