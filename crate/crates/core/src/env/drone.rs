//! Drone escort and surveillance worlds: point-mass kinematics, a moving
//! target with a randomized piecewise-constant-velocity schedule, relative
//! observations with history stacking and optional partial observability,
//! shaped rewards, and collision termination.

use rand::Rng;

use crate::env::api::{Env, RewardBreakdown, SpaceSpec, StepResult};
use crate::error::{CoreError, Result};
use crate::seedstream;

/// Side length of the square map, in map units.
pub const MAP_SIZE: f64 = 8.0;
/// Positional step applied per unit of action.
pub const ACTION_FACTOR: f64 = 0.2;
/// Two agents closer than this distance collide.
pub const COLLISION_RADIUS: f64 = 0.2;
/// Target displacement per step.
pub const TARGET_SPEED: f64 = 0.05;
/// Direction changes in the target's per-episode schedule.
pub const N_DIRECTION_CHANGES: usize = 4;
/// Desired agent altitude above the target in the surveillance task.
pub const SURVEILLANCE_ALTITUDE: f64 = 4.0;

/// Sub-stream tag for initial placement draws.
const TAG_PLACEMENT: u64 = 0x01;
/// Sub-stream tag for target-motion draws.
const TAG_TARGET: u64 = 0x02;

/// Which reward structure the world uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DroneTask {
    /// Follow the target closely while holding a spacing-1 formation.
    Escort,
    /// Hover 4 units above the target inside a horizontal ring band.
    Surveillance,
}

/// Static settings defining one named drone task variant.
#[derive(Debug, Clone)]
pub struct DroneConfig {
    pub task: DroneTask,
    pub n_agents: usize,
    /// `None` = observe every other agent in index order; `Some(k)` =
    /// observe only the k closest, ordered by distance.
    pub neighbor_limit: Option<usize>,
    /// Scalar reward override applied to colliding agents.
    pub termination_reward: f64,
    pub max_steps: usize,
    /// Registry name reported by the environment.
    pub name: String,
}

impl DroneConfig {
    /// Settings for a named task variant with the standard episode limit.
    pub fn named(
        task: DroneTask,
        n_agents: usize,
        neighbor_limit: Option<usize>,
        termination_reward: f64,
        name: &str,
    ) -> Self {
        DroneConfig {
            task,
            n_agents,
            neighbor_limit,
            termination_reward,
            max_steps: 200,
            name: name.to_string(),
        }
    }
}

/// Full kinematic state of a drone world.
#[derive(Debug, Clone)]
pub struct DroneWorld {
    /// Agent positions (x, y, z), one row per agent.
    pub agent_pos: Vec<[f64; 3]>,
    pub target_pos: [f64; 3],
    pub target_vel: [f64; 3],
    /// Remaining direction changes as (step index, new velocity), ascending.
    pub target_waypoints: Vec<(usize, [f64; 3])>,
    pub map_size: f64,
    pub step_count: usize,
    /// Previous single-frame observations, for history stacking.
    pub prev_frames: Vec<Vec<f64>>,
}

impl DroneWorld {
    /// A stationary world at given positions — handy for tests and oracles.
    /// The target starts at rest with no scheduled direction changes.
    pub fn at(agent_pos: Vec<[f64; 3]>, target_pos: [f64; 3]) -> Self {
        DroneWorld {
            agent_pos,
            target_pos,
            target_vel: [0.0; 3],
            target_waypoints: Vec::new(),
            map_size: MAP_SIZE,
            step_count: 0,
            prev_frames: Vec::new(),
        }
    }
}

/// Normalizes a raw (non-positive) reward by the map size and clips the
/// result into [-1, 0].
pub fn normalize_clip(raw: f64, map_size: f64) -> f64 {
    (raw / map_size).clamp(-1.0, 0.0)
}

/// Raw ring-band penalty on horizontal distance to the target: zero inside
/// [1, 2], linear outside.
pub fn torus_penalty(d_xy: f64) -> f64 {
    if d_xy < 1.0 {
        -(1.0 - d_xy)
    } else if d_xy > 2.0 {
        -(d_xy - 2.0)
    } else {
        0.0
    }
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn dist_xy(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

fn center_of_mass(agent_pos: &[[f64; 3]]) -> [f64; 3] {
    let n = agent_pos.len() as f64;
    let mut com = [0.0; 3];
    for p in agent_pos {
        for (c, v) in com.iter_mut().zip(p) {
            *c += v / n;
        }
    }
    com
}

/// Normalized formation component for one agent: spacing error of the
/// min(3, n-1) closest other agents against the deal spacing of 1, ties
/// broken by lower index.
fn formation_component(world: &DroneWorld, agent: usize) -> f64 {
    let n = world.agent_pos.len();
    let mut ds: Vec<(f64, usize)> = (0..n)
        .filter(|&j| j != agent)
        .map(|j| (dist3(world.agent_pos[agent], world.agent_pos[j]), j))
        .collect();
    ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let k = 3.min(n - 1);
    let mean_d: f64 = ds[..k].iter().map(|x| x.0).sum::<f64>() / k as f64;
    let max_d = ds[k - 1].0;
    normalize_clip(-0.5 * ((mean_d - 1.0).abs() + (max_d - 1.0).abs()), world.map_size)
}

/// Escort rewards: keep both yourself and the group centroid on the target
/// while holding the spacing-1 formation.
pub fn escort_rewards(world: &DroneWorld) -> RewardBreakdown {
    let n = world.agent_pos.len();
    debug_assert!(n >= 2);
    let com = center_of_mass(&world.agent_pos);
    let d_com = dist3(com, world.target_pos);

    let mut b = RewardBreakdown::default();
    for i in 0..n {
        let d_i = dist3(world.agent_pos[i], world.target_pos);
        let r_dist = normalize_clip(-0.5 * (d_i + d_com), world.map_size);
        let r_form = formation_component(world, i);
        b.r_distance.push(r_dist);
        b.r_formation.push(r_form);
        b.r_scalar.push(0.5 * r_dist + 0.5 * r_form);
    }
    b.r_team = b.r_scalar.iter().sum();
    b
}

/// Surveillance rewards: hover 4 units above the target inside the ring
/// band, level with the group's altitude, holding formation.
pub fn surveillance_rewards(world: &DroneWorld) -> RewardBreakdown {
    let n = world.agent_pos.len();
    debug_assert!(n >= 2);
    let z_avg = world.agent_pos.iter().map(|p| p[2]).sum::<f64>() / n as f64;

    let mut b = RewardBreakdown::default();
    for i in 0..n {
        let p = world.agent_pos[i];
        let r_height = normalize_clip(
            -((p[2] - world.target_pos[2]) - SURVEILLANCE_ALTITUDE).abs(),
            world.map_size,
        );
        let r_torus =
            normalize_clip(torus_penalty(dist_xy(p, world.target_pos)), world.map_size);
        let z_d = (p[2] - z_avg).abs();
        let r_rel = normalize_clip(if z_d > 0.1 { -z_d } else { 0.0 }, world.map_size);
        let r_form = formation_component(world, i);

        let r_local = 0.5 * r_height + 0.5 * r_torus;
        let r_coop = 0.5 * r_rel + 0.5 * r_form;
        b.r_height.push(r_height);
        b.r_torus.push(r_torus);
        b.r_rel_height.push(r_rel);
        b.r_formation.push(r_form);
        b.r_scalar.push(0.5 * r_local + 0.5 * r_coop);
    }
    b.r_team = b.r_scalar.iter().sum();
    b
}

/// Collision check: ground contact (z <= 0) or any inter-agent distance
/// below [`COLLISION_RADIUS`]. Returns the sorted set of colliding agents.
pub fn check_termination(world: &DroneWorld) -> (bool, Vec<usize>) {
    let n = world.agent_pos.len();
    let mut hit = vec![false; n];
    for (i, p) in world.agent_pos.iter().enumerate() {
        if p[2] <= 0.0 {
            hit[i] = true;
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if dist3(world.agent_pos[i], world.agent_pos[j]) < COLLISION_RADIUS {
                hit[i] = true;
                hit[j] = true;
            }
        }
    }
    let colliding: Vec<usize> = (0..n).filter(|&i| hit[i]).collect();
    (!colliding.is_empty(), colliding)
}

/// Builds one agent's current single observation frame:
/// `[relative target (3) ‖ relative observed agents (3 each) ‖ own z (1)]`.
///
/// With full observability the other agents appear in fixed index order;
/// with a neighbor limit, only the k closest appear, ordered by distance
/// (ties broken by lower index).
pub fn single_frame(world: &DroneWorld, agent: usize, neighbor_limit: Option<usize>) -> Vec<f64> {
    let n = world.agent_pos.len();
    let me = world.agent_pos[agent];
    let mut frame = Vec::with_capacity(4 + 3 * neighbor_limit.unwrap_or(n - 1));
    for (t, m) in world.target_pos.iter().zip(me) {
        frame.push(t - m);
    }
    let observed: Vec<usize> = match neighbor_limit {
        None => (0..n).filter(|&j| j != agent).collect(),
        Some(limit) => {
            let mut ds: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != agent)
                .map(|j| (dist3(me, world.agent_pos[j]), j))
                .collect();
            ds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            ds[..limit].iter().map(|x| x.1).collect()
        }
    };
    for j in observed {
        for (p, m) in world.agent_pos[j].iter().zip(me) {
            frame.push(p - m);
        }
    }
    frame.push(me[2]);
    frame
}

/// Escort or surveillance environment over a [`DroneWorld`].
pub struct DroneEnv {
    cfg: DroneConfig,
    space: SpaceSpec,
    world: DroneWorld,
    done: bool,
}

impl DroneEnv {
    pub fn new(cfg: DroneConfig) -> Result<Self> {
        if cfg.n_agents < 2 {
            return Err(CoreError::Config(format!(
                "drone tasks need at least 2 agents for the formation reward, got {}",
                cfg.n_agents
            )));
        }
        match cfg.neighbor_limit {
            None => {}
            Some(k @ (2 | 4)) if k < cfg.n_agents => {}
            Some(k) => {
                return Err(CoreError::Config(format!(
                    "neighbor limit must be 2 or 4 and below the agent count, got {k}"
                )))
            }
        }
        let observed = cfg.neighbor_limit.unwrap_or(cfg.n_agents - 1);
        // Two stacked frames of [target (3) ‖ neighbors (3 each) ‖ own z (1)].
        let obs_dim = 2 * (3 + 3 * observed + 1);
        let space = SpaceSpec::uniform(cfg.n_agents, obs_dim, 3);
        let world = DroneWorld::at(vec![[1.0, 1.0, 1.0]; cfg.n_agents], [4.0, 4.0, 1.0]);
        Ok(DroneEnv {
            cfg,
            space,
            world,
            done: true, // force a reset before the first step
        })
    }

    /// Wraps an existing world, refreshing its observation history from the
    /// current state. Used by tests to script exact scenarios.
    pub fn from_world(cfg: DroneConfig, mut world: DroneWorld) -> Result<Self> {
        let mut env = DroneEnv::new(cfg)?;
        world.prev_frames = (0..env.cfg.n_agents)
            .map(|i| single_frame(&world, i, env.cfg.neighbor_limit))
            .collect();
        env.world = world;
        env.done = false;
        Ok(env)
    }

    /// Read access to the world for inspection in tests and diagnostics.
    pub fn world(&self) -> &DroneWorld {
        &self.world
    }

    /// Current stacked observations `[previous frame ‖ current frame]`.
    pub fn observe(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents)
            .map(|i| {
                let cur = single_frame(&self.world, i, self.cfg.neighbor_limit);
                let mut obs = self.world.prev_frames[i].clone();
                obs.extend_from_slice(&cur);
                obs
            })
            .collect()
    }

    fn rewards(&self) -> RewardBreakdown {
        match self.cfg.task {
            DroneTask::Escort => escort_rewards(&self.world),
            DroneTask::Surveillance => surveillance_rewards(&self.world),
        }
    }
}

/// Draws a position uniformly in the spawn box [1, map-1]^2 x [0.5, 3].
fn draw_spawn<R: Rng>(rng: &mut R, map_size: f64) -> [f64; 3] {
    [
        rng.gen_range(1.0..map_size - 1.0),
        rng.gen_range(1.0..map_size - 1.0),
        rng.gen_range(0.5..3.0),
    ]
}

impl Env for DroneEnv {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn space(&self) -> &SpaceSpec {
        &self.space
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        // Placement and target motion use independent sub-streams so that
        // changing one set of draws can never shift the other.
        let mut place_rng = seedstream::stream_rng(seed, TAG_PLACEMENT);
        let mut target_rng = seedstream::stream_rng(seed, TAG_TARGET);

        let target_pos = draw_spawn(&mut place_rng, MAP_SIZE);
        let mut agent_pos: Vec<[f64; 3]> = Vec::with_capacity(self.cfg.n_agents);
        for _ in 0..self.cfg.n_agents {
            loop {
                let p = draw_spawn(&mut place_rng, MAP_SIZE);
                if agent_pos.iter().all(|q| dist3(p, *q) >= COLLISION_RADIUS) {
                    agent_pos.push(p);
                    break;
                }
            }
        }

        let direction = |angle: f64| [TARGET_SPEED * angle.cos(), TARGET_SPEED * angle.sin(), 0.0];
        let target_vel = direction(target_rng.gen_range(0.0..std::f64::consts::TAU));
        // Direction-change steps: distinct indices in [1, max_steps - 1].
        let mut change_steps =
            rand::seq::index::sample(&mut target_rng, self.cfg.max_steps - 1, N_DIRECTION_CHANGES)
                .into_vec();
        for s in &mut change_steps {
            *s += 1;
        }
        change_steps.sort_unstable();
        let target_waypoints = change_steps
            .into_iter()
            .map(|s| (s, direction(target_rng.gen_range(0.0..std::f64::consts::TAU))))
            .collect();

        self.world = DroneWorld {
            agent_pos,
            target_pos,
            target_vel,
            target_waypoints,
            map_size: MAP_SIZE,
            step_count: 0,
            prev_frames: Vec::new(),
        };
        self.world.prev_frames = (0..self.cfg.n_agents)
            .map(|i| single_frame(&self.world, i, self.cfg.neighbor_limit))
            .collect();
        self.done = false;
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<StepResult> {
        if self.done {
            return Err(CoreError::EpisodeOver);
        }
        if actions.len() != self.cfg.n_agents {
            return Err(CoreError::Dimension(format!(
                "expected {} action vectors, got {}",
                self.cfg.n_agents,
                actions.len()
            )));
        }
        for (i, a) in actions.iter().enumerate() {
            if a.len() != 3 {
                return Err(CoreError::Dimension(format!(
                    "agent {i}: expected a 3-dimensional action, got {}",
                    a.len()
                )));
            }
        }

        for (p, a) in self.world.agent_pos.iter_mut().zip(actions) {
            for k in 0..3 {
                p[k] += ACTION_FACTOR * a[k].clamp(-1.0, 1.0);
            }
        }

        let next_step = self.world.step_count + 1;
        while self
            .world
            .target_waypoints
            .first()
            .is_some_and(|(s, _)| *s == next_step)
        {
            self.world.target_vel = self.world.target_waypoints.remove(0).1;
        }
        for k in 0..2 {
            self.world.target_pos[k] += self.world.target_vel[k];
            // Reflect off the vertical map walls.
            if self.world.target_pos[k] < 0.0 {
                self.world.target_pos[k] = -self.world.target_pos[k];
                self.world.target_vel[k] = -self.world.target_vel[k];
            } else if self.world.target_pos[k] > self.world.map_size {
                self.world.target_pos[k] = 2.0 * self.world.map_size - self.world.target_pos[k];
                self.world.target_vel[k] = -self.world.target_vel[k];
            }
        }
        self.world.step_count = next_step;

        let mut info = self.rewards();
        let (terminated, colliding) = check_termination(&self.world);
        if terminated {
            for &c in &colliding {
                info.r_scalar[c] = self.cfg.termination_reward;
            }
            info.r_team = info.r_scalar.iter().sum();
        }
        let truncated = !terminated && self.world.step_count >= self.cfg.max_steps;
        self.done = terminated || truncated;

        let observations = {
            let cur: Vec<Vec<f64>> = (0..self.cfg.n_agents)
                .map(|i| single_frame(&self.world, i, self.cfg.neighbor_limit))
                .collect();
            let stacked = self
                .world
                .prev_frames
                .iter()
                .zip(&cur)
                .map(|(p, c)| {
                    let mut o = p.clone();
                    o.extend_from_slice(c);
                    o
                })
                .collect();
            self.world.prev_frames = cur;
            stacked
        };

        Ok(StepResult {
            observations,
            local_rewards: info.r_scalar.clone(),
            team_reward: info.r_team,
            terminated,
            truncated,
            info,
        })
    }
}
