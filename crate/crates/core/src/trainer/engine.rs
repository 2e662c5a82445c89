//! The full training step: team-critic updates every gradient step, nested
//! sequential policy updates on every F-th step, entropy updates, and target
//! polyak averaging.
//!
//! One [`Trainer`] owns all agents' policies and every critic group. A group
//! covers `m` member agents — `m = 1` is a local critic (an MLP regressed on
//! the member's own reward stream), larger groups default to a transformer
//! set critic on the team reward. Per gradient step the trainer samples one
//! minibatch, refreshes the joint action set from the current policies,
//! updates every multi-agent critic, and on actor steps walks a random agent
//! permutation: each agent's policy is updated once per associated critic in
//! ascending receptive-field order with a fresh action sample before each
//! update, then resampled once more for its entropy update.
//!
//! Determinism contract — draws from `rng` occur in exactly this order per
//! gradient step: minibatch row indices; joint-set sampling noise for agents
//! `0..n`; per multi-agent critic (ascending receptive field) the members'
//! next-action noise in member order; then on actor steps the permutation
//! shuffle and, per visited agent, its local critic noise, one noise draw per
//! policy update (or the single shared draw in averaged mode), and the final
//! resample noise. Entropy updates draw nothing.

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::nn::{standard_normal, ActorNet, HlcActorConfig, HlcActorNet, MlpActorNet, Module, Scalar, Tape, Var};
use crate::sac::{
    actor_step, critic_step, polyak_update, sample_policy_values, ActorStepOut, Batch, CriticNet,
    EntropyCoefficient, LogpMode, Opt, OptKind, ReplayBuffer, RewardSource,
};
use crate::trainer::variant::{ActorInput, ActorKind, CentralizedKind, UpdateMode, VariantSpec};

/// Architecture and optimization settings shared by all variants; the
/// harness resolves per-environment defaults into this.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub lead_lr: f64,
    pub alpha_lr: f64,
    pub auto_alpha: bool,
    pub alpha_init: f64,
    /// Gradient steps per train step (unless the variant pins its own).
    pub g_steps: usize,
    /// Actor update interval in gradient steps (unless pinned).
    pub f_interval: usize,
    pub batch_size: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub lead_embed: usize,
    pub lead_heads: usize,
    pub lead_ffn: usize,
    pub lead_blocks: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            lead_lr: 1e-3,
            alpha_lr: 3e-4,
            auto_alpha: true,
            alpha_init: 1.0,
            g_steps: 4,
            f_interval: 2,
            batch_size: 2560,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            lead_embed: 128,
            lead_heads: 4,
            lead_ffn: 512,
            lead_blocks: 2,
        }
    }
}

/// One agent's policy, optimizer, entropy coefficient, and a version counter
/// bumped on every applied policy update.
struct AgentUnit<F: Scalar> {
    actor: ActorNet<F>,
    opt: Opt<F>,
    alpha: EntropyCoefficient<F>,
    version: u64,
}

/// One critic group: twin online critics, their targets, optimizers, and —
/// for multi-agent groups — the group's own entropy coefficient used in its
/// soft TD target.
struct CriticGroup<F: Scalar> {
    members: Vec<usize>,
    reward: RewardSource,
    q1: CriticNet<F>,
    q2: CriticNet<F>,
    t1: CriticNet<F>,
    t2: CriticNet<F>,
    opt1: Opt<F>,
    opt2: Opt<F>,
    /// `None` for local critics, whose TD target uses the agent's own α.
    alpha_lc: Option<EntropyCoefficient<F>>,
}

impl<F: Scalar> CriticGroup<F> {
    fn receptive_field(&self) -> usize {
        self.members.len()
    }
}

/// Observable milestones of one train step, for order and resampling checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainEvent {
    /// A gradient step began (1-based within the train step).
    GradientStep { g: usize },
    /// The joint action set entry for `agent` was written at the start of a
    /// gradient step, sampled from policy parameters of `version`.
    JointSelect { agent: usize, version: u64 },
    /// A multi-agent critic group finished its twin regression step.
    LeadCriticUpdate { group: usize },
    /// A multi-agent group's entropy coefficient was updated.
    GroupAlphaUpdate { group: usize },
    /// An actor pass began with this agent visitation order.
    ActorPassStart { permutation: Vec<usize> },
    /// An agent's local critic finished its twin regression step.
    LocalCriticUpdate { agent: usize },
    /// An agent's policy was updated against one critic of the given
    /// receptive field; `version_before` is the policy version whose sample
    /// fed the loss.
    PolicyUpdate {
        agent: usize,
        receptive_field: usize,
        version_before: u64,
    },
    /// An agent's policy received one averaged update across `n_critics`
    /// associated critics.
    AveragedPolicyUpdate {
        agent: usize,
        n_critics: usize,
        version_before: u64,
    },
    /// The joint action set entry for `agent` was rewritten mid-pass,
    /// sampled from policy parameters of `version`.
    JointResample { agent: usize, version: u64 },
    /// The agent's entropy coefficient update ran.
    EntropyUpdate { agent: usize },
    /// All target networks were polyak-averaged toward their online twins.
    TargetSync,
}

/// Aggregated diagnostics of one train step.
#[derive(Debug, Clone, Copy)]
pub struct TrainStats {
    pub gradient_steps: usize,
    pub actor_passes: usize,
    /// Mean twin loss over multi-agent critic updates (NaN if none ran).
    pub lead_critic_loss: f64,
    /// Mean twin loss over local critic updates (NaN if none ran).
    pub local_critic_loss: f64,
    /// Mean loss over policy updates (NaN if no actor pass ran).
    pub actor_loss: f64,
    /// Mean of the per-agent entropy coefficients after the step.
    pub mean_alpha: f64,
    /// Mean of the group entropy coefficients after the step (NaN if none).
    pub mean_alpha_lc: f64,
}

#[derive(Default)]
struct StatsAcc {
    lead_sum: f64,
    lead_n: usize,
    local_sum: f64,
    local_n: usize,
    actor_sum: f64,
    actor_n: usize,
    passes: usize,
}

impl StatsAcc {
    fn mean(sum: f64, n: usize) -> f64 {
        if n == 0 {
            f64::NAN
        } else {
            sum / n as f64
        }
    }
}

/// Uniformly random agent visitation order.
pub fn draw_permutation<R: Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn push_event(log: &mut Option<Vec<TrainEvent>>, e: TrainEvent) {
    if let Some(l) = log {
        l.push(e);
    }
}

/// Borrowed view of one critic group for [`averaged_update`].
pub struct CriticRef<'a, F: Scalar> {
    pub q1: &'a CriticNet<F>,
    pub q2: &'a CriticNet<F>,
    pub members: &'a [usize],
}

/// One averaged policy update for agent `k`: every critic's actor loss is
/// built on the same shared action sample at the same pre-update parameters,
/// the mean of the losses is differentiated once (by linearity, the average
/// of the individual gradients), and the caller applies it once. No
/// intermediate resampling occurs.
///
/// `agent_obs`, `joint_act`, and `joint_logp` are indexed by agent id; each
/// critic selects its members' columns. Members other than `k` enter as
/// constants.
#[allow(clippy::too_many_arguments)]
pub fn averaged_update<F: Scalar, R: Rng>(
    policy: &ActorNet<F>,
    critics: &[CriticRef<'_, F>],
    k: usize,
    policy_input: &Array2<F>,
    agent_obs: &[Array2<F>],
    joint_act: &[Array2<F>],
    joint_logp: &[Array2<F>],
    alpha: f64,
    logp_mode: LogpMode,
    rng: &mut R,
) -> ActorStepOut<F> {
    assert!(!critics.is_empty());
    let b = policy_input.nrows();
    let mut tape = Tape::new();
    let mut b_pol = policy.bind(&mut tape, true);
    let mut binders: Vec<_> = critics
        .iter()
        .map(|c| (c.q1.bind(&mut tape, false), c.q2.bind(&mut tape, false)))
        .collect();

    let noise = standard_normal::<F, _>(b, policy.act_dim(), rng);
    let pol_in = tape.constant(policy_input.clone());
    let (a_k, logp_k) = policy.sample(&mut tape, &mut b_pol, pol_in, b, &noise);

    let mut total: Option<Var> = None;
    for (c, (b1, b2)) in critics.iter().zip(&mut binders) {
        assert!(c.members.contains(&k), "agent {k} not in group {:?}", c.members);
        let obs_vars: Vec<Var> = c
            .members
            .iter()
            .map(|&m| tape.constant(agent_obs[m].clone()))
            .collect();
        let act_vars: Vec<Var> = c
            .members
            .iter()
            .map(|&m| {
                if m == k {
                    a_k
                } else {
                    tape.constant(joint_act[m].clone())
                }
            })
            .collect();
        let q1 = c.q1.q(&mut tape, b1, &obs_vars, &act_vars, b);
        let q2 = c.q2.q(&mut tape, b2, &obs_vars, &act_vars, b);
        let qmin = tape.min2(q1, q2);
        let (logp_sum, coeff) = match logp_mode {
            LogpMode::Single => (logp_k, alpha),
            LogpMode::Averaged => {
                let mut s = logp_k;
                for &m in c.members {
                    if m != k {
                        let lp = tape.constant(joint_logp[m].clone());
                        s = tape.add(s, lp);
                    }
                }
                (s, alpha / c.members.len() as f64)
            }
        };
        let ent = tape.scale(logp_sum, F::from_f64(coeff));
        let diff = tape.sub(ent, qmin);
        let loss_c = tape.mean_all(diff);
        total = Some(match total {
            None => loss_c,
            Some(t) => tape.add(t, loss_c),
        });
    }
    let sum = total.expect("at least one critic");
    let loss = tape.scale(sum, F::from_f64(1.0 / critics.len() as f64));
    tape.backward(loss);

    ActorStepOut {
        loss: tape.value(loss)[[0, 0]].to_f64(),
        grads: b_pol.grads(&mut tape),
        action: tape.value(a_k).clone(),
        logp: tape.value(logp_k).clone(),
    }
}

/// All agents' policies and critics plus the full train-step control flow.
pub struct Trainer<F: Scalar> {
    variant: VariantSpec,
    obs_dims: Vec<usize>,
    act_dims: Vec<usize>,
    tau: f64,
    g_steps: usize,
    f_interval: usize,
    batch_size: usize,
    agents: Vec<AgentUnit<F>>,
    groups: Vec<CriticGroup<F>>,
    /// Per agent: associated group indices ascending by receptive field.
    hierarchy: Vec<Vec<usize>>,
    /// Multi-agent group indices in critic-phase update order.
    lead_order: Vec<usize>,
    log: Option<Vec<TrainEvent>>,
}

impl<F: Scalar> Trainer<F> {
    /// Builds all networks for `variant`. Parameter initialization consumes
    /// `rng` in a fixed order: each agent's actor ascending by agent id, then
    /// each local critic group ascending by agent id (twins, then targets
    /// which are then overwritten from the twins), then the team critic group
    /// the same way.
    pub fn new<R: Rng>(
        variant: VariantSpec,
        obs_dims: &[usize],
        act_dims: &[usize],
        cfg: &TrainerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        variant.validate()?;
        let n = obs_dims.len();
        if n == 0 || act_dims.len() != n {
            return Err(CoreError::Config(format!(
                "need matching non-empty dimension lists, got {} obs / {} act",
                n,
                act_dims.len()
            )));
        }
        let g_steps = variant.g_steps.unwrap_or(cfg.g_steps);
        let f_interval = variant.f_interval.unwrap_or(cfg.f_interval);
        if g_steps == 0 || f_interval == 0 {
            return Err(CoreError::Config(
                "g_steps and f_interval must be at least 1".to_string(),
            ));
        }

        let global_dim: usize = obs_dims.iter().sum();
        let mut agents = Vec::with_capacity(n);
        for k in 0..n {
            let in_dim = match variant.actor_input {
                ActorInput::LocalObs => obs_dims[k],
                ActorInput::GlobalConcat => global_dim,
            };
            let (actor, opt) = match variant.actor_kind {
                ActorKind::Hlc => {
                    let acfg = HlcActorConfig::new(in_dim, act_dims[k]);
                    (
                        ActorNet::Hlc(HlcActorNet::new(&acfg, rng)),
                        Opt::new(OptKind::RAdam, cfg.actor_lr, 1e-5),
                    )
                }
                ActorKind::Mlp => (
                    ActorNet::Mlp(MlpActorNet::new(in_dim, act_dims[k], &cfg.actor_hidden, rng)),
                    Opt::new(OptKind::Adam, cfg.actor_lr, 0.0),
                ),
            };
            agents.push(AgentUnit {
                actor,
                opt,
                alpha: EntropyCoefficient::new(
                    cfg.alpha_init,
                    cfg.auto_alpha,
                    -(act_dims[k] as f64),
                    cfg.alpha_lr,
                ),
                version: 0,
            });
        }

        let mut groups = Vec::new();
        if variant.uses_local_critics() {
            for k in 0..n {
                let in_dim = obs_dims[k] + act_dims[k];
                let q1 = CriticNet::new_concat(in_dim, &cfg.critic_hidden, rng);
                let q2 = CriticNet::new_concat(in_dim, &cfg.critic_hidden, rng);
                let mut t1 = CriticNet::new_concat(in_dim, &cfg.critic_hidden, rng);
                let mut t2 = CriticNet::new_concat(in_dim, &cfg.critic_hidden, rng);
                t1.copy_from(&q1);
                t2.copy_from(&q2);
                groups.push(CriticGroup {
                    members: vec![k],
                    reward: RewardSource::SumMembers,
                    q1,
                    q2,
                    t1,
                    t2,
                    opt1: Opt::new(OptKind::Adam, cfg.critic_lr, 0.0),
                    opt2: Opt::new(OptKind::Adam, cfg.critic_lr, 0.0),
                    alpha_lc: None,
                });
            }
        }
        if variant.uses_centralized_critic() {
            let members: Vec<usize> = (0..n).collect();
            groups.push(Self::build_group(
                &variant,
                members,
                RewardSource::Team,
                obs_dims,
                act_dims,
                cfg,
                rng,
            ));
        }

        let mut t = Trainer {
            variant,
            obs_dims: obs_dims.to_vec(),
            act_dims: act_dims.to_vec(),
            tau: cfg.tau,
            g_steps,
            f_interval,
            batch_size: cfg.batch_size,
            agents,
            groups,
            hierarchy: Vec::new(),
            lead_order: Vec::new(),
            log: None,
        };
        t.rebuild_order();
        Ok(t)
    }

    fn build_group<R: Rng>(
        variant: &VariantSpec,
        members: Vec<usize>,
        reward: RewardSource,
        obs_dims: &[usize],
        act_dims: &[usize],
        cfg: &TrainerConfig,
        rng: &mut R,
    ) -> CriticGroup<F> {
        let mut make = || match variant.centralized_kind {
            CentralizedKind::Transformer => {
                let dims: Vec<usize> = members.iter().map(|&m| obs_dims[m] + act_dims[m]).collect();
                CriticNet::new_set(
                    &dims,
                    cfg.lead_embed,
                    cfg.lead_heads,
                    cfg.lead_ffn,
                    cfg.lead_blocks,
                    rng,
                )
            }
            CentralizedKind::MlpConcat => {
                let total: usize = members.iter().map(|&m| obs_dims[m] + act_dims[m]).sum();
                CriticNet::new_concat(total, &cfg.critic_hidden, rng)
            }
        };
        let q1 = make();
        let q2 = make();
        let mut t1 = make();
        let mut t2 = make();
        t1.copy_from(&q1);
        t2.copy_from(&q2);
        let group_act: usize = members.iter().map(|&m| act_dims[m]).sum();
        CriticGroup {
            members,
            reward,
            q1,
            q2,
            t1,
            t2,
            opt1: Opt::new(OptKind::RAdam, cfg.lead_lr, 1e-5),
            opt2: Opt::new(OptKind::RAdam, cfg.lead_lr, 1e-5),
            alpha_lc: Some(EntropyCoefficient::new(
                cfg.alpha_init,
                cfg.auto_alpha,
                -(group_act as f64),
                cfg.alpha_lr,
            )),
        }
    }

    /// Adds a critic group over an agent subset (the shipped variants build
    /// only local and full-team groups; intermediate levels are for
    /// experiments and tests). Members must be sorted, unique, and at least
    /// two; the reward is the members' summed local streams unless the group
    /// covers every agent.
    pub fn insert_group<R: Rng>(&mut self, members: Vec<usize>, cfg: &TrainerConfig, rng: &mut R) -> Result<usize> {
        let n = self.agents.len();
        if members.len() < 2
            || members.windows(2).any(|w| w[0] >= w[1])
            || members.iter().any(|&m| m >= n)
        {
            return Err(CoreError::Config(format!(
                "group members must be sorted, unique, at least two, and below {n}: {members:?}"
            )));
        }
        let reward = if members.len() == n {
            RewardSource::Team
        } else {
            RewardSource::SumMembers
        };
        let group = Self::build_group(
            &self.variant,
            members,
            reward,
            &self.obs_dims,
            &self.act_dims,
            cfg,
            rng,
        );
        self.groups.push(group);
        self.rebuild_order();
        Ok(self.groups.len() - 1)
    }

    /// Sorts group indices ascending by receptive field (declaration order
    /// breaking ties) into the critic-phase order and each agent's
    /// association list.
    fn rebuild_order(&mut self) {
        let mut idx: Vec<usize> = (0..self.groups.len()).collect();
        idx.sort_by_key(|&i| (self.groups[i].receptive_field(), i));
        self.lead_order = idx
            .iter()
            .copied()
            .filter(|&i| self.groups[i].receptive_field() > 1)
            .collect();
        self.hierarchy = (0..self.agents.len())
            .map(|k| {
                idx.iter()
                    .copied()
                    .filter(|&i| self.groups[i].members.contains(&k))
                    .collect()
            })
            .collect();
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn variant(&self) -> &VariantSpec {
        &self.variant
    }

    pub fn g_steps(&self) -> usize {
        self.g_steps
    }

    pub fn f_interval(&self) -> usize {
        self.f_interval
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Receptive field of every critic group, in declaration order.
    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.receptive_field()).collect()
    }

    pub fn group_members(&self, group: usize) -> &[usize] {
        &self.groups[group].members
    }

    /// Group indices associated with an agent, ascending by receptive field.
    pub fn hierarchy_of(&self, agent: usize) -> &[usize] {
        &self.hierarchy[agent]
    }

    /// Per-agent entropy coefficients.
    pub fn alphas(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.alpha.alpha()).collect()
    }

    /// Starts recording [`TrainEvent`]s.
    pub fn enable_event_log(&mut self) {
        self.log = Some(Vec::new());
    }

    /// Drains recorded events.
    pub fn take_events(&mut self) -> Vec<TrainEvent> {
        match &mut self.log {
            Some(l) => std::mem::take(l),
            None => Vec::new(),
        }
    }

    /// What agent `k`'s policy reads, given per-agent observation slabs.
    fn assemble_inputs(&self, per_agent: &[Array2<F>]) -> Vec<Array2<F>> {
        match self.variant.actor_input {
            ActorInput::LocalObs => per_agent.to_vec(),
            ActorInput::GlobalConcat => {
                let views: Vec<_> = per_agent.iter().map(|o| o.view()).collect();
                let global = concatenate(Axis(1), &views).expect("matching row counts");
                vec![global; per_agent.len()]
            }
        }
    }

    /// Stochastic actions for collection, one `(rows, act_dim)` slab per
    /// agent; noise is drawn per agent in ascending id order.
    pub fn act_stochastic<R: Rng>(&self, per_agent_obs: &[Array2<F>], rng: &mut R) -> Vec<Array2<F>> {
        let inputs = self.assemble_inputs(per_agent_obs);
        self.agents
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let noise =
                    standard_normal::<F, _>(inputs[k].nrows(), self.act_dims[k], rng);
                a.actor.act_stochastic(&inputs[k], &noise)
            })
            .collect()
    }

    /// Greedy `tanh(mean)` actions for evaluation.
    pub fn act_deterministic(&self, per_agent_obs: &[Array2<F>]) -> Vec<Array2<F>> {
        let inputs = self.assemble_inputs(per_agent_obs);
        self.agents
            .iter()
            .enumerate()
            .map(|(k, a)| a.actor.act_deterministic(&inputs[k]))
            .collect()
    }

    /// One full train step per the nested sequential scheme; see the module
    /// docs for the draw-order contract.
    pub fn train_step<R: Rng>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<TrainStats> {
        let mut acc = StatsAcc::default();
        for g in 1..=self.g_steps {
            let batch: Batch<F> = buffer.sample(self.batch_size, rng)?;
            self.gradient_step(g, &batch, rng, &mut acc);
        }
        let mean_alpha =
            self.agents.iter().map(|a| a.alpha.alpha()).sum::<f64>() / self.agents.len() as f64;
        let lc: Vec<f64> = self
            .groups
            .iter()
            .filter_map(|g| g.alpha_lc.as_ref().map(|a| a.alpha()))
            .collect();
        Ok(TrainStats {
            gradient_steps: self.g_steps,
            actor_passes: acc.passes,
            lead_critic_loss: StatsAcc::mean(acc.lead_sum, acc.lead_n),
            local_critic_loss: StatsAcc::mean(acc.local_sum, acc.local_n),
            actor_loss: StatsAcc::mean(acc.actor_sum, acc.actor_n),
            mean_alpha,
            mean_alpha_lc: if lc.is_empty() {
                f64::NAN
            } else {
                lc.iter().sum::<f64>() / lc.len() as f64
            },
        })
    }

    fn gradient_step<R: Rng>(
        &mut self,
        g: usize,
        batch: &Batch<F>,
        rng: &mut R,
        acc: &mut StatsAcc,
    ) {
        let n = self.agents.len();
        let b = batch.size();
        push_event(&mut self.log, TrainEvent::GradientStep { g });

        // Policy inputs at t and t+h for every agent.
        let pol_t = self.assemble_inputs(&batch.obs);
        let pol_n = self.assemble_inputs(&batch.next_obs);

        // Joint action set from the current policies.
        let mut joint_act: Vec<Array2<F>> = Vec::with_capacity(n);
        let mut joint_logp: Vec<Array2<F>> = Vec::with_capacity(n);
        for (k, pt) in pol_t.iter().enumerate() {
            let noise = standard_normal::<F, _>(b, self.act_dims[k], rng);
            let (a, lp) = sample_policy_values(&self.agents[k].actor, pt, &noise);
            joint_act.push(a);
            joint_logp.push(lp);
            push_event(
                &mut self.log,
                TrainEvent::JointSelect {
                    agent: k,
                    version: self.agents[k].version,
                },
            );
        }

        // Multi-agent critic updates, ascending receptive field.
        let lead_order = self.lead_order.clone();
        for gi in lead_order {
            let (l1, l2) = self.update_group_critic(gi, batch, &pol_n, rng);
            acc.lead_sum += 0.5 * (l1 + l2);
            acc.lead_n += 1;
            push_event(&mut self.log, TrainEvent::LeadCriticUpdate { group: gi });
            if self.groups[gi].alpha_lc.is_some() {
                push_event(&mut self.log, TrainEvent::GroupAlphaUpdate { group: gi });
            }
        }

        if !g.is_multiple_of(self.f_interval) {
            return;
        }
        acc.passes += 1;

        let perm = draw_permutation(n, rng);
        push_event(
            &mut self.log,
            TrainEvent::ActorPassStart {
                permutation: perm.clone(),
            },
        );
        for &k in &perm {
            match self.variant.update_mode {
                UpdateMode::Sequential => {
                    self.sequential_agent_pass(k, batch, &pol_t, &pol_n, &mut joint_act, &mut joint_logp, rng, acc)
                }
                UpdateMode::AveragedGradients => {
                    self.averaged_agent_pass(k, batch, &pol_t, &pol_n, &mut joint_act, &mut joint_logp, rng, acc)
                }
            }
            // Final resample feeding the joint set and the entropy update.
            let noise = standard_normal::<F, _>(b, self.act_dims[k], rng);
            let (a, lp) = sample_policy_values(&self.agents[k].actor, &pol_t[k], &noise);
            let mean_lp = lp.iter().map(|e| e.to_f64()).sum::<f64>() / lp.len() as f64;
            joint_act[k] = a;
            joint_logp[k] = lp;
            push_event(
                &mut self.log,
                TrainEvent::JointResample {
                    agent: k,
                    version: self.agents[k].version,
                },
            );
            self.agents[k].alpha.update(mean_lp);
            push_event(&mut self.log, TrainEvent::EntropyUpdate { agent: k });
        }

        for gr in &mut self.groups {
            polyak_update(&gr.q1, &mut gr.t1, self.tau);
            polyak_update(&gr.q2, &mut gr.t2, self.tau);
        }
        push_event(&mut self.log, TrainEvent::TargetSync);
    }

    /// Twin regression step for one group; returns the twin losses.
    fn update_group_critic<R: Rng>(
        &mut self,
        gi: usize,
        batch: &Batch<F>,
        pol_n: &[Array2<F>],
        rng: &mut R,
    ) -> (f64, f64) {
        let group = &self.groups[gi];
        let policies: Vec<&ActorNet<F>> = group
            .members
            .iter()
            .map(|&m| &self.agents[m].actor)
            .collect();
        let pnext: Vec<Array2<F>> = group.members.iter().map(|&m| pol_n[m].clone()).collect();
        let alpha = match &group.alpha_lc {
            Some(a) => a.alpha(),
            None => self.agents[group.members[0]].alpha.alpha(),
        };
        let out = critic_step(
            (&group.q1, &group.q2),
            (&group.t1, &group.t2),
            &policies,
            &pnext,
            &group.members,
            batch,
            group.reward,
            alpha,
            rng,
        );
        drop(policies);
        let group = &mut self.groups[gi];
        group.opt1.step(&mut group.q1, &out.grads1);
        group.opt2.step(&mut group.q2, &out.grads2);
        if let Some(al) = &mut group.alpha_lc {
            al.update(out.mean_next_logp);
        }
        (out.loss1, out.loss2)
    }

    /// Steps (1)–(3) of the actor pass for one agent: local critic value
    /// update, then one policy update per associated critic ascending by
    /// receptive field with a fresh sample before each.
    #[allow(clippy::too_many_arguments)]
    fn sequential_agent_pass<R: Rng>(
        &mut self,
        k: usize,
        batch: &Batch<F>,
        pol_t: &[Array2<F>],
        pol_n: &[Array2<F>],
        joint_act: &mut [Array2<F>],
        joint_logp: &mut [Array2<F>],
        rng: &mut R,
        acc: &mut StatsAcc,
    ) {
        let hier = self.hierarchy[k].clone();
        for gi in hier {
            let rf = self.groups[gi].receptive_field();
            if rf == 1 {
                let (l1, l2) = self.update_group_critic(gi, batch, pol_n, rng);
                acc.local_sum += 0.5 * (l1 + l2);
                acc.local_n += 1;
                push_event(&mut self.log, TrainEvent::LocalCriticUpdate { agent: k });
            }
            let group = &self.groups[gi];
            let k_pos = group
                .members
                .iter()
                .position(|&m| m == k)
                .expect("hierarchy lists only containing groups");
            let member_obs: Vec<Array2<F>> =
                group.members.iter().map(|&m| batch.obs[m].clone()).collect();
            let g_act: Vec<Array2<F>> =
                group.members.iter().map(|&m| joint_act[m].clone()).collect();
            let g_lp: Vec<Array2<F>> =
                group.members.iter().map(|&m| joint_logp[m].clone()).collect();
            let out = actor_step(
                &self.agents[k].actor,
                (&group.q1, &group.q2),
                k_pos,
                &pol_t[k],
                &member_obs,
                &g_act,
                &g_lp,
                self.agents[k].alpha.alpha(),
                self.variant.logp_mode,
                rng,
            );
            acc.actor_sum += out.loss;
            acc.actor_n += 1;
            let version_before = self.agents[k].version;
            if rf > 1 {
                // The fresh sample of this update is the "select action"
                // write into the joint set.
                joint_act[k] = out.action;
                joint_logp[k] = out.logp;
                push_event(
                    &mut self.log,
                    TrainEvent::JointResample {
                        agent: k,
                        version: version_before,
                    },
                );
            }
            let agent = &mut self.agents[k];
            agent.opt.step(&mut agent.actor, &out.grads);
            agent.version += 1;
            push_event(
                &mut self.log,
                TrainEvent::PolicyUpdate {
                    agent: k,
                    receptive_field: rf,
                    version_before,
                },
            );
        }
    }

    /// The averaged-gradients ablation of the actor pass: local critic value
    /// update as usual, then one update from the mean of all associated
    /// critics' actor gradients on a single shared sample.
    #[allow(clippy::too_many_arguments)]
    fn averaged_agent_pass<R: Rng>(
        &mut self,
        k: usize,
        batch: &Batch<F>,
        pol_t: &[Array2<F>],
        pol_n: &[Array2<F>],
        joint_act: &mut [Array2<F>],
        joint_logp: &mut [Array2<F>],
        rng: &mut R,
        acc: &mut StatsAcc,
    ) {
        let hier = self.hierarchy[k].clone();
        for &gi in &hier {
            if self.groups[gi].receptive_field() == 1 {
                let (l1, l2) = self.update_group_critic(gi, batch, pol_n, rng);
                acc.local_sum += 0.5 * (l1 + l2);
                acc.local_n += 1;
                push_event(&mut self.log, TrainEvent::LocalCriticUpdate { agent: k });
            }
        }
        let crefs: Vec<CriticRef<'_, F>> = hier
            .iter()
            .map(|&gi| CriticRef {
                q1: &self.groups[gi].q1,
                q2: &self.groups[gi].q2,
                members: &self.groups[gi].members,
            })
            .collect();
        let out = averaged_update(
            &self.agents[k].actor,
            &crefs,
            k,
            &pol_t[k],
            &batch.obs,
            joint_act,
            joint_logp,
            self.agents[k].alpha.alpha(),
            self.variant.logp_mode,
            rng,
        );
        drop(crefs);
        acc.actor_sum += out.loss;
        acc.actor_n += 1;
        let version_before = self.agents[k].version;
        joint_act[k] = out.action;
        joint_logp[k] = out.logp;
        push_event(
            &mut self.log,
            TrainEvent::JointResample {
                agent: k,
                version: version_before,
            },
        );
        let agent = &mut self.agents[k];
        agent.opt.step(&mut agent.actor, &out.grads);
        agent.version += 1;
        push_event(
            &mut self.log,
            TrainEvent::AveragedPolicyUpdate {
                agent: k,
                n_critics: hier.len(),
                version_before,
            },
        );
    }

    /// All parameters in canonical order for checkpointing.
    pub fn param_entries(&self) -> Vec<(String, &Array2<F>)> {
        let mut out = Vec::new();
        for (k, a) in self.agents.iter().enumerate() {
            for (i, p) in a.actor.params().into_iter().enumerate() {
                out.push((format!("agent{k}/actor/{i}"), p));
            }
            for (i, p) in a.alpha.params().into_iter().enumerate() {
                out.push((format!("agent{k}/alpha/{i}"), p));
            }
        }
        for (g, gr) in self.groups.iter().enumerate() {
            for (tag, net) in [("q1", &gr.q1), ("q2", &gr.q2), ("t1", &gr.t1), ("t2", &gr.t2)] {
                for (i, p) in net.params().into_iter().enumerate() {
                    out.push((format!("group{g}/{tag}/{i}"), p));
                }
            }
            if let Some(al) = &gr.alpha_lc {
                for (i, p) in al.params().into_iter().enumerate() {
                    out.push((format!("group{g}/alpha/{i}"), p));
                }
            }
        }
        out
    }

    /// Restores parameters saved by [`Trainer::param_entries`]; every slot
    /// must be present with matching shape.
    pub fn load_params(&mut self, entries: &[(String, Array2<F>)]) -> Result<()> {
        use std::collections::HashMap;
        let by_name: HashMap<&str, &Array2<F>> =
            entries.iter().map(|(n, a)| (n.as_str(), a)).collect();
        let names: Vec<String> = self.param_entries().iter().map(|(n, _)| n.clone()).collect();
        if entries.len() != names.len() {
            return Err(CoreError::Checkpoint(format!(
                "expected {} parameter arrays, got {}",
                names.len(),
                entries.len()
            )));
        }
        let mut slots: Vec<&mut Array2<F>> = Vec::new();
        for a in &mut self.agents {
            slots.extend(a.actor.params_mut());
            slots.extend(a.alpha.params_mut());
        }
        for gr in &mut self.groups {
            slots.extend(gr.q1.params_mut());
            slots.extend(gr.q2.params_mut());
            slots.extend(gr.t1.params_mut());
            slots.extend(gr.t2.params_mut());
            if let Some(al) = &mut gr.alpha_lc {
                slots.extend(al.params_mut());
            }
        }
        for (name, slot) in names.iter().zip(slots) {
            let src = by_name.get(name.as_str()).ok_or_else(|| {
                CoreError::Checkpoint(format!("missing parameter array {name:?}"))
            })?;
            if src.dim() != slot.dim() {
                return Err(CoreError::Checkpoint(format!(
                    "shape mismatch for {name:?}: stored {:?}, expected {:?}",
                    src.dim(),
                    slot.dim()
                )));
            }
            slot.assign(src);
        }
        Ok(())
    }
}
