//! Critic and actor update computations assembled on the tape.
//!
//! A critic group covers `m` member agents (m = 1 is a local critic, m = n a
//! centralized one) and is trained with clipped double Q-learning against an
//! n-step soft target. Actor updates minimize `α·logπ − min_j Q_j` with the
//! fresh reparameterized action of exactly one agent on the tape; other
//! members' actions enter as constants, so the gradient reaches only that
//! agent's policy.

use ndarray::Array2;
use rand::Rng;

use crate::nn::{standard_normal, ActorNet, Binder, LeadCriticNet, Mlp, Module, Scalar, Tape, Var};
use crate::sac::buffer::Batch;

/// Which aggregated reward stream feeds a critic group's target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardSource {
    /// The team stream (centralized critics).
    Team,
    /// Sum of the member agents' local streams (local and sub-global
    /// critics).
    SumMembers,
}

impl RewardSource {
    /// Materializes the (B, 1) reward column for a group.
    pub fn reward<F: Scalar>(&self, batch: &Batch<F>, members: &[usize]) -> Array2<F> {
        match self {
            RewardSource::Team => batch.team_r.clone(),
            RewardSource::SumMembers => {
                let mut r = Array2::zeros(batch.team_r.dim());
                for &k in members {
                    r += &batch.local_r[k];
                }
                r
            }
        }
    }
}

/// How the entropy term of the group actor loss aggregates member
/// log-probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogpMode {
    /// `(1/m) Σ_l log π^l` over all members (the updating agent's term is the
    /// only one carrying gradient).
    Averaged,
    /// The updating agent's `log π^k` alone.
    Single,
}

/// Either critic architecture behind one `Q(o^{1:m}, a^{1:m})` interface.
pub enum CriticNet<F: Scalar> {
    /// Per-member embedders + transformer encoder + pooled head.
    Set(LeadCriticNet<F>),
    /// Plain MLP over the concatenation of all member observations followed
    /// by all member actions.
    Concat(Mlp<F>),
}

impl<F: Scalar> CriticNet<F> {
    /// Encoder-based group critic with one embedder per member.
    pub fn new_set<R: Rng>(
        member_input_dims: &[usize],
        embed: usize,
        n_heads: usize,
        ffn: usize,
        n_blocks: usize,
        rng: &mut R,
    ) -> Self {
        CriticNet::Set(LeadCriticNet::new(
            member_input_dims,
            embed,
            n_heads,
            ffn,
            n_blocks,
            rng,
        ))
    }

    /// MLP critic over the flat (obs…, act…) concatenation.
    pub fn new_concat<R: Rng>(input_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        CriticNet::Concat(Mlp::new(&dims, false, rng))
    }

    /// Group Q-value `(batch, 1)` from per-member observation and action
    /// slabs already on the tape.
    pub fn q(
        &self,
        tape: &mut Tape<F>,
        binder: &mut Binder,
        member_obs: &[Var],
        member_act: &[Var],
        batch: usize,
    ) -> Var {
        assert_eq!(member_obs.len(), member_act.len());
        match self {
            CriticNet::Set(net) => {
                let inputs: Vec<Var> = member_obs
                    .iter()
                    .zip(member_act)
                    .map(|(&o, &a)| tape.concat_cols(&[o, a]))
                    .collect();
                net.forward(tape, binder, &inputs, batch)
            }
            CriticNet::Concat(mlp) => {
                let mut cols: Vec<Var> = member_obs.to_vec();
                cols.extend_from_slice(member_act);
                let x = tape.concat_cols(&cols);
                binder.restart();
                let q = mlp.forward(tape, binder, x);
                binder.finish();
                q
            }
        }
    }
}

impl<F: Scalar> Module<F> for CriticNet<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        match self {
            CriticNet::Set(n) => n.params(),
            CriticNet::Concat(n) => n.params(),
        }
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        match self {
            CriticNet::Set(n) => n.params_mut(),
            CriticNet::Concat(n) => n.params_mut(),
        }
    }
}

/// Result of one twin-critic regression step.
pub struct CriticStepOut<F: Scalar> {
    pub loss1: f64,
    pub loss2: f64,
    pub grads1: Vec<Array2<F>>,
    pub grads2: Vec<Array2<F>>,
    /// Batch mean of the summed next-state log-probabilities of the group's
    /// members, for reuse by the group's temperature update.
    pub mean_next_logp: f64,
}

/// One soft-target regression step for a critic group's twins.
///
/// Builds `y = r + γ_eff · not_done · (min_j Q̄_j(o', a') − α·Σ_l log π^l(a'^l|o'^l))`
/// with `a'` freshly reparameterized from the current member policies
/// (per-member noise drawn from `rng` in ascending member order), stops the
/// gradient at `y`, and regresses each online twin on the buffer's `(o, a)`.
///
/// `policy_next_inputs` carries what each member's policy reads at the next
/// step — usually the member's own `next_obs`, but variants with
/// global-observation actors pass the concatenation instead; the critics
/// always see the member observations from `batch`.
#[allow(clippy::too_many_arguments)]
pub fn critic_step<F: Scalar, R: Rng>(
    online: (&CriticNet<F>, &CriticNet<F>),
    targets: (&CriticNet<F>, &CriticNet<F>),
    policies: &[&ActorNet<F>],
    policy_next_inputs: &[Array2<F>],
    members: &[usize],
    batch: &Batch<F>,
    reward: RewardSource,
    alpha: f64,
    rng: &mut R,
) -> CriticStepOut<F> {
    assert_eq!(policies.len(), members.len());
    assert_eq!(policy_next_inputs.len(), members.len());
    let b = batch.size();
    let mut tape = Tape::new();
    let mut b_on1 = online.0.bind(&mut tape, true);
    let mut b_on2 = online.1.bind(&mut tape, true);
    let mut b_t1 = targets.0.bind(&mut tape, false);
    let mut b_t2 = targets.1.bind(&mut tape, false);
    let mut b_pol: Vec<Binder> = policies.iter().map(|p| p.bind(&mut tape, false)).collect();

    let obs_t: Vec<Var> = members
        .iter()
        .map(|&k| tape.constant(batch.obs[k].clone()))
        .collect();
    let act_t: Vec<Var> = members
        .iter()
        .map(|&k| tape.constant(batch.act[k].clone()))
        .collect();
    let obs_n: Vec<Var> = members
        .iter()
        .map(|&k| tape.constant(batch.next_obs[k].clone()))
        .collect();

    let mut next_act = Vec::with_capacity(policies.len());
    let mut sum_logp: Option<Var> = None;
    for (i, p) in policies.iter().enumerate() {
        let noise = standard_normal::<F, _>(b, p.act_dim(), rng);
        let pol_in = tape.constant(policy_next_inputs[i].clone());
        let (a, lp) = p.sample(&mut tape, &mut b_pol[i], pol_in, b, &noise);
        next_act.push(a);
        sum_logp = Some(match sum_logp {
            None => lp,
            Some(s) => tape.add(s, lp),
        });
    }
    let sum_logp = sum_logp.expect("group has at least one member");

    let q1t = targets.0.q(&mut tape, &mut b_t1, &obs_n, &next_act, b);
    let q2t = targets.1.q(&mut tape, &mut b_t2, &obs_n, &next_act, b);
    let qmin = tape.min2(q1t, q2t);
    let ent = tape.scale(sum_logp, F::from_f64(alpha));
    let soft = tape.sub(qmin, ent);
    let geff = tape.constant(batch.gamma_eff.clone());
    let nd = tape.constant(batch.not_done.clone());
    let mask = tape.mul(geff, nd);
    let boot = tape.mul(mask, soft);
    let r = tape.constant(reward.reward(batch, members));
    let y_live = tape.add(r, boot);
    let y = tape.detach(y_live);

    let q1 = online.0.q(&mut tape, &mut b_on1, &obs_t, &act_t, b);
    let q2 = online.1.q(&mut tape, &mut b_on2, &obs_t, &act_t, b);
    let d1 = tape.sub(q1, y);
    let sq1 = tape.mul(d1, d1);
    let l1 = tape.mean_all(sq1);
    let d2 = tape.sub(q2, y);
    let sq2 = tape.mul(d2, d2);
    let l2 = tape.mean_all(sq2);
    // One backward over the sum: the twins share no trainable parameters, so
    // each online set receives exactly its own loss gradient.
    let total = tape.add(l1, l2);
    tape.backward(total);

    let mean_next_logp = {
        let v = tape.value(sum_logp);
        v.iter().map(|e| e.to_f64()).sum::<f64>() / v.len() as f64
    };
    CriticStepOut {
        loss1: tape.value(l1)[[0, 0]].to_f64(),
        loss2: tape.value(l2)[[0, 0]].to_f64(),
        grads1: b_on1.grads(&mut tape),
        grads2: b_on2.grads(&mut tape),
        mean_next_logp,
    }
}

/// Result of one policy update against a critic group.
pub struct ActorStepOut<F: Scalar> {
    pub loss: f64,
    pub grads: Vec<Array2<F>>,
    /// Concrete values of the fresh sample drawn for the updating agent.
    pub action: Array2<F>,
    pub logp: Array2<F>,
}

/// One policy-gradient step for agent `k_pos` of a group against the group's
/// online twins.
///
/// Samples a fresh reparameterized action for that agent (noise drawn from
/// `rng`) with the policy reading `policy_input` — the member observation for
/// local-observation actors, a global concatenation otherwise. All other
/// members contribute their current joint-set actions and log-probabilities
/// as constants, so only the updating agent's parameters receive gradient.
/// The loss is `mean(α·L − min_j Q_j(o^{1:m}, a^{1:m}))` with `L` the
/// averaged or single log-probability per [`LogpMode`].
#[allow(clippy::too_many_arguments)]
pub fn actor_step<F: Scalar, R: Rng>(
    policy: &ActorNet<F>,
    critics: (&CriticNet<F>, &CriticNet<F>),
    k_pos: usize,
    policy_input: &Array2<F>,
    member_obs: &[Array2<F>],
    joint_act: &[Array2<F>],
    joint_logp: &[Array2<F>],
    alpha: f64,
    logp_mode: LogpMode,
    rng: &mut R,
) -> ActorStepOut<F> {
    let m = member_obs.len();
    assert!(k_pos < m);
    assert_eq!(joint_act.len(), m);
    assert_eq!(joint_logp.len(), m);
    let b = member_obs[0].nrows();

    let mut tape = Tape::new();
    let mut b_pol = policy.bind(&mut tape, true);
    let mut b_c1 = critics.0.bind(&mut tape, false);
    let mut b_c2 = critics.1.bind(&mut tape, false);

    let obs_vars: Vec<Var> = member_obs
        .iter()
        .map(|o| tape.constant(o.clone()))
        .collect();
    let noise = standard_normal::<F, _>(b, policy.act_dim(), rng);
    let pol_in = tape.constant(policy_input.clone());
    let (a_k, logp_k) = policy.sample(&mut tape, &mut b_pol, pol_in, b, &noise);

    let act_vars: Vec<Var> = (0..m)
        .map(|i| {
            if i == k_pos {
                a_k
            } else {
                tape.constant(joint_act[i].clone())
            }
        })
        .collect();

    let q1 = critics.0.q(&mut tape, &mut b_c1, &obs_vars, &act_vars, b);
    let q2 = critics.1.q(&mut tape, &mut b_c2, &obs_vars, &act_vars, b);
    let qmin = tape.min2(q1, q2);

    let (logp_sum, coeff) = match logp_mode {
        LogpMode::Single => (logp_k, alpha),
        LogpMode::Averaged => {
            let mut s = logp_k;
            for (i, lp) in joint_logp.iter().enumerate() {
                if i != k_pos {
                    let c = tape.constant(lp.clone());
                    s = tape.add(s, c);
                }
            }
            (s, alpha / m as f64)
        }
    };
    let ent = tape.scale(logp_sum, F::from_f64(coeff));
    let diff = tape.sub(ent, qmin);
    let loss = tape.mean_all(diff);
    tape.backward(loss);

    ActorStepOut {
        loss: tape.value(loss)[[0, 0]].to_f64(),
        grads: b_pol.grads(&mut tape),
        action: tape.value(a_k).clone(),
        logp: tape.value(logp_k).clone(),
    }
}

/// Off-tape reparameterized sample: concrete `(action, log_prob)` arrays for
/// caller-supplied noise.
pub fn sample_policy_values<F: Scalar>(
    policy: &ActorNet<F>,
    obs: &Array2<F>,
    noise: &Array2<F>,
) -> (Array2<F>, Array2<F>) {
    let mut tape = Tape::new();
    let mut binder = policy.bind(&mut tape, false);
    let o = tape.constant(obs.clone());
    let (a, lp) = policy.sample(&mut tape, &mut binder, o, obs.nrows(), noise);
    (tape.value(a).clone(), tape.value(lp).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpActorNet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed_concat(input_dim: usize, final_bias: f64) -> CriticNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = CriticNet::new_concat(input_dim, &[8], &mut rng);
        for p in c.params_mut() {
            p.fill(0.0);
        }
        if let CriticNet::Concat(m) = &mut c {
            let n = m.params().len();
            m.params_mut()[n - 1].fill(final_bias);
        }
        c
    }

    fn mlp_actor(obs_dim: usize, act_dim: usize, seed: u64) -> ActorNet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ActorNet::Mlp(MlpActorNet::new(obs_dim, act_dim, &[8, 8], &mut rng))
    }

    fn member_next(batch: &Batch<f64>, members: &[usize]) -> Vec<Array2<f64>> {
        members.iter().map(|&k| batch.next_obs[k].clone()).collect()
    }

    fn toy_batch(b: usize, obs_dims: &[usize], act_dims: &[usize], seed: u64) -> Batch<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut arr = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
        };
        let n = obs_dims.len();
        let obs: Vec<_> = obs_dims.iter().map(|&d| arr(b, d)).collect();
        let next_obs: Vec<_> = obs_dims.iter().map(|&d| arr(b, d)).collect();
        let act: Vec<_> = act_dims.iter().map(|&d| arr(b, d)).collect();
        let local_r: Vec<_> = (0..n).map(|_| arr(b, 1)).collect();
        let team_r = arr(b, 1);
        let gamma_eff = Array2::from_shape_fn((b, 1), |(i, _)| 0.99f64.powi((i % 3 + 1) as i32));
        let not_done = Array2::from_shape_fn((b, 1), |(i, _)| if i % 4 == 3 { 0.0 } else { 1.0 });
        Batch {
            obs,
            act,
            next_obs,
            local_r,
            team_r,
            gamma_eff,
            not_done,
        }
    }

    #[test]
    fn zero_discount_makes_targets_equal_rewards() {
        let obs_dims = [5, 4];
        let act_dims = [2, 3];
        let mut batch = toy_batch(6, &obs_dims, &act_dims, 7);
        batch.gamma_eff.fill(0.0);
        let online1 = zeroed_concat(5 + 4 + 2 + 3, 0.0);
        let online2 = zeroed_concat(5 + 4 + 2 + 3, 0.0);
        let t1 = zeroed_concat(5 + 4 + 2 + 3, 3.0);
        let t2 = zeroed_concat(5 + 4 + 2 + 3, 5.0);
        let p0 = mlp_actor(5, 2, 11);
        let p1 = mlp_actor(4, 3, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let out = critic_step(
            (&online1, &online2),
            (&t1, &t2),
            &[&p0, &p1],
            &member_next(&batch, &[0, 1]),
            &[0, 1],
            &batch,
            RewardSource::SumMembers,
            0.8,
            &mut rng,
        );
        // y = r exactly; online Q ≡ 0, so loss_j = mean(r²).
        let r = RewardSource::SumMembers.reward(&batch, &[0, 1]);
        let want = r.iter().map(|e| e * e).sum::<f64>() / r.len() as f64;
        assert!((out.loss1 - want).abs() < 1e-12);
        assert!((out.loss2 - want).abs() < 1e-12);
        assert!(out.mean_next_logp.is_finite());
    }

    #[test]
    fn target_uses_the_smaller_twin_and_zero_alpha_drops_entropy() {
        let (od, ad) = (4, 2);
        let batch = toy_batch(5, &[od], &[ad], 21);
        let online1 = zeroed_concat(od + ad, 0.0);
        let online2 = zeroed_concat(od + ad, 0.0);
        // Q̄₁ ≡ 1.25 < Q̄₂ ≡ 4.0, so y must be built from 1.25.
        let t1 = zeroed_concat(od + ad, 1.25);
        let t2 = zeroed_concat(od + ad, 4.0);
        let p = mlp_actor(od, ad, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = critic_step(
            (&online1, &online2),
            (&t1, &t2),
            &[&p],
            &member_next(&batch, &[0]),
            &[0],
            &batch,
            RewardSource::SumMembers,
            0.0,
            &mut rng,
        );
        let b = batch.size();
        let mut want = 0.0;
        for i in 0..b {
            let y = batch.local_r[0][[i, 0]] + batch.gamma_eff[[i, 0]] * batch.not_done[[i, 0]] * 1.25;
            want += y * y;
        }
        want /= b as f64;
        assert!((out.loss1 - want).abs() < 1e-12, "{} vs {want}", out.loss1);
        assert!((out.loss2 - want).abs() < 1e-12);
    }

    #[test]
    fn entropy_term_scales_quadratically_in_loss_when_all_else_is_zero() {
        // Zeroed online and target critics, zero rewards, γ_eff = not_done = 1:
        // y = −α·Σ log π, so loss_j = α²·mean((Σ log π)²).
        let (od, ad) = (3, 2);
        let mut batch = toy_batch(4, &[od, od], &[ad, ad], 31);
        batch.team_r.fill(0.0);
        for r in &mut batch.local_r {
            r.fill(0.0);
        }
        batch.gamma_eff.fill(1.0);
        batch.not_done.fill(1.0);
        let online1 = zeroed_concat(2 * (od + ad), 0.0);
        let online2 = zeroed_concat(2 * (od + ad), 0.0);
        let t1 = zeroed_concat(2 * (od + ad), 0.0);
        let t2 = zeroed_concat(2 * (od + ad), 0.0);
        let p0 = mlp_actor(od, ad, 41);
        let p1 = mlp_actor(od, ad, 42);
        let base_rng = ChaCha8Rng::seed_from_u64(77);

        let run = |alpha: f64| {
            let mut rng = base_rng.clone();
            critic_step(
                (&online1, &online2),
                (&t1, &t2),
                &[&p0, &p1],
                &member_next(&batch, &[0, 1]),
                &[0, 1],
                &batch,
                RewardSource::Team,
                alpha,
                &mut rng,
            )
        };
        let o0 = run(0.0);
        let o1 = run(1.0);
        let o2 = run(2.0);
        assert!(o0.loss1.abs() < 1e-24);
        assert!(o1.loss1 > 0.0);
        assert!((o2.loss1 - 4.0 * o1.loss1).abs() < 1e-9 * o1.loss1.max(1.0));

        // Independent recomputation of Σ log π from the same noise stream.
        let mut rng = base_rng.clone();
        let n0 = standard_normal::<f64, _>(4, ad, &mut rng);
        let n1 = standard_normal::<f64, _>(4, ad, &mut rng);
        let (_, lp0) = sample_policy_values(&p0, &batch.next_obs[0], &n0);
        let (_, lp1) = sample_policy_values(&p1, &batch.next_obs[1], &n1);
        let sum = &lp0 + &lp1;
        let want = sum.iter().map(|e| e * e).sum::<f64>() / 4.0;
        assert!((o1.loss1 - want).abs() < 1e-12);
        let want_mean = sum.iter().sum::<f64>() / 4.0;
        assert!((o1.mean_next_logp - want_mean).abs() < 1e-12);
    }

    #[test]
    fn two_member_critic_step_matches_scalar_recomputation() {
        let obs_dims = [5, 4];
        let act_dims = [2, 3];
        let b = 4;
        let batch = toy_batch(b, &obs_dims, &act_dims, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let dims: Vec<usize> = obs_dims.iter().zip(&act_dims).map(|(o, a)| o + a).collect();
        let online1 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut rng);
        let online2 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut rng);
        let t1 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut rng);
        let t2 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut rng);
        let p0 = mlp_actor(5, 2, 71);
        let p1 = mlp_actor(4, 3, 72);
        let alpha = 0.7;
        let step_rng = ChaCha8Rng::seed_from_u64(123);

        let out = critic_step(
            (&online1, &online2),
            (&t1, &t2),
            &[&p0, &p1],
            &member_next(&batch, &[0, 1]),
            &[0, 1],
            &batch,
            RewardSource::SumMembers,
            alpha,
            &mut step_rng.clone(),
        );

        // Replay the same noise draws and recompute everything off-tape.
        let mut rng2 = step_rng.clone();
        let n0 = standard_normal::<f64, _>(b, 2, &mut rng2);
        let n1 = standard_normal::<f64, _>(b, 3, &mut rng2);
        let (a0, lp0) = sample_policy_values(&p0, &batch.next_obs[0], &n0);
        let (a1, lp1) = sample_policy_values(&p1, &batch.next_obs[1], &n1);

        let eval_q = |c: &CriticNet<f64>, obs: &[&Array2<f64>], act: &[&Array2<f64>]| {
            let mut tape = Tape::new();
            let mut binder = c.bind(&mut tape, false);
            let ov: Vec<Var> = obs.iter().map(|o| tape.constant((*o).clone())).collect();
            let av: Vec<Var> = act.iter().map(|a| tape.constant((*a).clone())).collect();
            let q = c.q(&mut tape, &mut binder, &ov, &av, obs[0].nrows());
            tape.value(q).clone()
        };
        let q1t = eval_q(&t1, &[&batch.next_obs[0], &batch.next_obs[1]], &[&a0, &a1]);
        let q2t = eval_q(&t2, &[&batch.next_obs[0], &batch.next_obs[1]], &[&a0, &a1]);
        let q1 = eval_q(&online1, &[&batch.obs[0], &batch.obs[1]], &[&batch.act[0], &batch.act[1]]);
        let q2 = eval_q(&online2, &[&batch.obs[0], &batch.obs[1]], &[&batch.act[0], &batch.act[1]]);

        let (mut l1, mut l2) = (0.0, 0.0);
        for i in 0..b {
            let r = batch.local_r[0][[i, 0]] + batch.local_r[1][[i, 0]];
            let soft = q1t[[i, 0]].min(q2t[[i, 0]]) - alpha * (lp0[[i, 0]] + lp1[[i, 0]]);
            let y = r + batch.gamma_eff[[i, 0]] * batch.not_done[[i, 0]] * soft;
            l1 += (q1[[i, 0]] - y) * (q1[[i, 0]] - y);
            l2 += (q2[[i, 0]] - y) * (q2[[i, 0]] - y);
        }
        l1 /= b as f64;
        l2 /= b as f64;
        assert!((out.loss1 - l1).abs() < 1e-8, "{} vs {l1}", out.loss1);
        assert!((out.loss2 - l2).abs() < 1e-8, "{} vs {l2}", out.loss2);
        assert_eq!(out.grads1.len(), online1.n_params());
        assert_eq!(out.grads2.len(), online2.n_params());
        assert!(out.grads1.iter().flatten().all(|g| g.is_finite()));
        assert!(out.grads1.iter().flatten().any(|g| g.abs() > 0.0));
    }

    #[test]
    fn constant_critics_and_zero_alpha_give_constant_loss_and_zero_gradient() {
        let (od, ad) = (4, 2);
        let p = mlp_actor(od, ad, 9);
        // Q₁ ≡ 2.0, Q₂ ≡ 3.0 regardless of input: min must pick 2.0.
        let c1 = zeroed_concat(od + ad, 2.0);
        let c2 = zeroed_concat(od + ad, 3.0);
        let obs = Array2::from_shape_fn((5, od), |(i, j)| (i as f64 - j as f64) * 0.2);
        let dummy_act = Array2::zeros((5, ad));
        let dummy_lp = Array2::zeros((5, 1));
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let out = actor_step(
            &p,
            (&c1, &c2),
            0,
            &obs,
            std::slice::from_ref(&obs),
            std::slice::from_ref(&dummy_act),
            std::slice::from_ref(&dummy_lp),
            0.0,
            LogpMode::Averaged,
            &mut rng,
        );
        assert!((out.loss - (-2.0)).abs() < 1e-12);
        assert!(out.grads.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn actor_gradient_matches_finite_differences_on_linear_critics() {
        let (od, ad) = (3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c1 = CriticNet::<f64>::new_concat(od + ad, &[], &mut rng);
        let c2 = CriticNet::<f64>::new_concat(od + ad, &[], &mut rng);
        let obs = Array2::from_shape_fn((4, od), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
        let dummy_act = Array2::zeros((4, ad));
        let dummy_lp = Array2::zeros((4, 1));
        let step_rng = ChaCha8Rng::seed_from_u64(29);

        let mut p = mlp_actor(od, ad, 19);
        let loss = |m: &ActorNet<f64>| {
            let out = actor_step(
                m,
                (&c1, &c2),
                0,
                &obs,
                std::slice::from_ref(&obs),
                std::slice::from_ref(&dummy_act),
                std::slice::from_ref(&dummy_lp),
                0.3,
                LogpMode::Averaged,
                &mut step_rng.clone(),
            );
            (out.loss, out.grads)
        };
        let mut sub_rng = ChaCha8Rng::seed_from_u64(101);
        if let Some(m) =
            crate::nn::gradcheck::check_module(&mut p, loss, 1e-4, 1e-4, Some(8), &[], &mut sub_rng)
        {
            panic!(
                "gradient mismatch at param {} index {:?}: analytic {} vs numeric {}",
                m.param, m.index, m.analytic, m.numeric
            );
        }
    }

    #[test]
    fn other_members_enter_as_constants_and_logp_modes_differ_by_their_mean() {
        let (od, ad) = (3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let c1 = CriticNet::<f64>::new_set(&[od + ad, od + ad], 8, 2, 16, 1, &mut rng);
        let c2 = CriticNet::<f64>::new_set(&[od + ad, od + ad], 8, 2, 16, 1, &mut rng);
        let p = mlp_actor(od, ad, 53);
        let obs = [
            Array2::from_shape_fn((4, od), |(i, j)| ((i + j) as f64 * 0.3).cos()),
            Array2::from_shape_fn((4, od), |(i, j)| ((i * 2 + j) as f64 * 0.21).sin()),
        ];
        let other_act = Array2::from_shape_fn((4, ad), |(i, j)| ((i + 2 * j) as f64 * 0.4).tanh());
        let other_lp = Array2::from_shape_fn((4, 1), |(i, _)| -0.5 - i as f64 * 0.1);
        let joint_act = [Array2::zeros((4, ad)), other_act.clone()];
        let joint_lp = [Array2::zeros((4, 1)), other_lp.clone()];
        let alpha = 0.6;
        let step_rng = ChaCha8Rng::seed_from_u64(59);

        let run = |mode: LogpMode| {
            actor_step(
                &p,
                (&c1, &c2),
                0,
                &obs[0],
                &obs,
                &joint_act,
                &joint_lp,
                alpha,
                mode,
                &mut step_rng.clone(),
            )
        };
        let avg = run(LogpMode::Averaged);
        let single = run(LogpMode::Single);
        // Same noise → same sample; the losses differ by α·mean((lp_other − lp_k)/2).
        assert_eq!(avg.action, single.action);
        let lp_k = &avg.logp;
        let expect_gap = (0..4)
            .map(|i| (other_lp[[i, 0]] - lp_k[[i, 0]]) / 2.0)
            .sum::<f64>()
            / 4.0
            * alpha;
        assert!(((avg.loss - single.loss) - expect_gap).abs() < 1e-10);

        // Changing the other member's action changes the loss value (it is
        // consumed) but the returned gradients still cover only agent k.
        let mut bumped = joint_act.clone();
        bumped[1] = &other_act + 0.25;
        let moved = actor_step(
            &p,
            (&c1, &c2),
            0,
            &obs[0],
            &obs,
            &bumped,
            &joint_lp,
            alpha,
            LogpMode::Averaged,
            &mut step_rng.clone(),
        );
        assert!((moved.loss - avg.loss).abs() > 1e-9);
        assert_eq!(avg.grads.len(), p.n_params());
    }

    #[test]
    fn single_member_group_actor_loss_reduces_to_local_form() {
        // With m = 1 the averaged and single modes coincide exactly.
        let (od, ad) = (3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let c1 = CriticNet::<f64>::new_concat(od + ad, &[8], &mut rng);
        let c2 = CriticNet::<f64>::new_concat(od + ad, &[8], &mut rng);
        let p = mlp_actor(od, ad, 89);
        let obs = Array2::from_shape_fn((3, od), |(i, j)| (i as f64) * 0.5 - (j as f64) * 0.2);
        let da = Array2::zeros((3, ad));
        let dl = Array2::zeros((3, 1));
        let step_rng = ChaCha8Rng::seed_from_u64(97);
        let a = actor_step(
            &p,
            (&c1, &c2),
            0,
            &obs,
            std::slice::from_ref(&obs),
            std::slice::from_ref(&da),
            std::slice::from_ref(&dl),
            0.4,
            LogpMode::Averaged,
            &mut step_rng.clone(),
        );
        let s = actor_step(
            &p,
            (&c1, &c2),
            0,
            &obs,
            std::slice::from_ref(&obs),
            std::slice::from_ref(&da),
            std::slice::from_ref(&dl),
            0.4,
            LogpMode::Single,
            &mut step_rng.clone(),
        );
        assert_eq!(a.loss, s.loss);
        for (ga, gs) in a.grads.iter().zip(&s.grads) {
            assert_eq!(ga, gs);
        }
    }

    #[test]
    fn losses_are_finite_on_environment_batches() {
        use crate::env::make_env;
        use crate::sac::buffer::{JointTransition, ReplayBuffer};

        let mut env = make_env("escort3").unwrap();
        let space = env.space().clone();
        let mut buf = ReplayBuffer::new(10_000, 1, 5, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut obs = env.reset(42);
        for _ in 0..60 {
            let acts: Vec<Vec<f64>> = space
                .act_dims
                .iter()
                .map(|&d| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let step = env.step(&acts).unwrap();
            buf.store(
                0,
                JointTransition {
                    obs: obs.iter().map(|o| o.iter().map(|&x| x as f32).collect()).collect(),
                    act: acts.iter().map(|a| a.iter().map(|&x| x as f32).collect()).collect(),
                    local_rewards: step.local_rewards.clone(),
                    team_reward: step.team_reward,
                    next_obs: step
                        .observations
                        .iter()
                        .map(|o| o.iter().map(|&x| x as f32).collect())
                        .collect(),
                    terminated: step.terminated,
                    truncated: step.truncated,
                },
            );
            if step.terminated || step.truncated {
                obs = env.reset(rng.gen());
            } else {
                obs = step.observations;
            }
        }
        let batch: Batch<f64> = buf.sample(16, &mut rng).unwrap();

        let dims: Vec<usize> = space
            .obs_dims
            .iter()
            .zip(&space.act_dims)
            .map(|(o, a)| o + a)
            .collect();
        let mut net_rng = ChaCha8Rng::seed_from_u64(8);
        let on1 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut net_rng);
        let on2 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut net_rng);
        let t1 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut net_rng);
        let t2 = CriticNet::<f64>::new_set(&dims, 8, 2, 16, 1, &mut net_rng);
        let pols: Vec<ActorNet<f64>> = (0..3).map(|i| mlp_actor(space.obs_dims[i], space.act_dims[i], 100 + i as u64)).collect();
        let prefs: Vec<&ActorNet<f64>> = pols.iter().collect();
        let members = [0usize, 1, 2];
        let out = critic_step(
            (&on1, &on2),
            (&t1, &t2),
            &prefs,
            &member_next(&batch, &members),
            &members,
            &batch,
            RewardSource::Team,
            1.0,
            &mut rng,
        );
        assert!(out.loss1.is_finite() && out.loss2.is_finite());
        assert!(out.grads1.iter().flatten().all(|g| g.is_finite()));
        assert!(out.grads2.iter().flatten().all(|g| g.is_finite()));

        let member_obs: Vec<Array2<f64>> = batch.obs.clone();
        let mut joint_act = Vec::new();
        let mut joint_lp = Vec::new();
        for (i, p) in prefs.iter().enumerate() {
            let noise = standard_normal::<f64, _>(batch.size(), p.act_dim(), &mut rng);
            let (a, lp) = sample_policy_values(p, &batch.obs[i], &noise);
            joint_act.push(a);
            joint_lp.push(lp);
        }
        let aout = actor_step(
            prefs[1],
            (&on1, &on2),
            1,
            &batch.obs[1],
            &member_obs,
            &joint_act,
            &joint_lp,
            0.5,
            LogpMode::Averaged,
            &mut rng,
        );
        assert!(aout.loss.is_finite());
        assert!(aout.grads.iter().flatten().all(|g| g.is_finite()));
        assert!(aout.logp.iter().all(|l| l.is_finite()));
    }
}
