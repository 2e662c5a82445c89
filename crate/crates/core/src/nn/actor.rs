//! Policy networks producing squashed-Gaussian action distributions.
//!
//! Two actor bodies share one sampling head:
//!
//! * [`HlcActorNet`] — a common feature extractor feeds parallel
//!   mixture-of-experts-style subnetworks whose outputs become tokens
//!   (shared embedding + sinusoidal position + layer norm). A separate base
//!   network processes the raw observation and emits a gradient-detached
//!   query; cross-attention over the tokens followed by an inverted
//!   bottleneck forms the attention path. Both paths concatenate into a
//!   SimBa residual stack and a final linear layer that splits into
//!   `(mean, log_std)`.
//! * [`MlpActorNet`] — a plain `[256, 256]` ReLU body with the same head,
//!   used by the simpler algorithm variants.
//!
//! Actions are `tanh` of a reparameterized Gaussian draw; log-probabilities
//! carry the tanh change-of-variables correction.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::blocks::{CrossAttention, Dense, InvertedBottleneck, LayerNormParams, Mlp, Module, SimbaNet};
use super::init::sinusoidal_pe;
use super::scalar::Scalar;
use super::tape::{Binder, Tape, Var};

/// Clamp bounds for the state-dependent log standard deviation.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Numerical floor inside the tanh log-density correction.
pub const TANH_EPS: f64 = 1e-6;

/// Shape of the attention-based actor.
#[derive(Debug, Clone)]
pub struct HlcActorConfig {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub extractor_dim: usize,
    pub subnet_hidden: usize,
    pub n_subnets: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub base_hidden: usize,
    pub simba_width: usize,
    pub simba_blocks: usize,
}

impl HlcActorConfig {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        HlcActorConfig {
            obs_dim,
            act_dim,
            extractor_dim: 256,
            subnet_hidden: 256,
            n_subnets: 2,
            embed_dim: 128,
            n_heads: 4,
            base_hidden: 256,
            simba_width: 128,
            simba_blocks: 1,
        }
    }
}

/// Attention-based actor body (see module docs).
pub struct HlcActorNet<F: Scalar> {
    extractor: Mlp<F>,
    subnets: Vec<Mlp<F>>,
    shared_embed: Dense<F>,
    token_ln: LayerNormParams<F>,
    base: Mlp<F>,
    query_proj: Dense<F>,
    attn: CrossAttention<F>,
    bottleneck: InvertedBottleneck<F>,
    simba: SimbaNet<F>,
    out: Dense<F>,
    pe: Array2<F>,
    act_dim: usize,
    obs_dim: usize,
}

impl<F: Scalar> HlcActorNet<F> {
    pub fn new<R: Rng>(cfg: &HlcActorConfig, rng: &mut R) -> Self {
        let mut pe = Array2::<F>::zeros((cfg.n_subnets, cfg.embed_dim));
        for k in 0..cfg.n_subnets {
            pe.row_mut(k).assign(&sinusoidal_pe::<F>(k, cfg.embed_dim).row(0));
        }
        HlcActorNet {
            extractor: Mlp::new(&[cfg.obs_dim, cfg.extractor_dim], true, rng),
            subnets: (0..cfg.n_subnets)
                .map(|_| {
                    Mlp::new(
                        &[cfg.extractor_dim, cfg.subnet_hidden, cfg.subnet_hidden],
                        true,
                        rng,
                    )
                })
                .collect(),
            shared_embed: Dense::new(cfg.subnet_hidden, cfg.embed_dim, 1.0, rng),
            token_ln: LayerNormParams::new(cfg.embed_dim),
            base: Mlp::new(&[cfg.obs_dim, cfg.base_hidden, cfg.base_hidden], true, rng),
            query_proj: Dense::new(cfg.base_hidden, cfg.embed_dim, 1.0, rng),
            attn: CrossAttention::new(cfg.embed_dim, cfg.embed_dim, cfg.n_heads, rng),
            bottleneck: InvertedBottleneck::new(cfg.embed_dim, rng),
            simba: SimbaNet::new(
                cfg.base_hidden + cfg.embed_dim,
                cfg.simba_width,
                cfg.simba_blocks,
                rng,
            ),
            out: Dense::new(cfg.simba_width, 2 * cfg.act_dim, 1.0, rng),
            pe,
            act_dim: cfg.act_dim,
            obs_dim: cfg.obs_dim,
        }
    }

    /// Distribution head: returns `(mean, clamped log_std)`, each
    /// `(batch, act_dim)`.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        binder: &mut Binder,
        obs: Var,
        batch: usize,
    ) -> (Var, Var) {
        binder.restart();
        let feat = self.extractor.forward(tape, binder, obs);
        let sub_outs: Vec<Var> = self
            .subnets
            .iter()
            .map(|s| s.forward(tape, binder, feat))
            .collect();
        let stack = tape.concat_rows(&sub_outs);
        let emb = self.shared_embed.forward(tape, binder, stack);
        let m = self.subnets.len();
        let pe_rows = Array2::from_shape_fn((m * batch, self.pe.ncols()), |(r, c)| {
            self.pe[[r / batch, c]]
        });
        let pe_leaf = tape.constant(pe_rows);
        let emb = tape.add(emb, pe_leaf);
        let tokens = self.token_ln.forward(tape, binder, emb);

        let base_out = self.base.forward(tape, binder, obs);
        let qp = self.query_proj.forward(tape, binder, base_out);
        let q = tape.detach(qp);
        let att = self.attn.forward(tape, binder, q, tokens, batch);
        let ib = self.bottleneck.forward(tape, binder, att);

        let cat = tape.concat_cols(&[base_out, ib]);
        let s = self.simba.forward(tape, binder, cat);
        let o = self.out.forward(tape, binder, s);
        binder.finish();
        split_head(tape, o, self.act_dim)
    }
}

impl<F: Scalar> Module<F> for HlcActorNet<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        let mut p = self.extractor.params();
        for s in &self.subnets {
            p.extend(s.params());
        }
        p.extend(self.shared_embed.params());
        p.extend(self.token_ln.params());
        p.extend(self.base.params());
        p.extend(self.query_proj.params());
        p.extend(self.attn.params());
        p.extend(self.bottleneck.params());
        p.extend(self.simba.params());
        p.extend(self.out.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut p = self.extractor.params_mut();
        for s in &mut self.subnets {
            p.extend(s.params_mut());
        }
        p.extend(self.shared_embed.params_mut());
        p.extend(self.token_ln.params_mut());
        p.extend(self.base.params_mut());
        p.extend(self.query_proj.params_mut());
        p.extend(self.attn.params_mut());
        p.extend(self.bottleneck.params_mut());
        p.extend(self.simba.params_mut());
        p.extend(self.out.params_mut());
        p
    }
}

/// Two-hidden-layer MLP actor body.
pub struct MlpActorNet<F: Scalar> {
    net: Mlp<F>,
    act_dim: usize,
    obs_dim: usize,
}

impl<F: Scalar> MlpActorNet<F> {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(hidden);
        dims.push(2 * act_dim);
        MlpActorNet {
            net: Mlp::new(&dims, false, rng),
            act_dim,
            obs_dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape<F>, binder: &mut Binder, obs: Var) -> (Var, Var) {
        binder.restart();
        let o = self.net.forward(tape, binder, obs);
        binder.finish();
        split_head(tape, o, self.act_dim)
    }
}

impl<F: Scalar> Module<F> for MlpActorNet<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        self.net.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        self.net.params_mut()
    }
}

fn split_head<F: Scalar>(tape: &mut Tape<F>, o: Var, act_dim: usize) -> (Var, Var) {
    let mean = tape.slice_cols(o, 0, act_dim);
    let log_std = tape.slice_cols(o, act_dim, 2 * act_dim);
    let log_std = tape.clamp(log_std, F::from_f64(LOG_STD_MIN), F::from_f64(LOG_STD_MAX));
    (mean, log_std)
}

/// Either actor body behind one interface. A handful of long-lived instances
/// exist per run, so the variant size gap is irrelevant.
#[allow(clippy::large_enum_variant)]
pub enum ActorNet<F: Scalar> {
    Hlc(HlcActorNet<F>),
    Mlp(MlpActorNet<F>),
}

impl<F: Scalar> ActorNet<F> {
    pub fn act_dim(&self) -> usize {
        match self {
            ActorNet::Hlc(n) => n.act_dim,
            ActorNet::Mlp(n) => n.act_dim,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            ActorNet::Hlc(n) => n.obs_dim,
            ActorNet::Mlp(n) => n.obs_dim,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        binder: &mut Binder,
        obs: Var,
        batch: usize,
    ) -> (Var, Var) {
        match self {
            ActorNet::Hlc(n) => n.forward(tape, binder, obs, batch),
            ActorNet::Mlp(n) => n.forward(tape, binder, obs),
        }
    }

    /// Reparameterized sample on the tape: forward, then
    /// `a = tanh(mean + exp(log_std)·noise)` with its log-probability.
    pub fn sample(
        &self,
        tape: &mut Tape<F>,
        binder: &mut Binder,
        obs: Var,
        batch: usize,
        noise: &Array2<F>,
    ) -> (Var, Var) {
        let (mean, log_std) = self.forward(tape, binder, obs, batch);
        squashed_gaussian(tape, mean, log_std, noise)
    }

    /// Off-tape greedy action: `tanh(mean)`.
    pub fn act_deterministic(&self, obs: &Array2<F>) -> Array2<F> {
        let mut tape = Tape::new();
        let mut binder = self.bind(&mut tape, false);
        let o = tape.constant(obs.clone());
        let (mean, _) = self.forward(&mut tape, &mut binder, o, obs.nrows());
        tape.value(mean).mapv(|e| e.tanh())
    }

    /// Off-tape stochastic action with caller-supplied standard-normal noise.
    pub fn act_stochastic(&self, obs: &Array2<F>, noise: &Array2<F>) -> Array2<F> {
        let mut tape = Tape::new();
        let mut binder = self.bind(&mut tape, false);
        let o = tape.constant(obs.clone());
        let (a, _) = {
            let (mean, log_std) = self.forward(&mut tape, &mut binder, o, obs.nrows());
            squashed_gaussian(&mut tape, mean, log_std, noise)
        };
        tape.value(a).clone()
    }
}

impl<F: Scalar> Module<F> for ActorNet<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        match self {
            ActorNet::Hlc(n) => n.params(),
            ActorNet::Mlp(n) => n.params(),
        }
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        match self {
            ActorNet::Hlc(n) => n.params_mut(),
            ActorNet::Mlp(n) => n.params_mut(),
        }
    }
}

/// Squashed-Gaussian sample from distribution parameters already on the tape.
///
/// Returns `(action, log_prob)` where `action` is `(batch, act_dim)` and
/// `log_prob` is `(batch, 1)`: the Gaussian log-density of the pre-squash
/// draw minus `Σ_dims log(1 − tanh(u)² + ε)`.
pub fn squashed_gaussian<F: Scalar>(
    tape: &mut Tape<F>,
    mean: Var,
    log_std: Var,
    noise: &Array2<F>,
) -> (Var, Var) {
    let half = 0.5f64;
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let std = tape.exp(log_std);
    let nz = tape.constant(noise.clone());
    let scaled = tape.mul(std, nz);
    let u = tape.add(mean, scaled);
    let action = tape.tanh(u);

    // Per-dim Gaussian log-density at the reparameterized draw:
    // −½ε² − ½ln(2π) − log_std. The ε-dependent part is a constant.
    let const_part = noise.mapv(|e| {
        let ef = e.to_f64();
        F::from_f64(-half * ef * ef - half_ln_2pi)
    });
    let c = tape.constant(const_part);
    let gauss = tape.sub(c, log_std);
    // tanh correction: −log(1 − a² + ε)
    let asq = tape.mul(action, action);
    let inner = tape.affine(asq, -F::ONE, F::from_f64(1.0 + TANH_EPS));
    let corr = tape.ln(inner);
    let per_dim = tape.sub(gauss, corr);
    let logp = tape.row_sum(per_dim);
    (action, logp)
}

/// `(rows, cols)` of standard-normal noise. Draws happen in `f64` so the
/// consumed RNG sequence is identical across precisions.
pub fn standard_normal<F: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<F> {
    let mut out = Array2::<F>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let e: f64 = rng.sample(StandardNormal);
            out[[i, j]] = F::from_f64(e);
        }
    }
    out
}
