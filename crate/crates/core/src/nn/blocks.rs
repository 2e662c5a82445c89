//! Reusable network blocks: dense layers, MLPs, pre-LN transformer encoder
//! blocks, cross-attention, inverted-bottleneck FFNs, and SimBa residual
//! stacks.
//!
//! Every block owns its parameters and exposes them through [`Module`] in a
//! fixed canonical order. Forward passes do not read the owned arrays
//! directly; they consume parameter leaves from a [`Binder`] in exactly that
//! canonical order, which is what lets one forward implementation serve
//! training (trainable binding), target evaluation (frozen binding), and
//! action selection (throwaway tape).

use ndarray::Array2;
use rand::Rng;

use super::init::{orthogonal, RELU_GAIN};
use super::scalar::Scalar;
use super::tape::{Binder, Tape, Var};

/// A set of named parameters in canonical order.
///
/// The order returned by [`Module::params`] and [`Module::params_mut`] must
/// be identical, and a forward pass must consume its binder leaves in the
/// same order — gradient extraction and optimizer state both index by
/// position.
pub trait Module<F: Scalar> {
    fn params(&self) -> Vec<&Array2<F>>;
    fn params_mut(&mut self) -> Vec<&mut Array2<F>>;

    fn n_params(&self) -> usize {
        self.params().len()
    }

    /// Total scalar count (diagnostics).
    fn n_scalars(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Bind this module's parameters onto `tape`.
    fn bind(&self, tape: &mut Tape<F>, trainable: bool) -> Binder {
        Binder::bind(tape, self.params(), trainable)
    }

    /// Copy parameter values from another instance of the same shape.
    fn copy_from(&mut self, other: &dyn Module<F>) {
        let src = other.params();
        let mut dst = self.params_mut();
        assert_eq!(src.len(), dst.len());
        for (d, s) in dst.iter_mut().zip(src) {
            assert_eq!(d.dim(), s.dim());
            d.assign(s);
        }
    }
}

/// Affine layer `y = x·W + b` with `W` stored `(in, out)`.
pub struct Dense<F: Scalar> {
    pub w: Array2<F>,
    pub b: Array2<F>,
}

impl<F: Scalar> Dense<F> {
    /// Orthogonal weight with the given gain, zero bias.
    pub fn new<R: Rng>(inp: usize, out: usize, gain: f64, rng: &mut R) -> Self {
        Dense {
            w: orthogonal(inp, out, gain, rng),
            b: Array2::zeros((1, out)),
        }
    }

    /// All-zero weight and bias (output projections that must start inert).
    pub fn zeroed(inp: usize, out: usize) -> Self {
        Dense {
            w: Array2::zeros((inp, out)),
            b: Array2::zeros((1, out)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<F>, binder: &mut Binder, x: Var) -> Var {
        let w = binder.next();
        let b = binder.next();
        let xw = tape.matmul(x, w);
        tape.add_bias(xw, b)
    }
}

impl<F: Scalar> Module<F> for Dense<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        vec![&self.w, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Learnable layer-norm scale/shift (`gamma` starts at 1, `beta` at 0).
pub struct LayerNormParams<F: Scalar> {
    pub gamma: Array2<F>,
    pub beta: Array2<F>,
}

impl<F: Scalar> LayerNormParams<F> {
    pub fn new(dim: usize) -> Self {
        LayerNormParams {
            gamma: Array2::from_elem((1, dim), F::ONE),
            beta: Array2::zeros((1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape<F>, binder: &mut Binder, x: Var) -> Var {
        let g = binder.next();
        let b = binder.next();
        tape.layer_norm(x, g, b)
    }
}

impl<F: Scalar> Module<F> for LayerNormParams<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Dense stack. `dims = [in, h1, ..., out]`; ReLU follows every layer except
/// the last, or every layer including the last when `relu_out` is set (a
/// feature stack rather than a regression head).
pub struct Mlp<F: Scalar> {
    layers: Vec<Dense<F>>,
    relu_out: bool,
}

impl<F: Scalar> Mlp<F> {
    pub fn new<R: Rng>(dims: &[usize], relu_out: bool, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let pre_relu = i + 1 < n || relu_out;
                let gain = if pre_relu { RELU_GAIN } else { 1.0 };
                Dense::new(dims[i], dims[i + 1], gain, rng)
            })
            .collect();
        Mlp { layers, relu_out }
    }

    pub fn forward(&self, tape: &mut Tape<F>, binder: &mut Binder, x: Var) -> Var {
        let n = self.layers.len();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, binder, h);
            if i + 1 < n || self.relu_out {
                h = tape.relu(h);
            }
        }
        h
    }
}

impl<F: Scalar> Module<F> for Mlp<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Pre-LN transformer encoder block over token-major stacks:
/// `x += SelfAttn(LN(x)); x += FFN(LN(x))`. The attention output projection
/// and the FFN second layer start at zero, so a fresh block is the identity.
pub struct EncoderBlock<F: Scalar> {
    ln1: LayerNormParams<F>,
    wq: Dense<F>,
    wk: Dense<F>,
    wv: Dense<F>,
    wo: Dense<F>,
    ln2: LayerNormParams<F>,
    ffn1: Dense<F>,
    ffn2: Dense<F>,
    n_heads: usize,
}

impl<F: Scalar> EncoderBlock<F> {
    pub fn new<R: Rng>(embed: usize, n_heads: usize, ffn: usize, rng: &mut R) -> Self {
        EncoderBlock {
            ln1: LayerNormParams::new(embed),
            wq: Dense::new(embed, embed, 1.0, rng),
            wk: Dense::new(embed, embed, 1.0, rng),
            wv: Dense::new(embed, embed, 1.0, rng),
            wo: Dense::zeroed(embed, embed),
            ln2: LayerNormParams::new(embed),
            ffn1: Dense::new(embed, ffn, RELU_GAIN, rng),
            ffn2: Dense::zeroed(ffn, embed),
            n_heads,
        }
    }

    /// `x` is `(tokens*batch, embed)` token-major.
    pub fn forward(&self, tape: &mut Tape<F>, binder: &mut Binder, x: Var, batch: usize) -> Var {
        let h = self.ln1.forward(tape, binder, x);
        let q = self.wq.forward(tape, binder, h);
        let k = self.wk.forward(tape, binder, h);
        let v = self.wv.forward(tape, binder, h);
        let a = tape.attention(q, k, v, batch, self.n_heads);
        let o = self.wo.forward(tape, binder, a);
        let x = tape.add(x, o);
        let h2 = self.ln2.forward(tape, binder, x);
        let f1 = self.ffn1.forward(tape, binder, h2);
        let f1 = tape.relu(f1);
        let f2 = self.ffn2.forward(tape, binder, f1);
        tape.add(x, f2)
    }
}

impl<F: Scalar> Module<F> for EncoderBlock<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        let mut p = self.ln1.params();
        p.extend(self.wq.params());
        p.extend(self.wk.params());
        p.extend(self.wv.params());
        p.extend(self.wo.params());
        p.extend(self.ln2.params());
        p.extend(self.ffn1.params());
        p.extend(self.ffn2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut p = self.ln1.params_mut();
        p.extend(self.wq.params_mut());
        p.extend(self.wk.params_mut());
        p.extend(self.wv.params_mut());
        p.extend(self.wo.params_mut());
        p.extend(self.ln2.params_mut());
        p.extend(self.ffn1.params_mut());
        p.extend(self.ffn2.params_mut());
        p
    }
}

/// Multi-head cross-attention: one query token attends over `m` key/value
/// tokens. The output projection starts at zero.
pub struct CrossAttention<F: Scalar> {
    wq: Dense<F>,
    wk: Dense<F>,
    wv: Dense<F>,
    wo: Dense<F>,
    n_heads: usize,
}

impl<F: Scalar> CrossAttention<F> {
    pub fn new<R: Rng>(query_in: usize, embed: usize, n_heads: usize, rng: &mut R) -> Self {
        CrossAttention {
            wq: Dense::new(query_in, embed, 1.0, rng),
            wk: Dense::new(embed, embed, 1.0, rng),
            wv: Dense::new(embed, embed, 1.0, rng),
            wo: Dense::zeroed(embed, embed),
            n_heads,
        }
    }

    /// `query` is `(batch, query_in)`, `tokens` is `(m*batch, embed)`.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        binder: &mut Binder,
        query: Var,
        tokens: Var,
        batch: usize,
    ) -> Var {
        let q = self.wq.forward(tape, binder, query);
        let k = self.wk.forward(tape, binder, tokens);
        let v = self.wv.forward(tape, binder, tokens);
        let a = tape.attention(q, k, v, batch, self.n_heads);
        self.wo.forward(tape, binder, a)
    }
}

impl<F: Scalar> Module<F> for CrossAttention<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        let mut p = self.wq.params();
        p.extend(self.wk.params());
        p.extend(self.wv.params());
        p.extend(self.wo.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut p = self.wq.params_mut();
        p.extend(self.wk.params_mut());
        p.extend(self.wv.params_mut());
        p.extend(self.wo.params_mut());
        p
    }
}

/// Two-layer FFN whose hidden width is 4x the embed width: `d -> 4d -> d`
/// with a ReLU between. The second layer starts at zero.
pub struct InvertedBottleneck<F: Scalar> {
    l1: Dense<F>,
    l2: Dense<F>,
}

impl<F: Scalar> InvertedBottleneck<F> {
    pub fn new<R: Rng>(dim: usize, rng: &mut R) -> Self {
        InvertedBottleneck {
            l1: Dense::new(dim, 4 * dim, RELU_GAIN, rng),
            l2: Dense::zeroed(4 * dim, dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape<F>, binder: &mut Binder, x: Var) -> Var {
        let h = self.l1.forward(tape, binder, x);
        let h = tape.relu(h);
        self.l2.forward(tape, binder, h)
    }
}

impl<F: Scalar> Module<F> for InvertedBottleneck<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        let mut p = self.l1.params();
        p.extend(self.l2.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut p = self.l1.params_mut();
        p.extend(self.l2.params_mut());
        p
    }
}

struct SimbaBlock<F: Scalar> {
    ln: LayerNormParams<F>,
    ffn: InvertedBottleneck<F>,
}

/// SimBa residual stack: input projection to width `w`, `K` blocks of
/// `x += FFN(LN(x))` with inverted-bottleneck FFNs, then a final layer norm.
/// Zero-started FFN second layers make a fresh stack compute
/// `LN(input projection)` exactly.
pub struct SimbaNet<F: Scalar> {
    input_proj: Dense<F>,
    blocks: Vec<SimbaBlock<F>>,
    final_ln: LayerNormParams<F>,
}

impl<F: Scalar> SimbaNet<F> {
    pub fn new<R: Rng>(inp: usize, width: usize, n_blocks: usize, rng: &mut R) -> Self {
        SimbaNet {
            input_proj: Dense::new(inp, width, 1.0, rng),
            blocks: (0..n_blocks)
                .map(|_| SimbaBlock {
                    ln: LayerNormParams::new(width),
                    ffn: InvertedBottleneck::new(width, rng),
                })
                .collect(),
            final_ln: LayerNormParams::new(width),
        }
    }

    pub fn forward(&self, tape: &mut Tape<F>, binder: &mut Binder, x: Var) -> Var {
        let mut h = self.input_proj.forward(tape, binder, x);
        for block in &self.blocks {
            let n = block.ln.forward(tape, binder, h);
            let f = block.ffn.forward(tape, binder, n);
            h = tape.add(h, f);
        }
        self.final_ln.forward(tape, binder, h)
    }
}

impl<F: Scalar> Module<F> for SimbaNet<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        let mut p = self.input_proj.params();
        for b in &self.blocks {
            p.extend(b.ln.params());
            p.extend(b.ffn.params());
        }
        p.extend(self.final_ln.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut p = self.input_proj.params_mut();
        for b in &mut self.blocks {
            p.extend(b.ln.params_mut());
            p.extend(b.ffn.params_mut());
        }
        p.extend(self.final_ln.params_mut());
        p
    }
}
