//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! A [`Tape`] is an append-only arena of nodes. Forward values are computed
//! eagerly as operations are recorded; [`Tape::backward`] then walks the arena
//! in reverse, accumulating exact gradients for every node that (transitively)
//! depends on a trainable leaf. Nodes that cannot reach a trainable leaf are
//! skipped entirely, so running a frozen network forward on a tape costs no
//! backward work.
//!
//! Every value is an `Array2`; batches are `(rows, features)` and scalars are
//! `(1, 1)`. Multi-token tensors use a token-major layout: token `t` of a
//! `tokens x batch x dim` stack occupies rows `t*batch .. (t+1)*batch` of a
//! `(tokens*batch, dim)` array, which lets one matrix product apply a shared
//! projection to every token.

use ndarray::{s, Array2, Axis};

use super::matmul::mm;
use super::scalar::Scalar;

/// Layer-norm variance epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<F: Scalar> {
    Leaf,
    MatMul {
        a: usize,
        b: usize,
    },
    /// `(r, c) + (1, c)` broadcast add.
    AddBias {
        x: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    Sub {
        a: usize,
        b: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    /// Elementwise minimum; gradient routes to the smaller input (ties to `a`).
    Min2 {
        a: usize,
        b: usize,
    },
    /// `mul * x + add` elementwise; only `mul` matters for the backward pass.
    Affine {
        x: usize,
        mul: F,
    },
    Relu {
        x: usize,
    },
    Tanh {
        x: usize,
    },
    Exp {
        x: usize,
    },
    Ln {
        x: usize,
    },
    /// Identity inside `[lo, hi]`, saturated outside; gradient passes only
    /// where the input lies inside the interval (inclusive).
    Clamp {
        x: usize,
        lo: F,
        hi: F,
    },
    /// Row-wise layer norm with learnable scale/shift `(1, c)`.
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        mean: Array2<F>,
        inv_std: Array2<F>,
    },
    /// Scaled-dot-product multi-head attention. `q` is `(nq*batch, d)`,
    /// `k`/`v` are `(m*batch, d)`; every query token attends to all `m`
    /// key/value tokens of the same batch row. Softmax weights are cached
    /// per `(head, query, key)` as `(batch,)` columns.
    Attention {
        q: usize,
        k: usize,
        v: usize,
        batch: usize,
        n_heads: usize,
        weights: Vec<Array2<F>>,
    },
    /// Mean over the token blocks of a token-major stack.
    MeanTokens {
        x: usize,
        tokens: usize,
    },
    ConcatRows {
        parts: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    SliceCols {
        x: usize,
        from: usize,
        to: usize,
    },
    /// Sum over columns: `(r, c) -> (r, 1)`.
    RowSum {
        x: usize,
    },
    /// Mean over all elements: `-> (1, 1)`.
    MeanAll {
        x: usize,
    },
    /// Identity forward, zero backward.
    Detach,
}

struct Node<F: Scalar> {
    op: Op<F>,
    value: Array2<F>,
    needs_grad: bool,
}

/// Append-only autodiff arena.
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Array2<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, op: Op<F>, value: Array2<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Array2<F> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v` by the last [`Tape::backward`] call;
    /// zeros if the node was unreachable.
    pub fn grad(&self, v: Var) -> Array2<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[v.0].value.raw_dim()),
        }
    }

    /// Like [`Tape::grad`] but moves the buffer out.
    pub fn take_grad(&mut self, v: Var) -> Array2<F> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => Array2::zeros(self.nodes[v.0].value.raw_dim()),
        }
    }

    // ---- node constructors -------------------------------------------------

    /// New leaf holding `value`; `trainable` leaves receive gradients.
    pub fn leaf(&mut self, value: Array2<F>, trainable: bool) -> Var {
        self.push(Op::Leaf, value, trainable)
    }

    /// Non-trainable leaf (an input or a constant).
    pub fn constant(&mut self, value: Array2<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = mm(
            &self.nodes[a.0].value.view(),
            false,
            &self.nodes[b.0].value.view(),
            false,
        );
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(Op::MatMul { a: a.0, b: b.0 }, v, ng)
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[b.0].value.nrows(), 1);
        let v = &self.nodes[x.0].value + &self.nodes[b.0].value;
        let ng = self.needs(x.0) || self.needs(b.0);
        self.push(Op::AddBias { x: x.0, b: b.0 }, v, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[a.0].value.dim(), self.nodes[b.0].value.dim());
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(Op::Add { a: a.0, b: b.0 }, v, ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[a.0].value.dim(), self.nodes[b.0].value.dim());
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(Op::Sub { a: a.0, b: b.0 }, v, ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        debug_assert_eq!(self.nodes[a.0].value.dim(), self.nodes[b.0].value.dim());
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(Op::Mul { a: a.0, b: b.0 }, v, ng)
    }

    pub fn min2(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let mut v = va.clone();
        v.zip_mut_with(vb, |x, &y| *x = x.mins(y));
        let ng = self.needs(a.0) || self.needs(b.0);
        self.push(Op::Min2 { a: a.0, b: b.0 }, v, ng)
    }

    /// `mul * x + add` elementwise.
    pub fn affine(&mut self, x: Var, mul: F, add: F) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| mul * e + add);
        let ng = self.needs(x.0);
        self.push(Op::Affine { x: x.0, mul }, v, ng)
    }

    pub fn scale(&mut self, x: Var, mul: F) -> Var {
        self.affine(x, mul, F::ZERO)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.affine(x, -F::ONE, F::ZERO)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.maxs(F::ZERO));
        let ng = self.needs(x.0);
        self.push(Op::Relu { x: x.0 }, v, ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.tanh());
        let ng = self.needs(x.0);
        self.push(Op::Tanh { x: x.0 }, v, ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.exp());
        let ng = self.needs(x.0);
        self.push(Op::Exp { x: x.0 }, v, ng)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.ln());
        let ng = self.needs(x.0);
        self.push(Op::Ln { x: x.0 }, v, ng)
    }

    pub fn clamp(&mut self, x: Var, lo: F, hi: F) -> Var {
        let v = self.nodes[x.0].value.mapv(|e| e.maxs(lo).mins(hi));
        let ng = self.needs(x.0);
        self.push(Op::Clamp { x: x.0, lo, hi }, v, ng)
    }

    /// Row-wise layer norm; `gamma`/`beta` are `(1, c)` parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let c = xv.ncols();
        let inv_c = F::from_f64(1.0 / c as f64);
        let eps = F::from_f64(LN_EPS);
        let mean = xv
            .sum_axis(Axis(1))
            .insert_axis(Axis(1))
            .mapv(|e| e * inv_c);
        let mut var = Array2::<F>::zeros((xv.nrows(), 1));
        for (i, row) in xv.rows().into_iter().enumerate() {
            let mu = mean[[i, 0]];
            let mut s = F::ZERO;
            for &e in row {
                let d = e - mu;
                s += d * d;
            }
            var[[i, 0]] = s * inv_c;
        }
        let inv_std = var.mapv(|e| F::ONE / (e + eps).sqrt());
        let gamma_v = &self.nodes[gamma.0].value;
        let beta_v = &self.nodes[beta.0].value;
        let mut y = Array2::<F>::zeros(xv.raw_dim());
        for (i, row) in xv.rows().into_iter().enumerate() {
            let (mu, inv) = (mean[[i, 0]], inv_std[[i, 0]]);
            for (j, &e) in row.iter().enumerate() {
                y[[i, j]] = (e - mu) * inv * gamma_v[[0, j]] + beta_v[[0, j]];
            }
        }
        let ng = self.needs(x.0) || self.needs(gamma.0) || self.needs(beta.0);
        self.push(
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                mean,
                inv_std,
            },
            y,
            ng,
        )
    }

    /// Multi-head scaled-dot-product attention (see [`Op::Attention`] layout).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, batch: usize, n_heads: usize) -> Var {
        let qv = &self.nodes[q.0].value;
        let kv = &self.nodes[k.0].value;
        let vv = &self.nodes[v.0].value;
        let d = qv.ncols();
        assert_eq!(kv.ncols(), d);
        assert_eq!(vv.ncols(), d);
        assert_eq!(d % n_heads, 0, "embed dim {d} not divisible by {n_heads} heads");
        assert_eq!(qv.nrows() % batch, 0);
        assert_eq!(kv.nrows() % batch, 0);
        assert_eq!(kv.nrows(), vv.nrows());
        let nq = qv.nrows() / batch;
        let m = kv.nrows() / batch;
        let dh = d / n_heads;
        let scale = F::from_f64(1.0 / (dh as f64).sqrt());

        let mut out = Array2::<F>::zeros(qv.raw_dim());
        let mut weights = Vec::with_capacity(n_heads * nq);
        for h in 0..n_heads {
            for i in 0..nq {
                let qi = qv.slice(s![i * batch..(i + 1) * batch, h * dh..(h + 1) * dh]);
                // Raw scores per key token: (m, batch).
                let mut sc = Array2::<F>::zeros((m, batch));
                for j in 0..m {
                    let kj = kv.slice(s![j * batch..(j + 1) * batch, h * dh..(h + 1) * dh]);
                    for r in 0..batch {
                        let mut acc = F::ZERO;
                        for cidx in 0..dh {
                            acc += qi[[r, cidx]] * kj[[r, cidx]];
                        }
                        sc[[j, r]] = acc * scale;
                    }
                }
                // Stable softmax over the m key tokens, per batch row.
                for r in 0..batch {
                    let mut mx = sc[[0, r]];
                    for j in 1..m {
                        mx = mx.maxs(sc[[j, r]]);
                    }
                    let mut z = F::ZERO;
                    for j in 0..m {
                        let e = (sc[[j, r]] - mx).exp();
                        sc[[j, r]] = e;
                        z += e;
                    }
                    for j in 0..m {
                        sc[[j, r]] /= z;
                    }
                }
                // Weighted value sum into the output block.
                let mut oi = out.slice_mut(s![i * batch..(i + 1) * batch, h * dh..(h + 1) * dh]);
                for j in 0..m {
                    let vj = vv.slice(s![j * batch..(j + 1) * batch, h * dh..(h + 1) * dh]);
                    for r in 0..batch {
                        let w = sc[[j, r]];
                        for c in 0..dh {
                            oi[[r, c]] += w * vj[[r, c]];
                        }
                    }
                }
                weights.push(sc);
            }
        }
        let ng = self.needs(q.0) || self.needs(k.0) || self.needs(v.0);
        self.push(
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                batch,
                n_heads,
                weights,
            },
            out,
            ng,
        )
    }

    pub fn mean_tokens(&mut self, x: Var, tokens: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.nrows() % tokens, 0);
        let batch = xv.nrows() / tokens;
        let inv = F::from_f64(1.0 / tokens as f64);
        let mut v = Array2::<F>::zeros((batch, xv.ncols()));
        for t in 0..tokens {
            v += &xv.slice(s![t * batch..(t + 1) * batch, ..]);
        }
        v.mapv_inplace(|e| e * inv);
        let ng = self.needs(x.0);
        self.push(Op::MeanTokens { x: x.0, tokens }, v, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.nodes[parts[0].0].value.ncols();
        let rows: usize = parts.iter().map(|p| self.nodes[p.0].value.nrows()).sum();
        let mut v = Array2::<F>::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.ncols(), cols);
            v.slice_mut(s![at..at + pv.nrows(), ..]).assign(pv);
            at += pv.nrows();
        }
        let ng = parts.iter().any(|p| self.needs(p.0));
        self.push(
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            v,
            ng,
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0].0].value.nrows();
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.ncols()).sum();
        let mut v = Array2::<F>::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let pv = &self.nodes[p.0].value;
            assert_eq!(pv.nrows(), rows);
            v.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        let ng = parts.iter().any(|p| self.needs(p.0));
        self.push(
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.0).collect(),
            },
            v,
            ng,
        )
    }

    pub fn slice_cols(&mut self, x: Var, from: usize, to: usize) -> Var {
        let v = self.nodes[x.0].value.slice(s![.., from..to]).to_owned();
        let ng = self.needs(x.0);
        self.push(Op::SliceCols { x: x.0, from, to }, v, ng)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.needs(x.0);
        self.push(Op::RowSum { x: x.0 }, v, ng)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let inv = F::from_f64(1.0 / (xv.len() as f64));
        let mut s = F::ZERO;
        for &e in xv.iter() {
            s += e;
        }
        let v = Array2::from_elem((1, 1), s * inv);
        let ng = self.needs(x.0);
        self.push(Op::MeanAll { x: x.0 }, v, ng)
    }

    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.nodes[x.0].value.clone();
        self.push(Op::Detach, v, false)
    }

    // ---- backward ----------------------------------------------------------

    fn acc(grads: &mut [Option<Array2<F>>], nodes: &[Node<F>], idx: usize, delta: Array2<F>) {
        if !nodes[idx].needs_grad {
            return;
        }
        match &mut grads[idx] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    /// Accumulates gradients of the scalar `root` into every reachable
    /// trainable leaf. Intermediate gradients are dropped as soon as they are
    /// consumed; leaf gradients persist until read.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(
            self.nodes[root.0].value.dim(),
            (1, 1),
            "backward root must be a scalar"
        );
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[root.0] = Some(Array2::from_elem((1, 1), F::ONE));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                self.grads[i] = None;
                continue;
            }
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            // Inputs always precede their consumer, so splitting at `i`
            // separates this node from everything its backward reads.
            let (head, tail) = self.nodes.split_at(i);
            let node = &tail[0];
            let grads = &mut self.grads;
            match &node.op {
                Op::Leaf => {
                    // Keep the gradient for the caller.
                    grads[i] = Some(gout);
                    continue;
                }
                Op::MatMul { a, b } => {
                    if head[*a].needs_grad {
                        let d = mm(&gout.view(), false, &head[*b].value.view(), true);
                        Self::acc(grads, head, *a, d);
                    }
                    if head[*b].needs_grad {
                        let d = mm(&head[*a].value.view(), true, &gout.view(), false);
                        Self::acc(grads, head, *b, d);
                    }
                }
                Op::AddBias { x, b } => {
                    if head[*b].needs_grad {
                        let d = gout.sum_axis(Axis(0)).insert_axis(Axis(0));
                        Self::acc(grads, head, *b, d);
                    }
                    if head[*x].needs_grad {
                        Self::acc(grads, head, *x, gout);
                    }
                }
                Op::Add { a, b } => {
                    if head[*b].needs_grad {
                        Self::acc(grads, head, *b, gout.clone());
                    }
                    if head[*a].needs_grad {
                        Self::acc(grads, head, *a, gout);
                    }
                }
                Op::Sub { a, b } => {
                    if head[*b].needs_grad {
                        Self::acc(grads, head, *b, gout.mapv(|e| -e));
                    }
                    if head[*a].needs_grad {
                        Self::acc(grads, head, *a, gout);
                    }
                }
                Op::Mul { a, b } => {
                    if head[*b].needs_grad {
                        Self::acc(grads, head, *b, &gout * &head[*a].value);
                    }
                    if head[*a].needs_grad {
                        Self::acc(grads, head, *a, &gout * &head[*b].value);
                    }
                }
                Op::Min2 { a, b } => {
                    let (va, vb) = (&head[*a].value, &head[*b].value);
                    if head[*a].needs_grad {
                        let mut d = gout.clone();
                        ndarray::Zip::from(&mut d).and(va).and(vb).for_each(|g, &x, &y| {
                            if x > y {
                                *g = F::ZERO;
                            }
                        });
                        Self::acc(grads, head, *a, d);
                    }
                    if head[*b].needs_grad {
                        let mut d = gout;
                        ndarray::Zip::from(&mut d).and(va).and(vb).for_each(|g, &x, &y| {
                            if x <= y {
                                *g = F::ZERO;
                            }
                        });
                        Self::acc(grads, head, *b, d);
                    }
                }
                Op::Affine { x, mul, .. } => {
                    let mul = *mul;
                    Self::acc(grads, head, *x, gout.mapv(|e| e * mul));
                }
                Op::Relu { x } => {
                    let mut d = gout;
                    ndarray::Zip::from(&mut d)
                        .and(&head[*x].value)
                        .for_each(|g, &e| {
                            if e <= F::ZERO {
                                *g = F::ZERO;
                            }
                        });
                    Self::acc(grads, head, *x, d);
                }
                Op::Tanh { x } => {
                    let mut d = gout;
                    ndarray::Zip::from(&mut d).and(&node.value).for_each(|g, &y| {
                        *g *= F::ONE - y * y;
                    });
                    Self::acc(grads, head, *x, d);
                }
                Op::Exp { x } => {
                    let d = &gout * &node.value;
                    Self::acc(grads, head, *x, d);
                }
                Op::Ln { x } => {
                    let d = &gout / &head[*x].value;
                    Self::acc(grads, head, *x, d);
                }
                Op::Clamp { x, lo, hi } => {
                    let (lo, hi) = (*lo, *hi);
                    let mut d = gout;
                    ndarray::Zip::from(&mut d)
                        .and(&head[*x].value)
                        .for_each(|g, &e| {
                            if e < lo || e > hi {
                                *g = F::ZERO;
                            }
                        });
                    Self::acc(grads, head, *x, d);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let xv = &head[*x].value;
                    let gv = &head[*gamma].value;
                    let (r, c) = xv.dim();
                    let inv_c = F::from_f64(1.0 / c as f64);
                    if head[*beta].needs_grad {
                        let d = gout.sum_axis(Axis(0)).insert_axis(Axis(0));
                        Self::acc(grads, head, *beta, d);
                    }
                    if head[*gamma].needs_grad {
                        let mut d = Array2::<F>::zeros((1, c));
                        for i2 in 0..r {
                            let (mu, inv) = (mean[[i2, 0]], inv_std[[i2, 0]]);
                            for j in 0..c {
                                d[[0, j]] += gout[[i2, j]] * (xv[[i2, j]] - mu) * inv;
                            }
                        }
                        Self::acc(grads, head, *gamma, d);
                    }
                    if head[*x].needs_grad {
                        let mut d = Array2::<F>::zeros((r, c));
                        for i2 in 0..r {
                            let (mu, inv) = (mean[[i2, 0]], inv_std[[i2, 0]]);
                            let mut sum_g = F::ZERO;
                            let mut sum_gx = F::ZERO;
                            for j in 0..c {
                                let gj = gout[[i2, j]] * gv[[0, j]];
                                let xh = (xv[[i2, j]] - mu) * inv;
                                sum_g += gj;
                                sum_gx += gj * xh;
                            }
                            let (mg, mgx) = (sum_g * inv_c, sum_gx * inv_c);
                            for j in 0..c {
                                let gj = gout[[i2, j]] * gv[[0, j]];
                                let xh = (xv[[i2, j]] - mu) * inv;
                                d[[i2, j]] = inv * (gj - mg - xh * mgx);
                            }
                        }
                        Self::acc(grads, head, *x, d);
                    }
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    batch,
                    n_heads,
                    weights,
                } => {
                    let (batch, n_heads) = (*batch, *n_heads);
                    let qv = &head[*q].value;
                    let kv = &head[*k].value;
                    let vv = &head[*v].value;
                    let d = qv.ncols();
                    let dh = d / n_heads;
                    let nq = qv.nrows() / batch;
                    let m = kv.nrows() / batch;
                    let scale = F::from_f64(1.0 / (dh as f64).sqrt());
                    let mut dq = Array2::<F>::zeros(qv.raw_dim());
                    let mut dk = Array2::<F>::zeros(kv.raw_dim());
                    let mut dv = Array2::<F>::zeros(vv.raw_dim());
                    for h in 0..n_heads {
                        let hc = h * dh;
                        for i2 in 0..nq {
                            let w = &weights[h * nq + i2];
                            let go = gout.slice(s![i2 * batch..(i2 + 1) * batch, hc..hc + dh]);
                            // dw[j] = <dout, v_j>; dv_j += w_j * dout
                            let mut dw = Array2::<F>::zeros((m, batch));
                            for j in 0..m {
                                let vj = vv.slice(s![j * batch..(j + 1) * batch, hc..hc + dh]);
                                let mut dvj =
                                    dv.slice_mut(s![j * batch..(j + 1) * batch, hc..hc + dh]);
                                for r in 0..batch {
                                    let wj = w[[j, r]];
                                    let mut acc = F::ZERO;
                                    for c in 0..dh {
                                        acc += go[[r, c]] * vj[[r, c]];
                                        dvj[[r, c]] += wj * go[[r, c]];
                                    }
                                    dw[[j, r]] = acc;
                                }
                            }
                            // Softmax backward: ds_j = w_j * (dw_j - sum_j' w_j' dw_j')
                            for r in 0..batch {
                                let mut dot = F::ZERO;
                                for j in 0..m {
                                    dot += w[[j, r]] * dw[[j, r]];
                                }
                                for j in 0..m {
                                    dw[[j, r]] = w[[j, r]] * (dw[[j, r]] - dot) * scale;
                                }
                            }
                            // dq_i += ds_j * k_j ; dk_j += ds_j * q_i
                            let qi = qv.slice(s![i2 * batch..(i2 + 1) * batch, hc..hc + dh]);
                            let mut dqi =
                                dq.slice_mut(s![i2 * batch..(i2 + 1) * batch, hc..hc + dh]);
                            for j in 0..m {
                                let kj = kv.slice(s![j * batch..(j + 1) * batch, hc..hc + dh]);
                                let mut dkj =
                                    dk.slice_mut(s![j * batch..(j + 1) * batch, hc..hc + dh]);
                                for r in 0..batch {
                                    let ds = dw[[j, r]];
                                    for c in 0..dh {
                                        dqi[[r, c]] += ds * kj[[r, c]];
                                        dkj[[r, c]] += ds * qi[[r, c]];
                                    }
                                }
                            }
                        }
                    }
                    if head[*q].needs_grad {
                        Self::acc(grads, head, *q, dq);
                    }
                    if head[*k].needs_grad {
                        Self::acc(grads, head, *k, dk);
                    }
                    if head[*v].needs_grad {
                        Self::acc(grads, head, *v, dv);
                    }
                }
                Op::MeanTokens { x, tokens } => {
                    let tokens = *tokens;
                    let batch = gout.nrows();
                    let inv = F::from_f64(1.0 / tokens as f64);
                    let scaled = gout.mapv(|e| e * inv);
                    let mut d = Array2::<F>::zeros(head[*x].value.raw_dim());
                    for t in 0..tokens {
                        d.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&scaled);
                    }
                    Self::acc(grads, head, *x, d);
                }
                Op::ConcatRows { parts } => {
                    let mut at = 0;
                    for p in parts.clone() {
                        let rows = head[p].value.nrows();
                        if head[p].needs_grad {
                            let d = gout.slice(s![at..at + rows, ..]).to_owned();
                            Self::acc(grads, head, p, d);
                        }
                        at += rows;
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut at = 0;
                    for p in parts.clone() {
                        let cols = head[p].value.ncols();
                        if head[p].needs_grad {
                            let d = gout.slice(s![.., at..at + cols]).to_owned();
                            Self::acc(grads, head, p, d);
                        }
                        at += cols;
                    }
                }
                Op::SliceCols { x, from, to } => {
                    let mut d = Array2::<F>::zeros(head[*x].value.raw_dim());
                    d.slice_mut(s![.., *from..*to]).assign(&gout);
                    Self::acc(grads, head, *x, d);
                }
                Op::RowSum { x } => {
                    let cols = head[*x].value.ncols();
                    let mut d = Array2::<F>::zeros(head[*x].value.raw_dim());
                    for i2 in 0..d.nrows() {
                        let g = gout[[i2, 0]];
                        for j in 0..cols {
                            d[[i2, j]] = g;
                        }
                    }
                    Self::acc(grads, head, *x, d);
                }
                Op::MeanAll { x } => {
                    let xv = &head[*x].value;
                    let g = gout[[0, 0]] * F::from_f64(1.0 / xv.len() as f64);
                    let d = Array2::from_elem(xv.raw_dim(), g);
                    Self::acc(grads, head, *x, d);
                }
                Op::Detach => {}
            }
        }
    }
}

/// A module's parameters bound onto a tape as leaves, in the module's
/// canonical parameter order.
///
/// Binding clones each parameter array into a leaf once; forward passes then
/// consume the leaves in the same order via [`Binder::next`]. Running the
/// same module forward several times on one tape reuses the binding (call
/// [`Binder::restart`] first), so gradients from all passes accumulate into
/// the same leaves.
pub struct Binder {
    vars: Vec<Var>,
    cursor: usize,
}

impl Binder {
    /// Bind `params` (canonical order) as leaves; `trainable` controls
    /// whether gradients flow into them.
    pub fn bind<'p, F>(
        tape: &mut Tape<F>,
        params: impl IntoIterator<Item = &'p Array2<F>>,
        trainable: bool,
    ) -> Self
    where
        F: Scalar + 'p,
    {
        let vars = params
            .into_iter()
            .map(|p| tape.leaf(p.clone(), trainable))
            .collect();
        Binder { vars, cursor: 0 }
    }

    /// Next parameter leaf in binding order.
    #[allow(clippy::should_implement_trait)] // cursor advance, not an iterator
    pub fn next(&mut self) -> Var {
        let v = self.vars[self.cursor];
        self.cursor += 1;
        v
    }

    /// Rewind to the first parameter (before a repeated forward pass).
    pub fn restart(&mut self) {
        self.cursor = 0;
    }

    /// Asserts every bound parameter was consumed — catches a forward pass
    /// whose parameter order drifted from the canonical order.
    pub fn finish(&self) {
        assert_eq!(
            self.cursor,
            self.vars.len(),
            "forward pass consumed {} of {} bound parameters",
            self.cursor,
            self.vars.len()
        );
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Extract accumulated gradients for every bound parameter, in binding
    /// order (zeros for parameters the loss never touched).
    pub fn grads<F: Scalar>(&self, tape: &mut Tape<F>) -> Vec<Array2<F>> {
        self.vars.iter().map(|&v| tape.take_grad(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matmul_chain_gradients_match_hand_derivation() {
        // loss = mean_all(A·B); d/dA = (1/size) * ones · B^T, d/dB = A^T · ones / size
        let mut t = Tape::<f64>::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]], true);
        let b = t.leaf(array![[5.0, 6.0], [7.0, 8.0]], true);
        let c = t.matmul(a, b);
        let loss = t.mean_all(c);
        t.backward(loss);
        let ga = t.grad(a);
        let gb = t.grad(b);
        // ones(2x2)/4 · B^T
        assert!((ga[[0, 0]] - (5.0 + 6.0) / 4.0).abs() < 1e-12);
        assert!((ga[[0, 1]] - (7.0 + 8.0) / 4.0).abs() < 1e-12);
        // A^T · ones/4
        assert!((gb[[0, 0]] - (1.0 + 3.0) / 4.0).abs() < 1e-12);
        assert!((gb[[1, 1]] - (2.0 + 4.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(array![[2.0]], true);
        let d = t.detach(a);
        let b = t.mul(d, d);
        let loss = t.mean_all(b);
        t.backward(loss);
        assert_eq!(t.grad(a), array![[0.0]]);
    }

    #[test]
    fn min2_ties_route_to_first_input() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(array![[1.0, 5.0]], true);
        let b = t.leaf(array![[1.0, 2.0]], true);
        let m = t.min2(a, b);
        let loss = t.mean_all(m);
        t.backward(loss);
        assert_eq!(t.grad(a), array![[0.5, 0.0]]);
        assert_eq!(t.grad(b), array![[0.0, 0.5]]);
    }

    #[test]
    fn attention_weights_sum_to_one_and_single_token_is_identity() {
        let mut t = Tape::<f64>::new();
        let batch = 3;
        let q = t.constant(Array2::from_shape_fn((batch, 8), |(i, j)| {
            (i as f64) * 0.3 - (j as f64) * 0.1
        }));
        let kv = t.constant(Array2::from_shape_fn((batch, 8), |(i, j)| {
            (j as f64) * 0.2 - (i as f64) * 0.05
        }));
        // m = 1: softmax weight is 1, so output == values.
        let out = t.attention(q, kv, kv, batch, 4);
        assert_eq!(t.value(out), t.value(kv));
    }

    #[test]
    fn frozen_graph_produces_no_gradients() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(array![[1.0, 2.0]]);
        let b = t.relu(a);
        let loss = t.mean_all(b);
        t.backward(loss);
        assert_eq!(t.grad(a), array![[0.0, 0.0]]);
    }

    #[test]
    fn concat_and_slice_roundtrip_gradients() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(array![[1.0, 2.0]], true);
        let b = t.leaf(array![[3.0]], true);
        let c = t.concat_cols(&[a, b]);
        let sliced = t.slice_cols(c, 2, 3); // just `b`
        let loss = t.mean_all(sliced);
        t.backward(loss);
        assert_eq!(t.grad(a), array![[0.0, 0.0]]);
        assert_eq!(t.grad(b), array![[1.0]]);
    }
}
