//! Group Q-network: per-agent observation–action embeddings, a transformer
//! encoder over the group's tokens, and a scalar value head.
//!
//! One embedder per member agent keeps heterogeneous observation/action
//! widths possible; mean-pooling the encoded tokens keeps the head input
//! independent of group size.

use ndarray::Array2;
use rand::Rng;

use super::blocks::{Dense, EncoderBlock, Mlp, Module};
use super::scalar::Scalar;
use super::tape::{Binder, Tape, Var};

pub struct LeadCriticNet<F: Scalar> {
    embedders: Vec<Dense<F>>,
    blocks: Vec<EncoderBlock<F>>,
    head: Mlp<F>,
}

impl<F: Scalar> LeadCriticNet<F> {
    /// `member_input_dims[i]` is member `i`'s concatenated obs+action width.
    pub fn new<R: Rng>(
        member_input_dims: &[usize],
        embed: usize,
        n_heads: usize,
        ffn: usize,
        n_blocks: usize,
        rng: &mut R,
    ) -> Self {
        assert!(!member_input_dims.is_empty());
        LeadCriticNet {
            embedders: member_input_dims
                .iter()
                .map(|&d| Dense::new(d, embed, 1.0, rng))
                .collect(),
            blocks: (0..n_blocks)
                .map(|_| EncoderBlock::new(embed, n_heads, ffn, rng))
                .collect(),
            head: Mlp::new(&[embed, embed, 1], false, rng),
        }
    }

    pub fn n_members(&self) -> usize {
        self.embedders.len()
    }

    /// `inputs[i]` is member `i`'s `(batch, obs_i + act_i)` slab; returns the
    /// group Q-value `(batch, 1)`.
    pub fn forward(
        &self,
        tape: &mut Tape<F>,
        binder: &mut Binder,
        inputs: &[Var],
        batch: usize,
    ) -> Var {
        assert_eq!(inputs.len(), self.embedders.len(), "group size mismatch");
        binder.restart();
        let tokens: Vec<Var> = self
            .embedders
            .iter()
            .zip(inputs)
            .map(|(e, &x)| e.forward(tape, binder, x))
            .collect();
        let mut x = tape.concat_rows(&tokens);
        for block in &self.blocks {
            x = block.forward(tape, binder, x, batch);
        }
        let pooled = tape.mean_tokens(x, self.embedders.len());
        let q = self.head.forward(tape, binder, pooled);
        binder.finish();
        q
    }
}

impl<F: Scalar> Module<F> for LeadCriticNet<F> {
    fn params(&self) -> Vec<&Array2<F>> {
        let mut p = Vec::new();
        for e in &self.embedders {
            p.extend(e.params());
        }
        for b in &self.blocks {
            p.extend(b.params());
        }
        p.extend(self.head.params());
        p
    }
    fn params_mut(&mut self) -> Vec<&mut Array2<F>> {
        let mut p = Vec::new();
        for e in &mut self.embedders {
            p.extend(e.params_mut());
        }
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::assert_grads_match;
    use crate::nn::init::orthogonal;
    use crate::nn::tape::LN_EPS;
    use ndarray::{s, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(net: &LeadCriticNet<f64>, inputs: &[Array2<f64>]) -> Array2<f64> {
        let mut tape = Tape::new();
        let mut binder = net.bind(&mut tape, false);
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let q = net.forward(&mut tape, &mut binder, &vars, inputs[0].nrows());
        tape.value(q).clone()
    }

    /// Randomizes the zero-started output projections so the encoder is no
    /// longer the identity.
    fn activate_encoder(net: &mut LeadCriticNet<f64>, rng: &mut ChaCha8Rng, embed: usize, ffn: usize) {
        let n_emb = net.embedders.len() * 2;
        let n_blocks = net.blocks.len();
        let per_block = 16;
        let mut params = net.params_mut();
        for b in 0..n_blocks {
            let base = n_emb + b * per_block;
            *params[base + 8] = orthogonal(embed, embed, 1.0, rng); // wo.w
            *params[base + 14] = orthogonal(ffn, embed, 1.0, rng); // ffn2.w
        }
    }

    #[test]
    fn single_member_fresh_encoder_reduces_to_head_of_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let net = LeadCriticNet::<f64>::new(&[5], 8, 2, 16, 2, &mut rng);
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64) * 0.4 - (j as f64) * 0.3 + 0.1);
        let q = run(&net, std::slice::from_ref(&x));

        // Reference: head(embedder(x)) with the encoder as identity.
        let tok = x.dot(&net.embedders[0].w) + &net.embedders[0].b;
        let head = &net.head;
        let hp = head.params();
        let h1 = tok.dot(hp[0]) + hp[1];
        let h1 = h1.mapv(|e| e.max(0.0));
        let want = h1.dot(hp[2]) + hp[3];
        for (a, b) in q.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_members_with_their_embedders_leaves_q_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut net = LeadCriticNet::<f64>::new(&[5, 5, 5], 8, 2, 16, 2, &mut rng);
        activate_encoder(&mut net, &mut rng, 8, 16);
        let xs: Vec<Array2<f64>> = (0..3)
            .map(|k| {
                Array2::from_shape_fn((4, 5), |(i, j)| {
                    ((k * 11 + i * 5 + j) as f64 * 0.23).sin()
                })
            })
            .collect();
        let q = run(&net, &xs);

        // Rotate members left by one and rotate the embedders to match.
        let mut rotated = LeadCriticNet::<f64>::new(&[5, 5, 5], 8, 2, 16, 2, &mut rng);
        rotated.copy_from(&net);
        rotated.embedders.rotate_left(1);
        let xs_rot = vec![xs[1].clone(), xs[2].clone(), xs[0].clone()];
        let q_rot = run(&rotated, &xs_rot);
        for (a, b) in q.iter().zip(q_rot.iter()) {
            assert!((a - b).abs() < 1e-10, "Q changed under matched permutation");
        }
    }

    // ---- independent straight-line reference ------------------------------

    fn ln_ref(x: &Array2<f64>, gamma: &Array2<f64>, beta: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            let c = row.len() as f64;
            let mu: f64 = row.sum() / c;
            let var: f64 = row.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / c;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for e in row.iter_mut() {
                *e = (*e - mu) * inv;
            }
        }
        y * gamma + beta
    }

    /// Self-attention over `m` tokens stored as a Vec of (batch, d) arrays.
    fn self_attn_ref(tokens: &[Array2<f64>], n_heads: usize) -> Vec<Array2<f64>> {
        let m = tokens.len();
        let (batch, d) = tokens[0].dim();
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![Array2::<f64>::zeros((batch, d)); m];
        for h in 0..n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            for r in 0..batch {
                for i in 0..m {
                    let qi = tokens[i].slice(cols);
                    let mut scores = vec![0.0; m];
                    for (j, tj) in tokens.iter().enumerate() {
                        let kj = tj.slice(cols);
                        scores[j] = (0..dh).map(|c| qi[[r, c]] * kj[[r, c]]).sum::<f64>() * scale;
                    }
                    let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for (j, tj) in tokens.iter().enumerate() {
                        let vj = tj.slice(cols);
                        let w = exps[j] / z;
                        for c in 0..dh {
                            out[i][[r, h * dh + c]] += w * vj[[r, c]];
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn two_member_forward_matches_straight_line_reference() {
        let (embed, heads, ffn) = (8, 2, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let mut net = LeadCriticNet::<f64>::new(&[5, 7], embed, heads, ffn, 2, &mut rng);
        activate_encoder(&mut net, &mut rng, embed, ffn);
        let batch = 3;
        let x0 = Array2::from_shape_fn((batch, 5), |(i, j)| ((i * 3 + j) as f64 * 0.31).cos());
        let x1 = Array2::from_shape_fn((batch, 7), |(i, j)| ((i * 5 + j) as f64 * 0.17).sin());
        let got = run(&net, &[x0.clone(), x1.clone()]);

        // Reference forward with plain array ops only.
        let mut toks = [
            x0.dot(&net.embedders[0].w) + &net.embedders[0].b,
            x1.dot(&net.embedders[1].w) + &net.embedders[1].b,
        ];
        for block in &net.blocks {
            let p = block.params();
            let (ln1g, ln1b) = (p[0], p[1]);
            let (wq, bq, wk, bk, wv, bv, wo, bo) = (p[2], p[3], p[4], p[5], p[6], p[7], p[8], p[9]);
            let (ln2g, ln2b) = (p[10], p[11]);
            let (f1w, f1b, f2w, f2b) = (p[12], p[13], p[14], p[15]);
            let normed: Vec<Array2<f64>> = toks.iter().map(|t| ln_ref(t, ln1g, ln1b)).collect();
            let qs: Vec<Array2<f64>> = normed.iter().map(|h| h.dot(wq) + bq).collect();
            let ks: Vec<Array2<f64>> = normed.iter().map(|h| h.dot(wk) + bk).collect();
            let vs: Vec<Array2<f64>> = normed.iter().map(|h| h.dot(wv) + bv).collect();
            // Manual attention with distinct q/k/v streams.
            let m = toks.len();
            let dh = embed / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let mut attn = vec![Array2::<f64>::zeros((batch, embed)); m];
            for h in 0..heads {
                for r in 0..batch {
                    for i in 0..m {
                        let mut scores = vec![0.0; m];
                        for j in 0..m {
                            scores[j] = (0..dh)
                                .map(|c| qs[i][[r, h * dh + c]] * ks[j][[r, h * dh + c]])
                                .sum::<f64>()
                                * scale;
                        }
                        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                        let z: f64 = exps.iter().sum();
                        for j in 0..m {
                            let w = exps[j] / z;
                            for c in 0..dh {
                                attn[i][[r, h * dh + c]] += w * vs[j][[r, h * dh + c]];
                            }
                        }
                    }
                }
            }
            for (t, a) in toks.iter_mut().zip(&attn) {
                *t = &*t + &(a.dot(wo) + bo);
            }
            for t in toks.iter_mut() {
                let n = ln_ref(t, ln2g, ln2b);
                let f = (n.dot(f1w) + f1b).mapv(|e| e.max(0.0)).dot(f2w) + f2b;
                *t = &*t + &f;
            }
        }
        let pooled = (&toks[0] + &toks[1]) / 2.0;
        let hp = net.head.params();
        let want = (pooled.dot(hp[0]) + hp[1]).mapv(|e| e.max(0.0)).dot(hp[2]) + hp[3];
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-10, "forward deviates from reference");
        }
    }

    #[test]
    fn self_attention_reference_helper_matches_tape_for_tied_streams() {
        // Sanity-check the shared helper against the tape op when q = k = v.
        let mut tape = Tape::<f64>::new();
        let batch = 2;
        let t0 = Array2::from_shape_fn((batch, 4), |(i, j)| (i as f64) * 0.2 + (j as f64) * 0.7);
        let t1 = Array2::from_shape_fn((batch, 4), |(i, j)| (i as f64) * -0.4 + (j as f64) * 0.1);
        let v0 = tape.constant(t0.clone());
        let v1 = tape.constant(t1.clone());
        let x = tape.concat_rows(&[v0, v1]);
        let out = tape.attention(x, x, x, batch, 2);
        let want = self_attn_ref(&[t0, t1], 2);
        let got = tape.value(out);
        for i in 0..2 {
            for r in 0..batch {
                for c in 0..4 {
                    assert!((got[[i * batch + r, c]] - want[i][[r, c]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut net = LeadCriticNet::<f64>::new(&[4, 6], 8, 2, 16, 2, &mut rng);
        activate_encoder(&mut net, &mut rng, 8, 16);
        let batch = 3;
        let x0 = Array2::from_shape_fn((batch, 4), |(i, j)| ((i + 2 * j) as f64 * 0.41).sin());
        let x1 = Array2::from_shape_fn((batch, 6), |(i, j)| ((i * 3 + j) as f64 * 0.29).cos());
        let loss = |m: &LeadCriticNet<f64>| {
            let mut tape = Tape::new();
            let mut binder = m.bind(&mut tape, true);
            let a = tape.constant(x0.clone());
            let b = tape.constant(x1.clone());
            let q = m.forward(&mut tape, &mut binder, &[a, b], batch);
            let sq = tape.mul(q, q);
            let l = tape.mean_all(sq);
            tape.backward(l);
            (tape.value(l)[[0, 0]], binder.grads(&mut tape))
        };
        let mut sub_rng = ChaCha8Rng::seed_from_u64(42);
        assert_grads_match(&mut net, loss, Some(6), &[], &mut sub_rng);
    }
}
