//! Cross-attention block: queries from one cloud's features, keys and values
//! from the paired cloud's, multi-head scaled dot product, then the usual
//! residual / normalization / feed-forward stack. The block lifts D_in to
//! D_out so its output can be summed with the convolution branch.

use rand::Rng;

use crate::autodiff::{ParamId, ParamSet, Tape, ValueId};
use crate::error::{Error, Result};

// No bias on the key projection: a uniform shift of every key moves all
// scores of a row by the same amount, which the softmax cancels exactly, so
// such a bias could never receive gradient.
#[derive(Debug, Clone)]
struct HeadParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
}

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    heads: Vec<HeadParams>,
    w_out: ParamId,
    b_out: ParamId,
    w_res: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    d_in: usize,
    d_out: usize,
    d_head: usize,
}

/// Per-head softmax matrices, exposed for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub head_weights: Vec<ValueId>,
}

impl AttentionBlock {
    pub fn new(
        prefix: &str,
        d_in: usize,
        d_out: usize,
        heads: usize,
        ff_width: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || d_out % heads != 0 {
            return Err(Error::InvalidInput(format!(
                "attention output width {d_out} not divisible by {heads} heads"
            )));
        }
        let d_head = d_out / heads;
        let heads = (0..heads)
            .map(|h| HeadParams {
                wq: params.add_xavier(format!("{prefix}.h{h}.wq"), d_in, d_head, rng),
                bq: params.add_zeros(format!("{prefix}.h{h}.bq"), 1, d_head),
                wk: params.add_xavier(format!("{prefix}.h{h}.wk"), d_in, d_head, rng),
                wv: params.add_xavier(format!("{prefix}.h{h}.wv"), d_in, d_head, rng),
                bv: params.add_zeros(format!("{prefix}.h{h}.bv"), 1, d_head),
            })
            .collect();
        Ok(Self {
            heads,
            w_out: params.add_xavier(format!("{prefix}.wo"), d_out, d_out, rng),
            b_out: params.add_zeros(format!("{prefix}.bo"), 1, d_out),
            w_res: params.add_xavier(format!("{prefix}.wr"), d_in, d_out, rng),
            ln1_gain: params.add_const(format!("{prefix}.ln1.g"), 1, d_out, 1.0),
            ln1_bias: params.add_zeros(format!("{prefix}.ln1.b"), 1, d_out),
            ff_w1: params.add_xavier(format!("{prefix}.ff.w1"), d_out, ff_width, rng),
            ff_b1: params.add_zeros(format!("{prefix}.ff.b1"), 1, ff_width),
            ff_w2: params.add_xavier(format!("{prefix}.ff.w2"), ff_width, d_out, rng),
            ff_b2: params.add_zeros(format!("{prefix}.ff.b2"), 1, d_out),
            ln2_gain: params.add_const(format!("{prefix}.ln2.g"), 1, d_out, 1.0),
            ln2_bias: params.add_zeros(format!("{prefix}.ln2.b"), 1, d_out),
            d_in,
            d_out,
            d_head,
        })
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// `f_a` provides queries (one output row per row of `f_a`), `f_b`
    /// provides keys and values.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        f_a: ValueId,
        f_b: ValueId,
    ) -> Result<(ValueId, AttentionTrace)> {
        let shape_a = tape.value(f_a).shape();
        let shape_b = tape.value(f_b).shape();
        if shape_a.1 != self.d_in || shape_b.1 != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "cross_attention",
                lhs: shape_a,
                rhs: (shape_b.0, self.d_in),
            });
        }

        let scale = 1.0 / (self.d_head as f64).sqrt();
        let mut head_outputs = Vec::with_capacity(self.heads.len());
        let mut head_weights = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let wq = tape.param(params, h.wq);
            let bq = tape.param(params, h.bq);
            let wk = tape.param(params, h.wk);
            let wv = tape.param(params, h.wv);
            let bv = tape.param(params, h.bv);

            let q = tape.matmul(f_a, wq)?;
            let q = tape.add_bias_row(q, bq)?;
            let k = tape.matmul(f_b, wk)?;
            let v = tape.matmul(f_b, wv)?;
            let v = tape.add_bias_row(v, bv)?;

            let scores = tape.matmul_nt(q, k)?;
            let scores = tape.scalar_mul(scores, scale)?;
            let weights = tape.softmax_rows(scores)?;
            let mixed = tape.matmul(weights, v)?;
            head_outputs.push(mixed);
            head_weights.push(weights);
        }

        let mut concat = head_outputs[0];
        for &h in &head_outputs[1..] {
            concat = tape.concat_cols(concat, h)?;
        }
        let w_out = tape.param(params, self.w_out);
        let b_out = tape.param(params, self.b_out);
        let projected = tape.matmul(concat, w_out)?;
        let projected = tape.add_bias_row(projected, b_out)?;

        let w_res = tape.param(params, self.w_res);
        let residual = tape.matmul(f_a, w_res)?;
        let summed = tape.add(projected, residual)?;
        let normed = tape.layer_norm_rows(summed)?;
        let g1 = tape.param(params, self.ln1_gain);
        let b1 = tape.param(params, self.ln1_bias);
        let normed = tape.scale_cols(normed, g1)?;
        let normed = tape.add_bias_row(normed, b1)?;

        let ff_w1 = tape.param(params, self.ff_w1);
        let ff_b1 = tape.param(params, self.ff_b1);
        let ff_w2 = tape.param(params, self.ff_w2);
        let ff_b2 = tape.param(params, self.ff_b2);
        let ff = tape.matmul(normed, ff_w1)?;
        let ff = tape.add_bias_row(ff, ff_b1)?;
        let ff = tape.relu(ff)?;
        let ff = tape.matmul(ff, ff_w2)?;
        let ff = tape.add_bias_row(ff, ff_b2)?;

        let out = tape.add(normed, ff)?;
        let out = tape.layer_norm_rows(out)?;
        let g2 = tape.param(params, self.ln2_gain);
        let b2 = tape.param(params, self.ln2_bias);
        let out = tape.scale_cols(out, g2)?;
        let out = tape.add_bias_row(out, b2)?;

        Ok((out, AttentionTrace { head_weights }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Array, LAYER_NORM_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array {
        Array::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn single_key_attention_weights_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ParamSet::new();
        let block = AttentionBlock::new("t", 4, 6, 2, 8, &mut params, &mut rng).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(random_input(&mut rng, 5, 4));
        let b = tape.constant(random_input(&mut rng, 1, 4));
        let (_, trace) = block.forward(&mut tape, &params, a, b).unwrap();
        for w in trace.head_weights {
            assert!(tape.value(w).as_slice().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParamSet::new();
        let block = AttentionBlock::new("t", 4, 8, 4, 8, &mut params, &mut rng).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(random_input(&mut rng, 7, 4));
        let b = tape.constant(random_input(&mut rng, 9, 4));
        let (_, trace) = block.forward(&mut tape, &params, a, b).unwrap();
        for w in trace.head_weights {
            let arr = tape.value(w);
            for r in 0..arr.rows() {
                let sum: f64 = arr.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_value_rows_mix_to_the_same_vector() {
        // Every key/value row identical: the convex mixture is that row for
        // every query, whatever the weights.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ParamSet::new();
        let block = AttentionBlock::new("t", 3, 4, 2, 6, &mut params, &mut rng).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(random_input(&mut rng, 6, 3));
        let row: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut b_data = Vec::new();
        for _ in 0..5 {
            b_data.extend_from_slice(&row);
        }
        let b = tape.constant(Array::from_vec(5, 3, b_data).unwrap());
        let (_, trace) = block.forward(&mut tape, &params, a, b).unwrap();

        // Check the mixture per head: weights · V has identical rows.
        for (h, w) in trace.head_weights.iter().enumerate() {
            let weights = tape.value(*w).clone();
            // Recompute V for this head.
            let head = &block.heads[h];
            let wv = params.value(head.wv);
            let bv = params.value(head.bv);
            let mut v_row = vec![0.0; wv.cols()];
            for c in 0..wv.cols() {
                let mut acc = bv.get(0, c);
                for d in 0..3 {
                    acc += row[d] * wv.get(d, c);
                }
                v_row[c] = acc;
            }
            for r in 0..weights.rows() {
                let mut mixed = vec![0.0; wv.cols()];
                for j in 0..5 {
                    for c in 0..wv.cols() {
                        mixed[c] += weights.get(r, j) * v_row[c];
                    }
                }
                for (m, e) in mixed.iter().zip(&v_row) {
                    assert!((m - e).abs() < 1e-12);
                }
            }
        }
    }

    /// Straight-line reference of the whole block: per-head loops, explicit
    /// softmax, residual, layer norms, feed forward.
    fn naive_block(block: &AttentionBlock, params: &ParamSet, a: &Array, b: &Array) -> Array {
        let n_a = a.rows();
        let d_out = block.d_out;
        let mut concat = Array::zeros(n_a, d_out);
        for (h, head) in block.heads.iter().enumerate() {
            let project = |x: &Array, w: ParamId, bias: Option<ParamId>| -> Vec<Vec<f64>> {
                let w = params.value(w);
                let bias = bias.map(|b| params.value(b));
                (0..x.rows())
                    .map(|r| {
                        (0..w.cols())
                            .map(|c| {
                                let mut acc = bias.map_or(0.0, |b| b.get(0, c));
                                for d in 0..x.cols() {
                                    acc += x.get(r, d) * w.get(d, c);
                                }
                                acc
                            })
                            .collect()
                    })
                    .collect()
            };
            let q = project(a, head.wq, Some(head.bq));
            let k = project(b, head.wk, None);
            let v = project(b, head.wv, Some(head.bv));
            let scale = 1.0 / (block.d_head as f64).sqrt();
            for i in 0..n_a {
                let scores: Vec<f64> = (0..b.rows())
                    .map(|j| {
                        let mut acc = 0.0;
                        for d in 0..block.d_head {
                            acc += q[i][d] * k[j][d];
                        }
                        acc * scale
                    })
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                for d in 0..block.d_head {
                    let mut acc = 0.0;
                    for j in 0..b.rows() {
                        acc += exps[j] / sum * v[j][d];
                    }
                    concat.set(i, h * block.d_head + d, acc);
                }
            }
        }
        let affine = |x: &Array, w: ParamId, bias: ParamId| -> Array {
            let w = params.value(w);
            let bias = params.value(bias);
            Array::from_fn(x.rows(), w.cols(), |r, c| {
                let mut acc = bias.get(0, c);
                for d in 0..x.cols() {
                    acc += x.get(r, d) * w.get(d, c);
                }
                acc
            })
        };
        let ln = |x: &Array, gain: ParamId, bias: ParamId| -> Array {
            let gain = params.value(gain);
            let bias = params.value(bias);
            let mut out = Array::zeros(x.rows(), x.cols());
            for r in 0..x.rows() {
                let row = x.row(r);
                let n = row.len() as f64;
                let mean = row.iter().sum::<f64>() / n;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let s = (var + LAYER_NORM_EPS).sqrt();
                for c in 0..x.cols() {
                    out.set(r, c, (row[c] - mean) / s * gain.get(0, c) + bias.get(0, c));
                }
            }
            out
        };

        let projected = affine(&concat, block.w_out, block.b_out);
        let w_res = params.value(block.w_res);
        let mut summed = projected;
        for r in 0..n_a {
            for c in 0..d_out {
                let mut acc = 0.0;
                for d in 0..a.cols() {
                    acc += a.get(r, d) * w_res.get(d, c);
                }
                summed.set(r, c, summed.get(r, c) + acc);
            }
        }
        let x = ln(&summed, block.ln1_gain, block.ln1_bias);
        let mut ff = affine(&x, block.ff_w1, block.ff_b1);
        for v in ff.as_mut_slice() {
            *v = v.max(0.0);
        }
        let ff = affine(&ff, block.ff_w2, block.ff_b2);
        let mut pre = x.clone();
        pre.add_assign(&ff).unwrap();
        ln(&pre, block.ln2_gain, block.ln2_bias)
    }

    #[test]
    fn matches_naive_per_head_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParamSet::new();
        let block = AttentionBlock::new("t", 16, 16, 2, 32, &mut params, &mut rng).unwrap();
        let a = random_input(&mut rng, 8, 16);
        let b = random_input(&mut rng, 6, 16);
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let bv = tape.constant(b.clone());
        let (out, _) = block.forward(&mut tape, &params, av, bv).unwrap();
        let expected = naive_block(&block, &params, &a, &b);
        for (x, y) in tape.value(out).as_slice().iter().zip(expected.as_slice()) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::new();
        let block = AttentionBlock::new("t", 4, 6, 2, 8, &mut params, &mut rng).unwrap();
        let mut tape = Tape::new();
        let a = tape.constant(Array::zeros(3, 5));
        let b = tape.constant(Array::zeros(3, 4));
        assert!(block.forward(&mut tape, &params, a, b).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        let block = AttentionBlock::new("t", 3, 4, 2, 6, &mut params, &mut rng).unwrap();
        let a = random_input(&mut rng, 5, 3);
        let b = random_input(&mut rng, 4, 3);
        // The block ends in a layer norm, which pins the row norm of its
        // output; probing with a plain sum of squares would make every
        // upstream gradient epsilon-small. Offsetting by a fixed random
        // array before squaring keeps the loss sensitive to the row
        // direction.
        let offset = random_input(&mut rng, 5, 4);
        let targets: Vec<_> = params.ids().collect();
        let err = finite_difference_check(&mut params, &targets, 1e-5, move |ps, tape| {
            let av = tape.constant(a.clone());
            let bv = tape.constant(b.clone());
            let (out, _) = block.forward(tape, ps, av, bv)?;
            let off = tape.constant(offset.clone());
            let shifted = tape.add(out, off)?;
            let sq = tape.square(shifted)?;
            let rs = tape.row_sum(sq)?;
            let m = tape.mean_rows(rs)?;
            tape.mean_rows(m)
        })
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
