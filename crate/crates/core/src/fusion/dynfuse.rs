//! Consistency-weighted dynamic fusion of the L scale features of a point.
//!
//! Starting from zero logits, each round softmax-weights the scales, forms
//! the weighted mean, and adds each scale's inner product with that mean to
//! its logit. Scales that agree reinforce each other; disturbed scales fall
//! behind. The loop has no trainable state; gradients flow through the whole
//! unrolled iteration.

use crate::autodiff::{Array, Tape, TapeOp, ValueId};
use crate::error::{Error, Result};

/// Fuses the scale features of a single point. `scale_features` holds L rows
/// of equal width; returns the fused descriptor and the final coefficients.
pub fn dynamic_fuse(scale_features: &[Vec<f64>], iterations: usize) -> (Vec<f64>, Vec<f64>) {
    let l = scale_features.len();
    assert!(l >= 1 && iterations >= 1);
    let v = scale_features[0].len();
    debug_assert!(scale_features.iter().all(|f| f.len() == v));

    let mut logits = vec![0.0f64; l];
    let mut coeffs = vec![0.0f64; l];
    for _ in 0..iterations {
        softmax(&mut coeffs, &logits);
        let mut mixed = vec![0.0f64; v];
        for (c, feat) in coeffs.iter().zip(scale_features) {
            for (m, &f) in mixed.iter_mut().zip(feat) {
                *m += c * f;
            }
        }
        for (b, feat) in logits.iter_mut().zip(scale_features) {
            let dot: f64 = mixed.iter().zip(feat).map(|(a, b)| a * b).sum();
            *b += dot;
        }
    }
    softmax(&mut coeffs, &logits);
    let mut fused = vec![0.0f64; v];
    for (c, feat) in coeffs.iter().zip(scale_features) {
        for (m, &f) in fused.iter_mut().zip(feat) {
            *m += c * f;
        }
    }
    (fused, coeffs)
}

fn softmax(out: &mut [f64], logits: &[f64]) {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &b) in out.iter_mut().zip(logits) {
        let e = (b - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

// ---- vectorized tape ops over all points at once ---------------------------

/// out[i, :] = Σ_ℓ coeffs[i, ℓ] · maps_ℓ[i, :]. Inputs: [coeffs, map_1..map_L].
#[derive(Debug)]
struct ScaleMixOp;

impl TapeOp for ScaleMixOp {
    fn name(&self) -> &'static str {
        "scale_mix"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let coeffs = inputs[0];
        let maps = &inputs[1..];
        let (n, l) = coeffs.shape();
        let v = grad_out.cols();
        let mut d_coeffs = Array::zeros(n, l);
        let mut d_maps: Vec<Array> = maps.iter().map(|_| Array::zeros(n, v)).collect();
        for i in 0..n {
            let g = grad_out.row(i);
            for (ell, map) in maps.iter().enumerate() {
                let feat = map.row(i);
                let dot: f64 = g.iter().zip(feat).map(|(a, b)| a * b).sum();
                d_coeffs.set(i, ell, dot);
                let c = coeffs.get(i, ell);
                for (o, &gv) in d_maps[ell].row_mut(i).iter_mut().zip(g) {
                    *o = c * gv;
                }
            }
        }
        let mut grads = vec![Some(d_coeffs)];
        grads.extend(d_maps.into_iter().map(Some));
        grads
    }
}

/// out[i, ℓ] = ⟨mixed[i, :], maps_ℓ[i, :]⟩. Inputs: [mixed, map_1..map_L].
#[derive(Debug)]
struct ScaleDotOp;

impl TapeOp for ScaleDotOp {
    fn name(&self) -> &'static str {
        "scale_dot"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let mixed = inputs[0];
        let maps = &inputs[1..];
        let (n, v) = mixed.shape();
        let mut d_mixed = Array::zeros(n, v);
        let mut d_maps: Vec<Array> = maps.iter().map(|_| Array::zeros(n, v)).collect();
        for i in 0..n {
            let s = mixed.row(i);
            for (ell, map) in maps.iter().enumerate() {
                let g = grad_out.get(i, ell);
                let feat = map.row(i);
                for ((dm, ds), (&fv, &sv)) in d_maps[ell]
                    .row_mut(i)
                    .iter_mut()
                    .zip(d_mixed.row_mut(i).iter_mut())
                    .zip(feat.iter().zip(s))
                {
                    *dm = g * sv;
                    *ds += g * fv;
                }
            }
        }
        let mut grads = vec![Some(d_mixed)];
        grads.extend(d_maps.into_iter().map(Some));
        grads
    }
}

fn scale_mix(tape: &mut Tape, coeffs: ValueId, maps: &[ValueId]) -> Result<ValueId> {
    let (n, l) = tape.value(coeffs).shape();
    if l != maps.len() {
        return Err(Error::ShapeMismatch {
            op: "scale_mix",
            lhs: (n, l),
            rhs: (n, maps.len()),
        });
    }
    let v = tape.value(maps[0]).cols();
    let mut out = Array::zeros(n, v);
    for (ell, &m) in maps.iter().enumerate() {
        let map = tape.value(m);
        if map.shape() != (n, v) {
            return Err(Error::ShapeMismatch {
                op: "scale_mix",
                lhs: (n, v),
                rhs: map.shape(),
            });
        }
        let c = tape.value(coeffs);
        for i in 0..n {
            let w = c.get(i, ell);
            for (o, &f) in out.row_mut(i).iter_mut().zip(map.row(i)) {
                *o += w * f;
            }
        }
    }
    let mut inputs = vec![coeffs];
    inputs.extend_from_slice(maps);
    Ok(tape.push_op(Box::new(ScaleMixOp), &inputs, out))
}

fn scale_dot(tape: &mut Tape, mixed: ValueId, maps: &[ValueId]) -> Result<ValueId> {
    let (n, v) = tape.value(mixed).shape();
    let mut out = Array::zeros(n, maps.len());
    for (ell, &m) in maps.iter().enumerate() {
        let map = tape.value(m);
        if map.shape() != (n, v) {
            return Err(Error::ShapeMismatch {
                op: "scale_dot",
                lhs: (n, v),
                rhs: map.shape(),
            });
        }
        let s = tape.value(mixed);
        for i in 0..n {
            let dot: f64 = s.row(i).iter().zip(map.row(i)).map(|(a, b)| a * b).sum();
            out.set(i, ell, dot);
        }
    }
    let mut inputs = vec![mixed];
    inputs.extend_from_slice(maps);
    Ok(tape.push_op(Box::new(ScaleDotOp), &inputs, out))
}

/// The full fusion loop over every point at once, on the tape. Returns the
/// fused N x v descriptor map and the final N x L coefficients.
pub fn fuse_stack_tape(
    tape: &mut Tape,
    maps: &[ValueId],
    iterations: usize,
) -> Result<(ValueId, ValueId)> {
    if maps.is_empty() || iterations == 0 {
        return Err(Error::InvalidInput(
            "fusion needs at least one scale and one iteration".into(),
        ));
    }
    let n = tape.value(maps[0]).rows();
    let mut logits = tape.constant(Array::zeros(n, maps.len()));
    for _ in 0..iterations {
        let coeffs = tape.softmax_rows(logits)?;
        let mixed = scale_mix(tape, coeffs, maps)?;
        let dots = scale_dot(tape, mixed, maps)?;
        logits = tape.add(logits, dots)?;
    }
    let coeffs = tape.softmax_rows(logits)?;
    let fused = scale_mix(tape, coeffs, maps)?;
    Ok((fused, coeffs))
}
