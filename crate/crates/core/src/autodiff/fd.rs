//! Central finite-difference verification of tape gradients.

use crate::autodiff::{Array, ParamId, ParamSet, Tape, ValueId};
use crate::error::Result;

/// Builds a scalar loss on the given tape from the current parameter values.
pub trait LossFn: Fn(&ParamSet, &mut Tape) -> Result<ValueId> {}
impl<F: Fn(&ParamSet, &mut Tape) -> Result<ValueId>> LossFn for F {}

fn eval_scalar(f: &impl LossFn, params: &ParamSet) -> Result<f64> {
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    tape.value(loss).scalar_value()
}

/// Checks every component of every parameter in `targets` against a central
/// finite difference of step `h`, returning the maximum relative error
/// `|analytic − central| / max(|analytic|, |central|, 1e-8)`.
///
/// Parameter values are restored before returning; gradients are left zeroed.
pub fn finite_difference_check(
    params: &mut ParamSet,
    targets: &[ParamId],
    h: f64,
    f: impl LossFn,
) -> Result<f64> {
    assert!(h > 0.0, "finite difference step must be positive");

    params.zero_grads();
    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    tape.backward(loss, params)?;
    let analytic: Vec<Array> = targets.iter().map(|&id| params.grad(id).clone()).collect();
    params.zero_grads();

    let mut max_rel = 0.0f64;
    for (t, &id) in targets.iter().enumerate() {
        let len = params.value(id).len();
        for k in 0..len {
            let original = params.value(id).as_slice()[k];

            params.value_mut(id).as_mut_slice()[k] = original + h;
            let plus = eval_scalar(&f, params)?;
            params.value_mut(id).as_mut_slice()[k] = original - h;
            let minus = eval_scalar(&f, params)?;
            params.value_mut(id).as_mut_slice()[k] = original;

            let central = (plus - minus) / (2.0 * h);
            let a = analytic[t].as_slice()[k];
            let rel = (a - central).abs() / a.abs().max(central.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_essentially_exact() {
        // f = p² at p = 3: central differences are exact for quadratics up to
        // roundoff.
        let mut params = ParamSet::new();
        let p = params.add("p", Array::scalar(3.0));
        let err = finite_difference_check(&mut params, &[p], 1e-5, |ps, tape| {
            let x = tape.param(ps, p);
            tape.square(x)
        })
        .unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn relu_flat_region_has_zero_error() {
        // f = relu(p) at p = -1: both the analytic gradient and both
        // one-sided evaluations are zero.
        let mut params = ParamSet::new();
        let p = params.add("p", Array::scalar(-1.0));
        let err = finite_difference_check(&mut params, &[p], 1e-5, |ps, tape| {
            let x = tape.param(ps, p);
            tape.relu(x)
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
