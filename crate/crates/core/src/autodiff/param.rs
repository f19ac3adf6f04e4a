//! Named trainable parameters with gradient accumulators.

use rand::Rng;

use crate::autodiff::Array;
use crate::error::{Error, Result};

/// Handle into a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Array,
    pub grad: Array,
}

/// Owns every trainable parameter of a model, in registration order.
/// Gradients are mutated only by `Tape::backward` and `zero_grads`, both of
/// which require exclusive access.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let grad = Array::zeros(value.rows(), value.cols());
        self.params.push(Parameter { name, value, grad });
        ParamId(self.params.len() - 1)
    }

    /// Xavier-uniform initialized matrix: entries uniform in
    /// ±sqrt(6 / (fan_in + fan_out)).
    pub fn add_xavier(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound));
        self.add(name, value)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array::zeros(rows, cols))
    }

    pub fn add_const(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        v: f64,
    ) -> ParamId {
        let mut a = Array::zeros(rows, cols);
        a.fill(v);
        self.add(name, a)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array {
        &self.params[id.0].grad
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Array) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.grad.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "accumulate_grad",
                lhs: p.grad.shape(),
                rhs: g.shape(),
            });
        }
        p.grad.add_assign(g)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar components across all parameters.
    pub fn component_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grads_start_zero_and_reset() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let id = ps.add_xavier("w", 3, 4, &mut rng);
        assert_eq!(ps.grad(id).shape(), (3, 4));
        assert!(ps.grad(id).as_slice().iter().all(|&v| v == 0.0));
        ps.accumulate_grad(id, &Array::from_fn(3, 4, |_, _| 1.0)).unwrap();
        assert_eq!(ps.grad(id).get(0, 0), 1.0);
        ps.zero_grads();
        assert!(ps.grad(id).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xavier_bound_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let id = ps.add_xavier("w", 10, 30, &mut rng);
        let bound = (6.0 / 40.0_f64).sqrt();
        assert!(ps.value(id).as_slice().iter().all(|v| v.abs() < bound));
    }
}
