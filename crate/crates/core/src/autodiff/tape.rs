//! Reverse-mode gradient tape.
//!
//! Every forward op appends one node; operands always precede their outputs,
//! so walking the node list backward is a reverse topological traversal that
//! visits each node exactly once. Gradients accumulate into [`ParamSet`]
//! entries; `backward` consumes the tape.

use std::collections::HashMap;

use crate::autodiff::array::{matmul, matmul_nt, matmul_tn, Array};
use crate::autodiff::param::{ParamId, ParamSet};
use crate::error::{Error, Result};

/// Epsilon inside the layer-norm variance square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

/// One differentiable operation. `backward` receives the operand values, the
/// stored output value, and the output cotangent, and returns one optional
/// gradient per operand.
pub trait TapeOp: std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Array], output: &Array, grad_out: &Array) -> Vec<Option<Array>>;
}

#[derive(Debug)]
enum Provenance {
    Constant,
    Param(ParamId),
    Node(usize),
}

#[derive(Debug)]
struct Entry {
    value: Array,
    provenance: Provenance,
}

#[derive(Debug)]
struct Node {
    op: Box<dyn TapeOp>,
    inputs: Vec<ValueId>,
    output: ValueId,
}

/// Statistics returned by `backward`, used to verify the single-visit
/// traversal contract.
#[derive(Debug, Clone, Copy)]
pub struct BackwardStats {
    pub nodes_visited: usize,
    pub node_count: usize,
}

#[derive(Debug, Default)]
pub struct Tape {
    entries: Vec<Entry>,
    nodes: Vec<Node>,
    param_leaves: HashMap<ParamId, ValueId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: ValueId) -> &Array {
        &self.entries[id.0].value
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn constant(&mut self, value: Array) -> ValueId {
        self.entries.push(Entry {
            value,
            provenance: Provenance::Constant,
        });
        ValueId(self.entries.len() - 1)
    }

    /// Leaf referencing a trainable parameter. Repeated uses of the same
    /// parameter share one leaf so its gradient accumulates in one place.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> ValueId {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        self.entries.push(Entry {
            value: params.value(id).clone(),
            provenance: Provenance::Param(id),
        });
        let v = ValueId(self.entries.len() - 1);
        self.param_leaves.insert(id, v);
        v
    }

    /// Records a custom op with an already computed output value.
    pub fn push_op(&mut self, op: Box<dyn TapeOp>, inputs: &[ValueId], value: Array) -> ValueId {
        self.entries.push(Entry {
            value,
            provenance: Provenance::Node(self.nodes.len()),
        });
        let output = ValueId(self.entries.len() - 1);
        self.nodes.push(Node {
            op,
            inputs: inputs.to_vec(),
            output,
        });
        output
    }

    fn shape(&self, id: ValueId) -> (usize, usize) {
        self.value(id).shape()
    }

    // ---- forward ops ------------------------------------------------------

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(Box::new(MatMul), &[a, b], out))
    }

    /// A · Bᵀ (rows of B are the "keys").
    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push_op(Box::new(MatMulNT), &[a, b], out))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))?;
        Ok(self.push_op(Box::new(AddOp), &[a, b], out))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op: "sub",
                lhs: self.shape(a),
                rhs: self.shape(b),
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let data = av
            .as_slice()
            .iter()
            .zip(bv.as_slice())
            .map(|(x, y)| x - y)
            .collect();
        let out = Array::from_vec(av.rows(), av.cols(), data)?;
        Ok(self.push_op(Box::new(SubOp), &[a, b], out))
    }

    pub fn scalar_mul(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        let out = self.value(a).map(|v| v * c);
        Ok(self.push_op(Box::new(ScalarMul(c)), &[a], out))
    }

    pub fn add_scalar(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        let out = self.value(a).map(|v| v + c);
        Ok(self.push_op(Box::new(AddScalar), &[a], out))
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId> {
        let out = self.value(a).map(|v| v.max(0.0));
        Ok(self.push_op(Box::new(Relu), &[a], out))
    }

    /// Hinge building block; identical semantics to [`Tape::relu`].
    pub fn max_with_zero(&mut self, a: ValueId) -> Result<ValueId> {
        self.relu(a)
    }

    pub fn leaky_relu(&mut self, a: ValueId, alpha: f64) -> Result<ValueId> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { alpha * v });
        Ok(self.push_op(Box::new(LeakyRelu(alpha)), &[a], out))
    }

    pub fn softmax_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.value(a);
        let mut out = Array::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            softmax_into(x.row(r), out.row_mut(r));
        }
        Ok(self.push_op(Box::new(SoftmaxRows), &[a], out))
    }

    /// Per-row normalization to zero mean and unit variance
    /// (eps = [`LAYER_NORM_EPS`] inside the square root). No affine part;
    /// compose with [`Tape::scale_cols`] / [`Tape::add_bias_row`] for one.
    pub fn layer_norm_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.value(a);
        if x.cols() == 0 {
            return Err(Error::InvalidInput("layer_norm_rows on zero columns".into()));
        }
        let mut out = Array::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let row = x.row(r);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = (var + LAYER_NORM_EPS).sqrt();
            for (o, &v) in out.row_mut(r).iter_mut().zip(row) {
                *o = (v - mean) / s;
            }
        }
        Ok(self.push_op(Box::new(LayerNormRows), &[a], out))
    }

    /// Per-column gain: out[r, c] = a[r, c] * g[0, c].
    pub fn scale_cols(&mut self, a: ValueId, g: ValueId) -> Result<ValueId> {
        let (ar, ac) = self.shape(a);
        if self.shape(g) != (1, ac) {
            return Err(Error::ShapeMismatch {
                op: "scale_cols",
                lhs: (ar, ac),
                rhs: self.shape(g),
            });
        }
        let x = self.value(a);
        let gv = self.value(g);
        let mut out = Array::zeros(ar, ac);
        for r in 0..ar {
            for (o, (&v, &gc)) in out.row_mut(r).iter_mut().zip(x.row(r).iter().zip(gv.row(0))) {
                *o = v * gc;
            }
        }
        Ok(self.push_op(Box::new(ScaleCols), &[a, g], out))
    }

    /// Row-broadcast bias: out[r, c] = a[r, c] + b[0, c].
    pub fn add_bias_row(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ar, ac) = self.shape(a);
        if self.shape(b) != (1, ac) {
            return Err(Error::ShapeMismatch {
                op: "add_bias_row",
                lhs: (ar, ac),
                rhs: self.shape(b),
            });
        }
        let x = self.value(a);
        let bv = self.value(b);
        let mut out = Array::zeros(ar, ac);
        for r in 0..ar {
            for (o, (&v, &bc)) in out.row_mut(r).iter_mut().zip(x.row(r).iter().zip(bv.row(0))) {
                *o = v + bc;
            }
        }
        Ok(self.push_op(Box::new(AddBiasRow), &[a, b], out))
    }

    /// Vertical concatenation: rows of `a` followed by rows of `b`.
    pub fn concat_rows(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != bc {
            return Err(Error::ShapeMismatch {
                op: "concat_rows",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let mut data = Vec::with_capacity((ar + br) * ac);
        data.extend_from_slice(self.value(a).as_slice());
        data.extend_from_slice(self.value(b).as_slice());
        let out = Array::from_vec(ar + br, ac, data)?;
        Ok(self.push_op(Box::new(ConcatRows { split: ar }), &[a, b], out))
    }

    /// Horizontal concatenation: columns of `a` followed by columns of `b`.
    pub fn concat_cols(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ar != br {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: (ar, ac),
                rhs: (br, bc),
            });
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for r in 0..ar {
            data.extend_from_slice(av.row(r));
            data.extend_from_slice(bv.row(r));
        }
        let out = Array::from_vec(ar, ac + bc, data)?;
        Ok(self.push_op(Box::new(ConcatCols { split: ac }), &[a, b], out))
    }

    /// Rows of `a` at `indices`, in order; duplicates allowed.
    pub fn gather_rows(&mut self, a: ValueId, indices: Vec<u32>) -> Result<ValueId> {
        let out = self.value(a).select_rows(&indices)?;
        let src_rows = self.shape(a).0;
        Ok(self.push_op(Box::new(GatherRows { indices, src_rows }), &[a], out))
    }

    /// Rows of `a` scatter-added into a zero array with `out_rows` rows:
    /// out[indices[k], :] += a[k, :].
    pub fn scatter_add_rows(&mut self, a: ValueId, indices: Vec<u32>, out_rows: usize) -> Result<ValueId> {
        let (ar, ac) = self.shape(a);
        if indices.len() != ar {
            return Err(Error::InvalidInput(format!(
                "scatter_add_rows got {} indices for {} rows",
                indices.len(),
                ar
            )));
        }
        let x = self.value(a);
        let mut out = Array::zeros(out_rows, ac);
        for (k, &i) in indices.iter().enumerate() {
            let i = i as usize;
            if i >= out_rows {
                return Err(Error::InvalidInput(format!(
                    "scatter index {i} out of range for {out_rows} rows"
                )));
            }
            for (o, &v) in out.row_mut(i).iter_mut().zip(x.row(k)) {
                *o += v;
            }
        }
        Ok(self.push_op(Box::new(ScatterAddRows { indices }), &[a], out))
    }

    /// Mean across rows: N x D -> 1 x D.
    pub fn mean_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let (ar, ac) = self.shape(a);
        if ar == 0 {
            return Err(Error::InvalidInput("mean_rows over zero rows".into()));
        }
        let x = self.value(a);
        let mut out = Array::zeros(1, ac);
        for r in 0..ar {
            for (o, &v) in out.row_mut(0).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out.scale_assign(1.0 / ar as f64);
        Ok(self.push_op(Box::new(MeanRows), &[a], out))
    }

    /// Sum within each row: N x D -> N x 1.
    pub fn row_sum(&mut self, a: ValueId) -> Result<ValueId> {
        let (ar, _) = self.shape(a);
        let x = self.value(a);
        let mut out = Array::zeros(ar, 1);
        for r in 0..ar {
            out.set(r, 0, x.row(r).iter().sum());
        }
        Ok(self.push_op(Box::new(RowSum), &[a], out))
    }

    /// Elementwise square root. Errors on negative entries; the gradient at
    /// exactly zero is defined as zero (hinge convention, like relu).
    pub fn sqrt(&mut self, a: ValueId) -> Result<ValueId> {
        if self.value(a).as_slice().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput("sqrt of a negative entry".into()));
        }
        let out = self.value(a).map(f64::sqrt);
        Ok(self.push_op(Box::new(SqrtOp), &[a], out))
    }

    pub fn square(&mut self, a: ValueId) -> Result<ValueId> {
        let out = self.value(a).map(|v| v * v);
        Ok(self.push_op(Box::new(SquareOp), &[a], out))
    }

    /// Rows scaled to unit Euclidean norm; rows with norm < 1e-12 are left as
    /// zeros (and receive zero gradient).
    pub fn l2_normalize_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let x = self.value(a);
        let mut out = Array::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n >= 1e-12 {
                for (o, &v) in out.row_mut(r).iter_mut().zip(x.row(r)) {
                    *o = v / n;
                }
            }
        }
        Ok(self.push_op(Box::new(L2NormalizeRows), &[a], out))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Accumulates d(loss)/d(parameter) into every parameter reachable from
    /// `loss`, consuming the tape. `loss` must be a 1x1 array produced on this
    /// tape.
    pub fn backward(self, loss: ValueId, params: &mut ParamSet) -> Result<BackwardStats> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..self.entries.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));

        let mut visited = 0usize;
        for node in self.nodes.iter().rev() {
            visited += 1;
            let grad_out = match grads[node.output.0].take() {
                Some(g) => g,
                None => continue, // not on any path to the loss
            };
            let inputs: Vec<&Array> = node
                .inputs
                .iter()
                .map(|id| &self.entries[id.0].value)
                .collect();
            let output = &self.entries[node.output.0].value;
            let input_grads = node.op.backward(&inputs, output, &grad_out);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op.name());
            for (id, g) in node.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    match &mut grads[id.0] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }

        for (entry, grad) in self.entries.iter().zip(grads.into_iter()) {
            if let (Provenance::Param(pid), Some(g)) = (&entry.provenance, grad) {
                params.accumulate_grad(*pid, &g)?;
            }
        }
        Ok(BackwardStats {
            nodes_visited: visited,
            node_count: self.nodes.len(),
        })
    }
}

fn softmax_into(row: &[f64], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

// ---- op structs ------------------------------------------------------------

#[derive(Debug)]
struct MatMul;
impl TapeOp for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let da = matmul_nt(grad_out, inputs[1]).expect("shape checked at forward");
        let db = matmul_tn(inputs[0], grad_out).expect("shape checked at forward");
        vec![Some(da), Some(db)]
    }
}

#[derive(Debug)]
struct MatMulNT;
impl TapeOp for MatMulNT {
    fn name(&self) -> &'static str {
        "matmul_nt"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        // C = A Bᵀ: dA = dC B, dB = dCᵀ A.
        let da = matmul(grad_out, inputs[1]).expect("shape checked at forward");
        let db = matmul_tn(grad_out, inputs[0]).expect("shape checked at forward");
        vec![Some(da), Some(db)]
    }
}

#[derive(Debug)]
struct AddOp;
impl TapeOp for AddOp {
    fn name(&self) -> &'static str {
        "add"
    }
    fn backward(&self, _inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        vec![Some(grad_out.clone()), Some(grad_out.clone())]
    }
}

#[derive(Debug)]
struct SubOp;
impl TapeOp for SubOp {
    fn name(&self) -> &'static str {
        "sub"
    }
    fn backward(&self, _inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        vec![Some(grad_out.clone()), Some(grad_out.map(|v| -v))]
    }
}

#[derive(Debug)]
struct ScalarMul(f64);
impl TapeOp for ScalarMul {
    fn name(&self) -> &'static str {
        "scalar_mul"
    }
    fn backward(&self, _inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        vec![Some(grad_out.map(|v| v * self.0))]
    }
}

#[derive(Debug)]
struct AddScalar;
impl TapeOp for AddScalar {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, _inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        vec![Some(grad_out.clone())]
    }
}

#[derive(Debug)]
struct Relu;
impl TapeOp for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let data = x
            .as_slice()
            .iter()
            .zip(grad_out.as_slice())
            .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(Array::from_vec(x.rows(), x.cols(), data).expect("same shape"))]
    }
}

#[derive(Debug)]
struct LeakyRelu(f64);
impl TapeOp for LeakyRelu {
    fn name(&self) -> &'static str {
        "leaky_relu"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let data = x
            .as_slice()
            .iter()
            .zip(grad_out.as_slice())
            .map(|(&xi, &g)| {
                if xi > 0.0 {
                    g
                } else if xi < 0.0 {
                    self.0 * g
                } else {
                    0.0
                }
            })
            .collect();
        vec![Some(Array::from_vec(x.rows(), x.cols(), data).expect("same shape"))]
    }
}

#[derive(Debug)]
struct SoftmaxRows;
impl TapeOp for SoftmaxRows {
    fn name(&self) -> &'static str {
        "softmax_rows"
    }
    fn backward(&self, _inputs: &[&Array], out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let mut dx = Array::zeros(out.rows(), out.cols());
        for r in 0..out.rows() {
            let y = out.row(r);
            let dy = grad_out.row(r);
            let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
            for (o, (&yi, &di)) in dx.row_mut(r).iter_mut().zip(y.iter().zip(dy)) {
                *o = yi * (di - dot);
            }
        }
        vec![Some(dx)]
    }
}

#[derive(Debug)]
struct LayerNormRows;
impl TapeOp for LayerNormRows {
    fn name(&self) -> &'static str {
        "layer_norm_rows"
    }
    fn backward(&self, inputs: &[&Array], out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let mut dx = Array::zeros(x.rows(), x.cols());
        let n = x.cols() as f64;
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let s = (var + LAYER_NORM_EPS).sqrt();
            let y = out.row(r);
            let dy = grad_out.row(r);
            let mean_dy = dy.iter().sum::<f64>() / n;
            let mean_dy_y: f64 = dy.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / n;
            for (o, (&di, &yi)) in dx.row_mut(r).iter_mut().zip(dy.iter().zip(y)) {
                *o = (di - mean_dy - yi * mean_dy_y) / s;
            }
        }
        vec![Some(dx)]
    }
}

#[derive(Debug)]
struct ScaleCols;
impl TapeOp for ScaleCols {
    fn name(&self) -> &'static str {
        "scale_cols"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let g = inputs[1];
        let mut dx = Array::zeros(x.rows(), x.cols());
        let mut dg = Array::zeros(1, x.cols());
        for r in 0..x.rows() {
            let dy = grad_out.row(r);
            let xr = x.row(r);
            for c in 0..x.cols() {
                dx.set(r, c, dy[c] * g.get(0, c));
                dg.set(0, c, dg.get(0, c) + dy[c] * xr[c]);
            }
        }
        vec![Some(dx), Some(dg)]
    }
}

#[derive(Debug)]
struct AddBiasRow;
impl TapeOp for AddBiasRow {
    fn name(&self) -> &'static str {
        "add_bias_row"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let mut db = Array::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (c, &g) in grad_out.row(r).iter().enumerate() {
                db.set(0, c, db.get(0, c) + g);
            }
        }
        vec![Some(grad_out.clone()), Some(db)]
    }
}

#[derive(Debug)]
struct ConcatRows {
    split: usize,
}
impl TapeOp for ConcatRows {
    fn name(&self) -> &'static str {
        "concat_rows"
    }
    fn backward(&self, _inputs: &[&Array], out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let cols = out.cols();
        let top = Array::from_vec(self.split, cols, grad_out.as_slice()[..self.split * cols].to_vec())
            .expect("split within range");
        let bottom = Array::from_vec(
            out.rows() - self.split,
            cols,
            grad_out.as_slice()[self.split * cols..].to_vec(),
        )
        .expect("split within range");
        vec![Some(top), Some(bottom)]
    }
}

#[derive(Debug)]
struct ConcatCols {
    split: usize,
}
impl TapeOp for ConcatCols {
    fn name(&self) -> &'static str {
        "concat_cols"
    }
    fn backward(&self, _inputs: &[&Array], out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let rows = out.rows();
        let right_cols = out.cols() - self.split;
        let mut left = Array::zeros(rows, self.split);
        let mut right = Array::zeros(rows, right_cols);
        for r in 0..rows {
            let g = grad_out.row(r);
            left.row_mut(r).copy_from_slice(&g[..self.split]);
            right.row_mut(r).copy_from_slice(&g[self.split..]);
        }
        vec![Some(left), Some(right)]
    }
}

#[derive(Debug)]
struct GatherRows {
    indices: Vec<u32>,
    src_rows: usize,
}
impl TapeOp for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let cols = inputs[0].cols();
        let mut dx = Array::zeros(self.src_rows, cols);
        for (k, &i) in self.indices.iter().enumerate() {
            let row = grad_out.row(k);
            for (o, &g) in dx.row_mut(i as usize).iter_mut().zip(row) {
                *o += g;
            }
        }
        vec![Some(dx)]
    }
}

#[derive(Debug)]
struct ScatterAddRows {
    indices: Vec<u32>,
}
impl TapeOp for ScatterAddRows {
    fn name(&self) -> &'static str {
        "scatter_add_rows"
    }
    fn backward(&self, _inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let dx = grad_out
            .select_rows(&self.indices)
            .expect("indices validated at forward");
        vec![Some(dx)]
    }
}

#[derive(Debug)]
struct MeanRows;
impl TapeOp for MeanRows {
    fn name(&self) -> &'static str {
        "mean_rows"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let scale = 1.0 / x.rows() as f64;
        let mut dx = Array::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            for (o, &g) in dx.row_mut(r).iter_mut().zip(grad_out.row(0)) {
                *o = g * scale;
            }
        }
        vec![Some(dx)]
    }
}

#[derive(Debug)]
struct RowSum;
impl TapeOp for RowSum {
    fn name(&self) -> &'static str {
        "row_sum"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let mut dx = Array::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let g = grad_out.get(r, 0);
            dx.row_mut(r).fill(g);
        }
        vec![Some(dx)]
    }
}

#[derive(Debug)]
struct SqrtOp;
impl TapeOp for SqrtOp {
    fn name(&self) -> &'static str {
        "sqrt"
    }
    fn backward(&self, _inputs: &[&Array], out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let data = out
            .as_slice()
            .iter()
            .zip(grad_out.as_slice())
            .map(|(&y, &g)| if y > 0.0 { g * 0.5 / y } else { 0.0 })
            .collect();
        vec![Some(Array::from_vec(out.rows(), out.cols(), data).expect("same shape"))]
    }
}

#[derive(Debug)]
struct SquareOp;
impl TapeOp for SquareOp {
    fn name(&self) -> &'static str {
        "square"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let data = x
            .as_slice()
            .iter()
            .zip(grad_out.as_slice())
            .map(|(&xi, &g)| 2.0 * xi * g)
            .collect();
        vec![Some(Array::from_vec(x.rows(), x.cols(), data).expect("same shape"))]
    }
}

#[derive(Debug)]
struct L2NormalizeRows;
impl TapeOp for L2NormalizeRows {
    fn name(&self) -> &'static str {
        "l2_normalize_rows"
    }
    fn backward(&self, inputs: &[&Array], out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let x = inputs[0];
        let mut dx = Array::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if n < 1e-12 {
                continue;
            }
            let y = out.row(r);
            let dy = grad_out.row(r);
            let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
            for (o, (&yi, &di)) in dx.row_mut(r).iter_mut().zip(y.iter().zip(dy)) {
                *o = (di - yi * dot) / n;
            }
        }
        vec![Some(dx)]
    }
}
