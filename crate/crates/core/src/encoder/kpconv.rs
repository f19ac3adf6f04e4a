//! Kernel point convolution as a single tape op.
//!
//! Per query point i with radius neighborhood N(i):
//!   psi_i = (1/|N(i)|) Σ_{j ∈ N(i)} Σ_s h(x_j − q_i, k_s) · (f_j · W_s)
//! The density normalization 1/|N(i)| makes duplicated support points a
//! no-op. Queries with empty neighborhoods produce zero rows and are listed
//! in the coverage report of the neighbor lists.

use std::sync::Arc;

use nalgebra::Vector3;

use crate::autodiff::{matmul, matmul_tn, Array, ParamId, ParamSet, Tape, TapeOp, ValueId};
use crate::encoder::kernel::{kernel_correlation, KernelPointSet};
use crate::error::{Error, Result};
use crate::geometry::NeighborLists;

/// Precomputed correlation structure of one convolution: for each kernel, the
/// (query, support, h/|N|) triples with a nonzero hat value, ordered by query
/// then support so accumulation order is fixed.
#[derive(Debug, Clone)]
pub struct ConvCoeffs {
    pub n_queries: usize,
    pub n_support: usize,
    per_kernel: Vec<Vec<(u32, u32, f64)>>,
}

impl ConvCoeffs {
    /// Builds coefficients from query/support positions and the radius
    /// neighborhoods of the queries in the support set.
    pub fn build(
        queries: &[Vector3<f64>],
        support: &[Vector3<f64>],
        neighbors: &NeighborLists,
        kernel_points: &[Vector3<f64>],
        sigma: f64,
    ) -> Result<Self> {
        if neighbors.lists().len() != queries.len() {
            return Err(Error::InvalidInput(format!(
                "neighbor lists cover {} queries, got {} query points",
                neighbors.lists().len(),
                queries.len()
            )));
        }
        let mut per_kernel = vec![Vec::new(); kernel_points.len()];
        for (i, q) in queries.iter().enumerate() {
            let list = neighbors.list(i);
            if list.is_empty() {
                continue;
            }
            let inv_n = 1.0 / list.len() as f64;
            for &j in list {
                let offset = support[j as usize] - q;
                for (s, k) in kernel_points.iter().enumerate() {
                    let h = kernel_correlation(&offset, k, sigma);
                    if h > 0.0 {
                        per_kernel[s].push((i as u32, j, h * inv_n));
                    }
                }
            }
        }
        Ok(Self {
            n_queries: queries.len(),
            n_support: support.len(),
            per_kernel,
        })
    }

    /// Per-kernel weighted neighbor aggregation: A_s[i, :] = Σ_j w_sij f_j.
    fn aggregate(&self, features: &Array) -> Vec<Array> {
        let d_in = features.cols();
        self.per_kernel
            .iter()
            .map(|entries| {
                let mut a = Array::zeros(self.n_queries, d_in);
                for &(i, j, w) in entries {
                    let src = features.row(j as usize);
                    let dst = a.row_mut(i as usize);
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o += w * v;
                    }
                }
                a
            })
            .collect()
    }
}

#[derive(Debug)]
struct KpconvOp {
    coeffs: Arc<ConvCoeffs>,
}

impl TapeOp for KpconvOp {
    fn name(&self) -> &'static str {
        "kpconv"
    }

    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let features = inputs[0];
        let weights = &inputs[1..];
        let aggregates = self.coeffs.aggregate(features);

        let mut grads: Vec<Option<Array>> = Vec::with_capacity(inputs.len());
        let mut d_features = Array::zeros(features.rows(), features.cols());
        grads.push(None); // placeholder, filled after the loop
        for (s, w) in weights.iter().enumerate() {
            // dW_s = A_sᵀ · dOut
            let dw = matmul_tn(&aggregates[s], grad_out).expect("shapes fixed at forward");
            // dA_s = dOut · W_sᵀ, scattered back through the coefficients.
            let da = crate::autodiff::matmul_nt(grad_out, w).expect("shapes fixed at forward");
            for &(i, j, coeff) in &self.coeffs.per_kernel[s] {
                let src = da.row(i as usize);
                let dst = d_features.row_mut(j as usize);
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += coeff * v;
                }
            }
            grads.push(Some(dw));
        }
        grads[0] = Some(d_features);
        grads
    }
}

/// Forward convolution over the tape. `features` are the support features
/// (one row per support point); the output has one row per query.
pub fn kpconv_forward(
    tape: &mut Tape,
    params: &ParamSet,
    features: ValueId,
    kernel: &KernelPointSet,
    coeffs: &Arc<ConvCoeffs>,
) -> Result<ValueId> {
    let f = tape.value(features);
    if f.rows() != coeffs.n_support {
        return Err(Error::ShapeMismatch {
            op: "kpconv",
            lhs: f.shape(),
            rhs: (coeffs.n_support, f.cols()),
        });
    }
    if kernel.weights.len() != coeffs.per_kernel.len() {
        return Err(Error::InvalidInput(format!(
            "kernel has {} weight matrices for {} kernel points",
            kernel.weights.len(),
            coeffs.per_kernel.len()
        )));
    }
    let d_in = f.cols();
    let d_out = params.value(kernel.weights[0]).cols();
    for &w in &kernel.weights {
        if params.value(w).shape() != (d_in, d_out) {
            return Err(Error::ShapeMismatch {
                op: "kpconv weights",
                lhs: params.value(w).shape(),
                rhs: (d_in, d_out),
            });
        }
    }

    let aggregates = coeffs.aggregate(f);
    let mut out = Array::zeros(coeffs.n_queries, d_out);
    for (s, &w) in kernel.weights.iter().enumerate() {
        let contribution = matmul(&aggregates[s], params.value(w))?;
        out.add_assign(&contribution)?;
    }

    let mut input_ids = Vec::with_capacity(1 + kernel.weights.len());
    input_ids.push(features);
    for &w in &kernel.weights {
        input_ids.push(tape.param(params, w));
    }
    Ok(tape.push_op(
        Box::new(KpconvOp {
            coeffs: Arc::clone(coeffs),
        }),
        &input_ids,
        out,
    ))
}
