//! Inverse-distance-weighted upsampling of sparse scale features back to the
//! original (dense) points.

use std::sync::Arc;

use nalgebra::Vector3;

use crate::autodiff::{Array, Tape, TapeOp, ValueId};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::geometry::{knn, PointCloud};

/// Distance below which a dense point is treated as coincident with a sparse
/// point and copies its feature exactly (the limit of the 1/d^p weight).
pub const COINCIDENT_EPS: f64 = 1e-12;

/// Fixed interpolation structure from a sparse point set to a dense one:
/// per dense point, K sparse indices with normalized weights.
#[derive(Debug, Clone)]
pub struct IdwWeights {
    indices: Vec<Vec<u32>>,
    weights: Vec<Vec<f64>>,
    n_sparse: usize,
}

impl IdwWeights {
    /// K-nearest-neighbor inverse distance weights (exponent `p`),
    /// normalized per dense point. A dense point within [`COINCIDENT_EPS`]
    /// of its nearest sparse point gets that feature exactly.
    pub fn build(
        dense: &[Vector3<f64>],
        sparse: &[Vector3<f64>],
        k: usize,
        p: f64,
    ) -> Result<Self> {
        if sparse.is_empty() {
            return Err(Error::InvalidInput("upsample needs a non-empty sparse set".into()));
        }
        let dense_cloud = PointCloud::new(dense.to_vec())?;
        let sparse_cloud = PointCloud::new(sparse.to_vec())?;
        let nn = knn(&dense_cloud, &sparse_cloud, k)?;

        let mut indices = Vec::with_capacity(dense.len());
        let mut weights = Vec::with_capacity(dense.len());
        for (idx_row, dist_row) in nn.indices().iter().zip(nn.distances()) {
            if dist_row[0] < COINCIDENT_EPS {
                indices.push(vec![idx_row[0]]);
                weights.push(vec![1.0]);
                continue;
            }
            let raw: Vec<f64> = dist_row.iter().map(|&d| 1.0 / d.powf(p)).collect();
            let sum: f64 = raw.iter().sum();
            indices.push(idx_row.clone());
            weights.push(raw.into_iter().map(|w| w / sum).collect());
        }
        Ok(Self {
            indices,
            weights,
            n_sparse: sparse.len(),
        })
    }

    pub fn dense_len(&self) -> usize {
        self.indices.len()
    }

    /// Pure application: out[i, :] = Σ_k w_ik · sparse[idx_ik, :].
    pub fn apply(&self, sparse_features: &Array) -> Result<Array> {
        if sparse_features.rows() != self.n_sparse {
            return Err(Error::ShapeMismatch {
                op: "idw_upsample",
                lhs: sparse_features.shape(),
                rhs: (self.n_sparse, sparse_features.cols()),
            });
        }
        let d = sparse_features.cols();
        let mut out = Array::zeros(self.indices.len(), d);
        for (i, (idx, w)) in self.indices.iter().zip(&self.weights).enumerate() {
            let dst = out.row_mut(i);
            for (&j, &wj) in idx.iter().zip(w) {
                let src = sparse_features.row(j as usize);
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += wj * v;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug)]
struct IdwUpsampleOp {
    weights: Arc<IdwWeights>,
}

impl TapeOp for IdwUpsampleOp {
    fn name(&self) -> &'static str {
        "idw_upsample"
    }
    fn backward(&self, inputs: &[&Array], _out: &Array, grad_out: &Array) -> Vec<Option<Array>> {
        let sparse = inputs[0];
        let mut dx = Array::zeros(sparse.rows(), sparse.cols());
        for (i, (idx, w)) in self.weights.indices.iter().zip(&self.weights.weights).enumerate() {
            let g = grad_out.row(i);
            for (&j, &wj) in idx.iter().zip(w) {
                let dst = dx.row_mut(j as usize);
                for (o, &v) in dst.iter_mut().zip(g) {
                    *o += wj * v;
                }
            }
        }
        vec![Some(dx)]
    }
}

/// Tape version of [`IdwWeights::apply`].
pub fn upsample_tape(
    tape: &mut Tape,
    sparse_features: ValueId,
    weights: &Arc<IdwWeights>,
) -> Result<ValueId> {
    let out = weights.apply(tape.value(sparse_features))?;
    Ok(tape.push_op(
        Box::new(IdwUpsampleOp {
            weights: Arc::clone(weights),
        }),
        &[sparse_features],
        out,
    ))
}

/// One-call upsampling of a sparse feature map to dense points.
pub fn upsample_scale(
    sparse_points: &[Vector3<f64>],
    sparse_features: &Array,
    dense_points: &[Vector3<f64>],
    cfg: &FusionConfig,
) -> Result<Array> {
    let w = IdwWeights::build(dense_points, sparse_points, cfg.idw_neighbors, cfg.idw_exponent)?;
    w.apply(sparse_features)
}
