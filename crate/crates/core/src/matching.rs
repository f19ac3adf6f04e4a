//! Descriptor-space matching and the registration evaluation metrics.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::error::{Error, Result};
use crate::geometry::{knn, PointCloud, RigidTransform};
use crate::loss::CorrespondenceSet;

/// Predicted correspondences: each source index appears exactly once, matched
/// to its nearest target descriptor.
#[derive(Debug, Clone)]
pub struct MatchSet {
    pairs: Vec<(u32, u32)>,
    distances: Vec<f64>,
}

impl MatchSet {
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn from_pairs(pairs: Vec<(u32, u32)>, distances: Vec<f64>) -> Self {
        Self { pairs, distances }
    }
}

/// Evaluation thresholds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricConfig {
    /// Inlier distance τ1 (meters).
    pub inlier_distance: f64,
    /// Inlier-ratio threshold τ2 for feature matching recall.
    pub inlier_ratio_threshold: f64,
    /// RMSE threshold τ3 for registration recall (meters).
    pub rmse_threshold: f64,
    /// Rotation-error recall threshold (degrees).
    pub re_threshold_deg: f64,
    /// Translation-error recall threshold (meters).
    pub te_threshold: f64,
    /// Neighbor count of the per-point adaptive threshold.
    pub adaptive_k: usize,
}

impl MetricConfig {
    /// τ1 = 10 cm, τ2 = 5%, τ3 = 0.2 m, RE ≤ 5°, TE ≤ 0.6 m.
    pub fn standard() -> Self {
        Self {
            inlier_distance: 0.10,
            inlier_ratio_threshold: 0.05,
            rmse_threshold: 0.2,
            re_threshold_deg: 5.0,
            te_threshold: 0.6,
            adaptive_k: 5,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("metrics.inlier_distance", self.inlier_distance),
            ("metrics.inlier_ratio_threshold", self.inlier_ratio_threshold),
            ("metrics.rmse_threshold", self.rmse_threshold),
            ("metrics.re_threshold_deg", self.re_threshold_deg),
            ("metrics.te_threshold", self.te_threshold),
        ] {
            if !(v > 0.0) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        }
        problems
    }
}

/// Nearest-neighbor matching in descriptor space (Euclidean), deterministic
/// tie-break by lower target index.
pub fn nn_match(desc_src: &Array, desc_tgt: &Array) -> Result<MatchSet> {
    if desc_tgt.rows() == 0 {
        return Err(Error::InvalidInput("nn_match against an empty target".into()));
    }
    if desc_src.cols() != desc_tgt.cols() {
        return Err(Error::ShapeMismatch {
            op: "nn_match",
            lhs: desc_src.shape(),
            rhs: desc_tgt.shape(),
        });
    }
    let results: Vec<(u32, f64)> = (0..desc_src.rows())
        .into_par_iter()
        .map(|i| {
            let row = desc_src.row(i);
            let mut best = (f64::INFINITY, 0u32);
            for j in 0..desc_tgt.rows() {
                let mut d2 = 0.0;
                for (a, b) in row.iter().zip(desc_tgt.row(j)) {
                    let d = a - b;
                    d2 += d * d;
                }
                if d2 < best.0 {
                    best = (d2, j as u32);
                }
            }
            (best.1, best.0.sqrt())
        })
        .collect();
    Ok(MatchSet {
        pairs: results
            .iter()
            .enumerate()
            .map(|(i, &(j, _))| (i as u32, j))
            .collect(),
        distances: results.iter().map(|&(_, d)| d).collect(),
    })
}

/// Fraction of matches whose ground-truth-transformed source point lands
/// strictly within τ1 of its matched target.
pub fn inlier_ratio(
    matches: &MatchSet,
    gt: &RigidTransform,
    source: &PointCloud,
    target: &PointCloud,
    tau1: f64,
) -> Result<f64> {
    if matches.is_empty() {
        return Err(Error::InvalidInput("inlier_ratio over an empty match set".into()));
    }
    let inliers = matches
        .pairs()
        .iter()
        .filter(|&&(i, j)| {
            let p = gt.apply_point(&source.points()[i as usize]);
            (p - target.points()[j as usize]).norm() < tau1
        })
        .count();
    Ok(inliers as f64 / matches.len() as f64)
}

/// Fraction of pairs whose inlier ratio strictly exceeds τ2.
pub fn feature_matching_recall(inlier_ratios: &[f64], tau2: f64) -> f64 {
    if inlier_ratios.is_empty() {
        return 0.0;
    }
    let hits = inlier_ratios.iter().filter(|&&r| r > tau2).count();
    hits as f64 / inlier_ratios.len() as f64
}

/// Root-mean-square distance of the ground-truth correspondences under an
/// estimated transform.
pub fn rmse_dis(
    estimate: &RigidTransform,
    gt_corr: &CorrespondenceSet,
    source: &PointCloud,
    target: &PointCloud,
) -> Result<f64> {
    if gt_corr.is_empty() {
        return Err(Error::InvalidInput("rmse over an empty correspondence set".into()));
    }
    let sum: f64 = gt_corr
        .pairs()
        .iter()
        .map(|&(i, j)| {
            let p = estimate.apply_point(&source.points()[i as usize]);
            (p - target.points()[j as usize]).norm_squared()
        })
        .sum();
    Ok((sum / gt_corr.len() as f64).sqrt())
}

/// Fraction of pairs whose RMSE is strictly below τ3.
pub fn registration_recall(rmse_values: &[f64], tau3: f64) -> f64 {
    if rmse_values.is_empty() {
        return 0.0;
    }
    let hits = rmse_values.iter().filter(|&&r| r < tau3).count();
    hits as f64 / rmse_values.len() as f64
}

/// Geodesic rotation angle between two rotations, radians in [0, π].
pub fn rotation_error(r_pre: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> f64 {
    let rel = r_pre.transpose() * r_gt;
    (((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Euclidean distance between two translations (meters, unsquared).
pub fn translation_error(t_pre: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_pre - t_gt).norm()
}

/// Symmetric mean of squared nearest-neighbor distances (meters squared).
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("chamfer distance of an empty cloud".into()));
    }
    let nn_ab = knn(a, b, 1)?;
    let nn_ba = knn(b, a, 1)?;
    let ab: f64 = nn_ab.distances().iter().map(|d| d[0] * d[0]).sum::<f64>() / a.len() as f64;
    let ba: f64 = nn_ba.distances().iter().map(|d| d[0] * d[0]).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

/// Per-point adaptive threshold: mean distance to the K nearest neighbors
/// (self excluded). K = 0 is the documented degenerate setting where every
/// threshold is zero.
pub fn adaptive_threshold(cloud: &PointCloud, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Ok(vec![0.0; cloud.len()]);
    }
    if cloud.len() <= k {
        return Err(Error::InvalidInput(format!(
            "adaptive threshold needs more than K = {k} points, got {}",
            cloud.len()
        )));
    }
    // K+1 nearest including the point itself at distance zero.
    let nn = knn(cloud, cloud, k + 1)?;
    Ok(nn
        .distances()
        .iter()
        .enumerate()
        .map(|(i, d)| {
            // Drop the self match (distance 0 at the own index); on exact
            // duplicates the self row is identified by index.
            let idx = &nn.indices()[i];
            let self_pos = idx.iter().position(|&j| j as usize == i).unwrap_or(0);
            let mut sum = 0.0;
            for (p, &dist) in d.iter().enumerate() {
                if p != self_pos {
                    sum += dist;
                }
            }
            sum / k as f64
        })
        .collect())
}
