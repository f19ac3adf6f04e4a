//! Ground-truth correspondences and the contrastive descriptor loss.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, ValueId};
use crate::error::{Error, Result};
use crate::geometry::{knn, PointCloud, RigidTransform};

/// Index pairs (source, target) accepted as ground-truth correspondences at
/// a distance threshold.
#[derive(Debug, Clone)]
pub struct CorrespondenceSet {
    pairs: Vec<(u32, u32)>,
    threshold: f64,
}

impl CorrespondenceSet {
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn from_pairs(pairs: Vec<(u32, u32)>, threshold: f64) -> Self {
        Self { pairs, threshold }
    }
}

/// For every source point, transforms it by `gt` and keeps the nearest target
/// point as its correspondence iff that distance is below `threshold`.
/// Errors when not a single pair survives.
pub fn build_gt_correspondences(
    source: &PointCloud,
    target: &PointCloud,
    gt: &RigidTransform,
    threshold: f64,
) -> Result<CorrespondenceSet> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidInput(format!(
            "correspondence threshold must be positive, got {threshold}"
        )));
    }
    if target.is_empty() {
        return Err(Error::NoOverlap { threshold });
    }
    let transformed = PointCloud::new(
        source
            .points()
            .iter()
            .map(|p| gt.apply_point(p))
            .collect(),
    )?;
    let nn = knn(&transformed, target, 1)?;
    let mut pairs = Vec::new();
    for (i, (idx, dist)) in nn.indices().iter().zip(nn.distances()).enumerate() {
        if dist[0] < threshold {
            pairs.push((i as u32, idx[0]));
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoOverlap { threshold });
    }
    Ok(CorrespondenceSet { pairs, threshold })
}

/// Margins and mining parameters of the contrastive loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub pos_margin: f64,
    pub neg_margin: f64,
    /// Geometric exclusion radius around the true corresponding point.
    pub safe_radius: f64,
    /// Correspondences sampled per step.
    pub batch_pairs: usize,
}

impl LossConfig {
    /// Margins 0.1 / 1.4, safe radius 0.1 m, 64 pairs per batch.
    pub fn standard() -> Self {
        Self {
            pos_margin: 0.1,
            neg_margin: 1.4,
            safe_radius: 0.1,
            batch_pairs: 64,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.pos_margin >= 0.0) {
            problems.push(format!("loss.pos_margin must be >= 0, got {}", self.pos_margin));
        }
        if !(self.pos_margin < self.neg_margin) {
            problems.push(format!(
                "loss.pos_margin {} must be below loss.neg_margin {}",
                self.pos_margin, self.neg_margin
            ));
        }
        if !(self.safe_radius > 0.0) {
            problems.push(format!(
                "loss.safe_radius must be positive, got {}",
                self.safe_radius
            ));
        }
        if self.batch_pairs == 0 {
            problems.push("loss.batch_pairs must be >= 1".into());
        }
        problems
    }
}

/// Uniform sample of `n` correspondences without replacement (all of them if
/// fewer exist), in draw order.
pub fn sample_batch(
    corr: &CorrespondenceSet,
    n: usize,
    rng: &mut impl Rng,
) -> Vec<(u32, u32)> {
    if corr.len() <= n {
        return corr.pairs().to_vec();
    }
    rand::seq::index::sample(rng, corr.len(), n)
        .into_iter()
        .map(|i| corr.pairs()[i])
        .collect()
}

/// Euclidean distance between two descriptor rows.
pub fn positive_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Hardest negative for batch pair `i`: over the batch's target points
/// strictly outside the safe radius of pair i's true target, the minimum
/// descriptor distance to pair i's source descriptor. Returns the batch
/// position of the argmin and the distance; `None` when no candidate is
/// eligible. Ties resolve to the lower batch position.
pub fn hardest_negative_distance(
    i: usize,
    batch: &[(u32, u32)],
    desc_src: &Array,
    desc_tgt: &Array,
    target_points: &[Vector3<f64>],
    safe_radius: f64,
) -> Option<(usize, f64)> {
    let (src_i, tgt_i) = batch[i];
    let anchor = desc_src.row(src_i as usize);
    let y_i = target_points[tgt_i as usize];
    let mut best: Option<(usize, f64)> = None;
    for (j, &(_, tgt_j)) in batch.iter().enumerate() {
        if (target_points[tgt_j as usize] - y_i).norm() <= safe_radius {
            continue;
        }
        let d = positive_distance(anchor, desc_tgt.row(tgt_j as usize));
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((j, d)),
        }
    }
    best
}

/// Per-batch bookkeeping from a loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossStats {
    /// Pairs whose negative hinge participated.
    pub active_negatives: usize,
    /// Pairs skipped for lack of an eligible negative.
    pub skipped_negatives: usize,
}

/// Contrastive loss over a sampled batch, on the tape:
///   L = (1/n) Σ_i [ max(0, d_i_pos − M_pos) + max(0, M_neg − d_i_neg) ]
/// Hardest-negative selection happens on forward values and is held constant
/// through the backward pass. Pairs with no eligible negative contribute only
/// their positive hinge.
pub fn contrastive_loss_tape(
    tape: &mut Tape,
    desc_src: ValueId,
    desc_tgt: ValueId,
    batch: &[(u32, u32)],
    target_points: &[Vector3<f64>],
    cfg: &LossConfig,
) -> Result<(ValueId, LossStats)> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty loss batch".into()));
    }
    let n = batch.len();
    let src_idx: Vec<u32> = batch.iter().map(|&(s, _)| s).collect();
    let tgt_idx: Vec<u32> = batch.iter().map(|&(_, t)| t).collect();

    // Mining on raw forward values.
    let mut neg_rows: Vec<(u32, u32)> = Vec::new();
    {
        let ds = tape.value(desc_src);
        let dt = tape.value(desc_tgt);
        for i in 0..n {
            if let Some((j, _)) =
                hardest_negative_distance(i, batch, ds, dt, target_points, cfg.safe_radius)
            {
                neg_rows.push((src_idx[i], tgt_idx[j]));
            }
        }
    }
    let stats = LossStats {
        active_negatives: neg_rows.len(),
        skipped_negatives: n - neg_rows.len(),
    };

    let xs = tape.gather_rows(desc_src, src_idx)?;
    let ys = tape.gather_rows(desc_tgt, tgt_idx)?;
    let diff = tape.sub(xs, ys)?;
    let sq = tape.square(diff)?;
    let d2 = tape.row_sum(sq)?;
    let d_pos = tape.sqrt(d2)?;
    let shifted = tape.add_scalar(d_pos, -cfg.pos_margin)?;
    let pos_hinge = tape.max_with_zero(shifted)?;
    let mut loss = tape.mean_rows(pos_hinge)?;

    if !neg_rows.is_empty() {
        let m = neg_rows.len();
        let xs_n = tape.gather_rows(desc_src, neg_rows.iter().map(|&(s, _)| s).collect())?;
        let ys_n = tape.gather_rows(desc_tgt, neg_rows.iter().map(|&(_, t)| t).collect())?;
        let diff = tape.sub(xs_n, ys_n)?;
        let sq = tape.square(diff)?;
        let d2 = tape.row_sum(sq)?;
        let d_neg = tape.sqrt(d2)?;
        let negated = tape.scalar_mul(d_neg, -1.0)?;
        let shifted = tape.add_scalar(negated, cfg.neg_margin)?;
        let neg_hinge = tape.max_with_zero(shifted)?;
        let neg_mean = tape.mean_rows(neg_hinge)?;
        let neg_term = tape.scalar_mul(neg_mean, m as f64 / n as f64)?;
        loss = tape.add(loss, neg_term)?;
    }
    Ok((loss, stats))
}
