//! Spatial queries: exhaustive radius neighborhoods and K nearest neighbors.
//!
//! The radius search is accelerated by a uniform voxel hash but is contractually
//! identical to an exhaustive pairwise scan: closed ball (`‖·‖ ≤ τ`), complete
//! lists, support indices ascending.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Per-query in-radius support lists at a fixed radius τ.
#[derive(Debug, Clone)]
pub struct NeighborLists {
    lists: Vec<Vec<u32>>,
    radius: f64,
}

impl NeighborLists {
    pub fn lists(&self) -> &[Vec<u32>] {
        &self.lists
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn list(&self, query: usize) -> &[u32] {
        &self.lists[query]
    }

    /// Indices of queries whose neighborhood came back empty.
    pub fn empty_queries(&self) -> Vec<u32> {
        self.lists
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_empty())
            .map(|(i, _)| i as u32)
            .collect()
    }
}

/// K-nearest-neighbor result: per query, support indices with ascending
/// distances (ties broken by lower support index). `short` is set when the
/// support held fewer than K points and all of it was returned.
#[derive(Debug, Clone)]
pub struct KnnResult {
    indices: Vec<Vec<u32>>,
    distances: Vec<Vec<f64>>,
    k: usize,
    short: bool,
}

impl KnnResult {
    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    pub fn distances(&self) -> &[Vec<f64>] {
        &self.distances
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_short(&self) -> bool {
        self.short
    }
}

fn voxel_key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// Exhaustive closed-ball radius search: for each query point, every support
/// point with `‖s − q‖ ≤ τ`, indices ascending.
pub fn radius_neighbors(queries: &PointCloud, support: &PointCloud, tau: f64) -> Result<NeighborLists> {
    if !(tau > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {tau}")));
    }
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    for (i, p) in support.points().iter().enumerate() {
        grid.entry(voxel_key(p, tau)).or_default().push(i as u32);
    }
    let tau2 = tau * tau;
    let lists = queries
        .points()
        .iter()
        .map(|q| {
            let (cx, cy, cz) = voxel_key(q, tau);
            let mut found = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(cands) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in cands {
                                let d2 = (support.points()[j as usize] - q).norm_squared();
                                if d2 <= tau2 {
                                    found.push(j);
                                }
                            }
                        }
                    }
                }
            }
            found.sort_unstable();
            found
        })
        .collect();
    Ok(NeighborLists { lists, radius: tau })
}

/// K nearest support points per query, ascending distance, ties broken by
/// lower support index. A support smaller than K returns everything and sets
/// the short flag.
pub fn knn(queries: &PointCloud, support: &PointCloud, k: usize) -> Result<KnnResult> {
    if k == 0 {
        return Err(Error::InvalidInput("knn requires K >= 1".into()));
    }
    if support.is_empty() {
        return Err(Error::InvalidInput("knn requires a non-empty support".into()));
    }
    let take = k.min(support.len());
    let mut indices = Vec::with_capacity(queries.len());
    let mut distances = Vec::with_capacity(queries.len());
    let mut scratch: Vec<(f64, u32)> = Vec::with_capacity(support.len());
    for q in queries.points() {
        scratch.clear();
        scratch.extend(
            support
                .points()
                .iter()
                .enumerate()
                .map(|(j, s)| ((s - q).norm_squared(), j as u32)),
        );
        if take < scratch.len() {
            scratch.select_nth_unstable_by(take - 1, |a, b| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
            });
            scratch.truncate(take);
        }
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        indices.push(scratch.iter().map(|&(_, j)| j).collect());
        distances.push(scratch.iter().map(|&(d2, _)| d2.sqrt()).collect());
    }
    Ok(KnnResult {
        indices,
        distances,
        k,
        short: support.len() < k,
    })
}
