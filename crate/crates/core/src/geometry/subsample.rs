//! Grid subsampling.

use std::collections::BTreeMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

fn voxel_of(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// One output point per non-empty voxel of side `cell`, placed at the
/// barycenter of that voxel's points. Output order is ascending lexicographic
/// voxel index, so the result is deterministic and independent of input order.
pub fn grid_subsample(cloud: &PointCloud, cell: f64) -> Result<PointCloud> {
    if !(cell > 0.0) {
        return Err(Error::InvalidInput(format!("grid cell must be positive, got {cell}")));
    }
    let mut voxels: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in cloud.points() {
        let e = voxels.entry(voxel_of(p, cell)).or_insert((Vector3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    let points = voxels
        .values()
        .map(|(sum, count)| sum / *count as f64)
        .collect();
    PointCloud::new(points)
}

/// Voxel-keyed point selection used to build encoder pyramids: per non-empty
/// voxel, the index of the input point closest to the voxel barycenter
/// (ties broken by lower index). Output order is ascending lexicographic voxel
/// index. Unlike [`grid_subsample`] this returns members of the input set, so
/// feature rows of a coarser level can be selected from the finer level.
pub fn grid_subsample_indices(cloud: &PointCloud, cell: f64) -> Result<Vec<u32>> {
    if !(cell > 0.0) {
        return Err(Error::InvalidInput(format!("grid cell must be positive, got {cell}")));
    }
    let mut voxels: BTreeMap<(i64, i64, i64), (Vector3<f64>, Vec<u32>)> = BTreeMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let e = voxels
            .entry(voxel_of(p, cell))
            .or_insert((Vector3::zeros(), Vec::new()));
        e.0 += p;
        e.1.push(i as u32);
    }
    let mut out = Vec::with_capacity(voxels.len());
    for (sum, members) in voxels.values() {
        let bary = sum / members.len() as f64;
        let mut best = members[0];
        let mut best_d2 = f64::INFINITY;
        for &i in members {
            let d2 = (cloud.points()[i as usize] - bary).norm_squared();
            if d2 < best_d2 {
                best_d2 = d2;
                best = i;
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_point_passthrough() {
        let cloud = PointCloud::new(vec![Vector3::new(0.1, 0.2, 0.3)]).unwrap();
        let out = grid_subsample(&cloud, 1.0).unwrap();
        assert_eq!(out.points(), cloud.points());
    }

    #[test]
    fn two_points_barycenter() {
        let cloud =
            PointCloud::new(vec![Vector3::zeros(), Vector3::new(0.2, 0.0, 0.0)]).unwrap();
        let out = grid_subsample(&cloud, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points()[0] - Vector3::new(0.1, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn empty_input_gives_empty_output() {
        let cloud = PointCloud::new(vec![]).unwrap();
        assert!(grid_subsample(&cloud, 0.5).unwrap().is_empty());
    }

    #[test]
    fn matches_brute_force_voxel_bucketing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = 0.25;
        let points: Vec<Vector3<f64>> = (0..1000)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let cloud = PointCloud::new(points.clone()).unwrap();
        let out = grid_subsample(&cloud, cell).unwrap();
        assert!(out.len() <= 64);

        // Independent bucketing oracle.
        let mut buckets: HashMap<(i64, i64, i64), (Vector3<f64>, usize)> = HashMap::new();
        for p in &points {
            let k = (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            );
            let e = buckets.entry(k).or_insert((Vector3::zeros(), 0));
            e.0 += p;
            e.1 += 1;
        }
        assert_eq!(out.len(), buckets.len());
        let half_diag = (3.0f64).sqrt() / 2.0 * cell;
        for p in out.points() {
            let k = (
                (p.x / cell).floor() as i64,
                (p.y / cell).floor() as i64,
                (p.z / cell).floor() as i64,
            );
            let (sum, n) = buckets[&k];
            assert!((p - sum / n as f64).norm() < 1e-12);
            let center = Vector3::new(
                (k.0 as f64 + 0.5) * cell,
                (k.1 as f64 + 0.5) * cell,
                (k.2 as f64 + 0.5) * cell,
            );
            assert!((p - center).norm() <= half_diag + 1e-12);
        }
    }

    #[test]
    fn idempotent_when_voxels_hold_one_point() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.1, 0.1, 0.1),
            Vector3::new(1.4, 0.2, 0.3),
            Vector3::new(2.6, 1.8, 0.4),
        ])
        .unwrap();
        let once = grid_subsample(&cloud, 1.0).unwrap();
        let twice = grid_subsample(&once, 1.0).unwrap();
        assert_eq!(once.points(), twice.points());
    }

    #[test]
    fn index_selection_returns_members_near_barycenter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<Vector3<f64>> = (0..300)
            .map(|_| Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        let cloud = PointCloud::new(points).unwrap();
        let idx = grid_subsample_indices(&cloud, 0.5).unwrap();
        let bary = grid_subsample(&cloud, 0.5).unwrap();
        assert_eq!(idx.len(), bary.len());
        // Selected point must be the set member nearest its voxel barycenter.
        for (sel, b) in idx.iter().zip(bary.points()) {
            let chosen = cloud.points()[*sel as usize];
            let cell = 0.5;
            let key = |p: &Vector3<f64>| {
                (
                    (p.x / cell).floor() as i64,
                    (p.y / cell).floor() as i64,
                    (p.z / cell).floor() as i64,
                )
            };
            let kb = key(&chosen);
            for (j, p) in cloud.points().iter().enumerate() {
                if key(p) == kb {
                    assert!(
                        (chosen - b).norm_squared() <= (p - b).norm_squared() + 1e-18,
                        "point {j} closer to barycenter than selected"
                    );
                }
            }
        }
    }
}
