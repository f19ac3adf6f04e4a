//! Training-time data augmentation: random scale, random rotation, Gaussian jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

/// Augmentation parameters. The draw is fully determined by `seed`.
#[derive(Debug, Clone)]
pub struct AugmentationConfig {
    /// Standard deviation of the per-coordinate Gaussian jitter (meters).
    pub jitter_std: f64,
    /// Closed interval for the uniform random scale factor.
    pub scale_range: (f64, f64),
    pub seed: u64,
}

impl AugmentationConfig {
    /// Jitter σ 0.005 m, scale in [0.9, 1.1], full-circle rotation about a
    /// random axis.
    pub fn standard(seed: u64) -> Self {
        Self {
            jitter_std: 0.005,
            scale_range: (0.9, 1.1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.jitter_std >= 0.0) {
            problems.push(format!("jitter_std must be >= 0, got {}", self.jitter_std));
        }
        if !(self.scale_range.0 <= self.scale_range.1) {
            problems.push(format!(
                "scale_range low {} exceeds high {}",
                self.scale_range.0, self.scale_range.1
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// Applies scale, then a uniformly random rotation (angle in [0, 2π) about a
/// uniformly random axis), then per-coordinate Gaussian jitter. Returns the
/// augmented cloud together with the rotation applied and the scale drawn so
/// correspondence bookkeeping survives the augmentation.
pub fn augment(
    cloud: &PointCloud,
    cfg: &AugmentationConfig,
) -> Result<(PointCloud, RigidTransform, f64)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scale = if cfg.scale_range.0 == cfg.scale_range.1 {
        cfg.scale_range.0
    } else {
        rng.gen_range(cfg.scale_range.0..=cfg.scale_range.1)
    };
    let rotation = RigidTransform::random_rotation(&mut rng);
    let jitter = if cfg.jitter_std > 0.0 {
        Some(Normal::new(0.0, cfg.jitter_std).expect("validated std"))
    } else {
        None
    };
    let points = cloud
        .points()
        .iter()
        .map(|p| {
            let mut q = rotation.apply_point(&(p * scale));
            if let Some(n) = &jitter {
                q.x += n.sample(&mut rng);
                q.y += n.sample(&mut rng);
                q.z += n.sample(&mut rng);
            }
            q
        })
        .collect();
    let mut out = PointCloud::new(points)?;
    if let Some(f) = cloud.features() {
        out = out.with_features(f.clone())?;
    }
    Ok((out, rotation, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::kabsch_fit;
    use nalgebra::Vector3;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn pure_rotation_recoverable_by_rigid_fit() {
        let cfg = AugmentationConfig {
            jitter_std: 0.0,
            scale_range: (1.0, 1.0),
            seed: 99,
        };
        let input = cloud(30, 1);
        let (out, rotation, scale) = augment(&input, &cfg).unwrap();
        assert_eq!(scale, 1.0);
        let fit = kabsch_fit(input.points(), out.points()).unwrap();
        assert!((fit.rotation() - rotation.rotation()).abs().max() < 1e-9);
        assert!(fit.translation().norm() < 1e-9);
    }

    #[test]
    fn jitter_sample_mean_is_near_zero() {
        let n = 4000;
        let std = 0.005;
        let cfg = AugmentationConfig {
            jitter_std: std,
            scale_range: (1.0, 1.0),
            seed: 7,
        };
        let input = cloud(n, 2);
        let (out, rotation, _) = augment(&input, &cfg).unwrap();
        // Subtract the deterministic part to isolate the jitter draw.
        let mut sum = 0.0;
        for (p, q) in input.points().iter().zip(out.points()) {
            let clean = rotation.apply_point(p);
            let d = q - clean;
            sum += d.x + d.y + d.z;
        }
        let mean = sum / (3 * n) as f64;
        let bound = 3.0 * std / ((3 * n) as f64).sqrt();
        assert!(mean.abs() < bound, "jitter mean {mean} exceeds {bound}");
    }

    #[test]
    fn drawn_scales_stay_in_closed_interval() {
        let input = cloud(4, 3);
        for seed in 0..10_000u64 {
            let cfg = AugmentationConfig {
                jitter_std: 0.0,
                scale_range: (0.9, 1.1),
                seed,
            };
            let (_, _, scale) = augment(&input, &cfg).unwrap();
            assert!((0.9..=1.1).contains(&scale));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let input = cloud(25, 4);
        let cfg = AugmentationConfig::standard(123);
        let (a, ra, sa) = augment(&input, &cfg).unwrap();
        let (b, rb, sb) = augment(&input, &cfg).unwrap();
        assert_eq!(a.points(), b.points());
        assert_eq!(ra.rotation(), rb.rotation());
        assert_eq!(sa, sb);
    }
}
