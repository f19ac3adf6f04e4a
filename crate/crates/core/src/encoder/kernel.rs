//! Kernel point geometry and the hat correlation function.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::geometry::random_unit_vector;

/// Fraction of the convolution radius at which the shell points sit.
pub const SHELL_FRACTION: f64 = 0.66;

/// Linear hat correlation between an offset and a kernel point:
/// 1 at the kernel point, decaying linearly to 0 at distance `sigma`.
#[inline]
pub fn kernel_correlation(offset: &Vector3<f64>, kernel_point: &Vector3<f64>, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    (1.0 - (offset - kernel_point).norm() / sigma).max(0.0)
}

/// One kernel point at the origin plus `count - 1` points on a shell at
/// `SHELL_FRACTION * radius`, spread by repulsive-energy relaxation
/// (pairwise inverse-square forces, fixed number of seeded descent steps on
/// the shell). Deterministic given the seed.
pub fn init_kernel_points(count: usize, radius: f64, seed: u64) -> Result<Vec<Vector3<f64>>> {
    if count < 2 {
        return Err(Error::InvalidInput(format!(
            "kernel needs at least 2 points, got {count}"
        )));
    }
    if !(radius > 0.0) {
        return Err(Error::InvalidInput(format!(
            "kernel radius must be positive, got {radius}"
        )));
    }
    let shell = count - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<Vector3<f64>> = (0..shell).map(|_| random_unit_vector(&mut rng)).collect();

    if shell > 1 {
        let step = 0.05;
        for _ in 0..1000 {
            let mut forces = vec![Vector3::zeros(); shell];
            for i in 0..shell {
                for j in 0..shell {
                    if i == j {
                        continue;
                    }
                    let d = dirs[i] - dirs[j];
                    let n = d.norm().max(1e-9);
                    forces[i] += d / (n * n * n);
                }
            }
            for (dir, f) in dirs.iter_mut().zip(&forces) {
                // Tangential component only; the radial part is absorbed by
                // the shell constraint.
                let tangential = f - dir.dot(f) * *dir;
                let mut delta = tangential * step;
                let m = delta.norm();
                if m > 0.1 {
                    delta *= 0.1 / m;
                }
                *dir += delta;
                *dir /= dir.norm();
            }
        }
    }

    let shell_radius = SHELL_FRACTION * radius;
    let mut points = Vec::with_capacity(count);
    points.push(Vector3::zeros());
    points.extend(dirs.into_iter().map(|d| d * shell_radius));
    Ok(points)
}

/// Kernel geometry plus the per-kernel weight matrices of one encoder layer.
#[derive(Debug, Clone)]
pub struct KernelPointSet {
    pub points: Vec<Vector3<f64>>,
    pub weights: Vec<ParamId>,
    pub sigma: f64,
    pub radius: f64,
}
