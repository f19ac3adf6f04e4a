//! Synthetic desk-scale cloud pairs with exact ground-truth bookkeeping.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_unit_vector, PointCloud, RigidTransform};

/// Base surface the pair is sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeFamily {
    /// Rectangle with a few smooth bumps.
    Plane,
    Sphere,
    /// Rectangular box with unequal sides.
    Box,
    /// Ground plane with a grid of repeated identical boxes plus one larger
    /// anchor box that breaks the global symmetry.
    Composite,
}

/// Axis distribution of the random rigid motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisMode {
    /// Rotations about +z only.
    Z,
    /// Uniformly random axis.
    Any,
}

/// How the target is perturbed relative to the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PerturbationMode {
    Rigid {
        axis: AxisMode,
        /// Rotation angle drawn uniformly in ±max_angle_deg.
        max_angle_deg: f64,
        /// Translation drawn per axis uniformly in ±max_translation.
        max_translation: f64,
    },
    /// Smooth low-frequency displacement field, no rigid motion.
    NonRigid {
        /// Peak displacement scale (meters).
        amplitude: f64,
        /// Spatial frequency of the field (radians per meter).
        frequency: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticPairSpec {
    pub family: ShapeFamily,
    pub points: usize,
    /// Fraction of the target removed by a half-space crop, in [0, 1).
    pub crop_fraction: f64,
    /// Gaussian noise added to the target (meters).
    pub noise_std: f64,
    /// Overall extent of the shape (meters).
    pub extent: f64,
    pub perturbation: PerturbationMode,
}

impl SyntheticPairSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.points < 100 {
            problems.push(format!("pair.points must be >= 100, got {}", self.points));
        }
        if !(0.0..1.0).contains(&self.crop_fraction) {
            problems.push(format!(
                "pair.crop_fraction must be in [0, 1), got {}",
                self.crop_fraction
            ));
        }
        if !(self.noise_std >= 0.0) {
            problems.push(format!("pair.noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.extent > 0.0) {
            problems.push(format!("pair.extent must be positive, got {}", self.extent));
        }
        problems
    }
}

/// Ground truth of a generated pair.
#[derive(Debug, Clone)]
pub enum PairGroundTruth {
    Rigid(RigidTransform),
    /// True target-space position of every source point (dense flow).
    NonRigid { target_positions: Vec<Vector3<f64>> },
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub source: PointCloud,
    pub target: PointCloud,
    pub gt: PairGroundTruth,
    /// Source indices surviving the crop, ascending; target row k came from
    /// source row kept[k].
    pub kept: Vec<u32>,
}

impl SyntheticPair {
    pub fn gt_transform(&self) -> Option<&RigidTransform> {
        match &self.gt {
            PairGroundTruth::Rigid(t) => Some(t),
            PairGroundTruth::NonRigid { .. } => None,
        }
    }
}

/// Uniform surface sample of the given family, centered on its centroid.
pub fn sample_shape(
    family: ShapeFamily,
    points: usize,
    extent: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Vector3<f64>> {
    let mut pts = match family {
        ShapeFamily::Plane => sample_bumpy_plane(points, extent, rng),
        ShapeFamily::Sphere => (0..points)
            .map(|_| random_unit_vector(rng) * (extent / 2.0))
            .collect(),
        ShapeFamily::Box => {
            let sides = Vector3::new(
                rng.gen_range(0.4..1.0) * extent,
                rng.gen_range(0.4..1.0) * extent,
                rng.gen_range(0.4..1.0) * extent,
            );
            sample_box(points, &sides, rng)
                .into_iter()
                .map(|p| p - sides / 2.0)
                .collect()
        }
        ShapeFamily::Composite => sample_composite(points, extent, rng),
    };
    let centroid: Vector3<f64> = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    for p in &mut pts {
        *p -= centroid;
    }
    pts
}

fn sample_bumpy_plane(points: usize, extent: f64, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let bump_count = rng.gen_range(3..7);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..bump_count)
        .map(|_| {
            (
                rng.gen_range(-0.4..0.4) * extent,
                rng.gen_range(-0.4..0.4) * extent,
                rng.gen_range(0.05..0.15) * extent,
                rng.gen_range(0.08..0.2) * extent,
            )
        })
        .collect();
    (0..points)
        .map(|_| {
            let x = rng.gen_range(-0.5..0.5) * extent;
            let y = rng.gen_range(-0.5..0.5) * extent;
            let mut z = 0.0;
            for &(cx, cy, h, w) in &bumps {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                z += h * (-d2 / (2.0 * w * w)).exp();
            }
            Vector3::new(x, y, z)
        })
        .collect()
}

/// Area-weighted uniform sample over the six faces of a box with one corner
/// at the origin.
fn sample_box(points: usize, sides: &Vector3<f64>, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let (a, b, c) = (sides.x, sides.y, sides.z);
    let areas = [a * b, a * b, b * c, b * c, a * c, a * c];
    let total: f64 = areas.iter().sum();
    (0..points)
        .map(|_| {
            let mut pick = rng.gen::<f64>() * total;
            let mut face = 0;
            for (f, &area) in areas.iter().enumerate() {
                if pick < area {
                    face = f;
                    break;
                }
                pick -= area;
                face = f;
            }
            let u = rng.gen::<f64>();
            let v = rng.gen::<f64>();
            match face {
                0 => Vector3::new(u * a, v * b, 0.0),
                1 => Vector3::new(u * a, v * b, c),
                2 => Vector3::new(0.0, u * b, v * c),
                3 => Vector3::new(a, u * b, v * c),
                4 => Vector3::new(u * a, 0.0, v * c),
                _ => Vector3::new(u * a, b, v * c),
            }
        })
        .collect()
}

fn sample_composite(points: usize, extent: f64, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut pts = Vec::with_capacity(points);
    let ground = (points as f64 * 0.4) as usize;
    let anchor = (points as f64 * 0.15) as usize;
    let grid = points - ground - anchor;

    for _ in 0..ground {
        pts.push(Vector3::new(
            rng.gen_range(-0.5..0.5) * extent,
            rng.gen_range(-0.5..0.5) * extent,
            0.0,
        ));
    }

    // Repeated identical boxes on a grid.
    let rows = rng.gen_range(2..4usize);
    let cols = rng.gen_range(2..4usize);
    let cell = extent / (cols.max(rows) as f64 + 1.0);
    let box_side = 0.35 * cell;
    let box_h = rng.gen_range(0.1..0.2) * extent;
    let sides = Vector3::new(box_side, box_side, box_h);
    let per_box = grid / (rows * cols).max(1);
    let mut placed = 0;
    for r in 0..rows {
        for c in 0..cols {
            let count = if r == rows - 1 && c == cols - 1 {
                grid - placed
            } else {
                per_box
            };
            placed += count;
            let origin = Vector3::new(
                (c as f64 - (cols as f64 - 1.0) / 2.0) * cell - box_side / 2.0,
                (r as f64 - (rows as f64 - 1.0) / 2.0) * cell - box_side / 2.0,
                0.0,
            );
            for p in sample_box(count, &sides, rng) {
                pts.push(origin + p);
            }
        }
    }

    // One larger box at a fixed grid-relative corner anchors the layout.
    let anchor_sides = Vector3::new(0.18 * extent, 0.12 * extent, rng.gen_range(0.2..0.3) * extent);
    let corner = Vector3::new(0.5 * extent - anchor_sides.x, 0.5 * extent - anchor_sides.y, 0.0);
    for p in sample_box(anchor, &anchor_sides, rng) {
        pts.push(corner + p);
    }
    pts
}

fn smooth_field(
    amplitude: f64,
    frequency: f64,
    rng: &mut ChaCha8Rng,
) -> impl Fn(&Vector3<f64>) -> Vector3<f64> {
    // Two sinusoidal modes per output axis.
    let mut modes = Vec::new();
    for _ in 0..3 {
        let mut axis_modes = Vec::new();
        for _ in 0..2 {
            let dir = random_unit_vector(rng) * frequency;
            let phase = rng.gen::<f64>() * std::f64::consts::TAU;
            let gain = rng.gen_range(0.25..0.5) * amplitude;
            axis_modes.push((dir, phase, gain));
        }
        modes.push(axis_modes);
    }
    move |p: &Vector3<f64>| {
        let mut d = Vector3::zeros();
        for (axis, axis_modes) in modes.iter().enumerate() {
            for (dir, phase, gain) in axis_modes {
                d[axis] += gain * (dir.dot(p) + phase).sin();
            }
        }
        d
    }
}

/// Generates a (source, target) pair: the source sampled from the shape, the
/// target a cropped, perturbed, noised copy with exact per-point bookkeeping.
/// Both clouds are recentered on their own centroids (the ground-truth
/// transform absorbs the shift). Deterministic given the seed.
pub fn generate_pair(spec: &SyntheticPairSpec, seed: u64) -> Result<SyntheticPair> {
    let problems = spec.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_pts = sample_shape(spec.family, spec.points, spec.extent, &mut rng);

    // Full-resolution true target positions.
    let (full_target, rigid): (Vec<Vector3<f64>>, Option<RigidTransform>) =
        match &spec.perturbation {
            PerturbationMode::Rigid {
                axis,
                max_angle_deg,
                max_translation,
            } => {
                let axis_v = match axis {
                    AxisMode::Z => Vector3::z(),
                    AxisMode::Any => random_unit_vector(&mut rng),
                };
                let angle = rng.gen_range(-1.0..=1.0) * max_angle_deg.to_radians();
                let translation = Vector3::new(
                    rng.gen_range(-1.0..=1.0) * max_translation,
                    rng.gen_range(-1.0..=1.0) * max_translation,
                    rng.gen_range(-1.0..=1.0) * max_translation,
                );
                let rot = RigidTransform::from_axis_angle(&axis_v, angle)?;
                let t = RigidTransform::new(*rot.rotation(), translation)?;
                (source_pts.iter().map(|p| t.apply_point(p)).collect(), Some(t))
            }
            PerturbationMode::NonRigid { amplitude, frequency } => {
                let field = smooth_field(*amplitude, *frequency, &mut rng);
                (source_pts.iter().map(|p| p + field(p)).collect(), None)
            }
        };

    // Half-space crop: drop the `crop_fraction` of points with the largest
    // projection onto a random direction; ties broken by index.
    let n = spec.points;
    let keep = n - (spec.crop_fraction * n as f64).floor() as usize;
    let kept: Vec<u32> = if keep == n {
        (0..n as u32).collect()
    } else {
        let dir = random_unit_vector(&mut rng);
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| {
            let pa = dir.dot(&full_target[a as usize]);
            let pb = dir.dot(&full_target[b as usize]);
            pa.total_cmp(&pb).then(a.cmp(&b))
        });
        let mut kept: Vec<u32> = order[..keep].to_vec();
        kept.sort_unstable();
        kept
    };

    // Noise on the surviving target points.
    let mut target_pts: Vec<Vector3<f64>> =
        kept.iter().map(|&i| full_target[i as usize]).collect();
    if spec.noise_std > 0.0 {
        let normal = Normal::new(0.0, spec.noise_std).expect("validated std");
        for p in &mut target_pts {
            p.x += normal.sample(&mut rng);
            p.y += normal.sample(&mut rng);
            p.z += normal.sample(&mut rng);
        }
    }

    // Recenter the target; fold the shift into the ground truth.
    let centroid: Vector3<f64> =
        target_pts.iter().sum::<Vector3<f64>>() / target_pts.len().max(1) as f64;
    for p in &mut target_pts {
        *p -= centroid;
    }
    let gt = match rigid {
        Some(t) => PairGroundTruth::Rigid(RigidTransform::new(
            *t.rotation(),
            t.translation() - centroid,
        )?),
        None => PairGroundTruth::NonRigid {
            target_positions: full_target.iter().map(|p| p - centroid).collect(),
        },
    };

    Ok(SyntheticPair {
        source: PointCloud::new(source_pts)?,
        target: PointCloud::new(target_pts)?,
        gt,
        kept,
    })
}
