//! Upsampling of sparse scale features to the original cloud, dimension
//! unification, and the learning-free dynamic fusion of the per-point scale
//! stack.

mod dynfuse;
mod upsample;

pub use dynfuse::{dynamic_fuse, fuse_stack_tape};
pub use upsample::{upsample_scale, upsample_tape, IdwWeights, COINCIDENT_EPS};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, ParamId, ParamSet, Tape, ValueId};
use crate::error::{Error, Result};

/// How the per-scale features are combined into the final descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Iterative consistency-weighted fusion.
    Dynamic,
    /// Plain addition of the scale features (ablation baseline).
    Add,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Iteration count T of the fusion loop.
    pub iterations: usize,
    /// Inverse-distance weighting exponent p.
    pub idw_exponent: f64,
    /// Neighbor count K of the upsampling interpolation.
    pub idw_neighbors: usize,
    /// Canonical descriptor width v.
    pub width: usize,
    /// Unit-normalize every scale feature before fusing (ablation only; the
    /// fusion similarity is defined on raw features).
    #[serde(default)]
    pub pre_normalize: bool,
    pub mode: FusionMode,
}

impl FusionConfig {
    /// T = 5 iterations, K = 24 neighbors, p = 2, 32-wide descriptors.
    pub fn standard() -> Self {
        Self {
            iterations: 5,
            idw_exponent: 2.0,
            idw_neighbors: 24,
            width: 32,
            pre_normalize: false,
            mode: FusionMode::Dynamic,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.iterations == 0 {
            problems.push("fusion.iterations must be >= 1".into());
        }
        if !(self.idw_exponent > 0.0) {
            problems.push(format!(
                "fusion.idw_exponent must be positive, got {}",
                self.idw_exponent
            ));
        }
        if self.idw_neighbors == 0 {
            problems.push("fusion.idw_neighbors must be >= 1".into());
        }
        if self.width == 0 {
            problems.push("fusion.width must be >= 1".into());
        }
        problems
    }
}

/// L dense dimension-unified feature maps aligned to one cloud's points.
#[derive(Debug, Clone)]
pub struct ScaleFeatureStack {
    maps: Vec<Array>,
}

impl ScaleFeatureStack {
    pub fn new(maps: Vec<Array>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidInput("a scale stack needs at least one map".into()));
        }
        let shape = maps[0].shape();
        for (i, m) in maps.iter().enumerate() {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    op: "scale_feature_stack",
                    lhs: shape,
                    rhs: m.shape(),
                });
            }
            let _ = i;
        }
        Ok(Self { maps })
    }

    pub fn maps(&self) -> &[Array] {
        &self.maps
    }

    pub fn scales(&self) -> usize {
        self.maps.len()
    }

    pub fn points(&self) -> usize {
        self.maps[0].rows()
    }

    pub fn width(&self) -> usize {
        self.maps[0].cols()
    }
}

/// Final per-point descriptors plus the fusion coefficients that produced
/// them (kept for diagnostics).
#[derive(Debug, Clone)]
pub struct DescriptorSet {
    pub descriptors: Array,
    pub coefficients: Array,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.descriptors.cols()
    }
}

/// Fuses a whole stack point by point (pure, no tape).
pub fn fuse_stack(stack: &ScaleFeatureStack, cfg: &FusionConfig) -> Result<DescriptorSet> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let n = stack.points();
    let l = stack.scales();
    let v = stack.width();
    let mut descriptors = Array::zeros(n, v);
    let mut coefficients = Array::zeros(n, l);
    for i in 0..n {
        let mut feats: Vec<Vec<f64>> = stack.maps.iter().map(|m| m.row(i).to_vec()).collect();
        if cfg.pre_normalize {
            for f in &mut feats {
                let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm >= 1e-12 {
                    for x in f.iter_mut() {
                        *x /= norm;
                    }
                }
            }
        }
        match cfg.mode {
            FusionMode::Dynamic => {
                let (fused, coeffs) = dynamic_fuse(&feats, cfg.iterations);
                descriptors.row_mut(i).copy_from_slice(&fused);
                coefficients.row_mut(i).copy_from_slice(&coeffs);
            }
            FusionMode::Add => {
                let row = descriptors.row_mut(i);
                for f in &feats {
                    for (o, &x) in row.iter_mut().zip(f) {
                        *o += x;
                    }
                }
                coefficients.row_mut(i).fill(1.0 / l as f64);
            }
        }
    }
    Ok(DescriptorSet {
        descriptors,
        coefficients,
    })
}

/// Tape version of [`fuse_stack`] used during training. Returns the fused
/// descriptor map and the final coefficients.
pub fn fuse_maps_tape(
    tape: &mut Tape,
    maps: &[ValueId],
    cfg: &FusionConfig,
) -> Result<(ValueId, ValueId)> {
    let maps: Vec<ValueId> = if cfg.pre_normalize {
        maps.iter()
            .map(|&m| tape.l2_normalize_rows(m))
            .collect::<Result<_>>()?
    } else {
        maps.to_vec()
    };
    match cfg.mode {
        FusionMode::Dynamic => fuse_stack_tape(tape, &maps, cfg.iterations),
        FusionMode::Add => {
            let mut acc = maps[0];
            for &m in &maps[1..] {
                acc = tape.add(acc, m)?;
            }
            let n = tape.value(acc).rows();
            let l = maps.len();
            let coeffs = tape.constant(Array::from_fn(n, l, |_, _| 1.0 / l as f64));
            Ok((acc, coeffs))
        }
    }
}

/// Two-layer per-row MLP lifting a dense scale map from its layer width to
/// the canonical width v.
#[derive(Debug, Clone)]
pub struct UnifyMlp {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl UnifyMlp {
    pub fn new(
        prefix: &str,
        d_in: usize,
        width: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            w1: params.add_xavier(format!("{prefix}.w1"), d_in, width, rng),
            b1: params.add_zeros(format!("{prefix}.b1"), 1, width),
            w2: params.add_xavier(format!("{prefix}.w2"), width, width, rng),
            b2: params.add_zeros(format!("{prefix}.b2"), 1, width),
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamSet, x: ValueId) -> Result<ValueId> {
        let w1 = tape.param(params, self.w1);
        let b1 = tape.param(params, self.b1);
        let w2 = tape.param(params, self.w2);
        let b2 = tape.param(params, self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_bias_row(h, b1)?;
        let h = tape.relu(h)?;
        let out = tape.matmul(h, w2)?;
        tape.add_bias_row(out, b2)
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}
