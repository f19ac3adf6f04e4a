//! Multi-scale encoder: per layer, a kernel-point convolution over the
//! current cloud plus cross-attention over the paired cloud, summed into the
//! next layer's features.

mod attention;
mod kernel;
mod kpconv;
mod pyramid;

pub use attention::{AttentionBlock, AttentionTrace};
pub use kernel::{init_kernel_points, kernel_correlation, KernelPointSet, SHELL_FRACTION};
pub use kpconv::{kpconv_forward, ConvCoeffs};
pub use pyramid::{build_pyramid, CloudPyramid, LevelGeometry};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, ParamSet, Tape, ValueId};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

/// Encoder hyperparameters. `channels[ℓ]` is the feature width produced by
/// layer ℓ+1; the input width of layer 1 is 3 (raw coordinates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Number of scales L.
    pub scales: usize,
    /// Output channel widths per layer, nondecreasing.
    pub channels: Vec<usize>,
    /// Grid cell of the first subsampling; doubles per layer.
    pub base_cell: f64,
    /// Convolution radius as a multiple of the layer's grid cell.
    pub radius_factor: f64,
    /// Correlation width as a multiple of the layer's grid cell.
    pub sigma_factor: f64,
    /// Kernel points per convolution.
    pub kernel_points: usize,
    /// Attention heads per cross-attention block.
    pub heads: usize,
    /// Feed-forward width as a multiple of the layer's output width.
    pub ff_multiplier: usize,
    /// Per-layer switch for the cross-attention branch.
    pub transformer_layers: Vec<bool>,
    /// When set, both attention directions of a layer share one block
    /// (test and ablation configurations).
    #[serde(default)]
    pub shared_attention: bool,
    /// Weight initialization seed.
    pub seed: u64,
}

impl EncoderConfig {
    /// Full-size preset: five scales, channels 64..1024, 15 kernel points,
    /// 2.5 cm base cell.
    pub fn full(seed: u64) -> Self {
        Self {
            scales: 5,
            channels: vec![64, 128, 256, 512, 1024],
            base_cell: 0.025,
            radius_factor: 2.5,
            sigma_factor: 1.0,
            kernel_points: 15,
            heads: 4,
            ff_multiplier: 2,
            transformer_layers: vec![true; 5],
            shared_attention: false,
            seed,
        }
    }

    /// Desk-scale preset: same shape, narrower channels.
    pub fn desk(seed: u64) -> Self {
        Self {
            channels: vec![16, 32, 64, 128, 256],
            ..Self::full(seed)
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.scales == 0 {
            problems.push("encoder.scales must be >= 1".into());
        }
        if self.channels.len() != self.scales {
            problems.push(format!(
                "encoder.channels has {} entries for {} scales",
                self.channels.len(),
                self.scales
            ));
        }
        if self.channels.windows(2).any(|w| w[1] < w[0]) {
            problems.push(format!(
                "encoder.channels must be nondecreasing, got {:?}",
                self.channels
            ));
        }
        if !(self.base_cell > 0.0) {
            problems.push(format!("encoder.base_cell must be positive, got {}", self.base_cell));
        }
        if !(self.radius_factor > 0.0) {
            problems.push("encoder.radius_factor must be positive".into());
        }
        if !(self.sigma_factor > 0.0) {
            problems.push("encoder.sigma_factor must be positive".into());
        }
        if self.kernel_points < 2 {
            problems.push(format!(
                "encoder.kernel_points must be >= 2, got {}",
                self.kernel_points
            ));
        }
        if self.transformer_layers.len() != self.scales {
            problems.push(format!(
                "encoder.transformer_layers has {} entries for {} scales",
                self.transformer_layers.len(),
                self.scales
            ));
        }
        for (i, &c) in self.channels.iter().enumerate() {
            if self.heads == 0 || c % self.heads != 0 {
                problems.push(format!(
                    "encoder.channels[{i}] = {c} not divisible by {} heads",
                    self.heads
                ));
            }
        }
        if self.ff_multiplier == 0 {
            problems.push("encoder.ff_multiplier must be >= 1".into());
        }
        problems
    }

    /// Grid cell of layer ℓ (1-based): doubles per layer.
    pub fn cell(&self, layer: usize) -> f64 {
        self.base_cell * f64::powi(2.0, layer as i32 - 1)
    }

    /// Convolution radius of layer ℓ; strictly increasing with ℓ.
    pub fn radius(&self, layer: usize) -> f64 {
        self.radius_factor * self.cell(layer)
    }

    pub fn sigma(&self, layer: usize) -> f64 {
        self.sigma_factor * self.cell(layer)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub kernel: KernelPointSet,
    /// Source-attends-to-target block (queries from the first cloud).
    pub att_fwd: Option<AttentionBlock>,
    /// Target-attends-to-source block; equals `att_fwd` under shared weights.
    pub att_rev: Option<AttentionBlock>,
    pub d_in: usize,
    pub d_out: usize,
}

/// Per-cloud feature maps produced by the encoder, one per level (level ℓ's
/// map has one row per pyramid point at that level).
#[derive(Debug)]
pub struct PyramidFeatures {
    pub source: Vec<ValueId>,
    pub target: Vec<ValueId>,
}

#[derive(Debug)]
pub struct Encoder {
    cfg: EncoderConfig,
    layers: Vec<EncoderLayer>,
}

impl Encoder {
    /// Builds layer weights; parameter registration order is fixed by the
    /// configuration, so identical configs produce identical parameter sets.
    pub fn new(cfg: EncoderConfig, params: &mut ParamSet) -> Result<Self> {
        let problems = cfg.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut layers = Vec::with_capacity(cfg.scales);
        let mut d_in = 3;
        for layer in 1..=cfg.scales {
            let d_out = cfg.channels[layer - 1];
            let radius = cfg.radius(layer);
            let points = init_kernel_points(cfg.kernel_points, radius, cfg.seed ^ layer as u64)?;
            let weights = (0..cfg.kernel_points)
                .map(|s| {
                    params.add_xavier(format!("enc.l{layer}.conv.w{s:02}"), d_in, d_out, &mut rng)
                })
                .collect();
            let kernel = KernelPointSet {
                points,
                weights,
                sigma: cfg.sigma(layer),
                radius,
            };
            let (att_fwd, att_rev) = if cfg.transformer_layers[layer - 1] {
                let fwd = AttentionBlock::new(
                    &format!("enc.l{layer}.att_fwd"),
                    d_in,
                    d_out,
                    cfg.heads,
                    cfg.ff_multiplier * d_out,
                    params,
                    &mut rng,
                )?;
                let rev = if cfg.shared_attention {
                    fwd.clone()
                } else {
                    AttentionBlock::new(
                        &format!("enc.l{layer}.att_rev"),
                        d_in,
                        d_out,
                        cfg.heads,
                        cfg.ff_multiplier * d_out,
                        params,
                        &mut rng,
                    )?
                };
                (Some(fwd), Some(rev))
            } else {
                (None, None)
            };
            layers.push(EncoderLayer {
                kernel,
                att_fwd,
                att_rev,
                d_in,
                d_out,
            });
            d_in = d_out;
        }
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    /// Builds the point pyramid and convolution coefficients for one cloud.
    pub fn prepare_cloud(&self, cloud: &PointCloud) -> Result<CloudPyramid> {
        let layers = 1..=self.cfg.scales;
        let cells: Vec<f64> = layers.clone().map(|l| self.cfg.cell(l)).collect();
        let radii: Vec<f64> = layers.clone().map(|l| self.cfg.radius(l)).collect();
        let sigmas: Vec<f64> = layers.map(|l| self.cfg.sigma(l)).collect();
        let kernels: Vec<_> = self.layers.iter().map(|l| l.kernel.points.clone()).collect();
        build_pyramid(cloud, &cells, &radii, &sigmas, &kernels)
    }

    /// Runs all layers over a prepared pair. Initial features are the raw 3D
    /// coordinates; each layer adds its convolution and (when enabled)
    /// cross-attention branches. Returns the per-level feature maps of both
    /// clouds (index ℓ-1 holds the level-ℓ map of width `channels[ℓ-1]`).
    pub fn forward_pair(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        src: &CloudPyramid,
        tgt: &CloudPyramid,
    ) -> Result<PyramidFeatures> {
        let mut f_src = tape.constant(src.base.coords_array());
        let mut f_tgt = tape.constant(tgt.base.coords_array());
        let mut out_src = Vec::with_capacity(self.layers.len());
        let mut out_tgt = Vec::with_capacity(self.layers.len());

        for (idx, layer) in self.layers.iter().enumerate() {
            let src_level = &src.levels[idx];
            let tgt_level = &tgt.levels[idx];

            let psi_src = kpconv_forward(tape, params, f_src, &layer.kernel, &src_level.conv)?;
            let psi_tgt = kpconv_forward(tape, params, f_tgt, &layer.kernel, &tgt_level.conv)?;

            let (next_src, next_tgt) = match (&layer.att_fwd, &layer.att_rev) {
                (Some(fwd), Some(rev)) => {
                    let (phi_src_full, _) = fwd.forward(tape, params, f_src, f_tgt)?;
                    let (phi_tgt_full, _) = rev.forward(tape, params, f_tgt, f_src)?;
                    let phi_src = tape.gather_rows(phi_src_full, src_level.select.clone())?;
                    let phi_tgt = tape.gather_rows(phi_tgt_full, tgt_level.select.clone())?;
                    (tape.add(psi_src, phi_src)?, tape.add(psi_tgt, phi_tgt)?)
                }
                _ => (psi_src, psi_tgt),
            };

            out_src.push(next_src);
            out_tgt.push(next_tgt);
            f_src = next_src;
            f_tgt = next_tgt;
        }
        Ok(PyramidFeatures {
            source: out_src,
            target: out_tgt,
        })
    }
}

/// Point sets and dense feature maps of both clouds at every scale, extracted
/// from a finished forward pass.
#[derive(Debug, Clone)]
pub struct EncoderPyramid {
    pub source_points: Vec<Vec<nalgebra::Vector3<f64>>>,
    pub target_points: Vec<Vec<nalgebra::Vector3<f64>>>,
    pub source_features: Vec<Array>,
    pub target_features: Vec<Array>,
}

impl Encoder {
    /// One-call encoding of a cloud pair: builds both pyramids, runs the
    /// layers, and returns plain arrays.
    pub fn encode_pyramid(
        &self,
        params: &ParamSet,
        source: &PointCloud,
        target: &PointCloud,
    ) -> Result<EncoderPyramid> {
        let src = self.prepare_cloud(source)?;
        let tgt = self.prepare_cloud(target)?;
        let mut tape = Tape::new();
        let feats = self.forward_pair(&mut tape, params, &src, &tgt)?;
        Ok(EncoderPyramid {
            source_points: (1..=self.cfg.scales)
                .map(|l| src.points_at(l).to_vec())
                .collect(),
            target_points: (1..=self.cfg.scales)
                .map(|l| tgt.points_at(l).to_vec())
                .collect(),
            source_features: feats.source.iter().map(|&v| tape.value(v).clone()).collect(),
            target_features: feats.target.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }
}
