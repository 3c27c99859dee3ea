//! Two-frame spatiotemporal ViT encoder.
//!
//! A video-pretrained 3D ViT is adapted to image pairs by three pieces of
//! surgery: the spatial positional table is bilinearly resized to the target
//! grid, the temporal positional table is split into two halves whose means
//! become per-frame embeddings, and the 3D patch-embedding kernel is summed
//! over its temporal extent. Both frames' tokens then attend jointly in
//! every block.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{CheckpointError, TensorError};
use crate::tensor::{Element, Tensor};

/// Architecture hyperparameters of the two-frame encoder.
#[derive(Clone, Debug)]
pub struct ViTConfig {
    pub image_h: usize,
    pub image_w: usize,
    /// Spatial patch size in pixels.
    pub patch: usize,
    /// Frame count of the pretrained video model.
    pub pretrain_frames: usize,
    /// Frames per 3D patch in the pretrained model.
    pub temporal_patch: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub layernorm_eps: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        ViTConfig {
            image_h: 224,
            image_w: 224,
            patch: 16,
            pretrain_frames: 8,
            temporal_patch: 2,
            embed_dim: 1024,
            depth: 24,
            num_heads: 16,
            mlp_ratio: 4.0,
            layernorm_eps: 1e-6,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<(), CheckpointError> {
        if self.patch == 0 || self.image_h % self.patch != 0 || self.image_w % self.patch != 0 {
            return Err(CheckpointError::Config(format!(
                "image {}x{} not divisible by patch {}",
                self.image_h, self.image_w, self.patch
            )));
        }
        if self.temporal_patch == 0
            || self.pretrain_frames % self.temporal_patch != 0
            || (self.pretrain_frames / self.temporal_patch) % 2 != 0
        {
            return Err(CheckpointError::Config(format!(
                "pretrain_frames {} / temporal_patch {} must be an even integer",
                self.pretrain_frames, self.temporal_patch
            )));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(CheckpointError::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }

    /// Token grid `(Hp, Wp)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.image_h / self.patch, self.image_w / self.patch)
    }

    /// Tokens per frame.
    pub fn tokens(&self) -> usize {
        let (hp, wp) = self.grid();
        hp * wp
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Temporal rows of the pretrained positional table.
    pub fn pretrain_temporal_rows(&self) -> usize {
        self.pretrain_frames / self.temporal_patch
    }
}

/// Per-channel normalization applied to raw `[0,1]` images before encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageNorm {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for ImageNorm {
    fn default() -> Self {
        ImageNorm {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

/// `(img - mean) / std` per channel.
pub fn normalize_image<T: Element>(
    img: &Tensor<T>,
    norm: &ImageNorm,
) -> Result<Tensor<T>, TensorError> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(TensorError::Shape {
            op: "normalize_image",
            lhs: vec![3],
            rhs: img.shape().to_vec(),
        });
    }
    let mean = Tensor::from_vec(norm.mean.iter().map(|&v| T::from_f64(v)).collect(), &[3, 1, 1])?;
    let inv_std = Tensor::from_vec(
        norm.std.iter().map(|&v| T::from_f64(1.0 / v)).collect(),
        &[3, 1, 1],
    )?;
    img.sub(&mean)?.mul(&inv_std)
}

/// One transformer block's parameters (pre-norm attention + MLP).
/// Linear weights use `[out, in]` layout; `y = x @ W^T + b`.
#[derive(Clone, Debug)]
pub struct BlockWeights<T: Element> {
    pub norm1_w: Tensor<T>,
    pub norm1_b: Tensor<T>,
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub norm2_w: Tensor<T>,
    pub norm2_b: Tensor<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

/// The adapted two-frame encoder parameter set.
#[derive(Clone, Debug)]
pub struct ViTWeights<T: Element> {
    /// 2D patch-embedding kernel `[D, 3, p, p]` and bias `[D]`.
    pub patch_w: Tensor<T>,
    pub patch_b: Tensor<T>,
    /// Spatial positional table `[Hp*Wp, D]`.
    pub pos_spatial: Tensor<T>,
    /// Per-frame temporal embeddings `[D]`.
    pub pos_t_src: Tensor<T>,
    pub pos_t_tgt: Tensor<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub norm_w: Tensor<T>,
    pub norm_b: Tensor<T>,
}

impl<T: Element> ViTWeights<T> {
    /// Standard random initialization: truncated normal (std 0.02) for
    /// embeddings and linear kernels, identity layernorm, zero biases.
    pub fn random_init<R: Rng>(cfg: &ViTConfig, rng: &mut R) -> Result<Self, CheckpointError> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let p = cfg.patch;
        let hm = cfg.mlp_hidden();
        let tn = |shape: &[usize], rng: &mut R| Tensor::trunc_normal(shape, 0.02, rng);
        let blocks = (0..cfg.depth)
            .map(|_| BlockWeights {
                norm1_w: Tensor::ones(&[d]),
                norm1_b: Tensor::zeros(&[d]),
                qkv_w: tn(&[3 * d, d], rng),
                qkv_b: Tensor::zeros(&[3 * d]),
                proj_w: tn(&[d, d], rng),
                proj_b: Tensor::zeros(&[d]),
                norm2_w: Tensor::ones(&[d]),
                norm2_b: Tensor::zeros(&[d]),
                fc1_w: tn(&[hm, d], rng),
                fc1_b: Tensor::zeros(&[hm]),
                fc2_w: tn(&[d, hm], rng),
                fc2_b: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(ViTWeights {
            patch_w: tn(&[d, 3, p, p], rng),
            patch_b: Tensor::zeros(&[d]),
            pos_spatial: tn(&[cfg.tokens(), d], rng),
            pos_t_src: tn(&[d], rng),
            pos_t_tgt: tn(&[d], rng),
            blocks,
            norm_w: Tensor::ones(&[d]),
            norm_b: Tensor::zeros(&[d]),
        })
    }

    pub fn validate(&self, cfg: &ViTConfig) -> Result<(), CheckpointError> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let p = cfg.patch;
        let checks: Vec<(&str, &Tensor<T>, Vec<usize>)> = vec![
            ("patch_embed.weight", &self.patch_w, vec![d, 3, p, p]),
            ("patch_embed.bias", &self.patch_b, vec![d]),
            ("pos_embed.spatial", &self.pos_spatial, vec![cfg.tokens(), d]),
            ("pos_embed.temporal_src", &self.pos_t_src, vec![d]),
            ("pos_embed.temporal_tgt", &self.pos_t_tgt, vec![d]),
            ("norm.weight", &self.norm_w, vec![d]),
            ("norm.bias", &self.norm_b, vec![d]),
        ];
        for (path, t, expected) in checks {
            if t.shape() != expected.as_slice() {
                return Err(CheckpointError::UnexpectedShape {
                    path: path.into(),
                    expected,
                    got: t.shape().to_vec(),
                });
            }
        }
        if self.blocks.len() != cfg.depth {
            return Err(CheckpointError::Config(format!(
                "expected {} blocks, found {}",
                cfg.depth,
                self.blocks.len()
            )));
        }
        Ok(())
    }

    /// Canonical `(path, tensor)` listing, in a stable order.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![
            ("patch_embed.weight".to_string(), self.patch_w.clone()),
            ("patch_embed.bias".to_string(), self.patch_b.clone()),
            ("pos_embed.spatial".to_string(), self.pos_spatial.clone()),
            ("pos_embed.temporal_src".to_string(), self.pos_t_src.clone()),
            ("pos_embed.temporal_tgt".to_string(), self.pos_t_tgt.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            for (name, t) in [
                ("norm1.weight", &b.norm1_w),
                ("norm1.bias", &b.norm1_b),
                ("attn.qkv.weight", &b.qkv_w),
                ("attn.qkv.bias", &b.qkv_b),
                ("attn.proj.weight", &b.proj_w),
                ("attn.proj.bias", &b.proj_b),
                ("norm2.weight", &b.norm2_w),
                ("norm2.bias", &b.norm2_b),
                ("mlp.fc1.weight", &b.fc1_w),
                ("mlp.fc1.bias", &b.fc1_b),
                ("mlp.fc2.weight", &b.fc2_w),
                ("mlp.fc2.bias", &b.fc2_b),
            ] {
                out.push((format!("blocks.{i}.{name}"), t.clone()));
            }
        }
        out.push(("norm.weight".to_string(), self.norm_w.clone()));
        out.push(("norm.bias".to_string(), self.norm_b.clone()));
        out
    }

    /// Mutable slots in the same order as [`Self::named_params`].
    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![
            ("patch_embed.weight".to_string(), &mut self.patch_w),
            ("patch_embed.bias".to_string(), &mut self.patch_b),
            ("pos_embed.spatial".to_string(), &mut self.pos_spatial),
            ("pos_embed.temporal_src".to_string(), &mut self.pos_t_src),
            ("pos_embed.temporal_tgt".to_string(), &mut self.pos_t_tgt),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (name, t) in [
                ("norm1.weight", &mut b.norm1_w),
                ("norm1.bias", &mut b.norm1_b),
                ("attn.qkv.weight", &mut b.qkv_w),
                ("attn.qkv.bias", &mut b.qkv_b),
                ("attn.proj.weight", &mut b.proj_w),
                ("attn.proj.bias", &mut b.proj_b),
                ("norm2.weight", &mut b.norm2_w),
                ("norm2.bias", &mut b.norm2_b),
                ("mlp.fc1.weight", &mut b.fc1_w),
                ("mlp.fc1.bias", &mut b.fc1_b),
                ("mlp.fc2.weight", &mut b.fc2_w),
                ("mlp.fc2.bias", &mut b.fc2_b),
            ] {
                out.push((format!("blocks.{i}.{name}"), t));
            }
        }
        out.push(("norm.weight".to_string(), &mut self.norm_w));
        out.push(("norm.bias".to_string(), &mut self.norm_b));
        out
    }
}

/// A pretrained video checkpoint: a named parameter map plus metadata.
#[derive(Clone, Debug, Default)]
pub struct PretrainedCheckpoint {
    pub params: BTreeMap<String, Tensor<f32>>,
    pub norm: ImageNorm,
    pub meta: BTreeMap<String, String>,
}

impl PretrainedCheckpoint {
    pub fn get(&self, path: &str) -> Result<&Tensor<f32>, CheckpointError> {
        self.params
            .get(path)
            .ok_or_else(|| CheckpointError::MissingParam(path.to_string()))
    }

    fn get_shaped(&self, path: &str, expected: &[usize]) -> Result<&Tensor<f32>, CheckpointError> {
        let t = self.get(path)?;
        if t.shape() != expected {
            return Err(CheckpointError::UnexpectedShape {
                path: path.to_string(),
                expected: expected.to_vec(),
                got: t.shape().to_vec(),
            });
        }
        Ok(t)
    }
}

/// Bilinearly resizes a spatial positional table from `src_grid` to
/// `dst_grid`, channel by channel. Rows are row-major over the grid.
pub fn adapt_spatial_pos<T: Element>(
    pos: &Tensor<T>,
    src_grid: (usize, usize),
    dst_grid: (usize, usize),
) -> Result<Tensor<T>, TensorError> {
    let (hp, wp) = src_grid;
    let (hd, wd) = dst_grid;
    if pos.rank() != 2 || pos.shape()[0] != hp * wp {
        return Err(TensorError::Shape {
            op: "adapt_spatial_pos",
            lhs: vec![hp * wp],
            rhs: pos.shape().to_vec(),
        });
    }
    let d = pos.shape()[1];
    pos.reshape(&[hp, wp, d])?
        .permute(&[2, 0, 1])?
        .bilinear_resize(hd, wd)?
        .permute(&[1, 2, 0])?
        .reshape(&[hd * wd, d])
}

/// Splits a temporal positional table into halves and averages each half:
/// the first half becomes the source-frame embedding, the second the target.
pub fn adapt_temporal_pos<T: Element>(
    pos_t: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    if pos_t.rank() != 2 || pos_t.shape()[0] % 2 != 0 {
        return Err(TensorError::Shape {
            op: "adapt_temporal_pos",
            lhs: vec![2],
            rhs: pos_t.shape().to_vec(),
        });
    }
    let half = pos_t.shape()[0] / 2;
    let d = pos_t.shape()[1];
    let src = pos_t.narrow(0, 0, half)?.mean_axis(0, false)?.reshape(&[d])?;
    let tgt = pos_t
        .narrow(0, half, half)?
        .mean_axis(0, false)?
        .reshape(&[d])?;
    Ok((src, tgt))
}

/// Collapses a 3D patch-embedding kernel `[D, 3, t, p, p]` to 2D by summing
/// over the temporal extent.
pub fn adapt_patch_embed<T: Element>(kernel_3d: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if kernel_3d.rank() != 5 {
        return Err(TensorError::Rank(format!(
            "adapt_patch_embed expects [D,3,t,p,p], got {:?}",
            kernel_3d.shape()
        )));
    }
    kernel_3d.sum_axis(2, false)
}

/// Applies the full adaptation surgery to a pretrained checkpoint, producing
/// encoder weights at the geometry required by `cfg`. Block parameters are
/// copied verbatim.
pub fn adapt_checkpoint(
    ckpt: &PretrainedCheckpoint,
    cfg: &ViTConfig,
) -> Result<ViTWeights<f32>, CheckpointError> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let p = cfg.patch;
    let t = cfg.temporal_patch;
    let hm = cfg.mlp_hidden();
    let n_t = cfg.pretrain_temporal_rows();

    let kernel_3d = ckpt.get_shaped("patch_embed.weight", &[d, 3, t, p, p])?;
    let patch_w = adapt_patch_embed(kernel_3d)?;
    let patch_b = ckpt.get_shaped("patch_embed.bias", &[d])?.clone();

    let pos_pre = ckpt.get("pos_embed.spatial")?;
    if pos_pre.rank() != 2 || pos_pre.shape()[1] != d {
        return Err(CheckpointError::UnexpectedShape {
            path: "pos_embed.spatial".into(),
            expected: vec![0, d],
            got: pos_pre.shape().to_vec(),
        });
    }
    let src_grid = match (
        ckpt.meta.get("src_grid_h").and_then(|v| v.parse().ok()),
        ckpt.meta.get("src_grid_w").and_then(|v| v.parse().ok()),
    ) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            let rows = pos_pre.shape()[0];
            let side = (rows as f64).sqrt().round() as usize;
            if side * side != rows {
                return Err(CheckpointError::Config(format!(
                    "cannot infer pretrain grid from {rows} spatial rows; \
                     provide src_grid_h/src_grid_w metadata"
                )));
            }
            (side, side)
        }
    };
    if src_grid.0 * src_grid.1 != pos_pre.shape()[0] {
        return Err(CheckpointError::Config(format!(
            "pretrain grid {src_grid:?} does not match {} spatial rows",
            pos_pre.shape()[0]
        )));
    }
    let pos_spatial = adapt_spatial_pos(pos_pre, src_grid, cfg.grid())?;

    let pos_t = ckpt.get_shaped("pos_embed.temporal", &[n_t, d])?;
    let (pos_t_src, pos_t_tgt) = adapt_temporal_pos(pos_t)?;

    let mut blocks = Vec::with_capacity(cfg.depth);
    for i in 0..cfg.depth {
        let g = |name: &str, shape: &[usize]| -> Result<Tensor<f32>, CheckpointError> {
            Ok(ckpt.get_shaped(&format!("blocks.{i}.{name}"), shape)?.clone())
        };
        blocks.push(BlockWeights {
            norm1_w: g("norm1.weight", &[d])?,
            norm1_b: g("norm1.bias", &[d])?,
            qkv_w: g("attn.qkv.weight", &[3 * d, d])?,
            qkv_b: g("attn.qkv.bias", &[3 * d])?,
            proj_w: g("attn.proj.weight", &[d, d])?,
            proj_b: g("attn.proj.bias", &[d])?,
            norm2_w: g("norm2.weight", &[d])?,
            norm2_b: g("norm2.bias", &[d])?,
            fc1_w: g("mlp.fc1.weight", &[hm, d])?,
            fc1_b: g("mlp.fc1.bias", &[hm])?,
            fc2_w: g("mlp.fc2.weight", &[d, hm])?,
            fc2_b: g("mlp.fc2.bias", &[d])?,
        });
    }

    let weights = ViTWeights {
        patch_w,
        patch_b,
        pos_spatial,
        pos_t_src,
        pos_t_tgt,
        blocks,
        norm_w: ckpt.get_shaped("norm.weight", &[d])?.clone(),
        norm_b: ckpt.get_shaped("norm.bias", &[d])?.clone(),
    };
    weights.validate(cfg)?;
    Ok(weights)
}

/// A complete random checkpoint at the pretrained (video) geometry, for
/// exercising the adaptation surgery without real released weights.
pub fn synthetic_pretrained_checkpoint<R: Rng>(
    cfg: &ViTConfig,
    src_grid: (usize, usize),
    rng: &mut R,
) -> PretrainedCheckpoint {
    let d = cfg.embed_dim;
    let hm = cfg.mlp_hidden();
    let mut params = BTreeMap::new();
    let mut put = |k: String, t: Tensor<f32>| {
        params.insert(k, t);
    };
    put(
        "patch_embed.weight".into(),
        Tensor::randn(&[d, 3, cfg.temporal_patch, cfg.patch, cfg.patch], rng),
    );
    put("patch_embed.bias".into(), Tensor::randn(&[d], rng));
    put(
        "pos_embed.spatial".into(),
        Tensor::randn(&[src_grid.0 * src_grid.1, d], rng),
    );
    put(
        "pos_embed.temporal".into(),
        Tensor::randn(&[cfg.pretrain_temporal_rows(), d], rng),
    );
    for i in 0..cfg.depth {
        for (name, shape) in [
            ("norm1.weight", vec![d]),
            ("norm1.bias", vec![d]),
            ("attn.qkv.weight", vec![3 * d, d]),
            ("attn.qkv.bias", vec![3 * d]),
            ("attn.proj.weight", vec![d, d]),
            ("attn.proj.bias", vec![d]),
            ("norm2.weight", vec![d]),
            ("norm2.bias", vec![d]),
            ("mlp.fc1.weight", vec![hm, d]),
            ("mlp.fc1.bias", vec![hm]),
            ("mlp.fc2.weight", vec![d, hm]),
            ("mlp.fc2.bias", vec![d]),
        ] {
            put(format!("blocks.{i}.{name}"), Tensor::randn(&shape, rng));
        }
    }
    put("norm.weight".into(), Tensor::randn(&[d], rng));
    put("norm.bias".into(), Tensor::randn(&[d], rng));
    PretrainedCheckpoint {
        params,
        norm: ImageNorm::default(),
        meta: BTreeMap::new(),
    }
}

fn linear<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let out = x.matmul(&w.t()?)?;
    out.add(&b.reshape(&[1, b.numel()])?)
}

fn ln_affine<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>, TensorError> {
    let d = w.numel();
    x.layer_norm(1, eps)?
        .mul(&w.reshape(&[1, d])?)?
        .add(&b.reshape(&[1, d])?)
}

fn attention<T: Element>(
    x: &Tensor<T>,
    bw: &BlockWeights<T>,
    cfg: &ViTConfig,
) -> Result<Tensor<T>, TensorError> {
    let m = x.shape()[0];
    let d = cfg.embed_dim;
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();

    let h = ln_affine(x, &bw.norm1_w, &bw.norm1_b, cfg.layernorm_eps)?;
    let qkv = linear(&h, &bw.qkv_w, &bw.qkv_b)?;
    let parts = qkv.split_equal(1, 3)?;
    let to_heads = |t: &Tensor<T>| -> Result<Tensor<T>, TensorError> {
        t.reshape(&[m, heads, dh])?.permute(&[1, 0, 2])
    };
    let q = to_heads(&parts[0])?;
    let k = to_heads(&parts[1])?;
    let v = to_heads(&parts[2])?;

    let scores = q
        .matmul(&k.permute(&[0, 2, 1])?)?
        .scale(T::from_f64(1.0 / (dh as f64).sqrt()));
    let att = scores.softmax(2)?.matmul(&v)?;
    let merged = att.permute(&[1, 0, 2])?.reshape(&[m, d])?;
    linear(&merged, &bw.proj_w, &bw.proj_b)
}

fn mlp<T: Element>(
    x: &Tensor<T>,
    bw: &BlockWeights<T>,
    cfg: &ViTConfig,
) -> Result<Tensor<T>, TensorError> {
    let h = ln_affine(x, &bw.norm2_w, &bw.norm2_b, cfg.layernorm_eps)?;
    let h = linear(&h, &bw.fc1_w, &bw.fc1_b)?.gelu();
    linear(&h, &bw.fc2_w, &bw.fc2_b)
}

/// Patchifies one normalized frame into `[Hp*Wp, D]` tokens (no positions).
fn patchify<T: Element>(
    img: &Tensor<T>,
    w: &ViTWeights<T>,
    cfg: &ViTConfig,
) -> Result<Tensor<T>, TensorError> {
    let p = cfg.patch;
    let d = cfg.embed_dim;
    let tok = img
        .conv2d(&w.patch_w, Some(&w.patch_b), (p, p), (0, 0))?
        .reshape(&[d, cfg.tokens()])?;
    tok.t()
}

/// Encodes a normalized image pair with full cross-frame self-attention and
/// returns the source-frame token features `[Hp*Wp, D]` after the final
/// layernorm.
pub fn encode_pair<T: Element>(
    i1: &Tensor<T>,
    i2: &Tensor<T>,
    w: &ViTWeights<T>,
    cfg: &ViTConfig,
) -> Result<Tensor<T>, TensorError> {
    for img in [i1, i2] {
        if img.shape() != [3, cfg.image_h, cfg.image_w] {
            return Err(TensorError::Shape {
                op: "encode_pair",
                lhs: vec![3, cfg.image_h, cfg.image_w],
                rhs: img.shape().to_vec(),
            });
        }
    }
    let n = cfg.tokens();
    let d = cfg.embed_dim;
    let tok1 = patchify(i1, w, cfg)?
        .add(&w.pos_spatial)?
        .add(&w.pos_t_src.reshape(&[1, d])?)?;
    let tok2 = patchify(i2, w, cfg)?
        .add(&w.pos_spatial)?
        .add(&w.pos_t_tgt.reshape(&[1, d])?)?;
    let mut x = Tensor::concat(&[&tok1, &tok2], 0)?;
    for bw in &w.blocks {
        x = x.add(&attention(&x, bw, cfg)?)?;
        x = x.add(&mlp(&x, bw, cfg)?)?;
    }
    let x = ln_affine(&x, &w.norm_w, &w.norm_b, cfg.layernorm_eps)?;
    x.narrow(0, 0, n)
}

/// Encodes a batch of pairs. Pairs never attend across the batch, so this is
/// exactly a per-pair map.
pub fn encode_pairs<T: Element>(
    pairs: &[(Tensor<T>, Tensor<T>)],
    w: &ViTWeights<T>,
    cfg: &ViTConfig,
) -> Result<Vec<Tensor<T>>, TensorError> {
    pairs
        .iter()
        .map(|(i1, i2)| encode_pair(i1, i2, w, cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> ViTConfig {
        ViTConfig {
            image_h: 16,
            image_w: 32,
            patch: 16,
            pretrain_frames: 8,
            temporal_patch: 2,
            embed_dim: 8,
            depth: 1,
            num_heads: 2,
            mlp_ratio: 2.0,
            layernorm_eps: 1e-6,
        }
    }

    #[test]
    fn adapt_spatial_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pos = Tensor::<f32>::randn(&[12, 5], &mut rng);
        let same = adapt_spatial_pos(&pos, (3, 4), (3, 4)).unwrap();
        for (a, b) in pos.data().iter().zip(same.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }

        // every row equal -> every output row equal, any destination grid
        let row: Vec<f32> = (0..5).map(|i| i as f32 * 0.3).collect();
        let const_tab =
            Tensor::<f32>::from_vec(row.iter().cycle().take(60).cloned().collect(), &[12, 5])
                .unwrap();
        let out = adapt_spatial_pos(&const_tab, (3, 4), (7, 9)).unwrap();
        for r in out.data().chunks(5) {
            for (a, b) in r.iter().zip(&row) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adapt_spatial_midpoint() {
        // 2x2 grid, one channel, corners 0,1,2,3 -> 3x3 center is 1.5
        let pos = Tensor::<f64>::from_vec(vec![0.0, 1.0, 2.0, 3.0], &[4, 1]).unwrap();
        let out = adapt_spatial_pos(&pos, (2, 2), (3, 3)).unwrap();
        assert!((out.data()[4] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn adapt_spatial_commutes_with_channel_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = Tensor::<f64>::randn(&[6, 4], &mut rng);
        let perm = [2usize, 0, 3, 1];
        let permute_channels = |t: &Tensor<f64>| {
            let rows = t.shape()[0];
            let mut out = vec![0.0; t.numel()];
            for r in 0..rows {
                for (j, &pj) in perm.iter().enumerate() {
                    out[r * 4 + j] = t.data()[r * 4 + pj];
                }
            }
            Tensor::from_vec(out, &[rows, 4]).unwrap()
        };
        let before = adapt_spatial_pos(&permute_channels(&pos), (2, 3), (5, 4)).unwrap();
        let after = permute_channels(&adapt_spatial_pos(&pos, (2, 3), (5, 4)).unwrap());
        for (a, b) in before.data().iter().zip(after.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adapt_temporal_half_means() {
        // rows [a,a,b,b] -> (a, b)
        let a = [1.0, 2.0, 3.0];
        let b = [-1.0, 0.5, 4.0];
        let mut data = Vec::new();
        data.extend_from_slice(&a);
        data.extend_from_slice(&a);
        data.extend_from_slice(&b);
        data.extend_from_slice(&b);
        let pos = Tensor::<f64>::from_vec(data, &[4, 3]).unwrap();
        let (src, tgt) = adapt_temporal_pos(&pos).unwrap();
        assert_eq!(src.data(), &a);
        assert_eq!(tgt.data(), &b);

        // per-channel [0,2,4,6] -> (1, 5)
        let pos = Tensor::<f64>::from_vec(vec![0.0, 2.0, 4.0, 6.0], &[4, 1]).unwrap();
        let (src, tgt) = adapt_temporal_pos(&pos).unwrap();
        assert_eq!(src.data(), &[1.0]);
        assert_eq!(tgt.data(), &[5.0]);

        // n_t = 2 passes rows through unchanged
        let pos = Tensor::<f64>::from_vec(vec![7.0, 8.0, 9.0, 10.0], &[2, 2]).unwrap();
        let (src, tgt) = adapt_temporal_pos(&pos).unwrap();
        assert_eq!(src.data(), &[7.0, 8.0]);
        assert_eq!(tgt.data(), &[9.0, 10.0]);

        // odd row count is a shape error
        let pos = Tensor::<f64>::zeros(&[3, 2]);
        assert!(matches!(
            adapt_temporal_pos(&pos),
            Err(TensorError::Shape { .. })
        ));
    }

    #[test]
    fn adapt_temporal_means_stay_in_half_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos = Tensor::<f64>::randn(&[8, 5], &mut rng);
        let (src, tgt) = adapt_temporal_pos(&pos).unwrap();
        for ch in 0..5 {
            let col = |r: usize| pos.data()[r * 5 + ch];
            let (lo, hi) = (0..4).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(col(r)), hi.max(col(r)))
            });
            assert!(src.data()[ch] >= lo - 1e-12 && src.data()[ch] <= hi + 1e-12);
            let (lo, hi) = (4..8).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(col(r)), hi.max(col(r)))
            });
            assert!(tgt.data()[ch] >= lo - 1e-12 && tgt.data()[ch] <= hi + 1e-12);
        }
    }

    #[test]
    fn adapt_patch_embed_sums_temporal_slices() {
        // t=2, second slice zero -> equals first slice
        let mut first = vec![0.0f64; 2 * 3 * 1 * 2 * 2];
        for (i, v) in first.iter_mut().enumerate() {
            *v = i as f64 * 0.1;
        }
        let k1 = Tensor::from_vec(first.clone(), &[2, 3, 1, 2, 2]).unwrap();
        // interleave temporal slices: build [2,3,2,2,2] with slice0=first, slice1=0
        let mut data = Vec::new();
        for dc in 0..6 {
            let base = dc * 4;
            data.extend_from_slice(&first[base..base + 4]);
            data.extend(std::iter::repeat(0.0).take(4));
        }
        let k2 = Tensor::from_vec(data, &[2, 3, 2, 2, 2]).unwrap();
        let out = adapt_patch_embed(&k2).unwrap();
        assert_eq!(out.shape(), &[2, 3, 2, 2]);
        assert_eq!(out.data(), k1.sum_axis(2, false).unwrap().data());

        // all ones with t=2 -> all twos
        let ones = Tensor::<f64>::ones(&[1, 3, 2, 2, 2]);
        let out = adapt_patch_embed(&ones).unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn adapt_patch_embed_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Tensor::<f64>::randn(&[2, 3, 2, 2, 2], &mut rng);
        let b = Tensor::<f64>::randn(&[2, 3, 2, 2, 2], &mut rng);
        let (alpha, beta) = (0.7, -1.3);
        let lhs =
            adapt_patch_embed(&a.scale(alpha).add(&b.scale(beta)).unwrap()).unwrap();
        let rhs = adapt_patch_embed(&a)
            .unwrap()
            .scale(alpha)
            .add(&adapt_patch_embed(&b).unwrap().scale(beta))
            .unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    fn synthetic_checkpoint(
        cfg: &ViTConfig,
        src_grid: (usize, usize),
        rng: &mut impl Rng,
    ) -> PretrainedCheckpoint {
        synthetic_pretrained_checkpoint(cfg, src_grid, rng)
    }

    #[test]
    fn adapt_checkpoint_composes_the_three_surgeries() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ViTConfig {
            image_h: 32,
            image_w: 48,
            patch: 16,
            embed_dim: 8,
            depth: 2,
            num_heads: 2,
            mlp_ratio: 2.0,
            ..ViTConfig::default()
        };
        let ckpt = synthetic_checkpoint(&cfg, (4, 4), &mut rng);
        let w = adapt_checkpoint(&ckpt, &cfg).unwrap();

        let want_patch = adapt_patch_embed(&ckpt.params["patch_embed.weight"]).unwrap();
        assert_eq!(w.patch_w.data(), want_patch.data());

        let want_pos =
            adapt_spatial_pos(&ckpt.params["pos_embed.spatial"], (4, 4), cfg.grid()).unwrap();
        assert_eq!(w.pos_spatial.data(), want_pos.data());

        let (want_src, want_tgt) = adapt_temporal_pos(&ckpt.params["pos_embed.temporal"]).unwrap();
        assert_eq!(w.pos_t_src.data(), want_src.data());
        assert_eq!(w.pos_t_tgt.data(), want_tgt.data());

        assert_eq!(
            w.blocks[1].qkv_w.data(),
            ckpt.params["blocks.1.attn.qkv.weight"].data()
        );
    }

    #[test]
    fn adapt_checkpoint_degenerate_geometry_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // t = 1 and n_t = 2: every adaptation degenerates to a copy
        let cfg = ViTConfig {
            image_h: 32,
            image_w: 32,
            patch: 16,
            pretrain_frames: 4,
            temporal_patch: 1,
            embed_dim: 8,
            depth: 1,
            num_heads: 2,
            mlp_ratio: 2.0,
            ..ViTConfig::default()
        };
        assert_eq!(cfg.pretrain_temporal_rows(), 4);
        // use pretrain_frames=2 so n_t = 2
        let cfg = ViTConfig {
            pretrain_frames: 2,
            ..cfg
        };
        let ckpt = synthetic_checkpoint(&cfg, (2, 2), &mut rng);
        let w = adapt_checkpoint(&ckpt, &cfg).unwrap();
        for (a, b) in w
            .patch_w
            .data()
            .iter()
            .zip(ckpt.params["patch_embed.weight"].data())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in w
            .pos_spatial
            .data()
            .iter()
            .zip(ckpt.params["pos_embed.spatial"].data())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let tp = &ckpt.params["pos_embed.temporal"];
        for (i, (a, b)) in w
            .pos_t_src
            .data()
            .iter()
            .chain(w.pos_t_tgt.data())
            .zip(tp.data())
            .enumerate()
        {
            assert_eq!(a.to_bits(), b.to_bits(), "temporal element {i}");
        }
    }

    #[test]
    fn adapt_checkpoint_missing_param_names_the_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = ViTConfig {
            image_h: 32,
            image_w: 32,
            patch: 16,
            embed_dim: 8,
            depth: 1,
            num_heads: 2,
            mlp_ratio: 2.0,
            ..ViTConfig::default()
        };
        let mut ckpt = synthetic_checkpoint(&cfg, (2, 2), &mut rng);
        ckpt.params.remove("blocks.0.mlp.fc2.bias");
        match adapt_checkpoint(&ckpt, &cfg) {
            Err(CheckpointError::MissingParam(p)) => assert_eq!(p, "blocks.0.mlp.fc2.bias"),
            other => panic!("expected MissingParam, got {other:?}"),
        }
    }

    #[test]
    fn encode_pair_shape_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = tiny_cfg();
        let w = ViTWeights::<f32>::random_init(&cfg, &mut rng).unwrap();
        let i1 = Tensor::randn(&[3, 16, 32], &mut rng);
        let i2 = Tensor::randn(&[3, 16, 32], &mut rng);
        let f = encode_pair(&i1, &i2, &w, &cfg).unwrap();
        assert_eq!(f.shape(), &[2, 8]);
    }

    #[test]
    fn cross_frame_attention_is_live() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = tiny_cfg();
        let w = ViTWeights::<f32>::random_init(&cfg, &mut rng).unwrap();
        let i1 = Tensor::randn(&[3, 16, 32], &mut rng);
        let i2 = Tensor::randn(&[3, 16, 32], &mut rng);
        let base = encode_pair(&i1, &i2, &w, &cfg).unwrap();
        // swap the two patches of I2
        let left = i2.narrow(2, 0, 16).unwrap();
        let right = i2.narrow(2, 16, 16).unwrap();
        let swapped = Tensor::concat(&[&right, &left], 2).unwrap();
        let out = encode_pair(&i1, &swapped, &w, &cfg).unwrap();
        let max_delta = base
            .data()
            .iter()
            .zip(out.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_delta > 0.0, "source features ignore the target frame");
    }

    #[test]
    fn zeroed_blocks_reduce_to_layernormed_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cfg = tiny_cfg();
        let mut w = ViTWeights::<f32>::random_init(&cfg, &mut rng).unwrap();
        for b in &mut w.blocks {
            b.qkv_w = Tensor::zeros(&[3 * 8, 8]);
            b.qkv_b = Tensor::zeros(&[3 * 8]);
            b.proj_w = Tensor::zeros(&[8, 8]);
            b.proj_b = Tensor::zeros(&[8]);
            b.fc1_w = Tensor::zeros(&[cfg.mlp_hidden(), 8]);
            b.fc1_b = Tensor::zeros(&[cfg.mlp_hidden()]);
            b.fc2_w = Tensor::zeros(&[8, cfg.mlp_hidden()]);
            b.fc2_b = Tensor::zeros(&[8]);
        }
        let i1 = Tensor::randn(&[3, 16, 32], &mut rng);
        let i2 = Tensor::randn(&[3, 16, 32], &mut rng);
        let got = encode_pair(&i1, &i2, &w, &cfg).unwrap();

        let tok1 = patchify(&i1, &w, &cfg)
            .unwrap()
            .add(&w.pos_spatial)
            .unwrap()
            .add(&w.pos_t_src.reshape(&[1, 8]).unwrap())
            .unwrap();
        let want = tok1.layer_norm(1, cfg.layernorm_eps).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batching_matches_separate_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = tiny_cfg();
        let w = ViTWeights::<f32>::random_init(&cfg, &mut rng).unwrap();
        let pairs: Vec<_> = (0..2)
            .map(|_| {
                (
                    Tensor::<f32>::randn(&[3, 16, 32], &mut rng),
                    Tensor::<f32>::randn(&[3, 16, 32], &mut rng),
                )
            })
            .collect();
        let batched = encode_pairs(&pairs, &w, &cfg).unwrap();
        for (k, (i1, i2)) in pairs.iter().enumerate() {
            let single = encode_pair(i1, i2, &w, &cfg).unwrap();
            for (a, b) in batched[k].data().iter().zip(single.data()) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let cfg = tiny_cfg();
        let w64 = ViTWeights::<f64>::random_init(&cfg, &mut rng).unwrap();
        let i1 = Tensor::<f64>::rand_uniform(&[3, 16, 32], 0.0, 1.0, &mut rng);
        let i2 = Tensor::<f64>::rand_uniform(&[3, 16, 32], 0.0, 1.0, &mut rng);

        // through the input image
        let (w2, i22, cfg2) = (w64.clone(), i2.clone(), cfg.clone());
        let report = finite_diff_check(
            move |x| encode_pair(x, &i22, &w2, &cfg2)?.sum_all(),
            &i1,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "d_image: {}", report.max_rel_err);

        // through a block weight
        let qkv0 = w64.blocks[0].qkv_w.clone();
        let (w3, i13, i23, cfg3) = (w64, i1, i2, cfg);
        let report = finite_diff_check(
            move |q| {
                let mut w = w3.clone();
                w.blocks[0].qkv_w = q.clone();
                encode_pair(&i13, &i23, &w, &cfg3)?.sum_all()
            },
            &qkv0,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "d_qkv: {}", report.max_rel_err);
    }
}
