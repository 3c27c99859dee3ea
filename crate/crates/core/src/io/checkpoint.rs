//! Checkpoint container: a single file holding concatenated GVT1 tensor
//! blobs behind a text manifest of `(path, offset, dtype, shape)` entries
//! plus `meta` key/value lines. Save and load are bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CheckpointError, FormatError};
use crate::refine::{DecoderConfig, GeoVit};
use crate::tensor::Tensor;
use crate::vit::{ImageNorm, PretrainedCheckpoint, ViTConfig};

const MAGIC: &[u8; 4] = b"GVCK";
const VERSION: u32 = 1;

/// Writes a named tensor set plus metadata as one container file.
pub fn write_checkpoint<W: Write>(
    w: &mut W,
    params: &[(String, Tensor<f32>)],
    meta: &BTreeMap<String, String>,
) -> Result<(), FormatError> {
    let mut blobs: Vec<u8> = Vec::new();
    let mut manifest = String::new();
    for (key, value) in meta {
        if key.contains(char::is_whitespace) {
            return Err(FormatError::BadHeader(format!(
                "meta key `{key}` contains whitespace"
            )));
        }
        manifest.push_str(&format!("meta {key} {value}\n"));
    }
    for (path, tensor) in params {
        if path.contains(char::is_whitespace) {
            return Err(FormatError::BadHeader(format!(
                "parameter path `{path}` contains whitespace"
            )));
        }
        let offset = blobs.len();
        tensor.write_gvt(&mut blobs)?;
        let shape: Vec<String> = tensor.shape().iter().map(|e| e.to_string()).collect();
        manifest.push_str(&format!(
            "tensor {path} {offset} {} {}\n",
            tensor.dtype().name(),
            shape.join(",")
        ));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest.len() as u64).to_le_bytes())?;
    w.write_all(manifest.as_bytes())?;
    w.write_all(&blobs)?;
    Ok(())
}

/// Reads a container back into a named parameter map plus metadata.
pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<PretrainedCheckpoint, FormatError> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)
        .map_err(|_| FormatError::Truncated("checkpoint header".into()))?;
    if &head[..4] != MAGIC {
        return Err(FormatError::Magic {
            expected: "GVCK".into(),
            got: String::from_utf8_lossy(&head[..4]).into_owned(),
        });
    }
    let version = u32::from_le_bytes(head[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::BadHeader(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let manifest_len = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let mut manifest = vec![0u8; manifest_len];
    r.read_exact(&mut manifest)
        .map_err(|_| FormatError::Truncated("checkpoint manifest".into()))?;
    let manifest = String::from_utf8(manifest)
        .map_err(|_| FormatError::BadHeader("non-UTF8 manifest".into()))?;
    let mut blobs = Vec::new();
    r.read_to_end(&mut blobs)?;

    let mut params = BTreeMap::new();
    let mut meta = BTreeMap::new();
    for line in manifest.lines() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("meta") => {
                let key = parts
                    .next()
                    .ok_or_else(|| FormatError::BadHeader(format!("bad meta line: {line}")))?;
                let value: Vec<&str> = parts.collect();
                meta.insert(key.to_string(), value.join(" "));
            }
            Some("tensor") => {
                let path = parts
                    .next()
                    .ok_or_else(|| FormatError::BadHeader(format!("bad tensor line: {line}")))?;
                let offset: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| FormatError::BadHeader(format!("bad offset: {line}")))?;
                if offset >= blobs.len() {
                    return Err(FormatError::Truncated(format!(
                        "blob offset {offset} past the payload"
                    )));
                }
                let tensor = Tensor::<f32>::read_gvt(&mut &blobs[offset..])?;
                params.insert(path.to_string(), tensor);
            }
            Some(other) => {
                return Err(FormatError::BadHeader(format!(
                    "unknown manifest record `{other}`"
                )))
            }
            None => {}
        }
    }
    let norm = norm_from_meta(&meta);
    Ok(PretrainedCheckpoint { params, norm, meta })
}

pub fn write_checkpoint_file(
    path: impl AsRef<Path>,
    params: &[(String, Tensor<f32>)],
    meta: &BTreeMap<String, String>,
) -> Result<(), FormatError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut f, params, meta)
}

pub fn read_checkpoint_file(path: impl AsRef<Path>) -> Result<PretrainedCheckpoint, FormatError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

fn parse_triplet(s: &str) -> Option<[f64; 3]> {
    let parts: Vec<f64> = s.split(',').filter_map(|v| v.trim().parse().ok()).collect();
    (parts.len() == 3).then(|| [parts[0], parts[1], parts[2]])
}

/// Normalization constants from `norm_mean` / `norm_std` meta keys,
/// defaulting to 0.5/0.5.
pub fn norm_from_meta(meta: &BTreeMap<String, String>) -> ImageNorm {
    let mut norm = ImageNorm::default();
    if let Some(m) = meta.get("norm_mean").and_then(|v| parse_triplet(v)) {
        norm.mean = m;
    }
    if let Some(s) = meta.get("norm_std").and_then(|v| parse_triplet(v)) {
        norm.std = s;
    }
    norm
}

pub fn norm_to_meta(norm: &ImageNorm, meta: &mut BTreeMap<String, String>) {
    meta.insert(
        "norm_mean".into(),
        format!("{},{},{}", norm.mean[0], norm.mean[1], norm.mean[2]),
    );
    meta.insert(
        "norm_std".into(),
        format!("{},{},{}", norm.std[0], norm.std[1], norm.std[2]),
    );
}

fn meta_usize(meta: &BTreeMap<String, String>, key: &str) -> Result<usize, CheckpointError> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CheckpointError::Config(format!("missing or bad meta key `{key}`")))
}

fn meta_f64(meta: &BTreeMap<String, String>, key: &str) -> Result<f64, CheckpointError> {
    meta.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CheckpointError::Config(format!("missing or bad meta key `{key}`")))
}

fn config_meta(model: &GeoVit<f32>) -> BTreeMap<String, String> {
    let c = &model.vit_cfg;
    let d = &model.dec_cfg;
    let mut meta = BTreeMap::new();
    for (k, v) in [
        ("image_h", c.image_h),
        ("image_w", c.image_w),
        ("patch", c.patch),
        ("pretrain_frames", c.pretrain_frames),
        ("temporal_patch", c.temporal_patch),
        ("embed_dim", c.embed_dim),
        ("depth", c.depth),
        ("num_heads", c.num_heads),
        ("hidden_dim", d.hidden_dim),
        ("motion_dim", d.motion_dim),
        ("context_dim", d.context_dim),
        ("flow_mid", d.flow_mid),
        ("mask_mid", d.mask_mid),
    ] {
        meta.insert(k.to_string(), v.to_string());
    }
    meta.insert("mlp_ratio".into(), c.mlp_ratio.to_string());
    meta.insert("layernorm_eps".into(), c.layernorm_eps.to_string());
    norm_to_meta(&model.norm, &mut meta);
    meta
}

fn configs_from_meta(
    meta: &BTreeMap<String, String>,
) -> Result<(ViTConfig, DecoderConfig), CheckpointError> {
    let vit = ViTConfig {
        image_h: meta_usize(meta, "image_h")?,
        image_w: meta_usize(meta, "image_w")?,
        patch: meta_usize(meta, "patch")?,
        pretrain_frames: meta_usize(meta, "pretrain_frames")?,
        temporal_patch: meta_usize(meta, "temporal_patch")?,
        embed_dim: meta_usize(meta, "embed_dim")?,
        depth: meta_usize(meta, "depth")?,
        num_heads: meta_usize(meta, "num_heads")?,
        mlp_ratio: meta_f64(meta, "mlp_ratio")?,
        layernorm_eps: meta_f64(meta, "layernorm_eps")?,
    };
    let dec = DecoderConfig {
        hidden_dim: meta_usize(meta, "hidden_dim")?,
        motion_dim: meta_usize(meta, "motion_dim")?,
        context_dim: meta_usize(meta, "context_dim")?,
        flow_mid: meta_usize(meta, "flow_mid")?,
        mask_mid: meta_usize(meta, "mask_mid")?,
    };
    Ok((vit, dec))
}

/// Saves a complete model (encoder + decoder + linear head) with its
/// configuration in the manifest.
pub fn save_model(path: impl AsRef<Path>, model: &GeoVit<f32>) -> Result<(), FormatError> {
    write_checkpoint_file(path, &model.named_params(), &config_meta(model))
}

fn vit_meta(cfg: &ViTConfig, norm: &ImageNorm) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    for (k, v) in [
        ("image_h", cfg.image_h),
        ("image_w", cfg.image_w),
        ("patch", cfg.patch),
        ("pretrain_frames", cfg.pretrain_frames),
        ("temporal_patch", cfg.temporal_patch),
        ("embed_dim", cfg.embed_dim),
        ("depth", cfg.depth),
        ("num_heads", cfg.num_heads),
    ] {
        meta.insert(k.to_string(), v.to_string());
    }
    meta.insert("mlp_ratio".into(), cfg.mlp_ratio.to_string());
    meta.insert("layernorm_eps".into(), cfg.layernorm_eps.to_string());
    meta.insert("kind".into(), "encoder".into());
    norm_to_meta(norm, &mut meta);
    meta
}

/// Saves an adapted encoder on its own (bare parameter paths).
pub fn save_encoder(
    path: impl AsRef<Path>,
    cfg: &ViTConfig,
    weights: &crate::vit::ViTWeights<f32>,
    norm: &ImageNorm,
) -> Result<(), FormatError> {
    write_checkpoint_file(path, &weights.named_params(), &vit_meta(cfg, norm))
}

/// Loads an encoder-only checkpoint saved by [`save_encoder`].
pub fn load_encoder(
    path: impl AsRef<Path>,
) -> Result<(ViTConfig, crate::vit::ViTWeights<f32>, ImageNorm), CheckpointError> {
    let ckpt = read_checkpoint_file(path)?;
    let cfg = ViTConfig {
        image_h: meta_usize(&ckpt.meta, "image_h")?,
        image_w: meta_usize(&ckpt.meta, "image_w")?,
        patch: meta_usize(&ckpt.meta, "patch")?,
        pretrain_frames: meta_usize(&ckpt.meta, "pretrain_frames")?,
        temporal_patch: meta_usize(&ckpt.meta, "temporal_patch")?,
        embed_dim: meta_usize(&ckpt.meta, "embed_dim")?,
        depth: meta_usize(&ckpt.meta, "depth")?,
        num_heads: meta_usize(&ckpt.meta, "num_heads")?,
        mlp_ratio: meta_f64(&ckpt.meta, "mlp_ratio")?,
        layernorm_eps: meta_f64(&ckpt.meta, "layernorm_eps")?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut weights = crate::vit::ViTWeights::random_init(&cfg, &mut rng)?;
    let mut remaining = ckpt.params;
    for (name, slot) in weights.named_params_mut() {
        let tensor = remaining
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        if tensor.shape() != slot.shape() {
            return Err(CheckpointError::UnexpectedShape {
                path: name,
                expected: slot.shape().to_vec(),
                got: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
    }
    // norm.weight/norm.bias land in named_params; anything else is foreign
    if let Some((extra, _)) = remaining.into_iter().next() {
        return Err(CheckpointError::Config(format!(
            "unexpected parameter `{extra}` in encoder checkpoint"
        )));
    }
    weights.validate(&cfg)?;
    Ok((cfg, weights, ckpt.norm))
}

/// Loads a complete model saved by [`save_model`].
pub fn load_model(path: impl AsRef<Path>) -> Result<GeoVit<f32>, CheckpointError> {
    let ckpt = read_checkpoint_file(path)?;
    let (vit_cfg, dec_cfg) = configs_from_meta(&ckpt.meta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = GeoVit::random_init(vit_cfg, dec_cfg, &mut rng)?;
    model.norm = ckpt.norm;
    let mut remaining = ckpt.params;
    for (name, slot) in model.named_params_mut() {
        let tensor = remaining
            .remove(&name)
            .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        if tensor.shape() != slot.shape() {
            return Err(CheckpointError::UnexpectedShape {
                path: name,
                expected: slot.shape().to_vec(),
                got: tensor.shape().to_vec(),
            });
        }
        *slot = tensor;
    }
    if let Some((extra, _)) = remaining.into_iter().next() {
        return Err(CheckpointError::Config(format!(
            "unexpected parameter `{extra}` in checkpoint"
        )));
    }
    Ok(model)
}
