//! Flat `key=value` training configuration files.

use std::collections::BTreeMap;
use std::path::Path;

use geovit_core::geometry::FieldKind;
use geovit_core::refine::DecoderConfig;
use geovit_core::synth::SynthParams;
use geovit_core::train::{DepthLossSpace, HeadMode, TrainConfig};
use geovit_core::vit::ViTConfig;

/// Everything `train-toy` needs: architecture, optimization and data knobs.
#[derive(Clone, Debug)]
pub struct TrainSpec {
    pub vit: ViTConfig,
    pub dec: DecoderConfig,
    pub train: TrainConfig,
    pub samples: usize,
    pub max_disp: f64,
    pub sample_seed: u64,
}

pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value, got `{line}`", ln + 1));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, String> {
    match map.get(key) {
        Some(v) => v.parse().map_err(|_| format!("bad value for `{key}`: {v}")),
        None => Ok(default),
    }
}

pub fn parse_task(s: &str) -> Result<FieldKind, String> {
    match s {
        "flow" => Ok(FieldKind::Flow),
        "stereo" | "disparity" => Ok(FieldKind::Disparity),
        "depth" => Ok(FieldKind::Depth),
        other => Err(format!("unknown task `{other}` (flow|stereo|depth)")),
    }
}

pub fn load_train_spec(path: impl AsRef<Path>) -> Result<TrainSpec, String> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| format!("{}: {e}", path.as_ref().display()))?;
    let map = parse_key_values(&text)?;
    for key in map.keys() {
        const KNOWN: &[&str] = &[
            "task", "head", "image_h", "image_w", "patch", "pretrain_frames",
            "temporal_patch", "embed_dim", "depth", "num_heads", "mlp_ratio",
            "layernorm_eps", "hidden_dim", "motion_dim", "context_dim", "flow_mid",
            "mask_mid", "iters", "steps", "batch", "peak_lr", "warmup_frac",
            "weight_decay", "clip_norm", "gamma", "seed", "freeze_encoder",
            "depth_loss", "samples", "max_disp", "sample_seed",
        ];
        if !KNOWN.contains(&key.as_str()) {
            return Err(format!("unknown config key `{key}`"));
        }
    }

    let vit = ViTConfig {
        image_h: get(&map, "image_h", 64)?,
        image_w: get(&map, "image_w", 96)?,
        patch: get(&map, "patch", 16)?,
        pretrain_frames: get(&map, "pretrain_frames", 8)?,
        temporal_patch: get(&map, "temporal_patch", 2)?,
        embed_dim: get(&map, "embed_dim", 64)?,
        depth: get(&map, "depth", 2)?,
        num_heads: get(&map, "num_heads", 2)?,
        mlp_ratio: get(&map, "mlp_ratio", 4.0)?,
        layernorm_eps: get(&map, "layernorm_eps", 1e-6)?,
    };
    let dec = DecoderConfig {
        hidden_dim: get(&map, "hidden_dim", 128)?,
        motion_dim: get(&map, "motion_dim", 128)?,
        context_dim: get(&map, "context_dim", 256)?,
        flow_mid: get(&map, "flow_mid", 256)?,
        mask_mid: get(&map, "mask_mid", 256)?,
    };
    let task = parse_task(&get(&map, "task", "flow".to_string())?)?;
    let head = match get(&map, "head", "refine".to_string())?.as_str() {
        "refine" => HeadMode::Refine,
        "linear" => HeadMode::Linear,
        other => return Err(format!("unknown head `{other}` (refine|linear)")),
    };
    let depth_loss = match get(&map, "depth_loss", "inverse".to_string())?.as_str() {
        "inverse" => DepthLossSpace::InverseDepth,
        "depth" => DepthLossSpace::Depth,
        "displacement" => DepthLossSpace::Displacement,
        other => {
            return Err(format!(
                "unknown depth_loss `{other}` (inverse|depth|displacement)"
            ))
        }
    };
    let train = TrainConfig {
        task,
        head,
        iters: get(&map, "iters", 4)?,
        steps: get(&map, "steps", 300)?,
        batch: get(&map, "batch", 2)?,
        peak_lr: get(&map, "peak_lr", 1e-3)?,
        warmup_frac: get(&map, "warmup_frac", 0.1)?,
        weight_decay: get(&map, "weight_decay", 1e-4)?,
        clip_norm: get(&map, "clip_norm", 1.0)?,
        gamma: get(&map, "gamma", 0.9)?,
        seed: get(&map, "seed", 0)?,
        freeze_encoder: get(&map, "freeze_encoder", 0u8)? != 0,
        depth_loss,
    };
    Ok(TrainSpec {
        sample_seed: get(&map, "sample_seed", train.seed)?,
        samples: get(&map, "samples", 20)?,
        max_disp: get(&map, "max_disp", 3.0)?,
        vit,
        dec,
        train,
    })
}

pub fn synth_params(spec: &TrainSpec) -> SynthParams {
    SynthParams {
        max_disp: spec.max_disp,
        texture_scale: 8,
        multiple_of: spec.vit.patch,
    }
}
