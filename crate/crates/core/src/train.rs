//! The toy training loop: AdamW + one-cycle schedule over the sequence loss,
//! small enough to overfit a handful of synthetic pairs on a CPU.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{backward, no_grad};
use crate::error::TrainError;
use crate::geometry::{depth_to_displacement, displacement_to_depth, FieldKind, GeoField};
use crate::loss::{masked_l1, sequence_loss, LossConfig};
use crate::metrics::epe;
use crate::optim::{clip_global_norm, AdamW, OneCycle};
use crate::refine::{DecoderConfig, GeoVit};
use crate::synth::SyntheticSample;
use crate::tensor::Tensor;
use crate::vit::{normalize_image, ViTConfig};

/// Which decoding path to train.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    Refine,
    Linear,
}

/// Space in which depth predictions are supervised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DepthLossSpace {
    /// L1 on inverse depth (default).
    #[default]
    InverseDepth,
    /// L1 on depth itself.
    Depth,
    /// L1 on the displacement field, against the displacement implied by
    /// the ground-truth depth and cameras.
    Displacement,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub task: FieldKind,
    pub head: HeadMode,
    pub iters: usize,
    pub steps: usize,
    pub batch: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub gamma: f64,
    pub seed: u64,
    pub freeze_encoder: bool,
    pub depth_loss: DepthLossSpace,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: FieldKind::Flow,
            head: HeadMode::Refine,
            iters: 4,
            steps: 300,
            batch: 2,
            peak_lr: 1e-3,
            warmup_frac: 0.1,
            weight_decay: 1e-4,
            clip_norm: 1.0,
            gamma: 0.9,
            seed: 0,
            freeze_encoder: false,
            depth_loss: DepthLossSpace::InverseDepth,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        LossConfig {
            gamma: self.gamma,
            iters: self.iters,
        }
        .validate()?;
        if self.steps == 0 || self.batch == 0 {
            return Err(TrainError::Param("steps and batch must be positive".into()));
        }
        if self.head == HeadMode::Linear && self.task != FieldKind::Flow {
            return Err(TrainError::Param(
                "the linear head is trained on the flow task only".into(),
            ));
        }
        Ok(())
    }
}

/// One record of the emitted loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainOutcome {
    pub model: GeoVit<f32>,
    pub curve: Vec<CurvePoint>,
    /// Set when the loss went non-finite; the model rolls back to the last
    /// finite step.
    pub diverged_at: Option<usize>,
}

/// The documented CPU preset: ViT depth 2 / dim 64 / heads 2 / patch 16 on
/// 64x96 images, four refinement iterations, 300 optimizer steps.
pub fn toy_preset() -> (ViTConfig, DecoderConfig, TrainConfig) {
    let vit = ViTConfig {
        image_h: 64,
        image_w: 96,
        patch: 16,
        pretrain_frames: 8,
        temporal_patch: 2,
        embed_dim: 64,
        depth: 2,
        num_heads: 2,
        mlp_ratio: 4.0,
        layernorm_eps: 1e-6,
    };
    (vit, DecoderConfig::default(), TrainConfig::default())
}

fn is_trainable(name: &str, cfg: &TrainConfig) -> bool {
    let encoder = name.starts_with("vit.");
    match cfg.head {
        HeadMode::Linear => {
            name.starts_with("linear_head.") || (!cfg.freeze_encoder && encoder)
        }
        HeadMode::Refine => name.starts_with("decoder.") || (!cfg.freeze_encoder && encoder),
    }
}

/// Loss for one sample under the configured head/task.
pub fn sample_loss(
    model: &GeoVit<f32>,
    sample: &SyntheticSample,
    cfg: &TrainConfig,
) -> Result<Tensor<f32>, TrainError> {
    if sample.gt.kind != cfg.task {
        return Err(TrainError::Param(format!(
            "dataset holds {} samples but the task is {}",
            sample.gt.kind.name(),
            cfg.task.name()
        )));
    }
    let i1n = normalize_image(&sample.i1, &model.norm)?;
    let i2n = normalize_image(&sample.i2, &model.norm)?;
    match cfg.head {
        HeadMode::Linear => {
            let pred = model.linear_decode(&i1n, &i2n)?;
            sequence_loss(&[pred], &sample.gt, None, cfg.gamma)
        }
        HeadMode::Refine => {
            let steps = model.run_refinement(&i1n, &i2n, cfg.task, cfg.iters)?;
            let preds: Vec<Tensor<f32>> = steps.into_iter().map(|s| s.g_full).collect();
            match cfg.task {
                FieldKind::Flow | FieldKind::Disparity => {
                    sequence_loss(&preds, &sample.gt, None, cfg.gamma)
                }
                FieldKind::Depth => depth_sequence_loss(&preds, sample, cfg),
            }
        }
    }
}

fn depth_sequence_loss(
    preds: &[Tensor<f32>],
    sample: &SyntheticSample,
    cfg: &TrainConfig,
) -> Result<Tensor<f32>, TrainError> {
    let cams = sample
        .cams
        .as_ref()
        .ok_or_else(|| TrainError::Param("depth sample carries no cameras".into()))?;
    let gt_mask = sample.gt.valid_or_all();
    let t_total = preds.len();

    // displacement implied by the ground truth; used directly in
    // Displacement mode and as the fallback whenever an iterate has no
    // valid depth conversion yet
    let disp_target = no_grad(|| {
        depth_to_displacement(
            &GeoField::new(FieldKind::Depth, sample.gt.data.detach())?,
            cams,
        )
    })?;
    let mut disp_mask = gt_mask.clone();
    for (m, &t) in disp_mask.iter_mut().zip(&disp_target.valid_or_all()) {
        *m = *m && t;
    }

    if cfg.depth_loss == DepthLossSpace::Displacement {
        let target =
            GeoField::new(FieldKind::Flow, disp_target.data)?.with_valid(disp_mask)?;
        return sequence_loss(preds, &target, None, cfg.gamma);
    }

    // supervise in (inverse-)depth space; each iterate converts its
    // displacement to depth and is masked by its own conversion validity
    let mut total: Option<Tensor<f32>> = None;
    for (i, pred) in preds.iter().enumerate() {
        let weight = cfg.gamma.powi((t_total - 1 - i) as i32) as f32;
        let flow = GeoField::new(FieldKind::Flow, pred.clone())?;
        let depth = displacement_to_depth(&flow, cams)?;
        let mut mask = gt_mask.clone();
        for (m, &v) in mask.iter_mut().zip(&depth.valid_or_all()) {
            *m = *m && v;
        }
        let term = if mask.iter().any(|&m| m) {
            let clamped = depth.data.clamp_min(1e-2);
            let gt_clamped = sample.gt.data.clamp_min(1e-2);
            let (p, t) = match cfg.depth_loss {
                DepthLossSpace::InverseDepth => {
                    let one = Tensor::scalar(1.0f32);
                    (one.div(&clamped)?, one.div(&gt_clamped)?)
                }
                DepthLossSpace::Depth => (clamped, gt_clamped),
                DepthLossSpace::Displacement => unreachable!("handled above"),
            };
            masked_l1(&p, &t.detach(), &mask)?.scale(weight)
        } else {
            masked_l1(pred, &disp_target.data, &disp_mask)?.scale(weight)
        };
        total = Some(match total {
            Some(acc) => acc.add(&term)?,
            None => term,
        });
    }
    total.ok_or_else(|| TrainError::Param("no iterates to supervise".into()))
}

/// Mean flow EPE of each refinement iterate over a dataset (no gradients).
pub fn mean_epe_per_step(
    model: &GeoVit<f32>,
    samples: &[SyntheticSample],
    iters: usize,
) -> Result<Vec<f64>, TrainError> {
    let mut sums = vec![0.0; iters];
    no_grad(|| {
        for s in samples {
            let i1n = normalize_image(&s.i1, &model.norm)?;
            let i2n = normalize_image(&s.i2, &model.norm)?;
            let steps = model.run_refinement(&i1n, &i2n, FieldKind::Flow, iters)?;
            for (k, st) in steps.iter().enumerate() {
                let pred = GeoField::new(FieldKind::Flow, st.g_full.clone())?;
                sums[k] += epe(&pred, &s.gt, None)?;
            }
        }
        Ok::<(), TrainError>(())
    })?;
    Ok(sums.iter().map(|s| s / samples.len() as f64).collect())
}

/// Optimizes the model end-to-end on the dataset, emitting a per-step loss
/// curve. On a non-finite loss the model rolls back to the last finite step
/// and `diverged_at` is set.
pub fn train_toy(
    mut model: GeoVit<f32>,
    cfg: &TrainConfig,
    dataset: &[SyntheticSample],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Param("dataset is empty".into()));
    }

    // mark trainable leaves
    for (name, t) in model.named_params_mut() {
        if is_trainable(&name, cfg) {
            *t = t.detach().requires_grad();
        } else {
            *t = t.detach();
        }
    }

    let mut opt = AdamW::new(cfg.weight_decay);
    let sched = OneCycle::new(cfg.peak_lr, cfg.steps, cfg.warmup_frac);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut snapshot: Vec<(String, Tensor<f32>)> = model.named_params();

    for step in 0..cfg.steps {
        let lr = sched.lr(step);
        let mut total: Option<Tensor<f32>> = None;
        for _ in 0..cfg.batch {
            let idx = rng.gen_range(0..dataset.len());
            let loss = sample_loss(&model, &dataset[idx], cfg)?;
            total = Some(match total {
                Some(acc) => acc.add(&loss)?,
                None => loss,
            });
        }
        let loss = total
            .expect("batch >= 1")
            .scale(1.0 / cfg.batch as f32);
        let loss_val = loss.item() as f64;
        if !loss_val.is_finite() {
            // roll back to the last finite parameters
            let mut saved = snapshot;
            for ((_, slot), (_, value)) in model.named_params_mut().iter_mut().zip(&mut saved) {
                **slot = value.detach();
            }
            return Ok(TrainOutcome {
                model,
                curve,
                diverged_at: Some(step),
            });
        }
        backward(&loss)?;

        let mut trainable: Vec<(String, &mut Tensor<f32>)> = model
            .named_params_mut()
            .into_iter()
            .filter(|(n, _)| is_trainable(n, cfg))
            .collect();
        clip_global_norm(&mut trainable, cfg.clip_norm);
        opt.step(&mut trainable, lr);

        curve.push(CurvePoint {
            step,
            lr,
            loss: loss_val,
        });
        snapshot = model.named_params();
    }

    Ok(TrainOutcome {
        model,
        curve,
        diverged_at: None,
    })
}
