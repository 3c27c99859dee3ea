//! Decoding heads: the single-shot linear head and the iterative
//! warp-and-refine loop.
//!
//! The loop keeps a coarse estimate `g` on the token grid. Each step warps
//! the target frame by the upsampled estimate, re-encodes the pair, and a
//! separable ConvGRU turns the fresh features plus motion features into a
//! residual update. A learned convex-combination mask upsamples the coarse
//! field to full resolution.
//!
//! Stereo rides the same machinery as one-dimensional flow: the disparity
//! state embeds as the flow `(-d, 0)` for warping and motion encoding, and
//! only the horizontal component of the residual is kept (negated back into
//! disparity space). Depth runs a flow-valued loop and converts the final
//! displacement to depth through the camera pair.


use rand::Rng;

use crate::error::{GeometryError, TensorError};
use crate::geometry::{
    disparity_embed, displacement_to_depth, warp, CameraPair, FieldKind, GeoField,
};
use crate::ops::PadMode;
use crate::tensor::{Element, Tensor};
use crate::vit::{encode_pair, normalize_image, ImageNorm, ViTConfig, ViTWeights};

/// Decoder width hyperparameters.
#[derive(Clone, Debug)]
pub struct DecoderConfig {
    pub hidden_dim: usize,
    pub motion_dim: usize,
    /// Context projection width; the first `hidden_dim` channels initialize
    /// the GRU hidden state, the rest feed every step.
    pub context_dim: usize,
    pub flow_mid: usize,
    pub mask_mid: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden_dim: 128,
            motion_dim: 128,
            context_dim: 256,
            flow_mid: 256,
            mask_mid: 256,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.context_dim <= self.hidden_dim {
            return Err(TensorError::Domain {
                op: "DecoderConfig",
                msg: format!(
                    "context_dim {} must exceed hidden_dim {}",
                    self.context_dim, self.hidden_dim
                ),
            });
        }
        Ok(())
    }

    fn ctx_input(&self) -> usize {
        self.context_dim - self.hidden_dim
    }

    fn gru_input(&self) -> usize {
        self.ctx_input() + self.motion_dim
    }
}

/// Separable ConvGRU gate parameters: one 1x5 and one 5x1 convolution per
/// gate (update, reset, candidate), six convolutions in total.
#[derive(Clone, Debug)]
pub struct GruWeights<T: Element> {
    pub hz_w: Tensor<T>,
    pub hz_b: Tensor<T>,
    pub hr_w: Tensor<T>,
    pub hr_b: Tensor<T>,
    pub hq_w: Tensor<T>,
    pub hq_b: Tensor<T>,
    pub vz_w: Tensor<T>,
    pub vz_b: Tensor<T>,
    pub vr_w: Tensor<T>,
    pub vr_b: Tensor<T>,
    pub vq_w: Tensor<T>,
    pub vq_b: Tensor<T>,
}

/// All refinement-decoder parameters.
#[derive(Clone, Debug)]
pub struct DecoderWeights<T: Element> {
    /// 1x1 projection from encoder features to context channels.
    pub ctx_w: Tensor<T>,
    pub ctx_b: Tensor<T>,
    /// Motion encoder: 7x7 then 3x3 on the 2-channel coarse field.
    pub motion1_w: Tensor<T>,
    pub motion1_b: Tensor<T>,
    pub motion2_w: Tensor<T>,
    pub motion2_b: Tensor<T>,
    pub gru: GruWeights<T>,
    /// Residual head: 3x3 -> relu -> 3x3 to 2 channels.
    pub flow1_w: Tensor<T>,
    pub flow1_b: Tensor<T>,
    pub flow2_w: Tensor<T>,
    pub flow2_b: Tensor<T>,
    /// Convex-upsampling mask head: 3x3 -> relu -> 1x1 to 9*patch^2 logits.
    pub mask1_w: Tensor<T>,
    pub mask1_b: Tensor<T>,
    pub mask2_w: Tensor<T>,
    pub mask2_b: Tensor<T>,
}

impl<T: Element> DecoderWeights<T> {
    pub fn random_init<R: Rng>(
        dcfg: &DecoderConfig,
        vit_cfg: &ViTConfig,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        dcfg.validate()?;
        let d = vit_cfg.embed_dim;
        let h = dcfg.hidden_dim;
        let m = dcfg.motion_dim;
        let gin = dcfg.gru_input();
        let p2 = vit_cfg.patch * vit_cfg.patch;
        let tn = |shape: &[usize], rng: &mut R| Tensor::trunc_normal(shape, 0.02, rng);
        Ok(DecoderWeights {
            ctx_w: tn(&[dcfg.context_dim, d, 1, 1], rng),
            ctx_b: Tensor::zeros(&[dcfg.context_dim]),
            motion1_w: tn(&[m, 2, 7, 7], rng),
            motion1_b: Tensor::zeros(&[m]),
            motion2_w: tn(&[m, m, 3, 3], rng),
            motion2_b: Tensor::zeros(&[m]),
            gru: GruWeights {
                hz_w: tn(&[h, h + gin, 1, 5], rng),
                hz_b: Tensor::zeros(&[h]),
                hr_w: tn(&[h, h + gin, 1, 5], rng),
                hr_b: Tensor::zeros(&[h]),
                hq_w: tn(&[h, h + gin, 1, 5], rng),
                hq_b: Tensor::zeros(&[h]),
                vz_w: tn(&[h, h + gin, 5, 1], rng),
                vz_b: Tensor::zeros(&[h]),
                vr_w: tn(&[h, h + gin, 5, 1], rng),
                vr_b: Tensor::zeros(&[h]),
                vq_w: tn(&[h, h + gin, 5, 1], rng),
                vq_b: Tensor::zeros(&[h]),
            },
            flow1_w: tn(&[dcfg.flow_mid, h, 3, 3], rng),
            flow1_b: Tensor::zeros(&[dcfg.flow_mid]),
            flow2_w: tn(&[2, dcfg.flow_mid, 3, 3], rng),
            flow2_b: Tensor::zeros(&[2]),
            mask1_w: tn(&[dcfg.mask_mid, h, 3, 3], rng),
            mask1_b: Tensor::zeros(&[dcfg.mask_mid]),
            mask2_w: tn(&[9 * p2, dcfg.mask_mid, 1, 1], rng),
            mask2_b: Tensor::zeros(&[9 * p2]),
        })
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        self.param_list()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect()
    }

    fn param_list(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("context.weight", &self.ctx_w),
            ("context.bias", &self.ctx_b),
            ("motion1.weight", &self.motion1_w),
            ("motion1.bias", &self.motion1_b),
            ("motion2.weight", &self.motion2_w),
            ("motion2.bias", &self.motion2_b),
            ("gru.hz.weight", &self.gru.hz_w),
            ("gru.hz.bias", &self.gru.hz_b),
            ("gru.hr.weight", &self.gru.hr_w),
            ("gru.hr.bias", &self.gru.hr_b),
            ("gru.hq.weight", &self.gru.hq_w),
            ("gru.hq.bias", &self.gru.hq_b),
            ("gru.vz.weight", &self.gru.vz_w),
            ("gru.vz.bias", &self.gru.vz_b),
            ("gru.vr.weight", &self.gru.vr_w),
            ("gru.vr.bias", &self.gru.vr_b),
            ("gru.vq.weight", &self.gru.vq_w),
            ("gru.vq.bias", &self.gru.vq_b),
            ("flow1.weight", &self.flow1_w),
            ("flow1.bias", &self.flow1_b),
            ("flow2.weight", &self.flow2_w),
            ("flow2.bias", &self.flow2_b),
            ("mask1.weight", &self.mask1_w),
            ("mask1.bias", &self.mask1_b),
            ("mask2.weight", &self.mask2_w),
            ("mask2.bias", &self.mask2_b),
        ]
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            ("context.weight".into(), &mut self.ctx_w),
            ("context.bias".into(), &mut self.ctx_b),
            ("motion1.weight".into(), &mut self.motion1_w),
            ("motion1.bias".into(), &mut self.motion1_b),
            ("motion2.weight".into(), &mut self.motion2_w),
            ("motion2.bias".into(), &mut self.motion2_b),
            ("gru.hz.weight".into(), &mut self.gru.hz_w),
            ("gru.hz.bias".into(), &mut self.gru.hz_b),
            ("gru.hr.weight".into(), &mut self.gru.hr_w),
            ("gru.hr.bias".into(), &mut self.gru.hr_b),
            ("gru.hq.weight".into(), &mut self.gru.hq_w),
            ("gru.hq.bias".into(), &mut self.gru.hq_b),
            ("gru.vz.weight".into(), &mut self.gru.vz_w),
            ("gru.vz.bias".into(), &mut self.gru.vz_b),
            ("gru.vr.weight".into(), &mut self.gru.vr_w),
            ("gru.vr.bias".into(), &mut self.gru.vr_b),
            ("gru.vq.weight".into(), &mut self.gru.vq_w),
            ("gru.vq.bias".into(), &mut self.gru.vq_b),
            ("flow1.weight".into(), &mut self.flow1_w),
            ("flow1.bias".into(), &mut self.flow1_b),
            ("flow2.weight".into(), &mut self.flow2_w),
            ("flow2.bias".into(), &mut self.flow2_b),
            ("mask1.weight".into(), &mut self.mask1_w),
            ("mask1.bias".into(), &mut self.mask1_b),
            ("mask2.weight".into(), &mut self.mask2_w),
            ("mask2.bias".into(), &mut self.mask2_b),
        ]
    }
}

/// Linear decoding head: one affine map from a token feature to a
/// `2 x patch x patch` tile.
#[derive(Clone, Debug)]
pub struct LinearHeadWeights<T: Element> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Element> LinearHeadWeights<T> {
    pub fn random_init<R: Rng>(vit_cfg: &ViTConfig, rng: &mut R) -> Self {
        let out = 2 * vit_cfg.patch * vit_cfg.patch;
        LinearHeadWeights {
            w: Tensor::trunc_normal(&[out, vit_cfg.embed_dim], 0.02, rng),
            b: Tensor::zeros(&[out]),
        }
    }
}

/// Regresses a full-resolution field from token features: each token's
/// feature maps affinely to a `c x patch x patch` tile placed at its grid
/// position.
pub fn linear_head<T: Element>(
    features: &Tensor<T>,
    head: &LinearHeadWeights<T>,
    cfg: &ViTConfig,
) -> Result<Tensor<T>, TensorError> {
    let (hp, wp) = cfg.grid();
    let p = cfg.patch;
    if features.rank() != 2 || features.shape()[0] != hp * wp {
        return Err(TensorError::Shape {
            op: "linear_head",
            lhs: vec![hp * wp, cfg.embed_dim],
            rhs: features.shape().to_vec(),
        });
    }
    let out_per_token = head.w.shape()[0];
    let c = out_per_token / (p * p);
    let tiles = features
        .matmul(&head.w.t()?)?
        .add(&head.b.reshape(&[1, out_per_token])?)?;
    tiles
        .reshape(&[hp, wp, c, p, p])?
        .permute(&[2, 0, 3, 1, 4])?
        .reshape(&[c, hp * p, wp * p])
}

/// Shifts a `[c, H, W]` map by `(dy, dx)` with edge replication. A shift
/// along a length-1 axis is the identity.
fn shift_clamp<T: Element>(g: &Tensor<T>, dy: i64, dx: i64) -> Result<Tensor<T>, TensorError> {
    let h = g.shape()[1];
    let w = g.shape()[2];
    let shifted = match dy {
        -1 if h > 1 => Tensor::concat(&[&g.narrow(1, 0, 1)?, &g.narrow(1, 0, h - 1)?], 1)?,
        1 if h > 1 => Tensor::concat(&[&g.narrow(1, 1, h - 1)?, &g.narrow(1, h - 1, 1)?], 1)?,
        _ => g.clone(),
    };
    match dx {
        -1 if w > 1 => Tensor::concat(
            &[&shifted.narrow(2, 0, 1)?, &shifted.narrow(2, 0, w - 1)?],
            2,
        ),
        1 if w > 1 => Tensor::concat(
            &[&shifted.narrow(2, 1, w - 1)?, &shifted.narrow(2, w - 1, 1)?],
            2,
        ),
        _ => Ok(shifted),
    }
}

/// Upsamples a coarse field `[c, Hp, Wp]` to `[c, Hp*patch, Wp*patch]`: per
/// fine pixel, a softmax over 9 logits picks a convex combination of the
/// 3x3 coarse neighborhood (edge-replicated), and values are scaled by
/// `patch` to convert grid displacements into pixel displacements.
pub fn convex_upsample<T: Element>(
    g: &Tensor<T>,
    mask_logits: &Tensor<T>,
    patch: usize,
) -> Result<Tensor<T>, TensorError> {
    let (c, hp, wp) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    let p2 = patch * patch;
    if mask_logits.rank() != 3
        || mask_logits.shape() != [9 * p2, hp, wp]
        || g.rank() != 3
    {
        return Err(TensorError::Shape {
            op: "convex_upsample",
            lhs: g.shape().to_vec(),
            rhs: mask_logits.shape().to_vec(),
        });
    }
    let mut neighbors = Vec::with_capacity(9);
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            neighbors.push(shift_clamp(g, dy, dx)?.reshape(&[1, c, 1, hp, wp])?);
        }
    }
    let refs: Vec<&Tensor<T>> = neighbors.iter().collect();
    let stacked = Tensor::concat(&refs, 0)?;
    let weights = mask_logits
        .reshape(&[9, p2, hp, wp])?
        .softmax(0)?
        .reshape(&[9, 1, p2, hp, wp])?;
    stacked
        .mul(&weights)?
        .sum_axis(0, false)?
        .reshape(&[c, patch, patch, hp, wp])?
        .permute(&[0, 3, 1, 4, 2])?
        .reshape(&[c, hp * patch, wp * patch])
        .map(|t| t.scale(T::from_f64(patch as f64)))
}

/// Per-iteration carrier of the coarse estimate and the recurrent state.
#[derive(Clone, Debug)]
pub struct RefinementState<T: Element> {
    /// Coarse field on the token grid; 2 channels for flow, 1 for disparity.
    pub g: Tensor<T>,
    pub hidden: Option<Tensor<T>>,
    pub step: usize,
}

impl<T: Element> RefinementState<T> {
    /// The all-zero start state.
    pub fn zero(task: FieldKind, hp: usize, wp: usize) -> Self {
        let c = match task {
            FieldKind::Flow | FieldKind::Depth => 2,
            FieldKind::Disparity => 1,
        };
        RefinementState {
            g: Tensor::zeros(&[c, hp, wp]),
            hidden: None,
            step: 0,
        }
    }
}

/// One refinement step's products.
pub struct StepOutput<T: Element> {
    pub state: RefinementState<T>,
    pub mask_logits: Tensor<T>,
    /// Convex-upsampled full-resolution prediction after this step.
    pub g_full: Tensor<T>,
}

fn conv_relu<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    pad: (usize, usize),
) -> Result<Tensor<T>, TensorError> {
    Ok(x.conv2d(w, Some(b), (1, 1), pad)?.relu())
}

fn gru_pass<T: Element>(
    h: &Tensor<T>,
    x: &Tensor<T>,
    wz: &Tensor<T>,
    bz: &Tensor<T>,
    wr: &Tensor<T>,
    br: &Tensor<T>,
    wq: &Tensor<T>,
    bq: &Tensor<T>,
    pad: (usize, usize),
) -> Result<Tensor<T>, TensorError> {
    let hx = Tensor::concat(&[h, x], 0)?;
    let z = hx.conv2d(wz, Some(bz), (1, 1), pad)?.sigmoid();
    let r = hx.conv2d(wr, Some(br), (1, 1), pad)?.sigmoid();
    let rhx = Tensor::concat(&[&r.mul(h)?, x], 0)?;
    let q = rhx.conv2d(wq, Some(bq), (1, 1), pad)?.tanh();
    // h' = (1 - z) * h + z * q
    h.add(&z.mul(&q.sub(h)?)?)
}

/// The assembled model: encoder, refinement decoder, linear head and the
/// image-normalization convention carried by the checkpoint.
#[derive(Clone, Debug)]
pub struct GeoVit<T: Element> {
    pub vit_cfg: ViTConfig,
    pub dec_cfg: DecoderConfig,
    pub enc: ViTWeights<T>,
    pub dec: DecoderWeights<T>,
    pub linear: LinearHeadWeights<T>,
    pub norm: ImageNorm,
}

impl<T: Element> GeoVit<T> {
    pub fn random_init<R: Rng>(
        vit_cfg: ViTConfig,
        dec_cfg: DecoderConfig,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let enc = ViTWeights::random_init(&vit_cfg, rng).map_err(|e| TensorError::Domain {
            op: "GeoVit::random_init",
            msg: e.to_string(),
        })?;
        let dec = DecoderWeights::random_init(&dec_cfg, &vit_cfg, rng)?;
        let linear = LinearHeadWeights::random_init(&vit_cfg, rng);
        Ok(GeoVit {
            vit_cfg,
            dec_cfg,
            enc,
            dec,
            linear,
            norm: ImageNorm::default(),
        })
    }

    /// Stable `(path, tensor)` listing across encoder, decoder and head.
    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self
            .enc
            .named_params()
            .into_iter()
            .map(|(n, t)| (format!("vit.{n}"), t))
            .collect();
        out.extend(
            self.dec
                .named_params()
                .into_iter()
                .map(|(n, t)| (format!("decoder.{n}"), t)),
        );
        out.push(("linear_head.weight".into(), self.linear.w.clone()));
        out.push(("linear_head.bias".into(), self.linear.b.clone()));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = self
            .enc
            .named_params_mut()
            .into_iter()
            .map(|(n, t)| (format!("vit.{n}"), t))
            .collect();
        out.extend(
            self.dec
                .named_params_mut()
                .into_iter()
                .map(|(n, t)| (format!("decoder.{n}"), t)),
        );
        out.push(("linear_head.weight".into(), &mut self.linear.w));
        out.push(("linear_head.bias".into(), &mut self.linear.b));
        out
    }

    /// Marks every parameter as a differentiable leaf.
    pub fn enable_grads(&mut self) {
        for (_, t) in self.named_params_mut() {
            *t = t.detach().requires_grad();
        }
    }

    /// The flow-convention embedding of the loop state used for warping and
    /// motion encoding: flow states pass through, disparity states embed as
    /// `(-d, 0)`.
    fn state_flow_embed(
        &self,
        g: &Tensor<T>,
        task: FieldKind,
    ) -> Result<Tensor<T>, GeometryError> {
        match task {
            FieldKind::Flow | FieldKind::Depth => Ok(g.clone()),
            FieldKind::Disparity => {
                disparity_embed(&GeoField::new(FieldKind::Disparity, g.clone())?)
            }
        }
    }

    /// One iteration of the refinement loop on normalized images.
    pub fn refine_step(
        &self,
        i1n: &Tensor<T>,
        i2n: &Tensor<T>,
        state: &RefinementState<T>,
        task: FieldKind,
    ) -> Result<StepOutput<T>, GeometryError> {
        let cfg = &self.vit_cfg;
        let dec = &self.dec;
        let (hp, wp) = cfg.grid();
        let (h, w) = (cfg.image_h, cfg.image_w);
        let patch = cfg.patch;
        let expect_c = match task {
            FieldKind::Flow | FieldKind::Depth => 2,
            FieldKind::Disparity => 1,
        };
        if state.g.shape() != [expect_c, hp, wp] {
            return Err(TensorError::Shape {
                op: "refine_step",
                lhs: vec![expect_c, hp, wp],
                rhs: state.g.shape().to_vec(),
            }
            .into());
        }

        // warp the target frame by the upsampled current estimate
        let flow_coarse = self.state_flow_embed(&state.g, task)?;
        let flow_full = flow_coarse
            .bilinear_resize(h, w)?
            .scale(T::from_f64(patch as f64));
        let i2w = warp(i2n, &GeoField::new(FieldKind::Flow, flow_full)?, PadMode::Clamp)?;

        // fresh features for the (source, warped target) pair
        let feats = encode_pair(i1n, &i2w, &self.enc, cfg)?;
        let feats_chw = feats.t()?.reshape(&[cfg.embed_dim, hp, wp])?;
        let ctx = feats_chw.conv2d(&dec.ctx_w, Some(&dec.ctx_b), (1, 1), (0, 0))?;
        let hd = self.dec_cfg.hidden_dim;
        let ctx_inp = ctx.narrow(0, hd, self.dec_cfg.ctx_input())?.relu();
        let hidden = match &state.hidden {
            Some(h) => h.clone(),
            None => ctx.narrow(0, 0, hd)?.tanh(),
        };

        // motion features from the current estimate
        let motion = conv_relu(&flow_coarse, &dec.motion1_w, &dec.motion1_b, (3, 3))?;
        let motion = conv_relu(&motion, &dec.motion2_w, &dec.motion2_b, (1, 1))?;

        let x = Tensor::concat(&[&ctx_inp, &motion], 0)?;
        let g = &dec.gru;
        let hidden = gru_pass(&hidden, &x, &g.hz_w, &g.hz_b, &g.hr_w, &g.hr_b, &g.hq_w, &g.hq_b, (0, 2))?;
        let hidden = gru_pass(&hidden, &x, &g.vz_w, &g.vz_b, &g.vr_w, &g.vr_b, &g.vq_w, &g.vq_b, (2, 0))?;

        let delta = conv_relu(&hidden, &dec.flow1_w, &dec.flow1_b, (1, 1))?
            .conv2d(&dec.flow2_w, Some(&dec.flow2_b), (1, 1), (1, 1))?;
        let new_g = match task {
            FieldKind::Flow | FieldKind::Depth => state.g.add(&delta)?,
            // a horizontal flow residual du corresponds to dd = -du
            FieldKind::Disparity => state.g.sub(&delta.narrow(0, 0, 1)?)?,
        };

        let mask_logits = conv_relu(&hidden, &dec.mask1_w, &dec.mask1_b, (1, 1))?
            .conv2d(&dec.mask2_w, Some(&dec.mask2_b), (1, 1), (0, 0))?;
        let g_full = convex_upsample(&new_g, &mask_logits, patch)?;

        Ok(StepOutput {
            state: RefinementState {
                g: new_g,
                hidden: Some(hidden),
                step: state.step + 1,
            },
            mask_logits,
            g_full,
        })
    }

    /// Runs the loop for `iters` steps from the zero state on normalized
    /// images, returning every step's products (for sequence supervision).
    pub fn run_refinement(
        &self,
        i1n: &Tensor<T>,
        i2n: &Tensor<T>,
        task: FieldKind,
        iters: usize,
    ) -> Result<Vec<StepOutput<T>>, GeometryError> {
        let loop_task = match task {
            FieldKind::Depth => FieldKind::Flow,
            other => other,
        };
        let (hp, wp) = self.vit_cfg.grid();
        let mut state = RefinementState::zero(loop_task, hp, wp);
        let mut steps = Vec::with_capacity(iters);
        for _ in 0..iters {
            let out = self.refine_step(i1n, i2n, &state, loop_task)?;
            state = out.state.clone();
            steps.push(out);
        }
        Ok(steps)
    }

    /// Single-shot linear decoding on normalized images: returns a
    /// full-resolution 2-channel flow-valued field.
    pub fn linear_decode(
        &self,
        i1n: &Tensor<T>,
        i2n: &Tensor<T>,
    ) -> Result<Tensor<T>, TensorError> {
        let feats = encode_pair(i1n, i2n, &self.enc, &self.vit_cfg)?;
        linear_head(&feats, &self.linear, &self.vit_cfg)
    }

    /// Full inference on raw `[0,1]` images: normalizes, iterates `iters`
    /// refinement steps (depth runs a flow-valued loop), upsamples and, for
    /// depth, converts the displacement through the camera pair. Gradients
    /// are not recorded.
    pub fn run_inference(
        &self,
        i1: &Tensor<T>,
        i2: &Tensor<T>,
        task: FieldKind,
        iters: usize,
        cams: Option<&CameraPair>,
    ) -> Result<GeoField<T>, GeometryError> {
        if iters == 0 {
            return Err(TensorError::Domain {
                op: "run_inference",
                msg: "iters must be at least 1".into(),
            }
            .into());
        }
        crate::autodiff::no_grad(|| {
            let i1n = normalize_image(i1, &self.norm)?;
            let i2n = normalize_image(i2, &self.norm)?;
            let steps = self.run_refinement(&i1n, &i2n, task, iters)?;
            let g_full = steps.last().expect("iters >= 1").g_full.clone();
            match task {
                FieldKind::Flow => Ok(GeoField::new(FieldKind::Flow, g_full)?),
                FieldKind::Disparity => Ok(GeoField::new(FieldKind::Disparity, g_full)?),
                FieldKind::Depth => {
                    let cams = cams.ok_or_else(|| {
                        GeometryError::Degenerate(
                            "depth inference requires a camera pair".into(),
                        )
                    })?;
                    let flow = GeoField::new(FieldKind::Flow, g_full)?;
                    displacement_to_depth(&flow, cams)
                }
            }
        })
    }
}

impl<T: Element> GeoVit<T> {
    /// Single-shot inference through the linear head on raw `[0,1]` images.
    /// The head regresses a flow-valued field; stereo takes the negated
    /// horizontal channel as disparity and depth converts through the
    /// camera pair.
    pub fn run_linear_inference(
        &self,
        i1: &Tensor<T>,
        i2: &Tensor<T>,
        task: FieldKind,
        cams: Option<&CameraPair>,
    ) -> Result<GeoField<T>, GeometryError> {
        crate::autodiff::no_grad(|| {
            let i1n = normalize_image(i1, &self.norm)?;
            let i2n = normalize_image(i2, &self.norm)?;
            let flow = self.linear_decode(&i1n, &i2n)?;
            match task {
                FieldKind::Flow => Ok(GeoField::new(FieldKind::Flow, flow)?),
                FieldKind::Disparity => {
                    let d = flow.narrow(0, 0, 1)?.neg();
                    Ok(GeoField::new(FieldKind::Disparity, d)?)
                }
                FieldKind::Depth => {
                    let cams = cams.ok_or_else(|| {
                        GeometryError::Degenerate(
                            "depth inference requires a camera pair".into(),
                        )
                    })?;
                    displacement_to_depth(&GeoField::new(FieldKind::Flow, flow)?, cams)
                }
            }
        })
    }
}

/// Reference convex upsampling by direct per-pixel loops (oracle for tests).
#[doc(hidden)]
pub fn convex_upsample_naive<T: Element>(
    g: &Tensor<T>,
    mask_logits: &Tensor<T>,
    patch: usize,
) -> Tensor<T> {
    let (c, hp, wp) = (g.shape()[0], g.shape()[1], g.shape()[2]);
    let p2 = patch * patch;
    let (h, w) = (hp * patch, wp * patch);
    let gd = g.data();
    let md = mask_logits.data();
    let mut out = vec![T::zero(); c * h * w];
    for i in 0..hp {
        for j in 0..wp {
            for sub in 0..p2 {
                // softmax over the 9 neighbor logits of this fine pixel
                let logits: Vec<f64> = (0..9)
                    .map(|k| md[((k * p2 + sub) * hp + i) * wp + j].as_f64())
                    .collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
                let z: f64 = exps.iter().sum();
                let (di, dj) = (sub / patch, sub % patch);
                for ci in 0..c {
                    let mut acc = 0.0;
                    for (k, e) in exps.iter().enumerate() {
                        let (oy, ox) = ((k / 3) as i64 - 1, (k % 3) as i64 - 1);
                        let ny = (i as i64 + oy).clamp(0, hp as i64 - 1) as usize;
                        let nx = (j as i64 + ox).clamp(0, wp as i64 - 1) as usize;
                        acc += e / z * gd[(ci * hp + ny) * wp + nx].as_f64();
                    }
                    let y = i * patch + di;
                    let x = j * patch + dj;
                    out[(ci * h + y) * w + x] = T::from_f64(acc * patch as f64);
                }
            }
        }
    }
    Tensor::from_vec(out, &[c, h, w]).expect("shape is consistent")
}

/// Expands a coarse field directly (no learned mask): bilinear resize plus
/// value scaling. This is what feeds the warp inside the loop.
pub fn upsample_for_warp<T: Element>(
    g: &Tensor<T>,
    patch: usize,
) -> Result<Tensor<T>, TensorError> {
    let (h, w) = (g.shape()[1] * patch, g.shape()[2] * patch);
    Ok(g.bilinear_resize(h, w)?.scale(T::from_f64(patch as f64)))
}
