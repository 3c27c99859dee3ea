//! Tiled inference: run the fixed-input-size model over overlapping crops
//! and blend predictions with separable hat weights.

use crate::error::PlanError;
use crate::geometry::{CameraPair, FieldKind, GeoField};
use crate::refine::GeoVit;
use crate::tensor::Tensor;

/// Overlapping tile layout with blending weights.
#[derive(Clone, Debug)]
pub struct TilePlan {
    pub image_h: usize,
    pub image_w: usize,
    pub tile_h: usize,
    pub tile_w: usize,
    pub stride: usize,
    /// `(y, x)` origins, row-major traversal order.
    pub tiles: Vec<(usize, usize)>,
}

fn origins(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    if extent <= tile {
        return vec![0];
    }
    let mut out = Vec::new();
    let mut pos = 0usize;
    loop {
        let clamped = pos.min(extent - tile);
        if out.last() != Some(&clamped) {
            out.push(clamped);
        }
        if pos + tile >= extent {
            break;
        }
        pos += stride;
    }
    out
}

impl TilePlan {
    /// Default evaluation stride.
    pub const DEFAULT_STRIDE: usize = 224;

    pub fn new(
        image_h: usize,
        image_w: usize,
        tile_h: usize,
        tile_w: usize,
        stride: usize,
    ) -> Result<Self, PlanError> {
        if tile_h == 0 || tile_w == 0 || image_h == 0 || image_w == 0 {
            return Err(PlanError::ZeroCoverage);
        }
        if stride == 0 || stride > tile_h.min(tile_w) {
            return Err(PlanError::Invalid(format!(
                "stride {stride} must be in 1..={} to cover every pixel",
                tile_h.min(tile_w)
            )));
        }
        let ys = origins(image_h, tile_h, stride);
        let xs = origins(image_w, tile_w, stride);
        let mut tiles = Vec::with_capacity(ys.len() * xs.len());
        for &y in &ys {
            for &x in &xs {
                tiles.push((y, x));
            }
        }
        Ok(TilePlan {
            image_h,
            image_w,
            tile_h,
            tile_w,
            stride,
            tiles,
        })
    }

    /// Separable triangular blending profile, strictly positive everywhere.
    pub fn hat_profile(extent: usize) -> Vec<f64> {
        let c = (extent as f64 - 1.0) / 2.0;
        (0..extent)
            .map(|i| 1.0 - (i as f64 - c).abs() / (c + 1.0))
            .collect()
    }

    /// Raw (unnormalized) per-pixel blend weight sums over the whole image.
    pub fn raw_weight_sums(&self) -> Vec<f64> {
        let hy = Self::hat_profile(self.tile_h);
        let hx = Self::hat_profile(self.tile_w);
        let mut acc = vec![0.0; self.image_h * self.image_w];
        for &(ty, tx) in &self.tiles {
            for iy in 0..self.tile_h.min(self.image_h - ty) {
                for ix in 0..self.tile_w.min(self.image_w - tx) {
                    acc[(ty + iy) * self.image_w + tx + ix] += hy[iy] * hx[ix];
                }
            }
        }
        acc
    }
}

fn crop_chw(t: &Tensor<f32>, y0: usize, x0: usize, th: usize, tw: usize) -> Tensor<f32> {
    let (c, _h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let src = t.data();
    let mut out = Vec::with_capacity(c * th * tw);
    for ci in 0..c {
        for y in 0..th {
            let base = (ci * t.shape()[1] + y0 + y) * w + x0;
            out.extend_from_slice(&src[base..base + tw]);
        }
    }
    Tensor::from_vec(out, &[c, th, tw]).expect("crop bounds checked by the plan")
}

/// Pads an image to at least `(th, tw)` by edge replication.
fn pad_replicate(t: &Tensor<f32>, th: usize, tw: usize) -> Tensor<f32> {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if h >= th && w >= tw {
        return t.clone();
    }
    let (nh, nw) = (h.max(th), w.max(tw));
    let src = t.data();
    let mut out = Vec::with_capacity(c * nh * nw);
    for ci in 0..c {
        for y in 0..nh {
            let sy = y.min(h - 1);
            for x in 0..nw {
                let sx = x.min(w - 1);
                out.push(src[(ci * h + sy) * w + sx]);
            }
        }
    }
    Tensor::from_vec(out, &[c, nh, nw]).expect("padded shape is consistent")
}

/// Runs the model over every tile of the plan and blends the overlapping
/// predictions. A single tile covering the image exactly returns the
/// untiled result unchanged. Images smaller than the tile are padded by
/// replication and the output cropped back.
pub fn tiled_infer(
    model: &GeoVit<f32>,
    i1: &Tensor<f32>,
    i2: &Tensor<f32>,
    task: FieldKind,
    iters: usize,
    cams: Option<&CameraPair>,
    plan: &TilePlan,
) -> Result<GeoField<f32>, PlanError> {
    if plan.tiles.is_empty() {
        return Err(PlanError::ZeroCoverage);
    }
    let (h, w) = (plan.image_h, plan.image_w);
    if i1.shape() != [3, h, w] || i2.shape() != [3, h, w] {
        return Err(PlanError::Invalid(format!(
            "plan is for {h}x{w}, images are {:?}",
            i1.shape()
        )));
    }
    let (th, tw) = (plan.tile_h, plan.tile_w);

    // images smaller than the tile: pad, run one tile, crop back
    if h < th || w < tw {
        let p1 = pad_replicate(i1, th, tw);
        let p2 = pad_replicate(i2, th, tw);
        let field = model.run_inference(&p1, &p2, task, iters, cams)?;
        let data = crop_chw(&field.data, 0, 0, h.min(th), w.min(tw));
        let mut out = GeoField::new(task, data).map_err(PlanError::Tensor)?;
        if let Some(valid) = field.valid {
            let mut cropped = Vec::with_capacity(h * w);
            for y in 0..h {
                cropped.extend_from_slice(&valid[y * tw..y * tw + w]);
            }
            out = out.with_valid(cropped).map_err(PlanError::Tensor)?;
        }
        return Ok(out);
    }

    // exact single-tile fast path: bit-identical to untiled inference
    if plan.tiles.len() == 1 && th == h && tw == w {
        return Ok(model.run_inference(i1, i2, task, iters, cams)?);
    }

    let channels = task.channels();
    let hy = TilePlan::hat_profile(th);
    let hx = TilePlan::hat_profile(tw);
    let mut acc = vec![0.0f64; channels * h * w];
    let mut wsum = vec![0.0f64; h * w];
    for &(ty, tx) in &plan.tiles {
        let c1 = crop_chw(i1, ty, tx, th, tw);
        let c2 = crop_chw(i2, ty, tx, th, tw);
        let tile_cams = cams.map(|c| c.cropped(tx as f64, ty as f64));
        let field = model.run_inference(&c1, &c2, task, iters, tile_cams.as_ref())?;
        let valid = field.valid_or_all();
        let data = field.data.data();
        for iy in 0..th {
            for ix in 0..tw {
                if !valid[iy * tw + ix] {
                    continue;
                }
                let wgt = hy[iy] * hx[ix];
                let gi = (ty + iy) * w + tx + ix;
                wsum[gi] += wgt;
                for ci in 0..channels {
                    acc[ci * h * w + gi] += wgt * data[(ci * th + iy) * tw + ix] as f64;
                }
            }
        }
    }

    let mut data = vec![0.0f32; channels * h * w];
    let mut valid = vec![false; h * w];
    for gi in 0..h * w {
        if wsum[gi] > 0.0 {
            valid[gi] = true;
            for ci in 0..channels {
                data[ci * h * w + gi] = (acc[ci * h * w + gi] / wsum[gi]) as f32;
            }
        }
    }
    let field = GeoField::new(task, Tensor::from_vec(data, &[channels, h, w]).map_err(PlanError::Tensor)?)
        .map_err(PlanError::Tensor)?;
    Ok(field.with_valid(valid).map_err(PlanError::Tensor)?)
}
