//! Synthetic ground-truth data: band-limited textures deformed by exact
//! analytic fields, so the warp consistency `warp(I2, gt) == I1` holds by
//! construction.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::no_grad;
use crate::error::TrainError;
use crate::geometry::{depth_to_displacement, warp, CameraPair, FieldKind, GeoField};
use crate::ops::PadMode;
use crate::tensor::Tensor;

/// Knobs for [`make_synthetic`].
#[derive(Clone, Debug)]
pub struct SynthParams {
    /// Bound on the absolute displacement (pixels).
    pub max_disp: f64,
    /// Coarse-grid divisor of the base texture octave.
    pub texture_scale: usize,
    /// Required divisor of the sample extents (the model's patch size).
    pub multiple_of: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            max_disp: 3.0,
            texture_scale: 8,
            multiple_of: 16,
        }
    }
}

/// A rendered pair with its exact ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticSample {
    pub i1: Tensor<f32>,
    pub i2: Tensor<f32>,
    pub gt: GeoField<f32>,
    pub cams: Option<CameraPair>,
    pub seed: u64,
}

/// Smooth random texture in roughly `[0.05, 1.0]`: a coarse octave plus a
/// half-amplitude finer one, bilinearly upsampled.
fn render_texture(h: usize, w: usize, scale: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let coarse = |div: usize, rng: &mut ChaCha8Rng| {
        let ch = (h / div).max(2);
        let cw = (w / div).max(2);
        Tensor::<f32>::rand_uniform(&[3, ch, cw], 0.0, 1.0, rng)
            .bilinear_resize(h, w)
            .expect("texture resize")
    };
    let base = coarse(scale, rng);
    let fine = coarse((scale / 2).max(1), rng);
    base.scale(0.6)
        .add(&fine.scale(0.3))
        .expect("same shape")
        .add_scalar(0.05)
}

/// Affine-plus-sinusoid scalar field on the unit square, evaluated per pixel.
fn smooth_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a = rng.gen_range(-1.0..1.0);
    let bx = rng.gen_range(-1.0..1.0);
    let by = rng.gen_range(-1.0..1.0);
    let amp = rng.gen_range(0.0..1.0);
    let fx = rng.gen_range(0.5..1.5);
    let fy = rng.gen_range(0.5..1.5);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let xn = x as f64 / (w - 1) as f64;
            let yn = y as f64 / (h - 1) as f64;
            out.push(
                a + bx * (xn - 0.5)
                    + by * (yn - 0.5)
                    + amp * (std::f64::consts::TAU * (fx * xn + fy * yn) + phase).sin(),
            );
        }
    }
    out
}

fn in_bounds_mask(u: &[f64], v: &[f64], h: usize, w: usize) -> Vec<bool> {
    let mut mask = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = x as f64 + u[i];
            let sy = y as f64 + v[i];
            mask.push(sx >= 0.0 && sx <= (w - 1) as f64 && sy >= 0.0 && sy <= (h - 1) as f64);
        }
    }
    mask
}

fn validate(kind: FieldKind, h: usize, w: usize, params: &SynthParams) -> Result<(), TrainError> {
    let m = params.multiple_of.max(1);
    if h < 2 * m || w < 2 * m || h % m != 0 || w % m != 0 {
        return Err(TrainError::Param(format!(
            "{}x{} must be a multiple of {m} and at least {}x{}",
            h,
            w,
            2 * m,
            2 * m
        )));
    }
    if !params.max_disp.is_finite() || params.max_disp < 0.0 {
        return Err(TrainError::Param(format!(
            "max_disp must be a non-negative finite value, got {}",
            params.max_disp
        )));
    }
    if kind == FieldKind::Depth && params.max_disp == 0.0 {
        return Err(TrainError::Param(
            "depth samples need a positive max_disp".into(),
        ));
    }
    Ok(())
}

/// Renders one sample. The target view is the texture; the source view is
/// the texture backward-warped by the exact field, so `warp(i2, gt)`
/// reproduces `i1` on in-bounds pixels.
pub fn make_synthetic(
    kind: FieldKind,
    h: usize,
    w: usize,
    seed: u64,
    params: &SynthParams,
) -> Result<SyntheticSample, TrainError> {
    validate(kind, h, w, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let i2 = render_texture(h, w, params.texture_scale, &mut rng);

    let (flow_u, flow_v, gt, cams): (Vec<f64>, Vec<f64>, GeoField<f32>, Option<CameraPair>) =
        match kind {
            FieldKind::Flow => {
                let mut u = smooth_field(h, w, &mut rng);
                let mut v = smooth_field(h, w, &mut rng);
                let peak = u
                    .iter()
                    .chain(&v)
                    .fold(0.0f64, |m, &x| m.max(x.abs()))
                    .max(1e-9);
                let target = params.max_disp * rng.gen_range(0.6..1.0);
                let s = target / peak;
                u.iter_mut().for_each(|x| *x *= s);
                v.iter_mut().for_each(|x| *x *= s);
                let mut data: Vec<f32> = u.iter().map(|&x| x as f32).collect();
                data.extend(v.iter().map(|&x| x as f32));
                let gt = GeoField::new(FieldKind::Flow, Tensor::from_vec(data, &[2, h, w])?)?;
                (u, v, gt, None)
            }
            FieldKind::Disparity => {
                let raw = smooth_field(h, w, &mut rng);
                let (lo, hi) = raw
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                        (lo.min(x), hi.max(x))
                    });
                let span = (hi - lo).max(1e-9);
                let target = params.max_disp * rng.gen_range(0.6..1.0);
                let d: Vec<f64> = raw.iter().map(|&x| target * (x - lo) / span).collect();
                let u: Vec<f64> = d.iter().map(|&x| -x).collect();
                let v = vec![0.0; h * w];
                let gt = GeoField::new(
                    FieldKind::Disparity,
                    Tensor::from_vec(d.iter().map(|&x| x as f32).collect(), &[1, h, w])?,
                )?;
                (u, v, gt, None)
            }
            FieldKind::Depth => {
                let z0 = rng.gen_range(4.0..8.0);
                let sx = rng.gen_range(-1.0..1.0);
                let sy = rng.gen_range(-1.0..1.0);
                let mut depth = Vec::with_capacity(h * w);
                for y in 0..h {
                    for x in 0..w {
                        let xn = x as f64 / (w - 1) as f64;
                        let yn = y as f64 / (h - 1) as f64;
                        depth.push(z0 + sx * (xn - 0.5) + sy * (yn - 0.5));
                    }
                }
                let fx = 0.8 * w as f64;
                let k = Matrix3::new(
                    fx,
                    0.0,
                    w as f64 / 2.0,
                    0.0,
                    fx,
                    h as f64 / 2.0,
                    0.0,
                    0.0,
                    1.0,
                );
                let axis = nalgebra::Unit::new_normalize(Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ));
                let mut angle = rng.gen_range(-0.02..0.02);
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.3..0.3),
                );
                let dir = if dir.norm() < 1e-6 {
                    Vector3::new(1.0, 0.0, 0.0)
                } else {
                    dir.normalize()
                };
                let mut t_norm = rng.gen_range(0.1..0.4);

                let gt_depth = GeoField::new(
                    FieldKind::Depth,
                    Tensor::<f64>::from_vec(depth.clone(), &[1, h, w])?,
                )?;
                let mut found = None;
                for _ in 0..40 {
                    let r = nalgebra::Rotation3::from_axis_angle(&axis, angle);
                    let cams = CameraPair::new(k, k, *r.matrix(), dir * t_norm)
                        .map_err(|e| TrainError::Param(e.to_string()))?;
                    let disp = depth_to_displacement(&gt_depth, &cams)?;
                    let peak = disp
                        .data
                        .data()
                        .iter()
                        .fold(0.0f64, |m, &x| m.max(x.abs()));
                    let all_valid = disp.valid_or_all().iter().all(|&v| v);
                    if peak <= params.max_disp && all_valid {
                        found = Some((cams, disp));
                        break;
                    }
                    angle *= 0.7;
                    t_norm *= 0.7;
                }
                let Some((cams, disp)) = found else {
                    return Err(TrainError::Param(format!(
                        "could not fit a camera pair within max_disp {}",
                        params.max_disp
                    )));
                };
                let n = h * w;
                let u: Vec<f64> = disp.data.data()[..n].to_vec();
                let v: Vec<f64> = disp.data.data()[n..].to_vec();
                let gt = GeoField::new(
                    FieldKind::Depth,
                    Tensor::from_vec(depth.iter().map(|&x| x as f32).collect(), &[1, h, w])?,
                )?;
                (u, v, gt, Some(cams))
            }
        };

    let mask = in_bounds_mask(&flow_u, &flow_v, h, w);
    let mut field_data: Vec<f32> = flow_u.iter().map(|&x| x as f32).collect();
    field_data.extend(flow_v.iter().map(|&x| x as f32));
    let warp_field = GeoField::new(FieldKind::Flow, Tensor::from_vec(field_data, &[2, h, w])?)?;
    let i1 = no_grad(|| warp(&i2, &warp_field, PadMode::Clamp))?;
    let gt = gt.with_valid(mask)?;

    Ok(SyntheticSample {
        i1,
        i2,
        gt,
        cams,
        seed,
    })
}
