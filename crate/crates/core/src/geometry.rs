//! Task geometry: per-pixel geometric fields, the pinhole camera pair,
//! differentiable backward warping and the depth/displacement conversions.

use nalgebra::{Matrix3, Vector3};

use crate::error::{GeometryError, TensorError};
use crate::ops::PadMode;
use crate::tensor::{Element, Tensor};

/// What a [`GeoField`] measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    /// 2-channel pixel displacement (u right, v down).
    Flow,
    /// 1-channel horizontal disparity, non-negative for physical scenes;
    /// a pixel in the left (source) image matches column `x - d` on the right.
    Disparity,
    /// 1-channel metric depth, strictly positive where valid.
    Depth,
}

impl FieldKind {
    pub fn channels(self) -> usize {
        match self {
            FieldKind::Flow => 2,
            FieldKind::Disparity | FieldKind::Depth => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Flow => "flow",
            FieldKind::Disparity => "disparity",
            FieldKind::Depth => "depth",
        }
    }
}

/// A dense per-pixel geometric prediction or ground truth, optionally with a
/// per-pixel validity mask (row-major `H*W` booleans).
#[derive(Clone, Debug)]
pub struct GeoField<T: Element> {
    pub kind: FieldKind,
    pub data: Tensor<T>,
    pub valid: Option<Vec<bool>>,
}

impl<T: Element> GeoField<T> {
    pub fn new(kind: FieldKind, data: Tensor<T>) -> Result<Self, TensorError> {
        if data.rank() != 3 || data.shape()[0] != kind.channels() {
            return Err(TensorError::Shape {
                op: "GeoField::new",
                lhs: vec![kind.channels()],
                rhs: data.shape().to_vec(),
            });
        }
        Ok(GeoField {
            kind,
            data,
            valid: None,
        })
    }

    pub fn with_valid(mut self, valid: Vec<bool>) -> Result<Self, TensorError> {
        if valid.len() != self.h() * self.w() {
            return Err(TensorError::Shape {
                op: "GeoField::with_valid",
                lhs: vec![self.h() * self.w()],
                rhs: vec![valid.len()],
            });
        }
        self.valid = Some(valid);
        Ok(self)
    }

    pub fn h(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn w(&self) -> usize {
        self.data.shape()[2]
    }

    /// Validity mask, defaulting to all-true.
    pub fn valid_or_all(&self) -> Vec<bool> {
        self.valid
            .clone()
            .unwrap_or_else(|| vec![true; self.h() * self.w()])
    }
}

/// Intrinsics and relative pose linking a source and a target view.
/// `r`/`t` map source-camera coordinates into the target camera.
#[derive(Clone, Debug)]
pub struct CameraPair {
    pub k_src: Matrix3<f64>,
    pub k_tgt: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl CameraPair {
    pub fn new(
        k_src: Matrix3<f64>,
        k_tgt: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho >= 1e-6 {
            return Err(GeometryError::Degenerate(format!(
                "rotation is not orthonormal (max deviation {ortho:.2e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::Degenerate(
                "rotation determinant is not +1".into(),
            ));
        }
        for k in [&k_src, &k_tgt] {
            if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
                return Err(GeometryError::Degenerate(
                    "focal lengths must be positive".into(),
                ));
            }
        }
        Ok(CameraPair { k_src, k_tgt, r, t })
    }

    /// A rectified pair: shared intrinsics, identity rotation, pure
    /// horizontal baseline `b` (target camera displaced to the right).
    pub fn rectified(fx: f64, fy: f64, cx: f64, cy: f64, baseline: f64) -> Self {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        CameraPair {
            k_src: k,
            k_tgt: k,
            r: Matrix3::identity(),
            t: Vector3::new(-baseline, 0.0, 0.0),
        }
    }

    /// Shifts both principal points by `(-dx, -dy)`, matching a crop whose
    /// origin is at pixel `(dx, dy)`.
    pub fn cropped(&self, dx: f64, dy: f64) -> CameraPair {
        let mut k_src = self.k_src;
        let mut k_tgt = self.k_tgt;
        k_src[(0, 2)] -= dx;
        k_src[(1, 2)] -= dy;
        k_tgt[(0, 2)] -= dx;
        k_tgt[(1, 2)] -= dy;
        CameraPair {
            k_src,
            k_tgt,
            r: self.r,
            t: self.t,
        }
    }

    pub fn is_rectified(&self) -> bool {
        (self.r - Matrix3::identity()).abs().max() < 1e-12
            && self.t[1].abs() < 1e-12
            && self.t[2].abs() < 1e-12
            && (self.k_src - self.k_tgt).abs().max() < 1e-12
    }
}

/// Constant `[2, H, W]` tensor holding pixel coordinates: channel 0 is x
/// (column), channel 1 is y (row), matching the grid_sample convention.
pub fn base_grid<T: Element>(h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(2 * h * w);
    for _ in 0..h {
        for x in 0..w {
            data.push(T::from_f64(x as f64));
        }
    }
    for y in 0..h {
        for _ in 0..w {
            data.push(T::from_f64(y as f64));
        }
    }
    Tensor::from_parts(data, vec![2, h, w], None)
}

/// `t*mask + fill*(1-mask)` with a constant mask; gradients flow only
/// through kept pixels.
fn gate<T: Element>(t: &Tensor<T>, mask: &[bool], fill: f64) -> Result<Tensor<T>, TensorError> {
    let m: Vec<T> = mask
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    let fillv: Vec<T> = mask
        .iter()
        .map(|&b| if b { T::zero() } else { T::from_f64(fill) })
        .collect();
    let m = Tensor::from_vec(m, t.shape())?;
    let f = Tensor::from_vec(fillv, t.shape())?;
    t.mul(&m)?.add(&f)
}

/// Backward-warps `image` by a flow or disparity field: the output at pixel
/// `(x, y)` samples the image at `(x + u, y + v)`. Differentiable in both
/// the image and the field.
pub fn warp<T: Element>(
    image: &Tensor<T>,
    field: &GeoField<T>,
    pad: PadMode,
) -> Result<Tensor<T>, GeometryError> {
    let flow = match field.kind {
        FieldKind::Flow => field.data.clone(),
        FieldKind::Disparity => disparity_embed(field)?,
        FieldKind::Depth => return Err(GeometryError::BadKind("depth")),
    };
    if image.rank() != 3
        || image.shape()[1] != flow.shape()[1]
        || image.shape()[2] != flow.shape()[2]
    {
        return Err(TensorError::Shape {
            op: "warp",
            lhs: image.shape().to_vec(),
            rhs: flow.shape().to_vec(),
        }
        .into());
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let grid = base_grid::<T>(h, w).add(&flow)?;
    Ok(image.grid_sample(&grid, pad)?)
}

/// Embeds a disparity field as a 2-channel flow: channel 0 is `-d` (the
/// matching point sits `d` pixels to the left), channel 1 is zero.
pub fn disparity_embed<T: Element>(field: &GeoField<T>) -> Result<Tensor<T>, GeometryError> {
    if field.kind != FieldKind::Disparity {
        return Err(GeometryError::BadKind(field.kind.name()));
    }
    let u = field.data.neg();
    let zeros = Tensor::zeros(&[1, field.h(), field.w()]);
    Ok(Tensor::concat(&[&u, &zeros], 0)?)
}

/// Per-pixel projection constants:
/// `a = K_tgt * R * K_src^-1 * (x, y, 1)` as three `[1,H,W]` planes and
/// `b = K_tgt * t`.
struct ProjectionConstants<T: Element> {
    a: [Tensor<T>; 3],
    b: [f64; 3],
}

fn projection_constants<T: Element>(
    cams: &CameraPair,
    h: usize,
    w: usize,
) -> ProjectionConstants<T> {
    let m = cams.k_tgt
        * cams.r
        * cams
            .k_src
            .try_inverse()
            .expect("camera intrinsics are invertible by construction");
    let bv = cams.k_tgt * cams.t;
    let mut planes = [
        Vec::with_capacity(h * w),
        Vec::with_capacity(h * w),
        Vec::with_capacity(h * w),
    ];
    for y in 0..h {
        for x in 0..w {
            let p = m * Vector3::new(x as f64, y as f64, 1.0);
            planes[0].push(T::from_f64(p[0]));
            planes[1].push(T::from_f64(p[1]));
            planes[2].push(T::from_f64(p[2]));
        }
    }
    let mk = |v: Vec<T>| Tensor::from_parts(v, vec![1, h, w], None);
    ProjectionConstants {
        a: [
            mk(std::mem::take(&mut planes[0])),
            mk(std::mem::take(&mut planes[1])),
            mk(std::mem::take(&mut planes[2])),
        ],
        b: [bv[0], bv[1], bv[2]],
    }
}

/// Converts per-pixel depth to the pixel displacement that carries a source
/// pixel into the target view. Pixels whose projection lands behind the
/// target camera are marked invalid, not an error.
pub fn depth_to_displacement<T: Element>(
    depth: &GeoField<T>,
    cams: &CameraPair,
) -> Result<GeoField<T>, GeometryError> {
    if depth.kind != FieldKind::Depth {
        return Err(GeometryError::BadKind(depth.kind.name()));
    }
    let (h, w) = (depth.h(), depth.w());
    let pc = projection_constants::<T>(cams, h, w);
    let d = &depth.data;

    let denom = d.mul(&pc.a[2])?.add_scalar(T::from_f64(pc.b[2]));
    let mut valid = depth.valid_or_all();
    for (v, (&den, &dv)) in valid
        .iter_mut()
        .zip(denom.data().iter().zip(d.data()))
    {
        *v = *v && den.as_f64() > 1e-9 && dv.as_f64() > 0.0;
    }
    let denom_safe = gate(&denom, &valid, 1.0)?;

    let base = base_grid::<T>(h, w);
    let px = base.narrow(0, 0, 1)?;
    let py = base.narrow(0, 1, 1)?;
    let u = d
        .mul(&pc.a[0])?
        .add_scalar(T::from_f64(pc.b[0]))
        .div(&denom_safe)?
        .sub(&px)?;
    let v = d
        .mul(&pc.a[1])?
        .add_scalar(T::from_f64(pc.b[1]))
        .div(&denom_safe)?
        .sub(&py)?;
    let flow = Tensor::concat(&[&u, &v], 0)?;
    GeoField::new(FieldKind::Flow, flow)?
        .with_valid(valid)
        .map_err(Into::into)
}

/// Recovers per-pixel depth from a displacement field by solving, in the
/// least-squares sense, the two linear equations that place the displaced
/// point on the source pixel's epipolar curve. Inverse of
/// [`depth_to_displacement`] wherever the displacement is consistent.
pub fn displacement_to_depth<T: Element>(
    flow: &GeoField<T>,
    cams: &CameraPair,
) -> Result<GeoField<T>, GeometryError> {
    if flow.kind != FieldKind::Flow {
        return Err(GeometryError::BadKind(flow.kind.name()));
    }
    if cams.t.norm() == 0.0 {
        return Err(GeometryError::Degenerate(
            "zero baseline: depth is unobservable from displacement".into(),
        ));
    }
    let (h, w) = (flow.h(), flow.w());
    let pc = projection_constants::<T>(cams, h, w);
    let base = base_grid::<T>(h, w);
    let qx = base.narrow(0, 0, 1)?.add(&flow.data.narrow(0, 0, 1)?)?;
    let qy = base.narrow(0, 1, 1)?.add(&flow.data.narrow(0, 1, 1)?)?;

    // d * (a_i - q_i * a_2) = q_i * b_2 - b_i   for i in {x, y}
    let c1 = pc.a[0].sub(&qx.mul(&pc.a[2])?)?;
    let c2 = pc.a[1].sub(&qy.mul(&pc.a[2])?)?;
    let e1 = qx.scale(T::from_f64(pc.b[2])).add_scalar(T::from_f64(-pc.b[0]));
    let e2 = qy.scale(T::from_f64(pc.b[2])).add_scalar(T::from_f64(-pc.b[1]));

    let numer = c1.mul(&e1)?.add(&c2.mul(&e2)?)?;
    let denom = c1.mul(&c1)?.add(&c2.mul(&c2)?)?;

    let mut valid = flow.valid_or_all();
    for (v, &den) in valid.iter_mut().zip(denom.data()) {
        *v = *v && den.as_f64() > 1e-12;
    }
    let depth = numer.div(&gate(&denom, &valid, 1.0)?)?;
    for (v, &d) in valid.iter_mut().zip(depth.data()) {
        *v = *v && d.as_f64() > 0.0;
    }
    GeoField::new(FieldKind::Depth, depth)?
        .with_valid(valid)
        .map_err(Into::into)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow_field<T: Element>(u: f64, v: f64, h: usize, w: usize) -> GeoField<T> {
        let mut data = vec![T::from_f64(u); h * w];
        data.extend(vec![T::from_f64(v); h * w]);
        GeoField::new(FieldKind::Flow, Tensor::from_vec(data, &[2, h, w]).unwrap()).unwrap()
    }

    #[test]
    fn zero_field_warp_is_bit_exact_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Tensor::<f32>::randn(&[3, 6, 7], &mut rng);
        for pad in [PadMode::Clamp, PadMode::Zeros] {
            let out = warp(&img, &flow_field(0.0, 0.0, 6, 7), pad).unwrap();
            for (a, b) in img.data().iter().zip(out.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn integer_shift_with_clamp_matches_hand_result() {
        let img = Tensor::<f64>::from_vec(vec![0.0, 1.0, 2.0, 3.0], &[1, 1, 4]).unwrap();
        let out = warp(&img, &flow_field(1.0, 0.0, 1, 4), PadMode::Clamp).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0, 3.0]);
    }

    #[test]
    fn half_pixel_shift_averages_neighbors() {
        let img = Tensor::<f64>::from_vec(vec![0.0, 2.0], &[1, 1, 2]).unwrap();
        let out = warp(&img, &flow_field(0.5, 0.0, 1, 2), PadMode::Clamp).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn warp_size_mismatch_is_shape_error() {
        let img = Tensor::<f64>::zeros(&[1, 4, 4]);
        let res = warp(&img, &flow_field(0.0, 0.0, 3, 4), PadMode::Clamp);
        assert!(matches!(
            res,
            Err(GeometryError::Tensor(TensorError::Shape { .. }))
        ));
    }

    #[test]
    fn warp_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::<f64>::randn(&[2, 5, 5], &mut rng);
        // keep samples away from integer grid lines and borders
        let mut fd = Vec::with_capacity(50);
        for _ in 0..50 {
            fd.push(rng.gen_range(-1.0..1.0) + 0.3);
        }
        let field = Tensor::from_vec(fd, &[2, 5, 5]).unwrap();

        let f2 = field.clone();
        let report = finite_diff_check(
            move |img| {
                let gf = GeoField::new(FieldKind::Flow, f2.clone())?;
                let out = warp(img, &gf, PadMode::Clamp)
                    .map_err(|_| TensorError::Rank("warp".into()))?;
                out.sum_all()
            },
            &img,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "image grad: {}", report.max_rel_err);

        let i2 = img.clone();
        let report = finite_diff_check(
            move |f| {
                let gf = GeoField::new(FieldKind::Flow, f.clone())?;
                let out = warp(&i2, &gf, PadMode::Clamp)
                    .map_err(|_| TensorError::Rank("warp".into()))?;
                out.sum_all()
            },
            &field,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.pass(), "field grad: {}", report.max_rel_err);
    }

    #[test]
    fn composed_integer_warp_matches_on_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = Tensor::<f64>::randn(&[1, 8, 8], &mut rng);
        let f1 = flow_field::<f64>(0.4, -0.3, 8, 8);
        let f2 = flow_field::<f64>(1.0, 2.0, 8, 8);
        let sum = GeoField::new(FieldKind::Flow, f1.data.add(&f2.data).unwrap()).unwrap();
        let once = warp(&img, &sum, PadMode::Clamp).unwrap();
        let twice = warp(&warp(&img, &f2, PadMode::Clamp).unwrap(), &f1, PadMode::Clamp).unwrap();
        for y in 2..6 {
            for x in 2..5 {
                let i = y * 8 + x;
                assert!(
                    (once.data()[i] - twice.data()[i]).abs() < 1e-12,
                    "interior mismatch at ({y},{x})"
                );
            }
        }
    }

    #[test]
    fn identical_cameras_give_zero_displacement() {
        let cams = CameraPair::rectified(100.0, 100.0, 4.0, 3.0, 0.0);
        let depth = GeoField::new(
            FieldKind::Depth,
            Tensor::<f64>::full(&[1, 6, 8], 7.5),
        )
        .unwrap();
        let disp = depth_to_displacement(&depth, &cams).unwrap();
        assert!(disp.data.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rectified_pair_matches_fx_b_over_d() {
        let cams = CameraPair::rectified(100.0, 100.0, 4.0, 3.0, 0.1);
        let depth = GeoField::new(
            FieldKind::Depth,
            Tensor::<f64>::full(&[1, 6, 8], 10.0),
        )
        .unwrap();
        let disp = depth_to_displacement(&depth, &cams).unwrap();
        let n = 6 * 8;
        for &u in &disp.data.data()[..n] {
            assert!((u - (-1.0)).abs() < 1e-12, "u = {u}");
        }
        for &v in &disp.data.data()[n..] {
            assert!(v.abs() < 1e-9);
        }

        // doubling depth halves the displacement
        let depth2 = GeoField::new(
            FieldKind::Depth,
            Tensor::<f64>::full(&[1, 6, 8], 20.0),
        )
        .unwrap();
        let disp2 = depth_to_displacement(&depth2, &cams).unwrap();
        for &u in &disp2.data.data()[..n] {
            assert!((u - (-0.5)).abs() < 1e-12);
        }

        // and the inverse recovers d = fx*b/(-u)
        let back = displacement_to_depth(&disp, &cams).unwrap();
        for &d in back.data.data() {
            assert!((d - 10.0).abs() < 1e-9);
        }
    }

    fn random_cams(rng: &mut impl Rng) -> CameraPair {
        let fx = rng.gen_range(80.0..150.0);
        let fy = rng.gen_range(80.0..150.0);
        let k = Matrix3::new(fx, 0.0, 4.0, 0.0, fy, 3.0, 0.0, 0.0, 1.0);
        let axis = nalgebra::Unit::new_normalize(Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ));
        let angle = rng.gen_range(-0.05..0.05);
        let r = nalgebra::Rotation3::from_axis_angle(&axis, angle);
        let t = Vector3::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.1..0.1),
        );
        let t = if t.norm() < 1e-3 {
            Vector3::new(0.1, 0.0, 0.0)
        } else {
            t
        };
        CameraPair::new(k, k, *r.matrix(), t).unwrap()
    }

    #[test]
    fn depth_round_trip_over_random_cameras() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in 0..100 {
            let cams = random_cams(&mut rng);
            let d: Vec<f64> = (0..48).map(|_| rng.gen_range(2.0..20.0)).collect();
            let depth = GeoField::new(
                FieldKind::Depth,
                Tensor::<f64>::from_vec(d.clone(), &[1, 6, 8]).unwrap(),
            )
            .unwrap();
            let disp = depth_to_displacement(&depth, &cams).unwrap();
            let back = displacement_to_depth(&disp, &cams).unwrap();
            let valid = back.valid_or_all();
            assert!(valid.iter().filter(|&&v| v).count() > 0, "case {case}");
            for (i, (&orig, &rec)) in d.iter().zip(back.data.data()).enumerate() {
                if valid[i] {
                    assert!(
                        ((rec - orig) / orig).abs() < 1e-6,
                        "case {case} pixel {i}: {orig} vs {rec}"
                    );
                }
            }
        }
    }

    #[test]
    fn noisy_displacement_matches_brute_force_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cams = random_cams(&mut rng);
        let d_true = 8.0;
        let depth = GeoField::new(
            FieldKind::Depth,
            Tensor::<f64>::full(&[1, 3, 3], d_true),
        )
        .unwrap();
        let disp = depth_to_displacement(&depth, &cams).unwrap();
        let noisy: Vec<f64> = disp
            .data
            .data()
            .iter()
            .map(|v| v + rng.gen_range(-0.05..0.05))
            .collect();
        let noisy_field = GeoField::new(
            FieldKind::Flow,
            Tensor::from_vec(noisy.clone(), &[2, 3, 3]).unwrap(),
        )
        .unwrap();
        let solved = displacement_to_depth(&noisy_field, &cams).unwrap();

        // brute-force scan over the same least-squares objective on a log grid
        let pc_m = cams.k_tgt * cams.r * cams.k_src.try_inverse().unwrap();
        let b = cams.k_tgt * cams.t;
        for y in 0..3 {
            for x in 0..3 {
                let i = y * 3 + x;
                let a = pc_m * Vector3::new(x as f64, y as f64, 1.0);
                let qx = x as f64 + noisy[i];
                let qy = y as f64 + noisy[9 + i];
                let c1 = a[0] - qx * a[2];
                let c2 = a[1] - qy * a[2];
                let e1 = qx * b[2] - b[0];
                let e2 = qy * b[2] - b[1];
                let objective = |d: f64| {
                    let r1 = c1 * d - e1;
                    let r2 = c2 * d - e2;
                    r1 * r1 + r2 * r2
                };
                let mut best = (f64::INFINITY, 0.0);
                let mut g = 0.01_f64.ln();
                let hi = 100.0_f64.ln();
                while g < hi {
                    let d = g.exp();
                    let o = objective(d);
                    if o < best.0 {
                        best = (o, d);
                    }
                    g += 1e-4;
                }
                let closed = solved.data.data()[i];
                assert!(
                    (closed - best.1).abs() / best.1 < 1e-3,
                    "pixel {i}: closed {closed} vs scan {}",
                    best.1
                );
                assert!(objective(closed) <= best.0 + 1e-12);
            }
        }
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let cams = CameraPair::rectified(100.0, 100.0, 4.0, 3.0, 0.0);
        let flow = flow_field::<f64>(1.0, 0.0, 3, 3);
        assert!(matches!(
            displacement_to_depth(&flow, &cams),
            Err(GeometryError::Degenerate(_))
        ));
    }

    #[test]
    fn bad_rotation_is_rejected() {
        let k = Matrix3::new(100.0, 0.0, 4.0, 0.0, 100.0, 3.0, 0.0, 0.0, 1.0);
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0);
        assert!(CameraPair::new(k, k, r, Vector3::zeros()).is_err());
    }

    #[test]
    fn disparity_embed_definition() {
        let mut d = vec![0.0f64; 12];
        d[5] = 3.0;
        let field = GeoField::new(
            FieldKind::Disparity,
            Tensor::from_vec(d, &[1, 3, 4]).unwrap(),
        )
        .unwrap();
        let emb = disparity_embed(&field).unwrap();
        assert_eq!(emb.shape(), &[2, 3, 4]);
        assert_eq!(emb.data()[5], -3.0);
        assert!(emb.data()[12..].iter().all(|&v| v == 0.0));
        // channel-0 extraction recovers the disparity
        let back = emb.narrow(0, 0, 1).unwrap().neg();
        assert_eq!(back.data()[5], 3.0);
    }

    #[test]
    fn rectified_v_channel_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cams = CameraPair::rectified(120.0, 95.0, 3.0, 2.5, 0.2);
        let d: Vec<f64> = (0..30).map(|_| rng.gen_range(1.0..30.0)).collect();
        let depth = GeoField::new(
            FieldKind::Depth,
            Tensor::<f64>::from_vec(d, &[1, 5, 6]).unwrap(),
        )
        .unwrap();
        let disp = depth_to_displacement(&depth, &cams).unwrap();
        for &v in &disp.data.data()[30..] {
            assert!(v.abs() < 1e-9);
        }
    }
}
