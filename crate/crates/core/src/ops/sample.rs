//! Bilinear resampling: fixed-grid resize and differentiable grid sampling.
//!
//! Coordinates are absolute pixel positions with pixel `(row i, col j)`
//! living at `(x = j, y = i)`. Exact integer coordinates copy the source
//! value bit-for-bit.

use crate::autodiff::record;
use crate::error::TensorError;
use crate::tensor::{Element, Tensor};

/// Out-of-range handling for [`Tensor::grid_sample`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Out-of-range taps read as zero.
    Zeros,
    /// Coordinates are clamped to the image border.
    Clamp,
}

/// One bilinear sample with Clamp semantics. Returns tap indices and weights.
#[inline]
fn clamp_taps<T: Element>(coord: T, extent: usize) -> (usize, usize, T) {
    if extent == 1 {
        return (0, 0, T::zero());
    }
    let max = T::from_f64((extent - 1) as f64);
    let c = if coord < T::zero() {
        T::zero()
    } else if coord > max {
        max
    } else {
        coord
    };
    let f = c.floor();
    let w = c - f;
    let i0 = f.as_f64() as usize;
    if w == T::zero() {
        // exact integer: single tap, copied bit-for-bit by the fast path
        (i0, i0, T::zero())
    } else {
        (i0, i0 + 1, w)
    }
}

impl<T: Element> Tensor<T> {
    /// Resizes `[C, H, W]` to `[C, out_h, out_w]` with corner-aligned
    /// bilinear interpolation.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 3 {
            return Err(TensorError::Rank(format!(
                "bilinear_resize requires [C,H,W], got {:?}",
                self.shape()
            )));
        }
        if out_h == 0 || out_w == 0 {
            return Err(TensorError::Domain {
                op: "bilinear_resize",
                msg: "zero output extent".into(),
            });
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let scale = |src: usize, dst: usize| -> f64 {
            if dst <= 1 {
                0.0
            } else {
                (src - 1) as f64 / (dst - 1) as f64
            }
        };
        let sy = scale(h, out_h);
        let sx = scale(w, out_w);
        // precompute per-row / per-col taps
        let ys: Vec<(usize, usize, T)> = (0..out_h)
            .map(|y| clamp_taps(T::from_f64(y as f64 * sy), h))
            .collect();
        let xs: Vec<(usize, usize, T)> = (0..out_w)
            .map(|x| clamp_taps(T::from_f64(x as f64 * sx), w))
            .collect();
        let src = self.data();
        let mut data = Vec::with_capacity(c * out_h * out_w);
        for ci in 0..c {
            let plane = &src[ci * h * w..(ci + 1) * h * w];
            for &(y0, y1, wy) in &ys {
                for &(x0, x1, wx) in &xs {
                    if wy == T::zero() && wx == T::zero() {
                        data.push(plane[y0 * w + x0]);
                        continue;
                    }
                    let v00 = plane[y0 * w + x0];
                    let v01 = plane[y0 * w + x1];
                    let v10 = plane[y1 * w + x0];
                    let v11 = plane[y1 * w + x1];
                    let top = v00 + wx * (v01 - v00);
                    let bot = v10 + wx * (v11 - v10);
                    data.push(top + wy * (bot - top));
                }
            }
        }
        let ys_b = ys.clone();
        let xs_b = xs.clone();
        Ok(record(
            data,
            vec![c, out_h, out_w],
            &[self],
            move |grad, inputs, _| {
                let mut g = vec![T::zero(); inputs[0].numel()];
                let mut k = 0;
                for ci in 0..c {
                    let plane = &mut g[ci * h * w..(ci + 1) * h * w];
                    for &(y0, y1, wy) in &ys_b {
                        for &(x0, x1, wx) in &xs_b {
                            let gv = grad[k];
                            k += 1;
                            let one = T::one();
                            plane[y0 * w + x0] += gv * (one - wy) * (one - wx);
                            plane[y0 * w + x1] += gv * (one - wy) * wx;
                            plane[y1 * w + x0] += gv * wy * (one - wx);
                            plane[y1 * w + x1] += gv * wy * wx;
                        }
                    }
                }
                vec![Some(g)]
            },
        ))
    }

    /// Samples `[C, H, W]` at the absolute pixel coordinates in
    /// `grid [2, Hg, Wg]` (channel 0 = x, channel 1 = y). Differentiable in
    /// both the image and the grid.
    pub fn grid_sample(&self, grid: &Tensor<T>, pad: PadMode) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 3 {
            return Err(TensorError::Rank(format!(
                "grid_sample requires [C,H,W] image, got {:?}",
                self.shape()
            )));
        }
        if grid.rank() != 3 || grid.shape()[0] != 2 {
            return Err(TensorError::Shape {
                op: "grid_sample",
                lhs: self.shape().to_vec(),
                rhs: grid.shape().to_vec(),
            });
        }
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (hg, wg) = (grid.shape()[1], grid.shape()[2]);
        let npix = hg * wg;
        let img = self.data();
        let gd = grid.data();
        let mut data = vec![T::zero(); c * npix];
        for p in 0..npix {
            let gx = gd[p];
            let gy = gd[npix + p];
            match pad {
                PadMode::Clamp => {
                    let (x0, x1, wx) = clamp_taps(gx, w);
                    let (y0, y1, wy) = clamp_taps(gy, h);
                    for ci in 0..c {
                        let plane = &img[ci * h * w..];
                        data[ci * npix + p] = if wx == T::zero() && wy == T::zero() {
                            plane[y0 * w + x0]
                        } else {
                            let v00 = plane[y0 * w + x0];
                            let v01 = plane[y0 * w + x1];
                            let v10 = plane[y1 * w + x0];
                            let v11 = plane[y1 * w + x1];
                            let top = v00 + wx * (v01 - v00);
                            let bot = v10 + wx * (v11 - v10);
                            top + wy * (bot - top)
                        };
                    }
                }
                PadMode::Zeros => {
                    let xf = gx.floor();
                    let yf = gy.floor();
                    let wx = gx - xf;
                    let wy = gy - yf;
                    let x0 = xf.as_f64() as i64;
                    let y0 = yf.as_f64() as i64;
                    let tap = |plane: &[T], y: i64, x: i64| -> T {
                        if y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w {
                            plane[y as usize * w + x as usize]
                        } else {
                            T::zero()
                        }
                    };
                    for ci in 0..c {
                        let plane = &img[ci * h * w..(ci + 1) * h * w];
                        if wx == T::zero() && wy == T::zero() {
                            data[ci * npix + p] = tap(plane, y0, x0);
                            continue;
                        }
                        let one = T::one();
                        let v = (one - wy)
                            * ((one - wx) * tap(plane, y0, x0) + wx * tap(plane, y0, x0 + 1))
                            + wy * ((one - wx) * tap(plane, y0 + 1, x0)
                                + wx * tap(plane, y0 + 1, x0 + 1));
                        data[ci * npix + p] = v;
                    }
                }
            }
        }
        Ok(record(
            data,
            vec![c, hg, wg],
            &[self, grid],
            move |grad, inputs, _| {
                let (image, grid) = (&inputs[0], &inputs[1]);
                let img = image.data();
                let gd = grid.data();
                let want_img = image.tracks_grad();
                let want_grid = grid.tracks_grad();
                let mut di = vec![T::zero(); img.len()];
                let mut dg = vec![T::zero(); gd.len()];
                let one = T::one();
                for p in 0..npix {
                    let gx = gd[p];
                    let gy = gd[npix + p];
                    match pad {
                        PadMode::Clamp => {
                            let (x0, x1, wx) = clamp_taps(gx, w);
                            let (y0, y1, wy) = clamp_taps(gy, h);
                            // gradient w.r.t. coordinates dies where the clamp is active
                            let x_live = w > 1
                                && gx > T::zero()
                                && gx < T::from_f64((w - 1) as f64);
                            let y_live = h > 1
                                && gy > T::zero()
                                && gy < T::from_f64((h - 1) as f64);
                            let mut dx = T::zero();
                            let mut dy = T::zero();
                            for ci in 0..c {
                                let g = grad[ci * npix + p];
                                if want_img {
                                    let plane = &mut di[ci * h * w..(ci + 1) * h * w];
                                    plane[y0 * w + x0] += g * (one - wy) * (one - wx);
                                    plane[y0 * w + x1] += g * (one - wy) * wx;
                                    plane[y1 * w + x0] += g * wy * (one - wx);
                                    plane[y1 * w + x1] += g * wy * wx;
                                }
                                if want_grid {
                                    let plane = &img[ci * h * w..(ci + 1) * h * w];
                                    let v00 = plane[y0 * w + x0];
                                    let v01 = plane[y0 * w + x1];
                                    let v10 = plane[y1 * w + x0];
                                    let v11 = plane[y1 * w + x1];
                                    if x_live {
                                        dx += g * ((one - wy) * (v01 - v00) + wy * (v11 - v10));
                                    }
                                    if y_live {
                                        dy += g * ((one - wx) * (v10 - v00) + wx * (v11 - v01));
                                    }
                                }
                            }
                            dg[p] += dx;
                            dg[npix + p] += dy;
                        }
                        PadMode::Zeros => {
                            let xf = gx.floor();
                            let yf = gy.floor();
                            let wx = gx - xf;
                            let wy = gy - yf;
                            let x0 = xf.as_f64() as i64;
                            let y0 = yf.as_f64() as i64;
                            let inside = |y: i64, x: i64| -> bool {
                                y >= 0 && (y as usize) < h && x >= 0 && (x as usize) < w
                            };
                            let mut dx = T::zero();
                            let mut dy = T::zero();
                            for ci in 0..c {
                                let g = grad[ci * npix + p];
                                let base = ci * h * w;
                                let tap = |yy: i64, xx: i64| -> T {
                                    if inside(yy, xx) {
                                        img[base + yy as usize * w + xx as usize]
                                    } else {
                                        T::zero()
                                    }
                                };
                                if want_img {
                                    let mut scatter = |yy: i64, xx: i64, wgt: T| {
                                        if inside(yy, xx) {
                                            di[base + yy as usize * w + xx as usize] += g * wgt;
                                        }
                                    };
                                    scatter(y0, x0, (one - wy) * (one - wx));
                                    scatter(y0, x0 + 1, (one - wy) * wx);
                                    scatter(y0 + 1, x0, wy * (one - wx));
                                    scatter(y0 + 1, x0 + 1, wy * wx);
                                }
                                if want_grid {
                                    let v00 = tap(y0, x0);
                                    let v01 = tap(y0, x0 + 1);
                                    let v10 = tap(y0 + 1, x0);
                                    let v11 = tap(y0 + 1, x0 + 1);
                                    dx += g * ((one - wy) * (v01 - v00) + wy * (v11 - v10));
                                    dy += g * ((one - wx) * (v10 - v00) + wx * (v11 - v01));
                                }
                            }
                            dg[p] += dx;
                            dg[npix + p] += dy;
                        }
                    }
                }
                vec![
                    if want_img { Some(di) } else { None },
                    if want_grid { Some(dg) } else { None },
                ]
            },
        ))
    }
}
