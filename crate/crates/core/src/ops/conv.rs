//! 2D convolution with zero padding.

use rayon::prelude::*;

use crate::autodiff::record;
use crate::error::TensorError;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sy: usize,
    sx: usize,
    py: usize,
    px: usize,
    ho: usize,
    wo: usize,
}

/// Output x-range for kernel column `j`: `0 <= x*sx + j - px < w`.
fn x_range(d: &ConvDims, j: usize) -> (usize, usize) {
    let lo = if j >= d.px {
        0
    } else {
        (d.px - j).div_ceil(d.sx)
    };
    let hi_num = d.w + d.px;
    let hi = if hi_num > j {
        ((hi_num - j - 1) / d.sx + 1).min(d.wo)
    } else {
        0
    };
    (lo.min(hi), hi)
}

impl<T: Element> Tensor<T> {
    /// 2D convolution: input `[Cin, H, W]`, kernel `[Cout, Cin, kh, kw]`,
    /// optional bias `[Cout]`; zero padding `(py, px)` and stride `(sy, sx)`.
    /// Output is `[Cout, (H + 2*py - kh)/sy + 1, (W + 2*px - kw)/sx + 1]`.
    pub fn conv2d(
        &self,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 3 || kernel.rank() != 4 || kernel.shape()[1] != self.shape()[0] {
            return Err(TensorError::Shape {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        let (sy, sx) = stride;
        let (py, px) = pad;
        if sy == 0 || sx == 0 {
            return Err(TensorError::Domain {
                op: "conv2d",
                msg: "zero stride".into(),
            });
        }
        let d = ConvDims {
            cin: self.shape()[0],
            cout: kernel.shape()[0],
            h: self.shape()[1],
            w: self.shape()[2],
            kh: kernel.shape()[2],
            kw: kernel.shape()[3],
            sy,
            sx,
            py,
            px,
            ho: 0,
            wo: 0,
        };
        if d.h + 2 * py < d.kh || d.w + 2 * px < d.kw {
            return Err(TensorError::Shape {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        let d = ConvDims {
            ho: (d.h + 2 * py - d.kh) / sy + 1,
            wo: (d.w + 2 * px - d.kw) / sx + 1,
            ..d
        };
        if let Some(b) = bias {
            if b.shape() != [d.cout] {
                return Err(TensorError::Shape {
                    op: "conv2d",
                    lhs: kernel.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }

        let input = self.data();
        let kdata = kernel.data();
        let bias_data: Option<&[T]> = bias.map(|b| b.data());
        let mut data = vec![T::zero(); d.cout * d.ho * d.wo];
        data.par_chunks_mut(d.ho * d.wo)
            .enumerate()
            .for_each(|(o, out_plane)| {
                if let Some(b) = bias_data {
                    out_plane.fill(b[o]);
                }
                forward_plane(&d, o, input, kdata, out_plane);
            });

        let out_shape = vec![d.cout, d.ho, d.wo];
        let has_bias = bias.is_some();
        let mut inputs: Vec<&Tensor<T>> = vec![self, kernel];
        if let Some(b) = bias {
            inputs.push(b);
        }
        Ok(record(data, out_shape, &inputs, move |grad, inputs, _| {
            let (input, kernel) = (&inputs[0], &inputs[1]);
            let idata = input.data();
            let kdata = kernel.data();

            let mut dk = vec![T::zero(); kernel.numel()];
            dk.par_chunks_mut(d.cin * d.kh * d.kw)
                .enumerate()
                .for_each(|(o, dk_o)| {
                    kernel_grad_plane(&d, o, idata, grad, dk_o);
                });

            let mut di = vec![T::zero(); input.numel()];
            di.par_chunks_mut(d.h * d.w)
                .enumerate()
                .for_each(|(c, di_c)| {
                    input_grad_plane(&d, c, kdata, grad, di_c);
                });

            let mut grads = vec![Some(di), Some(dk)];
            if has_bias {
                let db = (0..d.cout)
                    .map(|o| {
                        let mut s = T::zero();
                        for &g in &grad[o * d.ho * d.wo..(o + 1) * d.ho * d.wo] {
                            s += g;
                        }
                        s
                    })
                    .collect();
                grads.push(Some(db));
            }
            grads
        }))
    }
}

fn forward_plane<T: Element>(d: &ConvDims, o: usize, input: &[T], kdata: &[T], out: &mut [T]) {
    for c in 0..d.cin {
        let in_plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let wgt = kdata[((o * d.cin + c) * d.kh + i) * d.kw + j];
                let (x_lo, x_hi) = x_range(d, j);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..d.ho {
                    let iy = y * d.sy + i;
                    if iy < d.py || iy - d.py >= d.h {
                        continue;
                    }
                    let in_row = &in_plane[(iy - d.py) * d.w..];
                    let out_row = &mut out[y * d.wo..(y + 1) * d.wo];
                    if d.sx == 1 {
                        let off = x_lo + j - d.px;
                        for (ov, &iv) in out_row[x_lo..x_hi]
                            .iter_mut()
                            .zip(&in_row[off..off + (x_hi - x_lo)])
                        {
                            *ov += wgt * iv;
                        }
                    } else {
                        for x in x_lo..x_hi {
                            out_row[x] += wgt * in_row[x * d.sx + j - d.px];
                        }
                    }
                }
            }
        }
    }
}

fn kernel_grad_plane<T: Element>(d: &ConvDims, o: usize, input: &[T], grad: &[T], dk: &mut [T]) {
    let g_plane = &grad[o * d.ho * d.wo..(o + 1) * d.ho * d.wo];
    for c in 0..d.cin {
        let in_plane = &input[c * d.h * d.w..(c + 1) * d.h * d.w];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let mut s = T::zero();
                let (x_lo, x_hi) = x_range(d, j);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..d.ho {
                    let iy = y * d.sy + i;
                    if iy < d.py || iy - d.py >= d.h {
                        continue;
                    }
                    let in_row = &in_plane[(iy - d.py) * d.w..];
                    let g_row = &g_plane[y * d.wo..(y + 1) * d.wo];
                    if d.sx == 1 {
                        let off = x_lo + j - d.px;
                        for (&gv, &iv) in g_row[x_lo..x_hi]
                            .iter()
                            .zip(&in_row[off..off + (x_hi - x_lo)])
                        {
                            s += gv * iv;
                        }
                    } else {
                        for x in x_lo..x_hi {
                            s += g_row[x] * in_row[x * d.sx + j - d.px];
                        }
                    }
                }
                dk[(c * d.kh + i) * d.kw + j] += s;
            }
        }
    }
}

fn input_grad_plane<T: Element>(d: &ConvDims, c: usize, kdata: &[T], grad: &[T], di: &mut [T]) {
    for o in 0..d.cout {
        let g_plane = &grad[o * d.ho * d.wo..(o + 1) * d.ho * d.wo];
        for i in 0..d.kh {
            for j in 0..d.kw {
                let wgt = kdata[((o * d.cin + c) * d.kh + i) * d.kw + j];
                let (x_lo, x_hi) = x_range(d, j);
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..d.ho {
                    let iy = y * d.sy + i;
                    if iy < d.py || iy - d.py >= d.h {
                        continue;
                    }
                    let di_row = &mut di[(iy - d.py) * d.w..(iy - d.py) * d.w + d.w];
                    let g_row = &g_plane[y * d.wo..(y + 1) * d.wo];
                    if d.sx == 1 {
                        let off = x_lo + j - d.px;
                        for (dv, &gv) in di_row[off..off + (x_hi - x_lo)]
                            .iter_mut()
                            .zip(&g_row[x_lo..x_hi])
                        {
                            *dv += wgt * gv;
                        }
                    } else {
                        for x in x_lo..x_hi {
                            di_row[x * d.sx + j - d.px] += wgt * g_row[x];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop reference convolution.
    fn conv_naive(
        input: &[f64],
        kernel: &[f64],
        bias: Option<&[f64]>,
        (cin, h, w): (usize, usize, usize),
        (cout, kh, kw): (usize, usize, usize),
        (sy, sx): (usize, usize),
        (py, px): (usize, usize),
    ) -> (Vec<f64>, usize, usize) {
        let ho = (h + 2 * py - kh) / sy + 1;
        let wo = (w + 2 * px - kw) / sx + 1;
        let mut out = vec![0.0; cout * ho * wo];
        for o in 0..cout {
            for y in 0..ho {
                for x in 0..wo {
                    let mut s = bias.map_or(0.0, |b| b[o]);
                    for c in 0..cin {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * sy + i) as isize - py as isize;
                                let ix = (x * sx + j) as isize - px as isize;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    s += input[(c * h + iy as usize) * w + ix as usize]
                                        * kernel[((o * cin + c) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[(o * ho + y) * wo + x] = s;
                }
            }
        }
        (out, ho, wo)
    }

    #[test]
    fn all_ones_kernel_counts_taps() {
        let input = Tensor::<f64>::ones(&[1, 5, 5]);
        let kernel = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let out = input.conv2d(&kernel, None, (1, 1), (0, 0)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn matches_naive_reference_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..30 {
            let cin = rng.gen_range(1..=4);
            let cout = rng.gen_range(1..=4);
            let kh = rng.gen_range(1..=5);
            let kw = rng.gen_range(1..=5);
            let h = rng.gen_range(kh..kh + 7);
            let w = rng.gen_range(kw..kw + 7);
            let sy = rng.gen_range(1..=2);
            let sx = rng.gen_range(1..=2);
            let py = rng.gen_range(0..=2);
            let px = rng.gen_range(0..=2);
            let input = Tensor::<f64>::randn(&[cin, h, w], &mut rng);
            let kernel = Tensor::<f64>::randn(&[cout, cin, kh, kw], &mut rng);
            let bias = Tensor::<f64>::randn(&[cout], &mut rng);
            let got = input
                .conv2d(&kernel, Some(&bias), (sy, sx), (py, px))
                .unwrap();
            let (want, ho, wo) = conv_naive(
                input.data(),
                kernel.data(),
                Some(bias.data()),
                (cin, h, w),
                (cout, kh, kw),
                (sy, sx),
                (py, px),
            );
            assert_eq!(got.shape(), &[cout, ho, wo], "case {case}");
            for (a, b) in got.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-5, "case {case}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let input = Tensor::<f64>::randn(&[2, 5, 6], &mut rng);
        let kernel = Tensor::<f64>::randn(&[3, 2, 3, 3], &mut rng);
        let bias = Tensor::<f64>::randn(&[3], &mut rng);

        let (k2, b2) = (kernel.clone(), bias.clone());
        let report = finite_diff_check(
            move |x| x.conv2d(&k2, Some(&b2), (1, 1), (1, 1))?.sum_all(),
            &input,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "d_input: {}", report.max_rel_err);

        let (i2, b3) = (input.clone(), bias.clone());
        let report = finite_diff_check(
            move |k| i2.conv2d(k, Some(&b3), (2, 1), (0, 2))?.sum_all(),
            &kernel,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "d_kernel: {}", report.max_rel_err);

        let (i3, k3) = (input.clone(), kernel.clone());
        let report = finite_diff_check(
            move |b| i3.conv2d(&k3, Some(b), (1, 2), (1, 0))?.sum_all(),
            &bias,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "d_bias: {}", report.max_rel_err);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let input = Tensor::<f64>::zeros(&[3, 4, 4]);
        let kernel = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        assert!(matches!(
            input.conv2d(&kernel, None, (1, 1), (0, 0)),
            Err(TensorError::Shape { .. })
        ));
    }
}
