//! Reductions, softmax and layer normalization.

use crate::autodiff::record;
use crate::error::TensorError;
use crate::ops::check_axis;
use crate::tensor::{Element, Tensor};

/// Splits a shape into (outer, axis_len, inner) products around `axis`.
fn around_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Element> Tensor<T> {
    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&self) -> Result<Tensor<T>, TensorError> {
        let mut s = T::zero();
        for &v in self.data() {
            s += v;
        }
        let numel = self.numel();
        Ok(record(vec![s], vec![1], &[self], move |grad, _, _| {
            vec![Some(vec![grad[0]; numel])]
        }))
    }

    /// Mean of all elements, as a `[1]` tensor.
    pub fn mean_all(&self) -> Result<Tensor<T>, TensorError> {
        let n = T::from_f64(self.numel() as f64);
        self.sum_all()?.div(&Tensor::scalar(n))
    }

    /// Sum along one axis. With `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>, TensorError> {
        check_axis("sum_axis", axis, self.rank())?;
        let (outer, n, inner) = around_axis(self.shape(), axis);
        let mut data = vec![T::zero(); outer * inner];
        let src = self.data();
        for o in 0..outer {
            for k in 0..n {
                let base = (o * n + k) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    data[dst + i] += src[base + i];
                }
            }
        }
        let mut out_shape: Vec<usize> = self.shape().to_vec();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
            if out_shape.is_empty() {
                out_shape.push(1);
            }
        }
        Ok(record(data, out_shape, &[self], move |grad, inputs, _| {
            let mut g = vec![T::zero(); inputs[0].numel()];
            for o in 0..outer {
                for k in 0..n {
                    let base = (o * n + k) * inner;
                    let src = o * inner;
                    for i in 0..inner {
                        g[base + i] = grad[src + i];
                    }
                }
            }
            vec![Some(g)]
        }))
    }

    /// Mean along one axis.
    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>, TensorError> {
        check_axis("mean_axis", axis, self.rank())?;
        let n = T::from_f64(self.shape()[axis] as f64);
        Ok(self.sum_axis(axis, keepdim)?.scale(T::one() / n))
    }

    /// Softmax along `axis`, computed with max subtraction for stability.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>, TensorError> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, n, inner) = around_axis(self.shape(), axis);
        let src = self.data();
        let mut data = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut m = src[at(0)];
                for k in 1..n {
                    if src[at(k)] > m {
                        m = src[at(k)];
                    }
                }
                let mut z = T::zero();
                for k in 0..n {
                    let e = (src[at(k)] - m).exp();
                    data[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    data[at(k)] = data[at(k)] / z;
                }
            }
        }
        Ok(record(
            data,
            self.shape().to_vec(),
            &[self],
            move |grad, _, out| {
                let y = &out.data;
                let mut g = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let mut dot = T::zero();
                        for k in 0..n {
                            dot += grad[at(k)] * y[at(k)];
                        }
                        for k in 0..n {
                            g[at(k)] = y[at(k)] * (grad[at(k)] - dot);
                        }
                    }
                }
                vec![Some(g)]
            },
        ))
    }

    /// Normalizes to zero mean and unit variance along `axis`:
    /// `(x - mean) / sqrt(var + eps)`. Affine parameters, when wanted, are
    /// applied by the caller with broadcast `mul`/`add`.
    pub fn layer_norm(&self, axis: usize, eps: f64) -> Result<Tensor<T>, TensorError> {
        check_axis("layer_norm", axis, self.rank())?;
        let (outer, n, inner) = around_axis(self.shape(), axis);
        let eps = T::from_f64(eps);
        let nf = T::from_f64(n as f64);
        let src = self.data();
        let mut data = vec![T::zero(); src.len()];
        let mut inv_stds = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let mut mean = T::zero();
                for k in 0..n {
                    mean += src[at(k)];
                }
                mean = mean / nf;
                let mut var = T::zero();
                for k in 0..n {
                    let d = src[at(k)] - mean;
                    var += d * d;
                }
                var = var / nf;
                let inv_std = T::one() / (var + eps).sqrt();
                inv_stds[o * inner + i] = inv_std;
                for k in 0..n {
                    data[at(k)] = (src[at(k)] - mean) * inv_std;
                }
            }
        }
        Ok(record(
            data,
            self.shape().to_vec(),
            &[self],
            move |grad, _, out| {
                let xhat = &out.data;
                let mut g = vec![T::zero(); xhat.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let inv_std = inv_stds[o * inner + i];
                        let mut gsum = T::zero();
                        let mut gx = T::zero();
                        for k in 0..n {
                            gsum += grad[at(k)];
                            gx += grad[at(k)] * xhat[at(k)];
                        }
                        for k in 0..n {
                            g[at(k)] = inv_std / nf
                                * (nf * grad[at(k)] - gsum - xhat[at(k)] * gx);
                        }
                    }
                }
                vec![Some(g)]
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f64>::randn(&[5, 7], &mut rng);
        let y = x.softmax(1).unwrap();
        for row in y.data().chunks(7) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let shifted = x.add_scalar(123.456).softmax(1).unwrap();
        for (a, b) in y.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn sum_axis_and_mean_axis_values() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        assert_eq!(x.sum_axis(0, false).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(x.sum_axis(1, false).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(x.mean_axis(1, false).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(x.sum_axis(1, true).unwrap().shape(), &[2, 1]);
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let x = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 10.0, 20.0, 30.0], &[2, 3]).unwrap();
        let y = x.layer_norm(1, 1e-12).unwrap();
        for row in y.data().chunks(3) {
            let mean: f64 = row.iter().sum::<f64>() / 3.0;
            let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn reduction_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[3, 4], &mut rng);
        let weights = Tensor::<f64>::randn(&[3, 4], &mut rng);
        let cases: Vec<(
            &str,
            Box<dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>, TensorError>>,
        )> = vec![
            ("sum_axis0", {
                let w = weights.clone();
                Box::new(move |x: &Tensor<f64>| {
                    x.mul(&w)?.sum_axis(0, false)?.mul(&x.sum_axis(0, false)?)?.sum_all()
                })
            }),
            ("mean_axis1", {
                let w = weights.clone();
                Box::new(move |x: &Tensor<f64>| x.mean_axis(1, false)?.mul(&w.mean_axis(1, false)?)?.sum_all())
            }),
            ("softmax", {
                let w = weights.clone();
                Box::new(move |x: &Tensor<f64>| x.softmax(1)?.mul(&w)?.sum_all())
            }),
            ("layer_norm", {
                let w = weights.clone();
                Box::new(move |x: &Tensor<f64>| x.layer_norm(1, 1e-6)?.mul(&w)?.sum_all())
            }),
        ];
        for (name, f) in cases {
            let report = finite_diff_check(f, &x, 1e-6, 1e-5).unwrap();
            assert!(report.pass(), "{name}: max rel err {}", report.max_rel_err);
        }
    }
}
