//! Shape manipulation: reshape, permute, concat, narrow/split, pad.

use crate::autodiff::record;
use crate::error::TensorError;
use crate::ops::check_axis;
use crate::tensor::{strides_for, Element, Tensor};

/// Row-major walk of `shape` yielding flat offsets under `strides`.
fn gather<T: Element>(src: &[T], shape: &[usize], strides: &[usize]) -> Vec<T> {
    let numel: usize = shape.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut coords = vec![0usize; shape.len()];
    let mut idx = 0usize;
    for _ in 0..numel {
        out.push(src[idx]);
        for ax in (0..shape.len()).rev() {
            coords[ax] += 1;
            idx += strides[ax];
            if coords[ax] < shape[ax] {
                break;
            }
            idx -= strides[ax] * shape[ax];
            coords[ax] = 0;
        }
    }
    out
}

fn do_permute<T: Element>(src: &[T], shape: &[usize], axes: &[usize]) -> (Vec<T>, Vec<usize>) {
    let in_strides = strides_for(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    (gather(src, &out_shape, &eff), out_shape)
}

impl<T: Element> Tensor<T> {
    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() || new_shape.iter().any(|&e| e == 0) {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: new_shape.to_vec(),
            });
        }
        Ok(record(
            self.data().to_vec(),
            new_shape.to_vec(),
            &[self],
            |grad, _, _| vec![Some(grad.to_vec())],
        ))
    }

    /// Reorders axes; `axes` must be a permutation of `0..rank`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>, TensorError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::Rank(format!(
                "permute axes {axes:?} is not a permutation of 0..{rank}"
            )));
        }
        let (data, out_shape) = do_permute(self.data(), self.shape(), axes);
        let axes_owned = axes.to_vec();
        Ok(record(data, out_shape, &[self], move |grad, inputs, out| {
            let mut inverse = vec![0usize; axes_owned.len()];
            for (j, &a) in axes_owned.iter().enumerate() {
                inverse[a] = j;
            }
            let (g, check) = do_permute(grad, &out.shape, &inverse);
            debug_assert_eq!(check, inputs[0].shape());
            vec![Some(g)]
        }))
    }

    /// Matrix transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::Rank(format!(
                "t() requires rank 2, got {:?}",
                self.shape()
            )));
        }
        self.permute(&[1, 0])
    }

    /// Contiguous slice of `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>, TensorError> {
        check_axis("narrow", axis, self.rank())?;
        let n = self.shape()[axis];
        if len == 0 || start + len > n {
            return Err(TensorError::Domain {
                op: "narrow",
                msg: format!("range {start}..{} out of 0..{n}", start + len),
            });
        }
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        Ok(record(data, out_shape, &[self], move |grad, inputs, _| {
            let mut g = vec![T::zero(); inputs[0].numel()];
            for o in 0..outer {
                let dst = (o * n + start) * inner;
                let src = o * len * inner;
                g[dst..dst + len * inner].copy_from_slice(&grad[src..src + len * inner]);
            }
            vec![Some(g)]
        }))
    }

    /// Splits into `parts` equal slices along `axis`.
    pub fn split_equal(&self, axis: usize, parts: usize) -> Result<Vec<Tensor<T>>, TensorError> {
        check_axis("split", axis, self.rank())?;
        let n = self.shape()[axis];
        if parts == 0 || n % parts != 0 {
            return Err(TensorError::Domain {
                op: "split",
                msg: format!("axis extent {n} not divisible into {parts} parts"),
            });
        }
        let chunk = n / parts;
        (0..parts)
            .map(|p| self.narrow(axis, p * chunk, chunk))
            .collect()
    }

    /// Zero-pads each axis by `(before, after)` entries.
    pub fn pad(&self, pads: &[(usize, usize)]) -> Result<Tensor<T>, TensorError> {
        if pads.len() != self.rank() {
            return Err(TensorError::Rank(format!(
                "pad expects {} axis pairs, got {}",
                self.rank(),
                pads.len()
            )));
        }
        let out_shape: Vec<usize> = self
            .shape()
            .iter()
            .zip(pads)
            .map(|(&e, &(b, a))| e + b + a)
            .collect();
        let out_strides = strides_for(&out_shape);
        let in_shape = self.shape().to_vec();
        let numel: usize = out_shape.iter().product();
        let mut data = vec![T::zero(); numel];
        let src = self.data();
        // walk the input, writing into the offset block of the output
        let mut coords = vec![0usize; in_shape.len()];
        let mut out_idx: usize = pads
            .iter()
            .zip(&out_strides)
            .map(|(&(b, _), &s)| b * s)
            .sum();
        for &v in src {
            data[out_idx] = v;
            for ax in (0..in_shape.len()).rev() {
                coords[ax] += 1;
                out_idx += out_strides[ax];
                if coords[ax] < in_shape[ax] {
                    break;
                }
                out_idx -= out_strides[ax] * in_shape[ax];
                coords[ax] = 0;
            }
        }
        let pads_owned = pads.to_vec();
        Ok(record(data, out_shape, &[self], move |grad, inputs, out| {
            let out_strides = strides_for(&out.shape);
            let in_shape = inputs[0].shape();
            let mut g = Vec::with_capacity(inputs[0].numel());
            let mut coords = vec![0usize; in_shape.len()];
            let mut idx: usize = pads_owned
                .iter()
                .zip(&out_strides)
                .map(|(&(b, _), &s)| b * s)
                .sum();
            for _ in 0..inputs[0].numel() {
                g.push(grad[idx]);
                for ax in (0..in_shape.len()).rev() {
                    coords[ax] += 1;
                    idx += out_strides[ax];
                    if coords[ax] < in_shape[ax] {
                        break;
                    }
                    idx -= out_strides[ax] * in_shape[ax];
                    coords[ax] = 0;
                }
            }
            vec![Some(g)]
        }))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, TensorError> {
        let first = tensors.first().ok_or_else(|| TensorError::Domain {
            op: "concat",
            msg: "empty tensor list".into(),
        })?;
        check_axis("concat", axis, first.rank())?;
        for t in tensors {
            if t.rank() != first.rank()
                || t.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .any(|(ax, (a, b))| ax != axis && a != b)
            {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let exts: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = exts.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &e) in tensors.iter().zip(&exts) {
                let base = o * e * inner;
                data.extend_from_slice(&t.data()[base..base + e * inner]);
            }
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        Ok(record(data, out_shape, tensors, move |grad, inputs, _| {
            let mut grads: Vec<Option<Vec<T>>> = inputs
                .iter()
                .map(|t| Some(vec![T::zero(); t.numel()]))
                .collect();
            let mut src = 0usize;
            for o in 0..outer {
                for (k, &e) in exts.iter().enumerate() {
                    let dst = o * e * inner;
                    let block = e * inner;
                    grads[k].as_mut().unwrap()[dst..dst + block]
                        .copy_from_slice(&grad[src..src + block]);
                    src += block;
                }
            }
            grads
        }))
    }
}
