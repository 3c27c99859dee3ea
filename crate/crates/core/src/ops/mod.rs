//! The forward operator set and its backward rules.
//!
//! Shape rules are documented per method. Broadcasting is deliberately
//! narrow: a one-element tensor combines with anything; otherwise both
//! operands must have equal rank and each axis must match or be 1.

mod conv;
mod elementwise;
mod embedding;
mod matmul;
mod reduce;
mod sample;
mod shape_ops;

pub use sample::PadMode;

use crate::error::TensorError;
use crate::tensor::{strides_for, Element};

/// Resolves the broadcast output shape for a binary elementwise op.
pub(crate) fn broadcast_shape(
    op: &'static str,
    lhs: &[usize],
    rhs: &[usize],
) -> Result<Vec<usize>, TensorError> {
    let lnum: usize = lhs.iter().product();
    let rnum: usize = rhs.iter().product();
    if lnum == 1 {
        return Ok(rhs.to_vec());
    }
    if rnum == 1 {
        return Ok(lhs.to_vec());
    }
    if lhs.len() != rhs.len() {
        return Err(TensorError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        });
    }
    let mut out = Vec::with_capacity(lhs.len());
    for (&a, &b) in lhs.iter().zip(rhs) {
        if a == b {
            out.push(a);
        } else if a == 1 {
            out.push(b);
        } else if b == 1 {
            out.push(a);
        } else {
            return Err(TensorError::Shape {
                op,
                lhs: lhs.to_vec(),
                rhs: rhs.to_vec(),
            });
        }
    }
    Ok(out)
}

/// Strides of `operand` viewed inside `out_shape` (0 on broadcast axes).
pub(crate) fn broadcast_strides(operand: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let numel: usize = operand.iter().product();
    if numel == 1 {
        return vec![0; out_shape.len()];
    }
    let natural = strides_for(operand);
    operand
        .iter()
        .zip(natural)
        .map(|(&e, s)| if e == 1 { 0 } else { s })
        .collect()
}

/// Iterates `out_shape` in row-major order, yielding flat offsets into two
/// broadcast operands.
pub(crate) struct PairIter {
    coords: Vec<usize>,
    shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    a_idx: usize,
    b_idx: usize,
    remaining: usize,
    started: bool,
}

impl PairIter {
    pub(crate) fn new(out_shape: &[usize], a_shape: &[usize], b_shape: &[usize]) -> Self {
        PairIter {
            coords: vec![0; out_shape.len()],
            shape: out_shape.to_vec(),
            a_strides: broadcast_strides(a_shape, out_shape),
            b_strides: broadcast_strides(b_shape, out_shape),
            a_idx: 0,
            b_idx: 0,
            remaining: out_shape.iter().product(),
            started: false,
        }
    }
}

impl Iterator for PairIter {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<(usize, usize)> {
        if self.remaining == 0 {
            return None;
        }
        if self.started {
            // odometer increment
            for ax in (0..self.shape.len()).rev() {
                self.coords[ax] += 1;
                self.a_idx += self.a_strides[ax];
                self.b_idx += self.b_strides[ax];
                if self.coords[ax] < self.shape[ax] {
                    break;
                }
                self.a_idx -= self.a_strides[ax] * self.shape[ax];
                self.b_idx -= self.b_strides[ax] * self.shape[ax];
                self.coords[ax] = 0;
            }
        }
        self.started = true;
        self.remaining -= 1;
        Some((self.a_idx, self.b_idx))
    }
}

/// Sums an out-shaped cotangent down to a (possibly broadcast) operand shape.
pub(crate) fn reduce_to_shape<T: Element>(
    cot: &[T],
    out_shape: &[usize],
    target_shape: &[usize],
) -> Vec<T> {
    let target_numel: usize = target_shape.iter().product();
    if target_numel == cot.len() {
        return cot.to_vec();
    }
    let mut out = vec![T::zero(); target_numel];
    let strides = broadcast_strides(target_shape, out_shape);
    let mut coords = vec![0usize; out_shape.len()];
    let mut t_idx = 0usize;
    for &g in cot {
        out[t_idx] += g;
        for ax in (0..out_shape.len()).rev() {
            coords[ax] += 1;
            t_idx += strides[ax];
            if coords[ax] < out_shape[ax] {
                break;
            }
            t_idx -= strides[ax] * out_shape[ax];
            coords[ax] = 0;
        }
    }
    out
}

pub(crate) fn check_axis(
    op: &'static str,
    axis: usize,
    rank: usize,
) -> Result<(), TensorError> {
    if axis >= rank {
        Err(TensorError::Axis { op, axis, rank })
    } else {
        Ok(())
    }
}
