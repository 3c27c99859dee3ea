//! Row lookup into an embedding table.

use crate::autodiff::record;
use crate::error::TensorError;
use crate::tensor::{Element, Tensor};

impl<T: Element> Tensor<T> {
    /// Gathers rows of a `[V, D]` table: output `[indices.len(), D]`.
    /// Differentiable in the table (scatter-add), not in the indices.
    pub fn embedding_lookup(&self, indices: &[usize]) -> Result<Tensor<T>, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::Rank(format!(
                "embedding_lookup requires a [V,D] table, got {:?}",
                self.shape()
            )));
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(TensorError::Domain {
                op: "embedding_lookup",
                msg: format!("index {bad} out of range for table with {v} rows"),
            });
        }
        let src = self.data();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let idx = indices.to_vec();
        Ok(record(
            data,
            vec![indices.len(), d],
            &[self],
            move |grad, inputs, _| {
                let mut g = vec![T::zero(); inputs[0].numel()];
                for (row, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        g[i * d + j] += grad[row * d + j];
                    }
                }
                vec![Some(g)]
            },
        ))
    }
}
