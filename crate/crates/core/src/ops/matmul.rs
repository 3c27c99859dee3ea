//! Matrix multiplication, plain and batched.

use rayon::prelude::*;

use crate::autodiff::record;
use crate::error::TensorError;
use crate::tensor::{Element, Tensor};

/// c[m,n] = a[m,k] @ b[k,n]
fn mm<T: Element>(a: &[T], b: &[T], _m: usize, k: usize, n: usize, c: &mut [T]) {
    c.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    });
}

/// c[m,k] = a[m,n] @ b[k,n]^T
fn mm_nt<T: Element>(a: &[T], b: &[T], _m: usize, n: usize, k: usize, c: &mut [T]) {
    c.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let a_row = &a[i * n..(i + 1) * n];
        for (p, cv) in row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                s += av * bv;
            }
            *cv += s;
        }
    });
}

/// c[k,n] = a[m,k]^T @ b[m,n]
fn mm_tn<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize, c: &mut [T]) {
    c.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
        for i in 0..m {
            let aip = a[i * k + p];
            let b_row = &b[i * n..(i + 1) * n];
            for (cv, &bv) in row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    });
}

impl<T: Element> Tensor<T> {
    /// Matrix product. Both operands must have rank >= 2 with identical
    /// leading (batch) extents: `[..b, m, k] @ [..b, k, n] -> [..b, m, n]`.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (ls, rs) = (self.shape(), rhs.shape());
        let ok = ls.len() >= 2
            && ls.len() == rs.len()
            && ls[..ls.len() - 2] == rs[..rs.len() - 2]
            && ls[ls.len() - 1] == rs[rs.len() - 2];
        if !ok {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let (m, k, n) = (ls[ls.len() - 2], ls[ls.len() - 1], rs[rs.len() - 1]);
        let mut data = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            mm(
                &self.data()[bi * m * k..],
                &rhs.data()[bi * k * n..],
                m,
                k,
                n,
                &mut data[bi * m * n..(bi + 1) * m * n],
            );
        }
        let mut out_shape = ls[..ls.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        Ok(record(data, out_shape, &[self, rhs], move |grad, inputs, _| {
            let (a, b) = (&inputs[0], &inputs[1]);
            let mut da = vec![T::zero(); a.numel()];
            let mut db = vec![T::zero(); b.numel()];
            for bi in 0..batch {
                let g = &grad[bi * m * n..(bi + 1) * m * n];
                // dA = G @ B^T, dB = A^T @ G
                mm_nt(
                    g,
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    m,
                    n,
                    k,
                    &mut da[bi * m * k..(bi + 1) * m * k],
                );
                mm_tn(
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    g,
                    m,
                    k,
                    n,
                    &mut db[bi * k * n..(bi + 1) * k * n],
                );
            }
            vec![Some(da), Some(db)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_matmul_is_identity() {
        let eye = Tensor::<f64>::from_vec(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            &[3, 3],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[3, 5], &mut rng);
        let y = eye.matmul(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn known_product() {
        let a = Tensor::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]).unwrap();
        let b = Tensor::<f64>::from_vec(
            (1..=12).map(|v| v as f64).collect(),
            &[3, 4],
        )
        .unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(
            c.data(),
            &[38.0, 44.0, 50.0, 56.0, 83.0, 98.0, 113.0, 128.0]
        );
    }

    #[test]
    fn batched_matches_per_slice() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::<f64>::randn(&[3, 2, 4], &mut rng);
        let b = Tensor::<f64>::randn(&[3, 4, 5], &mut rng);
        let c = a.matmul(&b).unwrap();
        for bi in 0..3 {
            let ai = a.narrow(0, bi, 1).unwrap().reshape(&[2, 4]).unwrap();
            let bb = b.narrow(0, bi, 1).unwrap().reshape(&[4, 5]).unwrap();
            let ci = ai.matmul(&bb).unwrap();
            assert_eq!(&c.data()[bi * 10..(bi + 1) * 10], ci.data());
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::<f64>::randn(&[2, 3], &mut rng);
        let b = Tensor::<f64>::randn(&[3, 4], &mut rng);
        let b2 = b.clone();
        let report = finite_diff_check(
            move |x| x.matmul(&b2)?.sum_all(),
            &a,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "dA: {}", report.max_rel_err);
        let a2 = a.clone();
        let report = finite_diff_check(
            move |x| a2.matmul(x)?.sum_all(),
            &b,
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "dB: {}", report.max_rel_err);
    }

    #[test]
    fn inner_dim_mismatch_is_shape_error() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        assert!(matches!(a.matmul(&b), Err(TensorError::Shape { .. })));
    }
}
