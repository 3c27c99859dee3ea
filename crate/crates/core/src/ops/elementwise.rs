//! Elementwise binary and unary operations.

use crate::autodiff::record;
use crate::error::TensorError;
use crate::ops::{broadcast_shape, reduce_to_shape, PairIter};
use crate::tensor::{Element, Tensor};

/// Applies a broadcast binary op; `dfda`/`dfdb` map `(a, b, grad)` to the
/// per-element input cotangents in output space.
fn binary<T: Element>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    fwd: impl Fn(T, T) -> T + Copy + 'static,
    dfda: impl Fn(T, T, T) -> T + Copy + 'static,
    dfdb: impl Fn(T, T, T) -> T + Copy + 'static,
) -> Result<Tensor<T>, TensorError> {
    let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
    let numel: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    if a.shape() == b.shape() {
        for (&x, &y) in a.data().iter().zip(b.data()) {
            data.push(fwd(x, y));
        }
    } else {
        let ad = a.data();
        let bd = b.data();
        for (ia, ib) in PairIter::new(&out_shape, a.shape(), b.shape()) {
            data.push(fwd(ad[ia], bd[ib]));
        }
    }
    let out_shape_bw = out_shape.clone();
    Ok(record(data, out_shape, &[a, b], move |grad, inputs, _| {
        let (a, b) = (&inputs[0], &inputs[1]);
        let ad = a.data();
        let bd = b.data();
        let mut da = Vec::with_capacity(grad.len());
        let mut db = Vec::with_capacity(grad.len());
        if a.shape() == b.shape() {
            for ((&x, &y), &g) in ad.iter().zip(bd).zip(grad) {
                da.push(dfda(x, y, g));
                db.push(dfdb(x, y, g));
            }
        } else {
            for ((ia, ib), &g) in PairIter::new(&out_shape_bw, a.shape(), b.shape()).zip(grad)
            {
                da.push(dfda(ad[ia], bd[ib], g));
                db.push(dfdb(ad[ia], bd[ib], g));
            }
        }
        vec![
            Some(reduce_to_shape(&da, &out_shape_bw, a.shape())),
            Some(reduce_to_shape(&db, &out_shape_bw, b.shape())),
        ]
    }))
}

fn unary<T: Element>(
    x: &Tensor<T>,
    fwd: impl Fn(T) -> T + Copy + 'static,
    // (input, output, grad) -> input cotangent
    dfdx: impl Fn(T, T, T) -> T + Copy + 'static,
) -> Tensor<T> {
    let data: Vec<T> = x.data().iter().map(|&v| fwd(v)).collect();
    record(data, x.shape().to_vec(), &[x], move |grad, inputs, out| {
        let g = inputs[0]
            .data()
            .iter()
            .zip(out.data.iter())
            .zip(grad)
            .map(|((&xi, &yi), &gi)| dfdx(xi, yi, gi))
            .collect();
        vec![Some(g)]
    })
}

fn check_finite<T: Element>(op: &'static str, data: &[T]) -> Result<(), TensorError> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(TensorError::Domain {
            op,
            msg: format!("non-finite output at element {pos}"),
        });
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    /// Elementwise sum; shapes broadcast per the crate rules.
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary("add", self, rhs, |a, b| a + b, |_, _, g| g, |_, _, g| g)
    }

    /// Elementwise difference.
    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary("sub", self, rhs, |a, b| a - b, |_, _, g| g, |_, _, g| -g)
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        binary(
            "mul",
            self,
            rhs,
            |a, b| a * b,
            |_, b, g| g * b,
            |a, _, g| g * a,
        )
    }

    /// Elementwise quotient. A zero anywhere in the divisor is a domain error.
    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if rhs.data().iter().any(|v| *v == T::zero()) {
            return Err(TensorError::Domain {
                op: "div",
                msg: "division by zero".into(),
            });
        }
        let out = binary(
            "div",
            self,
            rhs,
            |a, b| a / b,
            |_, b, g| g / b,
            |a, b, g| -g * a / (b * b),
        )?;
        check_finite("div", out.data())?;
        Ok(out)
    }

    /// Adds a scalar constant.
    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        unary(self, move |v| v + c, |_, _, g| g)
    }

    /// Multiplies by a scalar constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        unary(self, move |v| v * c, move |_, _, g| g * c)
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-T::one())
    }

    pub fn abs(&self) -> Tensor<T> {
        unary(
            self,
            |v| v.abs(),
            |x, _, g| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        unary(
            self,
            |v| if v > T::zero() { v } else { T::zero() },
            |x, _, g| if x > T::zero() { g } else { T::zero() },
        )
    }

    /// Elementwise max with a constant; gradient is zero on the clamped side.
    pub fn clamp_min(&self, c: T) -> Tensor<T> {
        unary(
            self,
            move |v| if v > c { v } else { c },
            move |x, _, g| if x > c { g } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        unary(
            self,
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            |_, y, g| g * y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        unary(self, |v| v.tanh(), |_, y, g| g * (T::one() - y * y))
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let three = T::from_f64(3.0);
        unary(
            self,
            move |x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()),
            move |x, _, g| {
                let inner = c * (x + k * x * x * x);
                let t = inner.tanh();
                let sech2 = T::one() - t * t;
                let dinner = c * (T::one() + three * k * x * x);
                g * (half * (T::one() + t) + half * x * sech2 * dinner)
            },
        )
    }

    pub fn exp(&self) -> Result<Tensor<T>, TensorError> {
        let out = unary(self, |v| v.exp(), |_, y, g| g * y);
        check_finite("exp", out.data())?;
        Ok(out)
    }

    /// Natural log; requires strictly positive inputs.
    pub fn log(&self) -> Result<Tensor<T>, TensorError> {
        if self.data().iter().any(|v| *v <= T::zero()) {
            return Err(TensorError::Domain {
                op: "log",
                msg: "log of a non-positive value".into(),
            });
        }
        Ok(unary(self, |v| v.ln(), |x, _, g| g / x))
    }

    /// Square root; requires non-negative inputs.
    pub fn sqrt(&self) -> Result<Tensor<T>, TensorError> {
        if self.data().iter().any(|v| *v < T::zero()) {
            return Err(TensorError::Domain {
                op: "sqrt",
                msg: "sqrt of a negative value".into(),
            });
        }
        let two = T::from_f64(2.0);
        Ok(unary(self, |v| v.sqrt(), move |_, y, g| g / (two * y)))
    }
}
