//! Dense row-major tensor storage.
//!
//! A [`Tensor`] is an immutable N-dimensional array of `f32` or `f64` values.
//! Operations never mutate their inputs; the only interior mutability is the
//! gradient slot, which is written during a dedicated backward phase (see
//! [`crate::autodiff`]).

use std::cell::RefCell;
use std::fmt;
use std::io::{Read, Write};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::autodiff::Node;
use crate::error::{FormatError, TensorError};

/// Element dtype of a tensor buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Dtype> {
        match tag {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

/// Scalar element type a [`Tensor`] can hold.
pub trait Element:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(b: &[u8]) -> Self;
    fn byte_size() -> usize;
}

impl Element for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(b: &[u8]) -> Self {
        f32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
    fn byte_size() -> usize {
        4
    }
}

impl Element for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(b: &[u8]) -> Self {
        f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]])
    }
    fn byte_size() -> usize {
        8
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorInner<T: Element> {
    pub(crate) id: u64,
    pub(crate) data: Vec<T>,
    pub(crate) shape: Vec<usize>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: RefCell<Option<Vec<T>>>,
    pub(crate) node: Option<Node<T>>,
}

/// Immutable dense tensor participating in a reverse-mode differentiation graph.
pub struct Tensor<T: Element> {
    pub(crate) inner: Rc<TensorInner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("dtype", &T::DTYPE.name())
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn check_numel(data_len: usize, shape: &[usize]) -> Result<(), TensorError> {
    let numel: usize = shape.iter().product();
    if shape.iter().any(|&e| e == 0) {
        return Err(TensorError::Domain {
            op: "from_vec",
            msg: format!("zero extent in shape {shape:?}"),
        });
    }
    if numel != data_len {
        return Err(TensorError::Shape {
            op: "from_vec",
            lhs: vec![data_len],
            rhs: shape.to_vec(),
        });
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub(crate) fn from_parts(data: Vec<T>, shape: Vec<usize>, node: Option<Node<T>>) -> Self {
        let requires_grad = node.is_some();
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                data,
                shape,
                requires_grad,
                grad: RefCell::new(None),
                node,
            }),
        }
    }

    /// Builds a constant (non-tracked) tensor from a flat row-major buffer.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self, TensorError> {
        check_numel(data.len(), shape)?;
        Ok(Self::from_parts(data, shape.to_vec(), None))
    }

    /// Builds a rank-1 tensor.
    pub fn from_slice(data: &[T]) -> Self {
        Self::from_parts(data.to_vec(), vec![data.len()], None)
    }

    /// A scalar tensor of shape `[1]`.
    pub fn scalar(v: T) -> Self {
        Self::from_parts(vec![v], vec![1], None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(vec![T::zero(); numel], shape.to_vec(), None)
    }

    pub fn ones(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(vec![T::one(); numel], shape.to_vec(), None)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(vec![v; numel], shape.to_vec(), None)
    }

    /// Standard-normal samples.
    pub fn randn<R: Rng>(shape: &[usize], rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(gauss(rng)))
            .collect();
        Self::from_parts(data, shape.to_vec(), None)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| T::from_f64(rng.gen_range(lo..hi)))
            .collect();
        Self::from_parts(data, shape.to_vec(), None)
    }

    /// Truncated-normal samples with the given std, clipped at two sigma.
    pub fn trunc_normal<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let mut v = gauss(rng);
                while v.abs() > 2.0 {
                    v = gauss(rng);
                }
                T::from_f64(v * std)
            })
            .collect();
        Self::from_parts(data, shape.to_vec(), None)
    }

    /// Marks this tensor as a differentiable leaf. Must be called on a tensor
    /// that is not itself the output of a recorded operation.
    pub fn requires_grad(self) -> Self {
        assert!(
            self.inner.node.is_none(),
            "requires_grad() must be applied to a leaf tensor"
        );
        // Tensors are reference-counted; build a fresh leaf with the same data.
        Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                data: self.inner.data.clone(),
                shape: self.inner.shape.clone(),
                requires_grad: true,
                grad: RefCell::new(None),
                node: None,
            }),
        }
    }

    /// A constant copy cut off from any recorded graph.
    pub fn detach(&self) -> Self {
        Self::from_parts(self.inner.data.clone(), self.inner.shape.clone(), None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn tracks_grad(&self) -> bool {
        self.inner.requires_grad
    }

    #[allow(dead_code)]
    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() requires a one-element tensor");
        self.inner.data[0]
    }

    /// Gradient accumulated by the last backward pass, if any.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.inner
            .grad
            .borrow()
            .as_ref()
            .map(|g| Tensor::from_parts(g.clone(), self.inner.shape.clone(), None))
    }

    /// Removes and returns the accumulated gradient buffer.
    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow_mut().take()
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (a, b) in buf.iter_mut().zip(g) {
                    *a += *b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Casts element-wise to another dtype, dropping any graph history.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.inner.data.iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::from_parts(data, self.inner.shape.clone(), None)
    }

    /// Serializes as a GVT1 blob: magic, dtype tag, rank, u64 extents, raw
    /// little-endian buffer.
    pub fn write_gvt<W: Write>(&self, w: &mut W) -> Result<(), FormatError> {
        w.write_all(b"GVT1")?;
        w.write_all(&[T::DTYPE.tag(), self.rank() as u8])?;
        for &e in self.shape() {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.numel() * T::byte_size());
        for v in self.data() {
            buf.extend_from_slice(&v.to_le_bytes_vec());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a GVT1 blob of this dtype.
    pub fn read_gvt<R: Read>(r: &mut R) -> Result<Self, FormatError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| FormatError::Truncated("GVT1 header".into()))?;
        if &magic != b"GVT1" {
            return Err(FormatError::Magic {
                expected: "GVT1".into(),
                got: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let mut head = [0u8; 2];
        r.read_exact(&mut head)
            .map_err(|_| FormatError::Truncated("GVT1 dtype/rank".into()))?;
        let dtype = Dtype::from_tag(head[0])
            .ok_or_else(|| FormatError::BadHeader(format!("unknown dtype tag {}", head[0])))?;
        if dtype != T::DTYPE {
            return Err(FormatError::BadHeader(format!(
                "dtype mismatch: file holds {}, reader expects {}",
                dtype.name(),
                T::DTYPE.name()
            )));
        }
        let rank = head[1] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut e = [0u8; 8];
            r.read_exact(&mut e)
                .map_err(|_| FormatError::Truncated("GVT1 extents".into()))?;
            shape.push(u64::from_le_bytes(e) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = vec![0u8; numel * T::byte_size()];
        r.read_exact(&mut raw)
            .map_err(|_| FormatError::Truncated("GVT1 payload".into()))?;
        let data = raw
            .chunks_exact(T::byte_size())
            .map(T::from_le_slice)
            .collect();
        Ok(Self::from_parts(data, shape, None))
    }
}

/// Box-Muller gaussian; two uniforms per call keeps the stream simple and
/// reproducible across platforms.
fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Row-major strides for a shape.
pub(crate) fn strides_for(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
