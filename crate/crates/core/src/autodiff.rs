//! Reverse-mode automatic differentiation.
//!
//! Graphs are recorded per forward pass (define-by-run): every op whose
//! inputs track gradients attaches a [`Node`] to its output. [`backward`]
//! topologically orders the recorded nodes, walks them once in reverse and
//! accumulates cotangents into the `grad` slots of the leaves. A graph is
//! consumed by backward; running it twice raises [`TensorError::StaleGraph`].

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::error::TensorError;
use crate::tensor::{Element, Tensor, TensorInner};

/// Per-input cotangent buffers produced by one node's backward rule.
/// `None` marks an input the op does not differentiate through.
pub(crate) type InputGrads<T> = Vec<Option<Vec<T>>>;

pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&[T], &[Tensor<T>], &TensorInner<T>) -> InputGrads<T>>;

pub(crate) struct Node<T: Element> {
    pub(crate) inputs: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
    pub(crate) consumed: Cell<bool>,
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled (inference mode).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Guard(bool);
    impl Drop for Guard {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _guard = Guard(prev);
    f()
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Builds an op output, attaching a graph node when any input tracks
/// gradients and recording is enabled.
pub(crate) fn record<T: Element>(
    data: Vec<T>,
    shape: Vec<usize>,
    inputs: &[&Tensor<T>],
    backward: impl Fn(&[T], &[Tensor<T>], &TensorInner<T>) -> InputGrads<T> + 'static,
) -> Tensor<T> {
    let track = grad_enabled() && inputs.iter().any(|t| t.tracks_grad());
    if !track {
        return Tensor::from_parts(data, shape, None);
    }
    let node = Node {
        inputs: inputs.iter().map(|t| (*t).clone()).collect(),
        backward: Box::new(backward),
        consumed: Cell::new(false),
    };
    Tensor::from_parts(data, shape, Some(node))
}

/// The recorded operations reachable from one root, in topological order
/// (every node's inputs precede it).
struct Graph<T: Element> {
    nodes: Vec<Rc<TensorInner<T>>>,
}

impl<T: Element> Graph<T> {
    /// Iterative post-order DFS over grad-tracking ancestors of `root`.
    fn trace(root: &Tensor<T>) -> Result<Self, TensorError> {
        let mut nodes = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // (tensor, next input index to expand)
        let mut stack: Vec<(Rc<TensorInner<T>>, usize)> = Vec::new();
        if root.inner.node.is_some() {
            stack.push((Rc::clone(&root.inner), 0));
            visited.insert(root.inner.id);
        }
        while let Some((t, idx)) = stack.pop() {
            let node = t.node.as_ref().expect("stack holds op outputs only");
            if node.consumed.get() {
                return Err(TensorError::StaleGraph);
            }
            if idx < node.inputs.len() {
                stack.push((Rc::clone(&t), idx + 1));
                let input = &node.inputs[idx];
                if input.tracks_grad()
                    && input.inner.node.is_some()
                    && visited.insert(input.inner.id)
                {
                    stack.push((Rc::clone(&input.inner), 0));
                }
            } else {
                nodes.push(t);
            }
        }
        Ok(Graph { nodes })
    }
}

/// Backpropagates from a scalar loss, accumulating gradients into every
/// grad-tracking leaf reachable from it. Consumes the recorded graph.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<(), TensorError> {
    if loss.numel() != 1 {
        return Err(TensorError::Rank(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }
    if !loss.tracks_grad() {
        return Ok(());
    }
    if loss.inner.node.is_none() {
        // A bare leaf: d loss / d loss = 1.
        loss.accumulate_grad(&[T::one()]);
        return Ok(());
    }

    let graph = Graph::trace(loss)?;
    let mut cotangents: HashMap<u64, Vec<T>> = HashMap::new();
    cotangents.insert(loss.inner.id, vec![T::one()]);

    for t in graph.nodes.iter().rev() {
        let Some(cot) = cotangents.remove(&t.id) else {
            continue; // no gradient reached this node (non-differentiable path)
        };
        let node = t.node.as_ref().expect("graph holds op outputs only");
        node.consumed.set(true);
        let input_grads = (node.backward)(&cot, &node.inputs, t);
        debug_assert_eq!(input_grads.len(), node.inputs.len());
        for (input, g) in node.inputs.iter().zip(input_grads) {
            let Some(g) = g else { continue };
            if !input.tracks_grad() {
                continue;
            }
            debug_assert_eq!(g.len(), input.numel(), "cotangent size mismatch");
            if input.inner.node.is_some() {
                match cotangents.get_mut(&input.inner.id) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => {
                        cotangents.insert(input.inner.id, g);
                    }
                }
            } else {
                input.accumulate_grad(&g);
            }
        }
    }
    Ok(())
}

/// Outcome of comparing an autodiff gradient against central finite
/// differences, element by element.
#[derive(Debug)]
pub struct FiniteDiffReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rtol: f64,
}

impl FiniteDiffReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.rtol
    }
}

/// Checks the autodiff gradient of a scalar-valued function at `x` against
/// `(f(x+h) - f(x-h)) / 2h` per element. `f` must be evaluable near `x`.
pub fn finite_diff_check(
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>, TensorError>,
    x: &Tensor<f64>,
    h: f64,
    rtol: f64,
) -> Result<FiniteDiffReport, TensorError> {
    let leaf = x.detach().requires_grad();
    let y = f(&leaf)?;
    if y.numel() != 1 {
        return Err(TensorError::Rank(format!(
            "finite_diff_check requires a scalar function, got shape {:?}",
            y.shape()
        )));
    }
    backward(&y)?;
    let analytic: Vec<f64> = match leaf.take_grad() {
        Some(g) => g,
        None => vec![0.0; x.numel()],
    };

    let mut numeric = vec![0.0; x.numel()];
    let base = x.data().to_vec();
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = no_grad(|| f(&Tensor::from_vec(plus, x.shape())?))?.item();
        let fm = no_grad(|| f(&Tensor::from_vec(minus, x.shape())?))?.item();
        numeric[i] = (fp - fm) / (2.0 * h);
    }

    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for i in 0..numeric.len() {
        let denom = 1.0_f64.max(analytic[i].abs()).max(numeric[i].abs());
        let rel = (analytic[i] - numeric[i]).abs() / denom;
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    Ok(FiniteDiffReport {
        max_rel_err,
        worst_index,
        analytic,
        numeric,
        rtol,
    })
}
