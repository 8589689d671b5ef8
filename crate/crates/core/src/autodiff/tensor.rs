use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use super::ops::Op;
use super::TensorError;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Disables graph recording on the current thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

/// Stops recording the autodiff graph on this thread while the guard lives.
///
/// Inference paths (sampling, evaluation) run under this guard so that no
/// intermediate buffers are retained.
pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

pub(crate) struct Origin {
    pub(crate) op: Op,
    pub(crate) parents: Vec<Tensor>,
}

pub(crate) struct Node {
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: AtomicBool,
    origin: Option<Origin>,
}

/// Dense row-major `f64` array with an optional gradient.
///
/// Cloning a `Tensor` is cheap and shares storage; parameters are mutated in
/// place by the optimizer, so every clone observes the update.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, origin: Option<Origin>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad: AtomicBool::new(requires_grad),
            origin,
        }))
    }

    /// Constant leaf. Fails if `data.len()` disagrees with `shape` or any extent is zero.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor, TensorError> {
        Self::leaf(data, shape, false)
    }

    /// Trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor, TensorError> {
        Self::leaf(data, shape, true)
    }

    fn leaf(data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor, TensorError> {
        if shape.contains(&0) {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("zero extent in shape {shape:?}"),
            });
        }
        if numel(shape) != data.len() {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("{} values do not fill shape {shape:?}", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Self::build(shape.to_vec(), data, requires_grad, None))
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::build(Vec::new(), vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], false, None)
    }

    pub fn zeros_like(other: &Tensor) -> Tensor {
        Self::zeros(other.shape())
    }

    /// Records an op result. Graph links are kept only when recording is on
    /// and some parent needs a gradient.
    pub(crate) fn from_op(
        op: Op,
        parents: Vec<Tensor>,
        data: Vec<f64>,
        shape: Vec<usize>,
    ) -> Result<Tensor, TensorError> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        let track = grad_enabled() && parents.iter().any(Tensor::requires_grad);
        let origin = track.then_some(Origin { op, parents });
        Ok(Self::build(shape, data, track, origin))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.load(Ordering::Relaxed)
    }

    /// Toggles gradient tracking on a leaf. Has no effect on op results.
    pub fn set_requires_grad(&self, on: bool) {
        if self.0.origin.is_none() {
            self.0.requires_grad.store(on, Ordering::Relaxed);
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.0.origin.is_none()
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// Copy of the values with no graph attached.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.to_vec(), false, None)
    }

    /// In-place mutation of leaf storage (optimizer updates, checkpoint loads, probes).
    pub fn update_data<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        let mut guard = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut guard)
    }

    pub(crate) fn origin(&self) -> Option<&Origin> {
        self.0.origin.as_ref()
    }

    fn key(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from a scalar loss into every leaf that requires a gradient.
    ///
    /// Leaf gradients accumulate across calls; clear them with [`Tensor::zero_grad`]
    /// or `ParamStore::zero_grads` between optimizer steps.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(TensorError::Detached);
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const Node, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            match node.origin() {
                None => node.accumulate_grad(&g),
                Some(origin) => {
                    let parent_grads = origin.op.backward(&origin.parents, node, &g);
                    for (parent, pg) in origin.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        match grads.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(parent.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` through tracked edges, parents before children.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited: HashSet<*const Node> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(origin) = t.origin() {
                for p in &origin.parents {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let preview: Vec<f64> = data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &preview)
            .finish()
    }
}
