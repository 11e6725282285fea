//! The [`Tensor`] handle and the reverse pass.
//!
//! Every operation allocates a fresh node that owns its output values and,
//! when any input requires a gradient, a closure computing input gradients
//! from the output gradient. Node ids come from a global monotonic counter,
//! so a node is always younger than its inputs and sorting reachable nodes by
//! descending id yields a valid reverse topological order.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use crate::error::{shape_err, Error, Result};
use crate::real::Real;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward closures on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Computes input gradients from the output gradient.
///
/// The second argument flags which inputs actually need a gradient; entries
/// for the others may be `None`.
pub type BackwardFn<F> = Box<dyn Fn(&[F], &[bool]) -> Vec<Option<Vec<F>>> + Send + Sync>;

struct GradFn<F: Real> {
    op: &'static str,
    inputs: Vec<Tensor<F>>,
    backward: BackwardFn<F>,
}

struct Node<F: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<F>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<F>>>,
    grad_fn: Option<GradFn<F>>,
}

/// A dense row-major array that participates in reverse-mode differentiation.
///
/// Cloning is cheap and yields another handle to the same node.
pub struct Tensor<F: Real>(Arc<Node<F>>);

impl<F: Real> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<F: Real> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.grad_fn.as_ref().map(|g| g.op).unwrap_or("leaf");
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("op", &op)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn check_finite<F: Real>(op: &'static str, data: &[F]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn check_len(op: &'static str, len: usize, shape: &[usize]) -> Result<()> {
    let expected: usize = shape.iter().product();
    if len != expected {
        return shape_err(op, format!("{len} values for shape {shape:?}"));
    }
    Ok(())
}

impl<F: Real> Tensor<F> {
    fn leaf(data: Vec<F>, shape: &[usize], requires_grad: bool) -> Result<Self> {
        check_len("tensor", data.len(), shape)?;
        check_finite("tensor", &data)?;
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: RwLock::new(data),
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        })))
    }

    /// A constant tensor (no gradient).
    pub fn new(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, false)
    }

    /// A trainable leaf tensor.
    pub fn param(data: Vec<F>, shape: &[usize]) -> Result<Self> {
        Self::leaf(data, shape, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![F::zero(); n], shape, false).expect("zeros are finite")
    }

    pub fn full(shape: &[usize], value: F) -> Result<Self> {
        let n = shape.iter().product();
        Self::leaf(vec![value; n], shape, false)
    }

    /// A rank-0 constant.
    pub fn scalar(value: F) -> Result<Self> {
        Self::leaf(vec![value], &[], false)
    }

    /// Builds the output node of a differentiable operation.
    ///
    /// This is the extension point for custom kernels: `backward` receives
    /// the gradient of the output and must return one entry per input.
    pub fn from_op(
        op: &'static str,
        data: Vec<F>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<F>>,
        backward: impl Fn(&[F], &[bool]) -> Vec<Option<Vec<F>>> + Send + Sync + 'static,
    ) -> Result<Self> {
        check_len(op, data.len(), &shape)?;
        check_finite(op, &data)?;
        let requires_grad = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn {
            op,
            inputs,
            backward: Box::new(backward),
        });
        Ok(Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            requires_grad,
            grad: Mutex::new(None),
            grad_fn,
        })))
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    /// Size of dimension `axis`; panics when out of range.
    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<F>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<F> {
        let data = self.data();
        if data.len() != 1 {
            return Err(Error::Usage(format!("item() on tensor of shape {:?}", self.shape())));
        }
        Ok(data[0])
    }

    /// A new constant leaf sharing no graph history with `self`.
    pub fn detach(&self) -> Self {
        Self::leaf(self.to_vec(), self.shape(), false).expect("values already validated")
    }

    /// Mutates the values of a leaf tensor in place (optimizer updates).
    pub fn update_data(&self, f: impl FnOnce(&mut [F])) -> Result<()> {
        if !self.is_leaf() {
            return Err(Error::Usage("update_data on a non-leaf tensor".into()));
        }
        let mut data = self.0.data.write().expect("tensor data lock poisoned");
        f(&mut data);
        check_finite("update_data", &data)
    }

    /// Replaces the values of a leaf tensor; the length must not change.
    pub fn assign(&self, values: &[F]) -> Result<()> {
        if values.len() != self.numel() {
            return shape_err(
                "assign",
                format!("{} values for shape {:?}", values.len(), self.shape()),
            );
        }
        self.update_data(|d| d.copy_from_slice(values))
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn set_grad(&self, grad: Option<Vec<F>>) -> Result<()> {
        if let Some(g) = &grad {
            check_len("set_grad", g.len(), self.shape())?;
        }
        *self.0.grad.lock().expect("grad lock poisoned") = grad;
        Ok(())
    }

    /// Applies `f` to the stored gradient, if any.
    pub fn map_grad(&self, f: impl FnOnce(&mut [F])) {
        if let Some(g) = self.0.grad.lock().expect("grad lock poisoned").as_mut() {
            f(g);
        }
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    fn accumulate_grad(&self, g: &[F]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar, accumulating into the `grad` of every
    /// reachable leaf that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(
                    gf.inputs
                        .iter()
                        .filter(|i| i.requires_grad() && !seen.contains(&i.id()))
                        .cloned(),
                );
            }
            order.push(t);
        }
        order.sort_unstable_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<F>> = HashMap::new();
        pending.insert(self.id(), vec![F::one()]);
        for node in order {
            let Some(grad_out) = pending.remove(&node.id()) else {
                continue;
            };
            let Some(gf) = &node.0.grad_fn else {
                node.accumulate_grad(&grad_out);
                continue;
            };
            let needs: Vec<bool> = gf.inputs.iter().map(Tensor::requires_grad).collect();
            let grads = (gf.backward)(&grad_out, &needs);
            debug_assert_eq!(grads.len(), gf.inputs.len(), "{} backward arity", gf.op);
            for ((input, g), need) in gf.inputs.iter().zip(grads).zip(needs) {
                let Some(g) = g.filter(|_| need) else {
                    continue;
                };
                if g.len() != input.numel() {
                    return shape_err(
                        gf.op,
                        format!(
                            "backward produced {} values for input of shape {:?}",
                            g.len(),
                            input.shape()
                        ),
                    );
                }
                match pending.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => {
                        pending.insert(input.id(), g);
                    }
                }
            }
        }
        Ok(())
    }
}
