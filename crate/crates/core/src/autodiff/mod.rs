//! Reverse-mode automatic differentiation over dynamically shaped arrays.
//!
//! A [`Tensor`] is a reference-counted node in a computation graph. Leaves are
//! either parameters (gradients accumulated) or constants (no gradient).
//! Calling [`Tensor::backward`] on a scalar output walks the graph in reverse
//! topological order and accumulates gradients into every reachable node that
//! requires them.

mod nn_ops;
mod shape_ops;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use ndarray::{ArrayD, Zip};

use crate::elem::Elem;

type BackwardFn<F> = Box<dyn Fn(&ArrayD<F>, &[Tensor<F>], &ArrayD<F>) -> Vec<Option<ArrayD<F>>>>;

struct Node<F: Elem> {
    value: RefCell<ArrayD<F>>,
    grad: RefCell<Option<ArrayD<F>>>,
    requires_grad: bool,
    parents: Vec<Tensor<F>>,
    backward: Option<BackwardFn<F>>,
}

/// A node in the autodiff graph holding an n-dimensional array value.
#[derive(Clone)]
pub struct Tensor<F: Elem> {
    inner: Rc<Node<F>>,
}

impl<F: Elem> Tensor<F> {
    /// A differentiable leaf (trainable parameter).
    pub fn leaf(value: ArrayD<F>) -> Self {
        Self::new(value, true, vec![], None)
    }

    /// A non-differentiable leaf (input data, masks, fixed fields).
    pub fn constant(value: ArrayD<F>) -> Self {
        Self::new(value, false, vec![], None)
    }

    fn new(
        value: ArrayD<F>,
        requires_grad: bool,
        parents: Vec<Tensor<F>>,
        backward: Option<BackwardFn<F>>,
    ) -> Self {
        Tensor {
            inner: Rc::new(Node {
                value: RefCell::new(value),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward,
            }),
        }
    }

    pub(crate) fn from_op(
        value: ArrayD<F>,
        parents: Vec<Tensor<F>>,
        backward: BackwardFn<F>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Self::new(value, true, parents, Some(backward))
        } else {
            Self::new(value, false, vec![], None)
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn value(&self) -> Ref<'_, ArrayD<F>> {
        self.inner.value.borrow()
    }

    pub fn value_clone(&self) -> ArrayD<F> {
        self.inner.value.borrow().clone()
    }

    /// Replace the stored value. Only meaningful for leaves; used by the
    /// optimizer and checkpoint loading.
    pub fn set_value(&self, value: ArrayD<F>) {
        assert_eq!(
            value.shape(),
            self.inner.value.borrow().shape(),
            "set_value must preserve shape"
        );
        *self.inner.value.borrow_mut() = value;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.value.borrow().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.inner.value.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value of a zero-dimensional tensor.
    pub fn scalar(&self) -> F {
        let v = self.inner.value.borrow();
        assert!(v.len() == 1, "scalar() on tensor of {} elements", v.len());
        *v.iter().next().unwrap()
    }

    pub fn grad(&self) -> Option<ArrayD<F>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Cut the graph: same value, no parents, no gradient flow.
    pub fn detach(&self) -> Tensor<F> {
        Tensor::constant(self.value_clone())
    }

    fn key(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    fn accumulate_grad(&self, g: ArrayD<F>) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                Zip::from(acc).and(&g).for_each(|a, &b| *a = *a + b);
            }
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep seeded with ones at `self` (normally a scalar loss).
    pub fn backward(&self) {
        assert!(self.requires_grad(), "backward on a non-differentiable tensor");
        let order = self.topo_order();
        self.accumulate_grad(ArrayD::ones(self.inner.value.borrow().raw_dim()));
        for node in order.iter().rev() {
            let Some(bf) = node.inner.backward.as_ref() else {
                continue;
            };
            let grad = match node.inner.grad.borrow().as_ref() {
                Some(g) => g.clone(),
                None => continue,
            };
            let out_val = node.inner.value.borrow();
            let parent_grads = bf(&grad, &node.inner.parents, &out_val);
            debug_assert_eq!(parent_grads.len(), node.inner.parents.len());
            for (parent, pg) in node.inner.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if parent.requires_grad() {
                        debug_assert_eq!(pg.shape(), parent.inner.value.borrow().shape());
                        parent.accumulate_grad(pg);
                    }
                }
            }
        }
    }

    /// Iterative post-order DFS over grad-requiring ancestors.
    fn topo_order(&self) -> Vec<Tensor<F>> {
        let mut order = Vec::new();
        let mut visited = BTreeSet::new();
        // (node, next parent index to expand)
        let mut stack: Vec<(Tensor<F>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((node, pi)) = stack.pop() {
            let parents = &node.inner.parents;
            if pi < parents.len() {
                stack.push((node.clone(), pi + 1));
                let p = &parents[pi];
                if p.requires_grad() && visited.insert(p.key()) {
                    stack.push((p.clone(), 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }

    /// Run backward and collect the gradient of each of `params`.
    pub fn grads_for(&self, params: &[Tensor<F>]) -> Vec<Option<ArrayD<F>>> {
        self.backward();
        params.iter().map(|p| p.grad()).collect()
    }
}

// ---------------------------------------------------------------------------
// Elementwise and reduction ops
// ---------------------------------------------------------------------------

impl<F: Elem> Tensor<F> {
    fn unary(
        &self,
        value: ArrayD<F>,
        df: impl Fn(&ArrayD<F>, &ArrayD<F>, &ArrayD<F>) -> ArrayD<F> + 'static,
    ) -> Tensor<F> {
        Tensor::from_op(
            value,
            vec![self.clone()],
            Box::new(move |g, parents, out| {
                let x = parents[0].value();
                vec![Some(df(g, &x, out))]
            }),
        )
    }

    pub fn neg(&self) -> Tensor<F> {
        self.unary(self.value().mapv(|v| -v), |g, _, _| g.mapv(|v| -v))
    }

    pub fn exp(&self) -> Tensor<F> {
        self.unary(self.value().mapv(F::exp), |g, _, out| g * out)
    }

    pub fn ln(&self) -> Tensor<F> {
        self.unary(self.value().mapv(F::ln), |g, x, _| g / x)
    }

    pub fn sqrt(&self) -> Tensor<F> {
        self.unary(self.value().mapv(F::sqrt), |g, _, out| {
            g * F::lit(0.5) / out
        })
    }

    pub fn square(&self) -> Tensor<F> {
        self.unary(self.value().mapv(|v| v * v), |g, x, _| {
            let two = F::lit(2.0);
            g * &x.mapv(|v| v * two)
        })
    }

    pub fn abs(&self) -> Tensor<F> {
        self.unary(self.value().mapv(F::abs), |g, x, _| {
            let mut out = g.clone();
            Zip::from(&mut out).and(x).for_each(|o, &xv| {
                *o = *o * xv.signum() * if xv == F::zero() { F::zero() } else { F::one() };
            });
            out
        })
    }

    pub fn relu(&self) -> Tensor<F> {
        self.unary(self.value().mapv(|v| v.max(F::zero())), |g, x, _| {
            let mut out = g.clone();
            Zip::from(&mut out).and(x).for_each(|o, &xv| {
                if xv <= F::zero() {
                    *o = F::zero();
                }
            });
            out
        })
    }

    /// SiLU activation `x * sigmoid(x)`.
    pub fn silu(&self) -> Tensor<F> {
        self.unary(
            self.value().mapv(|v| v * sigmoid(v)),
            |g, x, _| {
                let mut out = g.clone();
                Zip::from(&mut out).and(x).for_each(|o, &xv| {
                    let s = sigmoid(xv);
                    *o = *o * (s * (F::one() + xv * (F::one() - s)));
                });
                out
            },
        )
    }

    /// Elementwise clamp with a straight (zero outside the interval) gradient.
    pub fn clamp(&self, lo: F, hi: F) -> Tensor<F> {
        self.unary(
            self.value().mapv(|v| v.max(lo).min(hi)),
            move |g, x, _| {
                let mut out = g.clone();
                Zip::from(&mut out).and(x).for_each(|o, &xv| {
                    if xv < lo || xv > hi {
                        *o = F::zero();
                    }
                });
                out
            },
        )
    }

    pub fn add_scalar(&self, c: F) -> Tensor<F> {
        self.unary(self.value().mapv(|v| v + c), |g, _, _| g.clone())
    }

    pub fn mul_scalar(&self, c: F) -> Tensor<F> {
        self.unary(self.value().mapv(|v| v * c), move |g, _, _| g * c)
    }

    fn binary_same_shape(
        &self,
        other: &Tensor<F>,
        value: ArrayD<F>,
        df: impl Fn(&ArrayD<F>, &ArrayD<F>, &ArrayD<F>) -> (ArrayD<F>, ArrayD<F>) + 'static,
    ) -> Tensor<F> {
        assert_eq!(
            self.shape(),
            other.shape(),
            "elementwise binary op requires equal shapes"
        );
        Tensor::from_op(
            value,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents, _| {
                let a = parents[0].value();
                let b = parents[1].value();
                let (ga, gb) = df(g, &a, &b);
                vec![Some(ga), Some(gb)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_same_shape(other, &*self.value() + &*other.value(), |g, _, _| {
            (g.clone(), g.clone())
        })
    }

    pub fn sub(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_same_shape(other, &*self.value() - &*other.value(), |g, _, _| {
            (g.clone(), g.mapv(|v| -v))
        })
    }

    pub fn mul(&self, other: &Tensor<F>) -> Tensor<F> {
        self.binary_same_shape(other, &*self.value() * &*other.value(), |g, a, b| {
            (g * b, g * a)
        })
    }

    pub fn sum_all(&self) -> Tensor<F> {
        let s = self.value().sum();
        self.unary(ArrayD::from_elem(ndarray::IxDyn(&[]), s), |g, x, _| {
            ArrayD::from_elem(x.raw_dim(), *g.iter().next().unwrap())
        })
    }

    pub fn mean_all(&self) -> Tensor<F> {
        let n = F::from_usize_(self.len());
        self.sum_all().mul_scalar(F::one() / n)
    }
}

fn sigmoid<F: Elem>(v: F) -> F {
    F::one() / (F::one() + (-v).exp())
}

pub use nn_ops::linear_2d;
