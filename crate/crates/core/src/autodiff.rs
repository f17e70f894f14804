//! Tape-based reverse-mode differentiation over the kernel set.
//!
//! A [`Tape`] records every op applied to [`Var`]s that descend from a
//! recorded leaf. [`Tape::backward`] then walks the tape in reverse and
//! returns gradients for every leaf. A tape built with [`Tape::inference`]
//! records nothing, so intermediate values are freed as soon as their `Var`s
//! drop; forward code is identical in both modes.
//!
//! Tapes are single-threaded. Run one tape per thread for concurrent work.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::kernels::{self, conv, pointwise, shape, Conv1dSpec};
use crate::tensor::{Scalar, Tensor};

type Grads<S> = Vec<Option<Tensor<S>>>;
type BackwardFn<S> = Box<dyn Fn(&Tensor<S>) -> Result<Grads<S>>>;

struct Node<S> {
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn<S>>,
}

pub struct Tape<S: Scalar = f64> {
    recording: bool,
    nodes: RefCell<Vec<Node<S>>>,
    dropout_rng: Option<RefCell<ChaCha8Rng>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    /// Recording tape; dropout stays inactive.
    pub fn new() -> Self {
        Self {
            recording: true,
            nodes: RefCell::new(Vec::new()),
            dropout_rng: None,
        }
    }

    /// Non-recording tape for plain forward passes.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    /// Activates dropout with a seeded mask generator.
    pub fn with_dropout(mut self, seed: u64) -> Self {
        self.dropout_rng = Some(RefCell::new(ChaCha8Rng::seed_from_u64(seed)));
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input (a weight, or a tensor under test).
    pub fn leaf(&self, value: Arc<Tensor<S>>) -> Var<'_, S> {
        let node = self.recording.then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                inputs: Vec::new(),
                backward: None,
            });
            nodes.len() - 1
        });
        Var {
            tape: self,
            value,
            node,
        }
    }

    pub fn var(&self, value: Tensor<S>) -> Var<'_, S> {
        self.leaf(Arc::new(value))
    }

    /// Data that takes no gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        Var {
            tape: self,
            value: Arc::new(value),
            node: None,
        }
    }

    fn push<'t>(
        &'t self,
        value: Tensor<S>,
        inputs: &[&Var<'t, S>],
        backward: impl Fn(&Tensor<S>) -> Result<Grads<S>> + 'static,
    ) -> Var<'t, S> {
        let ids: Vec<Option<usize>> = inputs.iter().map(|v| v.node).collect();
        let node = (self.recording && ids.iter().any(Option::is_some)).then(|| {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                inputs: ids,
                backward: Some(Box::new(backward)),
            });
            nodes.len() - 1
        });
        Var {
            tape: self,
            value: Arc::new(value),
            node,
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: &Var<'_, S>) -> Result<Gradients<S>> {
        let Some(root) = loss.node else {
            return Err(Error::Autodiff("loss does not depend on any recorded leaf".into()));
        };
        if loss.value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                loss.value.shape()
            )));
        }
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Tensor<S>>> = (0..=root).map(|_| None).collect();
        pending[root] = Some(Tensor::full(loss.value.shape(), S::one()));
        let mut leaves = HashMap::new();
        crate::mac::paused(|| -> Result<()> {
            for i in (0..=root).rev() {
                let Some(g) = pending[i].take() else { continue };
                let node = &nodes[i];
                let Some(f) = &node.backward else {
                    leaves.insert(i, g);
                    continue;
                };
                for (input, part) in node.inputs.iter().zip(f(&g)?) {
                    if let (Some(p), Some(part)) = (input, part) {
                        match &mut pending[*p] {
                            Some(acc) => acc.add_assign(&part)?,
                            slot => *slot = Some(part),
                        }
                    }
                }
            }
            Ok(())
        })?;
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients from one backward sweep.
pub struct Gradients<S> {
    leaves: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss with respect to a leaf, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, v: &Var<'_, S>) -> Option<&Tensor<S>> {
        v.node.and_then(|id| self.leaves.get(&id))
    }

    /// Like [`get`](Self::get) but materializes zeros for unused leaves.
    pub fn get_or_zeros(&self, v: &Var<'_, S>) -> Tensor<S> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

/// A tensor value bound to a tape.
#[derive(Clone)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    value: Arc<Tensor<S>>,
    node: Option<usize>,
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn value(&self) -> &Tensor<S> {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor<S>> {
        self.value.clone()
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn is_recorded(&self) -> bool {
        self.node.is_some()
    }

    fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "add")?;
        let v = self.value.zip_map(&other.value, |a, b| a + b)?;
        Ok(self.tape.push(v, &[self, other], |g| Ok(vec![Some(g.clone()), Some(g.clone())])))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        let v = self.value.zip_map(&other.value, |a, b| a - b)?;
        Ok(self
            .tape
            .push(v, &[self, other], |g| Ok(vec![Some(g.clone()), Some(g.map(|x| -x))])))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "mul")?;
        let v = self.value.zip_map(&other.value, |a, b| a * b)?;
        let (a, b) = (self.shared(), other.shared());
        Ok(self.tape.push(v, &[self, other], move |g| {
            Ok(vec![
                Some(g.zip_map(&b, |g, b| g * b)?),
                Some(g.zip_map(&a, |g, a| g * a)?),
            ])
        }))
    }

    pub fn scale(&self, c: f64) -> Self {
        let c = S::of(c);
        let v = self.value.map(|x| x * c);
        self.tape.push(v, &[self], move |g| Ok(vec![Some(g.map(|x| x * c))]))
    }

    /// Elementwise absolute value; subgradient 0 at the kink.
    pub fn abs(&self) -> Self {
        let v = self.value.map(|x| x.abs());
        let x = self.shared();
        self.tape
            .push(v, &[self], move |g| Ok(vec![Some(g.zip_map(&x, |g, x| g * x.signum_z())?)]))
    }

    pub fn sum(&self) -> Self {
        let v = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.tape
            .push(v, &[self], move |g| Ok(vec![Some(Tensor::full(&shape, g.item()))]))
    }

    pub fn mean(&self) -> Self {
        let n = self.value.len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        let v = (*self.value).clone().reshape(new_shape)?;
        let old = self.shape().to_vec();
        Ok(self
            .tape
            .push(v, &[self], move |g| Ok(vec![Some(g.clone().reshape(&old)?)])))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let v = shape::permute(&self.value, axes)?;
        let inv = shape::inverse_axes(axes);
        Ok(self
            .tape
            .push(v, &[self], move |g| Ok(vec![Some(shape::permute(g, &inv)?)])))
    }

    pub fn transpose12(&self) -> Result<Self> {
        self.permute(&[0, 2, 1])
    }

    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let v = shape::slice(&self.value, axis, start, len)?;
        let full = self.shape().to_vec();
        Ok(self.tape.push(v, &[self], move |g| {
            Ok(vec![Some(shape::slice_backward(g, &full, axis, start))])
        }))
    }

    pub fn unfold1d(&self, g: usize) -> Result<Self> {
        let v = shape::unfold1d(&self.value, g)?;
        let l = self.shape()[2];
        Ok(self
            .tape
            .push(v, &[self], move |dy| Ok(vec![Some(shape::unfold1d_backward(dy, g, l))])))
    }

    pub fn channel_shuffle(&self, g: usize) -> Result<Self> {
        let v = shape::channel_shuffle(&self.value, g)?;
        Ok(self
            .tape
            .push(v, &[self], move |dy| Ok(vec![Some(shape::channel_unshuffle(dy, g)?)])))
    }

    pub fn gelu(&self) -> Self {
        let v = self.value.map(pointwise::gelu);
        let x = self.shared();
        self.tape.push(v, &[self], move |g| {
            Ok(vec![Some(g.zip_map(&x, |g, x| g * pointwise::gelu_grad(x))?)])
        })
    }

    pub fn sigmoid(&self) -> Self {
        let v = self.value.map(pointwise::sigmoid);
        let y = Arc::new(v.clone());
        self.tape.push(v, &[self], move |g| {
            Ok(vec![Some(g.zip_map(&y, |g, y| g * y * (S::one() - y))?)])
        })
    }

    /// PReLU with one learnable slope shared by all entries.
    pub fn prelu(&self, slope: &Self) -> Result<Self> {
        if slope.value.len() != 1 {
            return shape_err("prelu", "slope must be a single value");
        }
        let a = slope.value.item();
        let v = self.value.map(|x| pointwise::prelu(x, a));
        let x = self.shared();
        Ok(self.tape.push(v, &[self, slope], move |g| {
            let dx = g.zip_map(&x, |g, x| if x > S::zero() { g } else { g * a })?;
            let da: S = g
                .data()
                .iter()
                .zip(x.data())
                .filter(|(_, &x)| x <= S::zero())
                .map(|(&g, &x)| g * x)
                .sum();
            Ok(vec![Some(dx), Some(Tensor::scalar(da))])
        }))
    }

    pub fn glu(&self, axis: usize) -> Result<Self> {
        let v = pointwise::glu(&self.value, axis)?;
        let x = self.shared();
        Ok(self
            .tape
            .push(v, &[self], move |g| Ok(vec![Some(pointwise::glu_backward(&x, g, axis))])))
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let v = pointwise::softmax(&self.value, axis)?;
        let y = Arc::new(v.clone());
        Ok(self.tape.push(v, &[self], move |g| {
            Ok(vec![Some(pointwise::softmax_backward(&y, g, axis))])
        }))
    }

    pub fn layer_norm(&self, axis: usize, gamma: &Self, beta: &Self) -> Result<Self> {
        self.layer_norm_span(axis, 1, gamma, beta)
    }

    /// Statistics over `span` axes from `axis`, affine over `axis`.
    pub fn layer_norm_span(&self, axis: usize, span: usize, gamma: &Self, beta: &Self) -> Result<Self> {
        let (v, cache) = pointwise::layer_norm_span(&self.value, axis, span, &gamma.value, &beta.value)?;
        let gm = gamma.shared();
        Ok(self.tape.push(v, &[self, gamma, beta], move |g| {
            let (dx, dg, db) = pointwise::layer_norm_backward(&cache, &gm, g, axis);
            Ok(vec![Some(dx), Some(dg), Some(db)])
        }))
    }

    pub fn bmm(&self, other: &Self) -> Result<Self> {
        let v = pointwise::bmm(&self.value, &other.value)?;
        let (a, b) = (self.shared(), other.shared());
        Ok(self.tape.push(v, &[self, other], move |g| {
            let da = pointwise::bmm(g, &pointwise::transpose12(&b)?)?;
            let db = pointwise::bmm(&pointwise::transpose12(&a)?, g)?;
            Ok(vec![Some(da), Some(db)])
        }))
    }

    /// Inverted dropout; identity unless the tape has dropout enabled.
    pub fn dropout(&self, rate: f64) -> Result<Self> {
        let Some(rng) = &self.tape.dropout_rng else {
            return Ok(self.clone());
        };
        if rate <= 0.0 {
            return Ok(self.clone());
        }
        if rate >= 1.0 {
            return Err(Error::InvalidArgument(format!("dropout rate {rate} must be < 1")));
        }
        let keep = S::of(1.0 / (1.0 - rate));
        let mask = {
            let mut rng = rng.borrow_mut();
            Tensor::from_fn(self.shape(), |_| if rng.gen::<f64>() < rate { S::zero() } else { keep })
        };
        let v = self.value.zip_map(&mask, |x, m| x * m)?;
        Ok(self
            .tape
            .push(v, &[self], move |g| Ok(vec![Some(g.zip_map(&mask, |g, m| g * m)?)])))
    }

    fn opt_bias(bias: Option<&Self>) -> Option<&Tensor<S>> {
        bias.map(|b| b.value.as_ref())
    }

    fn inputs<'a>(&'a self, w: &'a Self, bias: Option<&'a Self>) -> Vec<&'a Self> {
        let mut v = vec![self, w];
        v.extend(bias);
        v
    }

    pub fn conv1d(&self, w: &Self, bias: Option<&Self>, spec: Conv1dSpec) -> Result<Self> {
        let v = conv::conv1d(&self.value, &w.value, Self::opt_bias(bias), spec)?;
        let (x, wt, has_b) = (self.shared(), w.shared(), bias.is_some());
        Ok(self.tape.push(v, &self.inputs(w, bias), move |g| {
            let (dx, dw, db) = conv::conv1d_backward(&x, &wt, g, spec, has_b)?;
            Ok(vec![Some(dx), Some(dw), db])
        }))
    }

    pub fn conv2d(&self, w: &Self, bias: Option<&Self>, padding: usize, groups: usize) -> Result<Self> {
        let v = conv::conv2d(&self.value, &w.value, Self::opt_bias(bias), padding, groups)?;
        let (x, wt, has_b) = (self.shared(), w.shared(), bias.is_some());
        Ok(self.tape.push(v, &self.inputs(w, bias), move |g| {
            let (dx, dw, db) = conv::conv2d_backward(&x, &wt, g, padding, groups, has_b)?;
            Ok(vec![Some(dx), Some(dw), db])
        }))
    }

    pub fn transposed_conv1d(&self, w: &Self, bias: Option<&Self>, padding: usize) -> Result<Self> {
        let v = conv::transposed_conv1d(&self.value, &w.value, Self::opt_bias(bias), padding)?;
        let (x, wt, has_b) = (self.shared(), w.shared(), bias.is_some());
        Ok(self.tape.push(v, &self.inputs(w, bias), move |g| {
            let (dx, dw, db) = conv::transposed_conv1d_backward(&x, &wt, g, padding, has_b)?;
            Ok(vec![Some(dx), Some(dw), db])
        }))
    }

    pub fn transposed_conv2d(&self, w: &Self, bias: Option<&Self>, padding: usize) -> Result<Self> {
        let v = conv::transposed_conv2d(&self.value, &w.value, Self::opt_bias(bias), padding)?;
        let (x, wt, has_b) = (self.shared(), w.shared(), bias.is_some());
        Ok(self.tape.push(v, &self.inputs(w, bias), move |g| {
            let (dx, dw, db) = conv::transposed_conv2d_backward(&x, &wt, g, padding, has_b)?;
            Ok(vec![Some(dx), Some(dw), db])
        }))
    }
}

/// Concatenates along `axis`.
pub fn concat<'t, S: Scalar>(xs: &[&Var<'t, S>], axis: usize) -> Result<Var<'t, S>> {
    let Some(first) = xs.first() else {
        return shape_err("concat", "no inputs");
    };
    let values: Vec<&Tensor<S>> = xs.iter().map(|v| v.value.as_ref()).collect();
    let v = kernels::concat(&values, axis)?;
    let lens: Vec<usize> = xs.iter().map(|x| x.shape()[axis]).collect();
    Ok(first.tape.push(v, xs, move |g| {
        let mut start = 0;
        let mut parts = Vec::with_capacity(lens.len());
        for &len in &lens {
            parts.push(Some(shape::slice(g, axis, start, len)?));
            start += len;
        }
        Ok(parts)
    }))
}

trait SignumZ {
    fn signum_z(self) -> Self;
}

impl<S: Scalar> SignumZ for S {
    fn signum_z(self) -> Self {
        if self > S::zero() {
            S::one()
        } else if self < S::zero() {
            -S::one()
        } else {
            S::zero()
        }
    }
}
