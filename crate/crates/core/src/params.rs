//! Named parameter storage, seeded initialization and tape binding.
//!
//! Layers never own tensors. They hold [`ParamId`]s into a [`ParamStore`],
//! and a forward pass reads parameters through a [`Bound`] set of tape
//! variables. Binding the same store to a recording tape gives gradients,
//! binding it to an inference tape gives a plain forward.

use std::ops::Index;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Kernel,
    Bias,
    NormScale,
    NormShift,
    Slope,
}

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub role: ParamRole,
    pub value: Arc<Tensor<S>>,
}

/// Geometry of a convolution-like layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMeta {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: Vec<usize>,
    pub dilation: usize,
    pub stride: usize,
    pub groups: usize,
    pub transposed: bool,
}

impl LayerMeta {
    pub fn conv(in_channels: usize, out_channels: usize, kernel_size: &[usize]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_size: kernel_size.to_vec(),
            dilation: 1,
            stride: 1,
            groups: 1,
            transposed: false,
        }
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }

    pub fn taps(&self) -> usize {
        self.kernel_size.iter().product()
    }

    /// Kernel tensor shape: `[C_out, C_in/g, k..]`, or `[C_in, C_out, k..]`
    /// when transposed.
    pub fn kernel_shape(&self) -> Vec<usize> {
        let mut s = if self.transposed {
            vec![self.in_channels, self.out_channels]
        } else {
            vec![self.out_channels, self.in_channels / self.groups]
        };
        s.extend(&self.kernel_size);
        s
    }

    fn fan_in(&self) -> usize {
        let per = if self.transposed {
            self.out_channels
        } else {
            self.in_channels / self.groups
        };
        per * self.taps()
    }
}

/// A convolution kernel with optional bias.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub name: String,
    pub kernel: ParamId,
    pub bias: Option<ParamId>,
    pub meta: LayerMeta,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S = f32> {
    params: Vec<Param<S>>,
    layers: Vec<LayerWeights>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Replaces one tensor; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_param",
                detail: format!("{}: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            });
        }
        p.value = Arc::new(value);
        Ok(())
    }

    /// Zeroes every parameter under `prefix`; returns how many tensors.
    pub fn zero_under(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| crate::mac::is_under(&p.name, prefix)) {
            p.value = Arc::new(Tensor::zeros(p.value.shape()));
            n += 1;
        }
        n
    }

    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn count_role(&self, role: ParamRole) -> usize {
        self.params
            .iter()
            .filter(|p| p.role == role)
            .map(|p| p.value.len())
            .sum()
    }

    /// Elements of parameters whose name starts with `prefix`.
    pub fn count_under(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| crate::mac::is_under(&p.name, prefix))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    role: p.role,
                    value: Arc::new(p.value.cast()),
                })
                .collect(),
            layers: self.layers.clone(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf(p.value.clone())).collect(),
        }
    }

    /// One plain gradient-descent step. Parameters without a gradient are
    /// left untouched.
    pub fn descend(&mut self, bound: &Bound<'_, S>, grads: &Gradients<S>, lr: f64) -> Result<()> {
        let lr = S::of(lr);
        for (p, v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.get(v) {
                p.value = Arc::new(p.value.zip_map(g, |w, g| w - lr * g)?);
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<Tensor<S>> {
        self.params.iter().map(|p| (*p.value).clone()).collect()
    }
}

/// Parameters of one store bound to a tape, indexed by [`ParamId`].
pub struct Bound<'t, S: Scalar> {
    vars: Vec<Var<'t, S>>,
}

impl<'t, S: Scalar> Bound<'t, S> {
    /// Wraps tape variables that mirror a store's parameter order.
    pub fn from_vars(vars: Vec<Var<'t, S>>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var<'t, S>] {
        &self.vars
    }
}

impl<'t, S: Scalar> Index<ParamId> for Bound<'t, S> {
    type Output = Var<'t, S>;

    fn index(&self, id: ParamId) -> &Var<'t, S> {
        &self.vars[id.0]
    }
}

/// Seeded builder that assigns scoped names and draws initial values.
///
/// Kernels and biases are uniform in `±1/sqrt(fan_in)`, norm scales start at
/// one, shifts at zero and PReLU slopes at 0.25. Values are drawn in `f64`
/// and cast on [`ParamStore::cast`], so every precision sees the same model.
pub struct ParamBuilder {
    store: ParamStore<f64>,
    rng: ChaCha8Rng,
    scope: Vec<String>,
}

pub const PRELU_INIT: f64 = 0.25;

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            scope: Vec::new(),
        }
    }

    /// Runs `f` with `name` appended to the naming scope.
    pub fn scoped<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.scope.push(name.into());
        let r = f(self);
        self.scope.pop();
        r
    }

    pub fn path(&self, leaf: &str) -> String {
        let mut parts: Vec<&str> = self.scope.iter().map(String::as_str).collect();
        parts.push(leaf);
        parts.join(".")
    }

    fn push(&mut self, leaf: &str, role: ParamRole, value: Tensor<f64>) -> ParamId {
        let name = self.path(leaf);
        self.store.params.push(Param {
            name,
            role,
            value: Arc::new(value),
        });
        ParamId(self.store.params.len() - 1)
    }

    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<f64> {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
    }

    /// Registers a convolution kernel (and bias) under `name`.
    pub fn layer(&mut self, name: &str, meta: LayerMeta, bias: bool) -> LayerWeights {
        let bound = 1.0 / (meta.fan_in() as f64).sqrt();
        let w = self.uniform(&meta.kernel_shape(), bound);
        let layer_name = self.path(name);
        let kernel = self.push(&format!("{name}.weight"), ParamRole::Kernel, w);
        let bias = bias.then(|| {
            let b = self.uniform(&[meta.out_channels], bound);
            self.push(&format!("{name}.bias"), ParamRole::Bias, b)
        });
        let lw = LayerWeights {
            name: layer_name,
            kernel,
            bias,
            meta,
        };
        self.store.layers.push(lw.clone());
        lw
    }

    pub fn norm(&mut self, name: &str, channels: usize) -> (ParamId, ParamId) {
        let g = self.push(&format!("{name}.gamma"), ParamRole::NormScale, Tensor::full(&[channels], 1.0));
        let b = self.push(&format!("{name}.beta"), ParamRole::NormShift, Tensor::zeros(&[channels]));
        (g, b)
    }

    pub fn slope(&mut self, name: &str) -> ParamId {
        self.push(&format!("{name}.slope"), ParamRole::Slope, Tensor::scalar(PRELU_INIT))
    }

    pub fn finish(self) -> ParamStore<f64> {
        self.store
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_names_and_counts() {
        let mut b = ParamBuilder::new(3);
        let lw = b.scoped("enc", |b| b.layer("conv", LayerMeta::conv(4, 8, &[3, 3]), true));
        b.norm("ln", 8);
        let store = b.finish();
        assert_eq!(store.params()[0].name, "enc.conv.weight");
        assert_eq!(lw.name, "enc.conv");
        assert_eq!(store.get(lw.kernel).shape(), &[8, 4, 3, 3]);
        assert_eq!(store.count_role(ParamRole::Kernel), 288);
        assert_eq!(store.count(), 288 + 8 + 16);
        assert_eq!(store.count_under("enc"), 296);
        let bound = 1.0 / 36f64.sqrt();
        assert!(store.get(lw.kernel).data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let make = |seed| {
            let mut b = ParamBuilder::new(seed);
            b.layer("w", LayerMeta::conv(3, 3, &[1]), false);
            b.finish().tensors()
        };
        assert_eq!(make(7), make(7));
        assert_ne!(make(7), make(8));
    }

    #[test]
    fn descend_moves_against_gradient() {
        let mut b = ParamBuilder::new(0);
        let lw = b.layer("w", LayerMeta::conv(1, 1, &[1]), false);
        let mut store = b.finish();
        let before = store.get(lw.kernel).item();
        let tape = Tape::new();
        let bound = store.bind(&tape);
        let loss = bound[lw.kernel].scale(3.0).sum();
        let grads = tape.backward(&loss).unwrap();
        store.descend(&bound, &grads, 0.1).unwrap();
        assert!((store.get(lw.kernel).item() - (before - 0.3)).abs() < 1e-12);
    }
}
