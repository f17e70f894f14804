//! Parameterized building blocks over [`Bound`] parameters.

use crate::autodiff::Var;
use crate::error::Result;
use crate::kernels::Conv1dSpec;
use crate::params::{Bound, LayerMeta, LayerWeights, ParamBuilder, ParamId};
use crate::tensor::Scalar;

/// 1D convolution over `[B, C, L]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weights: LayerWeights,
    spec: Conv1dSpec,
}

impl Conv1d {
    /// Same-padded convolution with odd kernel `k`.
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        dilation: usize,
        bias: bool,
    ) -> Self {
        Self::grouped(b, name, cin, cout, k, dilation, 1, bias)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn grouped(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        dilation: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        let meta = LayerMeta::conv(cin, cout, &[k]).dilation(dilation).groups(groups);
        Self {
            weights: b.layer(name, meta, bias),
            spec: Conv1dSpec::same(k, dilation).with_groups(groups),
        }
    }

    /// Kernel-1 projection, always with bias.
    pub fn pointwise(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(b, name, cin, cout, 1, 1, true)
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let bias = self.weights.bias.map(|id| &p[id]);
        x.conv1d(&p[self.weights.kernel], bias, self.spec)
    }
}

/// Same-padded 2D convolution over `[C, T, F]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weights: LayerWeights,
    padding: usize,
}

impl Conv2d {
    pub fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Self {
        Self::grouped(b, name, cin, cout, k, 1, bias)
    }

    pub fn grouped(
        b: &mut ParamBuilder,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        groups: usize,
        bias: bool,
    ) -> Self {
        Self {
            weights: b.layer(name, LayerMeta::conv(cin, cout, &[k, k]).groups(groups), bias),
            padding: k / 2,
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let bias = self.weights.bias.map(|id| &p[id]);
        x.conv2d(&p[self.weights.kernel], bias, self.padding, self.weights.meta.groups)
    }
}

/// Stride-1 transposed 1D convolution with no padding: lengthens by `k - 1`.
#[derive(Debug, Clone)]
pub struct TransposedConv1d {
    pub weights: LayerWeights,
}

impl TransposedConv1d {
    pub fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            weights: b.layer(name, LayerMeta::conv(cin, cout, &[k]).transposed(), true),
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let bias = self.weights.bias.map(|id| &p[id]);
        x.transposed_conv1d(&p[self.weights.kernel], bias, 0)
    }
}

/// Size-preserving stride-1 transposed 2D convolution.
#[derive(Debug, Clone)]
pub struct TransposedConv2d {
    pub weights: LayerWeights,
    padding: usize,
}

impl TransposedConv2d {
    pub fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            weights: b.layer(name, LayerMeta::conv(cin, cout, &[k, k]).transposed(), true),
            padding: k / 2,
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let bias = self.weights.bias.map(|id| &p[id]);
        x.transposed_conv2d(&p[self.weights.kernel], bias, self.padding)
    }
}

/// Global layer norm: statistics over the channel axis and every axis after
/// it (the whole feature map of one sequence), per-channel affine.
#[derive(Debug, Clone, Copy)]
pub struct ChannelNorm {
    gamma: ParamId,
    beta: ParamId,
    axis: usize,
}

impl ChannelNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize, axis: usize) -> Self {
        let (gamma, beta) = b.norm(name, channels);
        Self { gamma, beta, axis }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let span = x.shape().len() - self.axis;
        x.layer_norm_span(self.axis, span, &p[self.gamma], &p[self.beta])
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PRelu {
    slope: ParamId,
}

impl PRelu {
    pub fn new(b: &mut ParamBuilder, name: &str) -> Self {
        Self { slope: b.slope(name) }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        x.prelu(&p[self.slope])
    }
}

/// Convolution (1D or 2D) followed by channel LN and PReLU.
#[derive(Debug, Clone)]
pub enum AnyConv {
    D1(Conv1d),
    D2(Conv2d),
}

impl AnyConv {
    pub fn weights(&self) -> &LayerWeights {
        match self {
            AnyConv::D1(c) => &c.weights,
            AnyConv::D2(c) => &c.weights,
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        match self {
            AnyConv::D1(c) => c.forward(p, x),
            AnyConv::D2(c) => c.forward(p, x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    /// `[B, C, L]` sequences.
    One,
    /// `[C, T, F]` planes.
    Two,
}

impl Dims {
    pub fn channel_axis(self) -> usize {
        match self {
            Dims::One => 1,
            Dims::Two => 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvNormAct {
    pub conv: AnyConv,
    tail: Option<(ChannelNorm, PRelu)>,
}

impl ConvNormAct {
    /// Bias-free same-padded conv; with `activate = false` the LN and PReLU
    /// are omitted and the conv gets a bias instead.
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        dims: Dims,
        cin: usize,
        cout: usize,
        k: usize,
        activate: bool,
    ) -> Self {
        Self::grouped(b, name, dims, cin, cout, k, 1, activate)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn grouped(
        b: &mut ParamBuilder,
        name: &str,
        dims: Dims,
        cin: usize,
        cout: usize,
        k: usize,
        groups: usize,
        activate: bool,
    ) -> Self {
        b.scoped(name, |b| {
            let conv = match dims {
                Dims::One => AnyConv::D1(Conv1d::grouped(b, "conv", cin, cout, k, 1, groups, !activate)),
                Dims::Two => AnyConv::D2(Conv2d::grouped(b, "conv", cin, cout, k, groups, !activate)),
            };
            let tail = activate.then(|| {
                (
                    ChannelNorm::new(b, "norm", cout, dims.channel_axis()),
                    PRelu::new(b, "act"),
                )
            });
            Self { conv, tail }
        })
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let y = self.conv.forward(p, x)?;
        match &self.tail {
            Some((norm, act)) => act.forward(p, &norm.forward(p, &y)?),
            None => Ok(y),
        }
    }
}
