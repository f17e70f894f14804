//! F- and T-transformer sub-blocks: attention variants, feedforward
//! variants and the unfold/restore wrapper around them.
//!
//! Everything inside a transformer sees folded sequences `[B, D, L]`.
//! Heads are full width: each of the `h` heads projects `D → D`, so the
//! query/key/value projections are `D → h·D` and the output projection is
//! `h·D → D`.

use std::str::FromStr;

use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};
use crate::layers::{ChannelNorm, Conv1d, PRelu, TransposedConv1d};
use crate::mac;
use crate::params::{Bound, ParamBuilder};
use crate::sdb::{DenseBlock, FeatureBlock, Sdb1d, SdbConfig};
use crate::layers::Dims;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Vanilla,
    Efficient,
    ConvEfficient,
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Self::Vanilla),
            "ea" => Ok(Self::Efficient),
            "cea" => Ok(Self::ConvEfficient),
            _ => Err(Error::Config(format!("unknown attention kind {s:?} (vanilla|ea|cea)"))),
        }
    }
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Efficient => "ea",
            Self::ConvEfficient => "cea",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfwKind {
    Vanilla,
    DepthwiseConv,
    DualPath,
    Conv,
}

impl FromStr for FfwKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ffw" => Ok(Self::Vanilla),
            "dcfn" => Ok(Self::DepthwiseConv),
            "dpfn" => Ok(Self::DualPath),
            "cfn" => Ok(Self::Conv),
            _ => Err(Error::Config(format!("unknown ffw kind {s:?} (ffw|dcfn|dpfn|cfn)"))),
        }
    }
}

impl FfwKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vanilla => "ffw",
            Self::DepthwiseConv => "dcfn",
            Self::DualPath => "dpfn",
            Self::Conv => "cfn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttnConfig {
    pub channels: usize,
    pub heads: usize,
    pub kernel: usize,
    pub kind: AttentionKind,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FfwConfig {
    pub channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub kind: FfwKind,
    pub dropout: f64,
}

/// `[B, h·D, L] -> [B·h, D, L]`
fn split_heads<'t, S: Scalar>(x: &Var<'t, S>, heads: usize) -> Result<Var<'t, S>> {
    let [b, hd, l] = *x.shape() else { unreachable!("projection output is rank 3") };
    x.reshape(&[b * heads, hd / heads, l])
}

fn merge_heads<'t, S: Scalar>(x: &Var<'t, S>, heads: usize) -> Result<Var<'t, S>> {
    let [bh, d, l] = *x.shape() else { unreachable!("attention output is rank 3") };
    x.reshape(&[bh / heads, heads * d, l])
}

#[derive(Debug, Clone)]
pub struct Attention {
    cfg: AttnConfig,
    conv: Option<Conv1d>,
    q: Conv1d,
    k: Conv1d,
    v: Conv1d,
    out: Conv1d,
}

impl Attention {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: AttnConfig) -> Result<Self> {
        if cfg.heads == 0 {
            return Err(Error::Config("attention needs at least one head".into()));
        }
        let (d, hd) = (cfg.channels, cfg.channels * cfg.heads);
        Ok(b.scoped(name, |b| {
            let conv = (cfg.kind == AttentionKind::ConvEfficient)
                .then(|| Conv1d::new(b, "conv", d, 2 * d, cfg.kernel, 1, true));
            Self {
                cfg,
                conv,
                q: Conv1d::pointwise(b, "q", d, hd),
                k: Conv1d::pointwise(b, "k", d, hd),
                v: Conv1d::pointwise(b, "v", d, hd),
                out: Conv1d::pointwise(b, "out", hd, d),
            }
        }))
    }

    pub fn config(&self) -> &AttnConfig {
        &self.cfg
    }

    pub fn output_projection(&self) -> &Conv1d {
        &self.out
    }

    pub fn gate_conv(&self) -> Option<&Conv1d> {
        self.conv.as_ref()
    }

    fn scale(&self) -> f64 {
        1.0 / (self.cfg.channels as f64).sqrt()
    }

    /// Per-head queries, keys and values, each `[B·h, D, L]`.
    fn qkv<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<[Var<'t, S>; 3]> {
        let qk_in = match &self.conv {
            Some(conv) => conv.forward(p, x)?.glu(1)?,
            None => x.clone(),
        };
        let h = self.cfg.heads;
        Ok([
            split_heads(&self.q.forward(p, &qk_in)?, h)?,
            split_heads(&self.k.forward(p, &qk_in)?, h)?,
            split_heads(&self.v.forward(p, x)?, h)?,
        ])
    }

    /// Key-value map `softmax_L(K)·Vᵀ / sqrt(D)` per head, `[B·h, D, D]`.
    fn context_map<'t, S: Scalar>(&self, k: &Var<'t, S>, v: &Var<'t, S>) -> Result<Var<'t, S>> {
        Ok(k.softmax(2)?.bmm(&v.transpose12()?)?.scale(self.scale()))
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let _s = mac::scope("attn");
        let [q, k, v] = self.qkv(p, x)?;
        let heads = match self.cfg.kind {
            AttentionKind::Vanilla => {
                let scores = q.transpose12()?.bmm(&k)?.scale(self.scale()).softmax(2)?;
                let scores = scores.dropout(self.cfg.dropout)?;
                v.bmm(&scores.transpose12()?)?
            }
            _ => {
                let map = self.context_map(&k, &v)?.dropout(self.cfg.dropout)?;
                map.transpose12()?.bmm(&q.softmax(1)?)?
            }
        };
        let merged = merge_heads(&heads, self.cfg.heads)?;
        let y = {
            let _o = mac::scope("out");
            self.out.forward(p, &merged)?
        };
        y.dropout(self.cfg.dropout)?.add(x)
    }

    /// Key-value maps for every folded sequence and head, `[B·h, D, D]`.
    /// Entry `b·h + head` belongs to sequence `b`. Only the efficient
    /// variants have such a map.
    pub fn maps<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Tensor<S>> {
        if self.cfg.kind == AttentionKind::Vanilla {
            return Err(Error::InvalidArgument("vanilla attention has no key-value map".into()));
        }
        let [_, k, v] = self.qkv(p, x)?;
        Ok(self.context_map(&k, &v)?.value().clone())
    }
}

#[derive(Debug, Clone)]
enum FfwBody {
    Expand {
        inner: Conv1d,
        mid: Option<Conv1d>,
    },
    DualPath {
        plain: Conv1d,
        gated: Conv1d,
        dilated: Conv1d,
        norm: ChannelNorm,
        act: PRelu,
    },
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    cfg: FfwConfig,
    body: FfwBody,
    out: Conv1d,
}

impl FeedForward {
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: FfwConfig) -> Result<Self> {
        if cfg.kernel.is_multiple_of(2) || cfg.dilation == 0 {
            return Err(Error::Config(format!(
                "ffw kernel {} must be odd and dilation {} positive",
                cfg.kernel, cfg.dilation
            )));
        }
        let (d, l, dil) = (cfg.channels, cfg.kernel, cfg.dilation);
        Ok(b.scoped(name, |b| {
            let body = match cfg.kind {
                FfwKind::DualPath => FfwBody::DualPath {
                    plain: Conv1d::pointwise(b, "w1", d, 2 * d),
                    gated: Conv1d::pointwise(b, "w2", d, 2 * d),
                    dilated: Conv1d::new(b, "wd", 2 * d, 2 * d, l, dil, false),
                    norm: ChannelNorm::new(b, "norm", 2 * d, 1),
                    act: PRelu::new(b, "act"),
                },
                kind => {
                    let inner = Conv1d::pointwise(b, "wi", d, 4 * d);
                    let mid = match kind {
                        FfwKind::DepthwiseConv => Some(Conv1d::grouped(b, "dw", 4 * d, 4 * d, l, dil, 4 * d, true)),
                        FfwKind::Conv => Some(Conv1d::new(b, "conv", 4 * d, 4 * d, l, dil, true)),
                        _ => None,
                    };
                    FfwBody::Expand { inner, mid }
                }
            };
            Self {
                cfg,
                body,
                out: Conv1d::pointwise(b, "wo", 4 * d, d),
            }
        }))
    }

    pub fn config(&self) -> &FfwConfig {
        &self.cfg
    }

    pub fn output_projection(&self) -> &Conv1d {
        &self.out
    }

    /// Input to the output projection of the dual-path variant's dilated
    /// branch, for impulse-response inspection.
    pub fn dilated_branch<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Option<Var<'t, S>>> {
        match &self.body {
            FfwBody::DualPath { dilated, .. } => Ok(Some(dilated.forward(p, x)?)),
            FfwBody::Expand { .. } => Ok(None),
        }
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let _s = mac::scope("ffw");
        let rate = self.cfg.dropout;
        let hidden = match &self.body {
            FfwBody::DualPath {
                plain,
                gated,
                dilated,
                norm,
                act,
            } => {
                let x1 = plain.forward(p, x)?.gelu().dropout(rate)?;
                let x2 = gated.forward(p, x)?.gelu().dropout(rate)?;
                let x2 = act.forward(p, &norm.forward(p, &dilated.forward(p, &x2)?)?)?;
                concat(&[&x1, &x2], 1)?
            }
            FfwBody::Expand { inner, mid } => {
                let h = inner.forward(p, x)?.gelu();
                match mid {
                    Some(conv) => conv.forward(p, &h)?.gelu(),
                    None => h,
                }
            }
        };
        self.out.forward(p, &hidden)?.dropout(rate)?.add(x)
    }
}

/// Which axis of a `[D, T, F]` feature map is the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqAxis {
    Freq,
    Time,
}

impl SeqAxis {
    /// Permutation folding the other axis into the batch.
    pub fn fold_axes(self) -> [usize; 3] {
        match self {
            SeqAxis::Freq => [1, 0, 2],
            SeqAxis::Time => [2, 0, 1],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SeqAxis::Freq => "f",
            SeqAxis::Time => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dense1dKind {
    Split,
    Dense,
    Grouped,
}

impl FromStr for Dense1dKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdb" => Ok(Self::Split),
            "dense" => Ok(Self::Dense),
            "grouped" => Ok(Self::Grouped),
            _ => Err(Error::Config(format!("unknown dense block kind {s:?} (sdb|dense|grouped)"))),
        }
    }
}

impl Dense1dKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Split => "sdb",
            Self::Dense => "dense",
            Self::Grouped => "grouped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub channels: usize,
    pub groups: usize,
    pub unfold: usize,
    pub kernel: usize,
    pub dense: Dense1dKind,
    pub attn: AttnConfig,
    pub ffw: FfwConfig,
}

/// One F- or T-transformer: feature block, attention, feedforward, and a
/// transposed conv restoring the sequence length, all wrapped in a residual
/// from the transformer input.
#[derive(Debug, Clone)]
pub struct Transformer {
    axis: SeqAxis,
    cfg: TransformerConfig,
    features: FeatureBlock,
    pub attention: Attention,
    pub ffw: FeedForward,
    restore: TransposedConv1d,
}

impl Transformer {
    pub fn new(b: &mut ParamBuilder, name: &str, axis: SeqAxis, cfg: TransformerConfig) -> Result<Self> {
        let d = cfg.channels;
        b.scoped(name, |b| {
            let features = match cfg.dense {
                Dense1dKind::Split => {
                    if cfg.unfold != cfg.groups {
                        return Err(Error::Config(format!(
                            "split dense block needs unfold kernel {} == groups {}",
                            cfg.unfold, cfg.groups
                        )));
                    }
                    FeatureBlock::Split1d(Sdb1d::new(b, "sdb", cfg.groups, d, cfg.kernel)?)
                }
                kind => {
                    if cfg.unfold != 1 {
                        return Err(Error::Config(format!(
                            "{} block expects unfold kernel 1, got {}",
                            kind.as_str(),
                            cfg.unfold
                        )));
                    }
                    let sc = SdbConfig::new(cfg.groups, d, cfg.kernel, Dims::One);
                    FeatureBlock::Dense(DenseBlock::new(b, "dense", sc, kind == Dense1dKind::Grouped, false)?)
                }
            };
            Ok(Self {
                axis,
                cfg,
                features,
                attention: Attention::new(b, "attn", cfg.attn)?,
                ffw: FeedForward::new(b, "ffw", cfg.ffw)?,
                restore: TransposedConv1d::new(b, "restore", d, d, cfg.unfold),
            })
        })
    }

    pub fn axis(&self) -> SeqAxis {
        self.axis
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.cfg
    }

    pub fn restore_layer(&self) -> &TransposedConv1d {
        &self.restore
    }

    pub fn fold<'t, S: Scalar>(&self, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        x.permute(&self.axis.fold_axes())
    }

    fn seq_len_check(&self, x: &Var<'_, impl Scalar>) -> Result<()> {
        let l = x.shape()[2];
        if l < self.cfg.unfold {
            return Err(Error::Shape {
                op: "transformer",
                detail: format!("sequence length {l} shorter than unfold kernel {}", self.cfg.unfold),
            });
        }
        Ok(())
    }

    /// Everything between folding and the outer residual, on `[B, D, L]`.
    pub fn forward_folded<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.seq_len_check(x)?;
        let h = self.features.forward(p, x)?;
        let h = self.attention.forward(p, &h)?;
        let h = self.ffw.forward(p, &h)?;
        let _s = mac::scope("restore");
        self.restore.forward(p, &h)?.add(x)
    }

    /// `[D, T, F] -> [D, T, F]`.
    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let _s = mac::scope(self.axis.label());
        let folded = self.fold(x)?;
        let y = self.forward_folded(p, &folded)?;
        y.permute(&crate::kernels::shape::inverse_axes(&self.axis.fold_axes()))
    }

    /// Key-value maps of this transformer's attention for input `[D, T, F]`,
    /// shaped `[B·h, D, D]` with `B` the folded axis.
    pub fn attention_maps<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Tensor<S>> {
        let folded = self.fold(x)?;
        self.seq_len_check(&folded)?;
        let h = self.features.forward(p, &folded)?;
        self.attention.maps(p, &h)
    }
}
