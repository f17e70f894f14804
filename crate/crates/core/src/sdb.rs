//! Split dense blocks and the dense / grouped-dense baselines.
//!
//! A split dense block cuts its `C = G·D` input channels into `G`
//! subgroups. The first subgroup goes through a `D → D` conv; every later
//! layer convolves the running output concatenated with the next subgroup,
//! `2D → D`. Each conv is followed by channel LN and PReLU.

use crate::autodiff::{concat, Var};
use crate::error::{Error, Result};
use crate::layers::{ConvNormAct, Dims};
use crate::mac;
use crate::params::{Bound, ParamBuilder};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SdbConfig {
    pub groups: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dims: Dims,
}

impl SdbConfig {
    pub fn new(groups: usize, channels: usize, kernel: usize, dims: Dims) -> Self {
        Self {
            groups,
            channels,
            kernel,
            dims,
        }
    }

    pub fn sub_channels(&self) -> usize {
        self.channels / self.groups
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || !self.channels.is_multiple_of(self.groups) {
            return Err(Error::Config(format!(
                "{} channels not divisible into {} groups",
                self.channels, self.groups
            )));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {} must be odd", self.kernel)));
        }
        Ok(())
    }
}

/// Split dense block body: `C` channels in, `C / G` out.
#[derive(Debug, Clone)]
pub struct Sdb {
    cfg: SdbConfig,
    layers: Vec<ConvNormAct>,
}

impl Sdb {
    /// With `linear_tail`, the last conv has a bias and no LN/PReLU.
    pub fn new(b: &mut ParamBuilder, name: &str, cfg: SdbConfig, linear_tail: bool) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.sub_channels();
        let layers = b.scoped(name, |b| {
            (0..cfg.groups)
                .map(|g| {
                    let cin = if g == 0 { d } else { 2 * d };
                    let activate = !(linear_tail && g + 1 == cfg.groups);
                    ConvNormAct::new(b, &format!("layer{g}"), cfg.dims, cin, d, cfg.kernel, activate)
                })
                .collect()
        });
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> &SdbConfig {
        &self.cfg
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let axis = self.cfg.dims.channel_axis();
        let d = self.cfg.sub_channels();
        if x.shape().get(axis) != Some(&self.cfg.channels) {
            return Err(Error::Shape {
                op: "sdb",
                detail: format!("expected {} channels, got {:?}", self.cfg.channels, x.shape()),
            });
        }
        let mut out = self.layers[0].forward(p, &x.slice(axis, 0, d)?)?;
        for (g, layer) in self.layers.iter().enumerate().skip(1) {
            let next = x.slice(axis, g * d, d)?;
            out = layer.forward(p, &concat(&[&out, &next], axis)?)?;
        }
        Ok(out)
    }
}

/// Sequence-axis split dense block: unfold by `G`, shuffle the shift copies
/// into contiguous subgroups, then run the split dense body with 1D convs.
/// `[B, D, L] -> [B, D, L - G + 1]`.
#[derive(Debug, Clone)]
pub struct Sdb1d {
    body: Sdb,
}

impl Sdb1d {
    pub fn new(b: &mut ParamBuilder, name: &str, groups: usize, sub_channels: usize, kernel: usize) -> Result<Self> {
        let cfg = SdbConfig::new(groups, groups * sub_channels, kernel, Dims::One);
        Ok(Self {
            body: Sdb::new(b, name, cfg, false)?,
        })
    }

    pub fn groups(&self) -> usize {
        self.body.cfg.groups
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let g = self.groups();
        let unfolded = x.unfold1d(g)?.channel_shuffle(g)?;
        self.body.forward(p, &unfolded)
    }
}

/// Dense (`grouped = false`) or grouped dense block: layer `g` maps
/// `g·C → C` over the concatenation of the input and all earlier outputs.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    layers: Vec<ConvNormAct>,
    dims: Dims,
}

impl DenseBlock {
    pub fn new(
        b: &mut ParamBuilder,
        name: &str,
        cfg: SdbConfig,
        grouped: bool,
        linear_tail: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let conv_groups = if grouped { cfg.groups } else { 1 };
        let layers = b.scoped(name, |b| {
            (1..=cfg.groups)
                .map(|g| {
                    let activate = !(linear_tail && g == cfg.groups);
                    ConvNormAct::grouped(b, &format!("layer{}", g - 1), cfg.dims, g * c, c, cfg.kernel, conv_groups, activate)
                })
                .collect()
        });
        Ok(Self { layers, dims: cfg.dims })
    }

    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let axis = self.dims.channel_axis();
        let mut feats = vec![x.clone()];
        for layer in &self.layers {
            let refs: Vec<&Var<'t, S>> = feats.iter().collect();
            let y = layer.forward(p, &concat(&refs, axis)?)?;
            feats.push(y);
        }
        Ok(feats.pop().expect("at least one layer"))
    }
}

/// Any of the three block kinds, for variant selection.
#[derive(Debug, Clone)]
pub enum FeatureBlock {
    Split(Sdb),
    Split1d(Sdb1d),
    Dense(DenseBlock),
}

impl FeatureBlock {
    pub fn forward<'t, S: Scalar>(&self, p: &Bound<'t, S>, x: &Var<'t, S>) -> Result<Var<'t, S>> {
        let _s = mac::scope("sdb");
        match self {
            FeatureBlock::Split(b) => b.forward(p, x),
            FeatureBlock::Split1d(b) => b.forward(p, x),
            FeatureBlock::Dense(b) => b.forward(p, x),
        }
    }
}
