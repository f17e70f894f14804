//! Closed-form cost model and its reconciliation against counted MACs.
//!
//! The published per-block formulas are written for `k×k` (or `l×l`)
//! kernels. Here every formula takes the number of kernel `taps` instead:
//! `k²` for a 2D kernel, `k` for a 1D kernel. Evaluating with `taps = k²`
//! reproduces the printed expressions; evaluating with the taps a block
//! really uses gives its exact MAC count.
//!
//! Two evaluations exist per kind:
//!
//! - [`table_cost`]: the single-head table expression, output projection of
//!   the attention variants excluded.
//! - [`block_cost`]: the implemented block, with `h` full-width heads and the
//!   attention output projection `h·D → D` included.
//!
//! Both agree when `heads = 1` up to the `D²L` of that output projection.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::autodiff::Tape;
use crate::config::{Dense2dKind, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::Dims;
use crate::mac::MacCounter;
use crate::network::Network;
use crate::params::{ParamBuilder, ParamRole};
use crate::sdb::{DenseBlock, FeatureBlock, Sdb, Sdb1d, SdbConfig};
use crate::tensor::{Scalar, Tensor};
use crate::transformer::{Attention, AttentionKind, AttnConfig, Dense1dKind, FeedForward, FfwConfig, FfwKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BlockKind {
    Dense,
    Grouped,
    Sdb2d,
    Sdb1d,
    VanillaAttention,
    EfficientAttention,
    ConvEfficientAttention,
    Ffw,
    Dcfn,
    Dpfn,
    Cfn,
}

impl BlockKind {
    pub const ALL: [BlockKind; 11] = [
        BlockKind::Dense,
        BlockKind::Grouped,
        BlockKind::Sdb2d,
        BlockKind::Sdb1d,
        BlockKind::VanillaAttention,
        BlockKind::EfficientAttention,
        BlockKind::ConvEfficientAttention,
        BlockKind::Ffw,
        BlockKind::Dcfn,
        BlockKind::Dpfn,
        BlockKind::Cfn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Dense => "dense",
            BlockKind::Grouped => "grouped",
            BlockKind::Sdb2d => "sdb2d",
            BlockKind::Sdb1d => "sdb1d",
            BlockKind::VanillaAttention => "vanilla",
            BlockKind::EfficientAttention => "ea",
            BlockKind::ConvEfficientAttention => "cea",
            BlockKind::Ffw => "ffw",
            BlockKind::Dcfn => "dcfn",
            BlockKind::Dpfn => "dpfn",
            BlockKind::Cfn => "cfn",
        }
    }

    pub fn is_attention(self) -> bool {
        matches!(
            self,
            BlockKind::VanillaAttention | BlockKind::EfficientAttention | BlockKind::ConvEfficientAttention
        )
    }

    pub fn from_attention(kind: AttentionKind) -> Self {
        match kind {
            AttentionKind::Vanilla => BlockKind::VanillaAttention,
            AttentionKind::Efficient => BlockKind::EfficientAttention,
            AttentionKind::ConvEfficient => BlockKind::ConvEfficientAttention,
        }
    }

    pub fn from_ffw(kind: FfwKind) -> Self {
        match kind {
            FfwKind::Vanilla => BlockKind::Ffw,
            FfwKind::DepthwiseConv => BlockKind::Dcfn,
            FfwKind::DualPath => BlockKind::Dpfn,
            FfwKind::Conv => BlockKind::Cfn,
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown block kind {s:?}")))
    }
}

/// Dimensions a cost formula is evaluated at.
///
/// `channels` is `C` for the dense-block kinds and `D` for attention and
/// feedforward kinds. `len` is the number of output positions: `T·F` for 2D
/// blocks, the sequence length `L` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDims {
    pub channels: u64,
    pub groups: u64,
    pub taps: u64,
    pub heads: u64,
    pub len: u64,
}

impl BlockDims {
    pub fn new(channels: usize, groups: usize, taps: usize, heads: usize, len: usize) -> Self {
        Self {
            channels: channels as u64,
            groups: groups as u64,
            taps: taps as u64,
            heads: heads as u64,
            len: len as u64,
        }
    }
}

/// MACs plus memory split into weight elements and attention-map elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Cost {
    pub macs: u64,
    pub weights: u64,
    pub map_elems: u64,
}

impl Cost {
    pub fn memory(&self) -> u64 {
        self.weights + self.map_elems
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;

    fn add(self, o: Cost) -> Cost {
        Cost {
            macs: self.macs + o.macs,
            weights: self.weights + o.weights,
            map_elems: self.map_elems + o.map_elems,
        }
    }
}

impl std::ops::Mul<u64> for Cost {
    type Output = Cost;

    fn mul(self, n: u64) -> Cost {
        Cost {
            macs: self.macs * n,
            ..self
        }
    }
}

fn validate(kind: BlockKind, d: &BlockDims) -> Result<()> {
    let needs_groups = matches!(kind, BlockKind::Dense | BlockKind::Grouped | BlockKind::Sdb2d | BlockKind::Sdb1d);
    if d.channels == 0 || d.taps == 0 || d.len == 0 {
        return Err(Error::InvalidArgument(format!("{kind}: zero dimension in {d:?}")));
    }
    if needs_groups && (d.groups == 0 || !d.channels.is_multiple_of(d.groups)) {
        return Err(Error::InvalidArgument(format!(
            "{kind}: {} channels not divisible by {} groups",
            d.channels, d.groups
        )));
    }
    if kind.is_attention() && d.heads == 0 {
        return Err(Error::InvalidArgument(format!("{kind}: zero heads")));
    }
    Ok(())
}

/// Printed single-head expression, evaluated exactly in integers.
pub fn table_cost(kind: BlockKind, d: &BlockDims) -> Result<Cost> {
    validate(kind, d)?;
    let (c, g, t, l) = (d.channels, d.groups, d.taps, d.len);
    let cost = |per_pos: u64, weights: u64, map_elems: u64| Cost {
        macs: per_pos * l,
        weights,
        map_elems,
    };
    Ok(match kind {
        // G(G+1)/2 · C²k²
        BlockKind::Dense => {
            let w = g * (g + 1) / 2 * c * c * t;
            cost(w, w, 0)
        }
        // (G+1)/2 · C²k²  ==  Σ_g g·C·(C/G)·k²
        BlockKind::Grouped => {
            let w = g * (g + 1) / 2 * c * (c / g) * t;
            cost(w, w, 0)
        }
        // (2G−1)/G² · C²k²  ==  (2G−1)·D²k²
        BlockKind::Sdb2d | BlockKind::Sdb1d => {
            let s = c / g;
            let w = (2 * g - 1) * s * s * t;
            cost(w, w, 0)
        }
        // 2DL² + 3D²L ; memory L² + 3D²
        BlockKind::VanillaAttention => Cost {
            macs: 2 * c * l * l + 3 * c * c * l,
            weights: 3 * c * c,
            map_elems: l * l,
        },
        // 5D²L ; 4D²
        BlockKind::EfficientAttention => cost(5 * c * c, 3 * c * c, c * c),
        // (5 + 2k²)D²L ; (4 + 2k²)D²
        BlockKind::ConvEfficientAttention => cost((5 + 2 * t) * c * c, (3 + 2 * t) * c * c, c * c),
        // 8D²L ; 8D²
        BlockKind::Ffw => cost(8 * c * c, 8 * c * c, 0),
        // 8(1 + l²/2D)D²L ; 8(1 + l²/2D²)D²
        BlockKind::Dcfn => cost(8 * c * c + 4 * t * c, 8 * c * c + 4 * t, 0),
        // 8(1 + l²/2)D²L
        BlockKind::Dpfn => cost(8 * c * c + 4 * t * c * c, 8 * c * c + 4 * t * c * c, 0),
        // 8(1 + 2l²)D²L
        BlockKind::Cfn => cost(8 * c * c + 16 * t * c * c, 8 * c * c + 16 * t * c * c, 0),
    })
}

/// Exact cost of the implemented block (kernel weights only, no biases).
pub fn block_cost(kind: BlockKind, d: &BlockDims) -> Result<Cost> {
    validate(kind, d)?;
    let (c, h, t, l) = (d.channels, d.heads, d.taps, d.len);
    let out_proj = h * c * c;
    Ok(match kind {
        BlockKind::VanillaAttention => Cost {
            macs: h * (2 * c * l * l + 3 * c * c * l) + out_proj * l,
            weights: 3 * h * c * c + out_proj,
            map_elems: h * l * l,
        },
        BlockKind::EfficientAttention => Cost {
            macs: 5 * h * c * c * l + out_proj * l,
            weights: 3 * h * c * c + out_proj,
            map_elems: h * c * c,
        },
        BlockKind::ConvEfficientAttention => Cost {
            macs: (2 * t * c * c + 5 * h * c * c + out_proj) * l,
            weights: 2 * t * c * c + 3 * h * c * c + out_proj,
            map_elems: h * c * c,
        },
        // depthwise kernel holds 4D·l weights
        BlockKind::Dcfn => {
            let base = table_cost(kind, d)?;
            Cost {
                weights: 8 * c * c + 4 * c * t,
                ..base
            }
        }
        _ => table_cost(kind, d)?,
    })
}

/// Cost of one plain convolution (transposed or not) with `len` positions
/// on its input side for transposed layers, output side otherwise.
pub fn conv_cost(cin: u64, cout: u64, taps: u64, len: u64) -> Cost {
    Cost {
        macs: cin * cout * taps * len,
        weights: cin * cout * taps,
        map_elems: 0,
    }
}

/// Runs `f` under a fresh dry-run counter and returns the counted MACs.
pub fn count_macs<R>(f: impl FnOnce() -> Result<R>) -> Result<(R, MacCounter)> {
    let counter = MacCounter::dry_run();
    let r = counter.measure(f)?;
    Ok((r, counter))
}

/// Scopes reported by [`measure_cost`].
#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub scope: String,
    pub analytic_macs: u64,
    pub measured_macs: u64,
    /// Sum of single-head table expressions over the scope's blocks plus
    /// the convolutions outside them.
    pub table_macs: u64,
    pub analytic_weights: u64,
    pub measured_params: u64,
}

impl CostRow {
    pub fn rel_diff(&self) -> f64 {
        if self.measured_macs == 0 {
            return if self.analytic_macs == 0 { 0.0 } else { f64::INFINITY };
        }
        (self.analytic_macs as f64 - self.measured_macs as f64).abs() / self.measured_macs as f64
    }
}

/// A published reference figure and how far the measurement sits from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PaperCheck {
    pub label: &'static str,
    pub reference: f64,
    pub measured: f64,
    pub tolerance: f64,
}

impl PaperCheck {
    pub fn rel_diff(&self) -> f64 {
        (self.measured - self.reference).abs() / self.reference
    }

    pub fn passes(&self) -> bool {
        self.rel_diff() <= self.tolerance
    }
}

pub const PARAM_TOLERANCE: f64 = 0.10;
pub const MAC_TOLERANCE: f64 = 0.15;

/// Published parameter count and MAC/s of a configuration, if it is one of
/// the two reference models.
pub fn reference_figures(cfg: &ModelConfig) -> Option<(f64, f64)> {
    if *cfg == ModelConfig::base() {
        Some((4.0e6, 64.5e9))
    } else if *cfg == ModelConfig::large() {
        Some((7.7e6, 124.0e9))
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub mics: usize,
    pub seconds: f64,
    pub frames: usize,
    pub bins: usize,
    pub rows: Vec<CostRow>,
    pub total: CostRow,
    pub param_count: usize,
    pub bias_count: usize,
    pub paper: Vec<PaperCheck>,
}

impl CostReport {
    pub fn macs_per_second(&self) -> f64 {
        self.total.measured_macs as f64 / self.seconds
    }

    /// Every row reconciles exactly and every reference check is within
    /// tolerance.
    pub fn passes(&self) -> bool {
        self.rows.iter().chain([&self.total]).all(|r| r.analytic_macs == r.measured_macs)
            && self.paper.iter().all(PaperCheck::passes)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "input: M={} N={:.3} s T={} F={}",
            self.mics, self.seconds, self.frames, self.bins
        );
        let _ = writeln!(
            s,
            "{:<16} {:>16} {:>16} {:>9} {:>16} {:>12} {:>12}",
            "scope", "analytic_macs", "measured_macs", "rel_diff", "table_macs", "weights", "params"
        );
        for r in self.rows.iter().chain([&self.total]) {
            let _ = writeln!(
                s,
                "{:<16} {:>16} {:>16} {:>9.2e} {:>16} {:>12} {:>12}",
                r.scope,
                r.analytic_macs,
                r.measured_macs,
                r.rel_diff(),
                r.table_macs,
                r.analytic_weights,
                r.measured_params
            );
        }
        let _ = writeln!(
            s,
            "total ≈ {:.1} G MAC/s, {:.2} M params ({} biases)",
            self.macs_per_second() / 1e9,
            self.param_count as f64 / 1e6,
            self.bias_count
        );
        for p in &self.paper {
            let _ = writeln!(
                s,
                "reference {}: {:.4e} vs {:.4e} ({:+.1}%, tolerance ±{:.0}%) {}",
                p.label,
                p.measured,
                p.reference,
                100.0 * (p.measured - p.reference) / p.reference,
                100.0 * p.tolerance,
                if p.passes() { "ok" } else { "FAIL" }
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "scope,analytic_macs,measured_macs,rel_diff,table_macs,analytic_weights,measured_params\n",
        );
        for r in self.rows.iter().chain([&self.total]) {
            let _ = writeln!(
                s,
                "{},{},{},{:e},{},{},{}",
                r.scope,
                r.analytic_macs,
                r.measured_macs,
                r.rel_diff(),
                r.table_macs,
                r.analytic_weights,
                r.measured_params
            );
        }
        s
    }
}

/// Analytic cost of the network, per scope, at `frames × bins`.
///
/// `corrupt` perturbs the formula of one block kind by one MAC per call. It
/// exists to prove that a broken formula is caught.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostModel {
    pub corrupt: Option<BlockKind>,
}

impl CostModel {
    fn eval(&self, kind: BlockKind, d: &BlockDims) -> Result<(Cost, u64)> {
        let mut c = block_cost(kind, d)?;
        if self.corrupt == Some(kind) {
            c.macs += 1;
        }
        Ok((c, table_cost(kind, d)?.macs))
    }

    /// Rows `(scope, analytic cost, table MACs)` for the whole network.
    pub fn network(&self, cfg: &ModelConfig, frames: usize, bins: usize) -> Result<Vec<(String, Cost, u64)>> {
        let (c, g, d, k) = (cfg.channels as u64, cfg.groups as u64, cfg.sub_channels as u64, cfg.kernel as u64);
        let plane = (frames * bins) as u64;
        let mut rows = Vec::new();
        let block2d = |channels: u64| -> Result<(Cost, u64)> {
            match cfg.dense2d {
                Dense2dKind::Split => self.eval(BlockKind::Sdb2d, &BlockDims::new(channels as usize, g as usize, (k * k) as usize, 1, plane as usize)),
                Dense2dKind::Conv => {
                    let cc = conv_cost(channels, channels / g, k * k, plane);
                    Ok((cc, cc.macs))
                }
            }
        };
        let up = conv_cost(2 * cfg.mics as u64, c, 9, plane);
        let (enc, enc_table) = block2d(c)?;
        rows.push(("encoder".to_string(), up + enc, up.macs + enc_table));

        for b in 0..cfg.blocks {
            for (label, seq, batch) in [("f", bins, frames), ("t", frames, bins)] {
                let batch = batch as u64;
                let inner = (seq + 1 - cfg.unfold_kernel) as u64;
                let (feat, feat_table) = match cfg.dense1d {
                    Dense1dKind::Split => self.eval(BlockKind::Sdb1d, &BlockDims::new((g * d) as usize, g as usize, k as usize, 1, inner as usize))?,
                    Dense1dKind::Dense => self.eval(BlockKind::Dense, &BlockDims::new(d as usize, g as usize, k as usize, 1, inner as usize))?,
                    Dense1dKind::Grouped => self.eval(BlockKind::Grouped, &BlockDims::new(d as usize, g as usize, k as usize, 1, inner as usize))?,
                };
                let dims = BlockDims::new(d as usize, 1, k as usize, cfg.heads, inner as usize);
                let (attn, attn_table) = self.eval(BlockKind::from_attention(cfg.attention), &dims)?;
                let fdims = BlockDims::new(d as usize, 1, cfg.ffw_kernel, 1, inner as usize);
                let (ffw, ffw_table) = self.eval(BlockKind::from_ffw(cfg.ffw), &fdims)?;
                let restore = conv_cost(d, d, cfg.unfold_kernel as u64, inner);
                let cost = (feat + attn + ffw + restore) * batch;
                let table = (feat_table + attn_table + ffw_table + restore.macs) * batch;
                rows.push((format!("block{b}.{label}"), cost, table));
            }
        }
        let down = conv_cost(d, 2 * g, 9, plane);
        let (dec, dec_table) = block2d(2 * g)?;
        rows.push(("decoder".to_string(), down + dec, down.macs + dec_table));
        Ok(rows)
    }
}

/// Counts one forward pass over a synthetic clip of `seconds` and reconciles
/// it with the analytic model.
pub fn measure_cost<S: Scalar>(net: &Network<S>, seconds: f64, model: CostModel) -> Result<CostReport> {
    let cfg = net.config();
    let n = (seconds * cfg.sample_rate as f64).round() as usize;
    let stft = cfg.stft();
    let frames = stft.frames(n)?;
    let bins = stft.bins();
    let x = Tensor::<S>::zeros(&[2 * cfg.mics, frames, bins]);
    let (_, counter) = count_macs(|| net.infer(&x))?;

    let params = net.params();
    let mut rows: Vec<CostRow> = model
        .network(cfg, frames, bins)?
        .into_iter()
        .map(|(scope, cost, table)| CostRow {
            measured_macs: counter.scope_total(&scope),
            measured_params: params.count_under(&scope) as u64,
            scope,
            analytic_macs: cost.macs,
            table_macs: table,
            analytic_weights: cost.weights,
        })
        .collect();
    let unscoped = counter.total() - rows.iter().map(|r| r.measured_macs).sum::<u64>();
    if unscoped > 0 {
        rows.push(CostRow {
            scope: "other".into(),
            analytic_macs: 0,
            measured_macs: unscoped,
            table_macs: 0,
            analytic_weights: 0,
            measured_params: 0,
        });
    }
    let sum = |f: fn(&CostRow) -> u64| rows.iter().map(f).sum::<u64>();
    let total = CostRow {
        scope: "total".into(),
        analytic_macs: sum(|r| r.analytic_macs),
        measured_macs: counter.total(),
        table_macs: sum(|r| r.table_macs),
        analytic_weights: sum(|r| r.analytic_weights),
        measured_params: params.count() as u64,
    };
    let pc = net.count_params();
    let mut paper = Vec::new();
    if let Some((ref_params, ref_macs)) = reference_figures(cfg) {
        paper.push(PaperCheck {
            label: "params",
            reference: ref_params,
            measured: pc.total as f64,
            tolerance: PARAM_TOLERANCE,
        });
        if (seconds - 1.0).abs() < 1e-9 {
            paper.push(PaperCheck {
                label: "MAC/s",
                reference: ref_macs,
                measured: total.measured_macs as f64 / seconds,
                tolerance: MAC_TOLERANCE,
            });
        }
    }
    Ok(CostReport {
        mics: cfg.mics,
        seconds,
        frames,
        bins,
        rows,
        total,
        param_count: pc.total,
        bias_count: pc.biases,
        paper,
    })
}

/// Counted MACs of one forward over a `seconds`-long clip, divided by its
/// duration.
pub fn macs_per_second<S: Scalar>(net: &Network<S>, seconds: f64) -> Result<f64> {
    Ok(measure_cost(net, seconds, CostModel::default())?.macs_per_second())
}

/// Analytic against counted cost of one block built in isolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockAudit {
    pub kind: BlockKind,
    pub dims: BlockDims,
    pub analytic: Cost,
    pub measured_macs: u64,
    pub measured_weights: u64,
}

impl BlockAudit {
    pub fn exact(&self) -> bool {
        self.analytic.macs == self.measured_macs && self.analytic.weights == self.measured_weights
    }
}

fn square_kernel(kind: BlockKind, taps: u64) -> Result<usize> {
    let k = (taps as f64).sqrt().round() as u64;
    if k * k != taps || k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("{kind}: taps {taps} is not an odd square")));
    }
    Ok(k as usize)
}

/// Builds one block of `kind` at `d`, runs it under a dry-run counter and
/// compares with [`block_cost`]. Dense, grouped and 2D split blocks are built
/// in 2D (`taps = k²`, an odd square) over a `1 × len` plane; the rest are 1D
/// blocks over a sequence of `len` output positions.
pub fn audit_block(kind: BlockKind, d: &BlockDims, model: CostModel) -> Result<BlockAudit> {
    let (analytic, _) = model.eval(kind, d)?;
    let (c, g, t, len) = (d.channels as usize, d.groups as usize, d.taps as usize, d.len as usize);
    let mut b = ParamBuilder::new(0);
    let tape = Tape::<f64>::inference();
    let (measured, store) = match kind {
        BlockKind::Dense | BlockKind::Grouped | BlockKind::Sdb2d => {
            let k = square_kernel(kind, d.taps)?;
            let cfg = SdbConfig::new(g, c, k, Dims::Two);
            let block = match kind {
                BlockKind::Sdb2d => FeatureBlock::Split(Sdb::new(&mut b, "block", cfg, false)?),
                grouped => FeatureBlock::Dense(DenseBlock::new(&mut b, "block", cfg, grouped == BlockKind::Grouped, false)?),
            };
            let store = b.finish();
            let p = store.bind(&tape);
            let x = tape.constant(Tensor::zeros(&[c, 1, len]));
            let (_, counter) = count_macs(|| block.forward(&p, &x))?;
            (counter.total(), store)
        }
        BlockKind::Sdb1d => {
            let block = Sdb1d::new(&mut b, "block", g, c / g, t)?;
            let store = b.finish();
            let p = store.bind(&tape);
            let x = tape.constant(Tensor::zeros(&[1, c / g, len + g - 1]));
            let (_, counter) = count_macs(|| block.forward(&p, &x))?;
            (counter.total(), store)
        }
        kind if kind.is_attention() => {
            let attn_kind = match kind {
                BlockKind::VanillaAttention => AttentionKind::Vanilla,
                BlockKind::EfficientAttention => AttentionKind::Efficient,
                _ => AttentionKind::ConvEfficient,
            };
            let cfg = AttnConfig {
                channels: c,
                heads: d.heads as usize,
                kernel: t,
                kind: attn_kind,
                dropout: 0.0,
            };
            let block = Attention::new(&mut b, "block", cfg)?;
            let store = b.finish();
            let p = store.bind(&tape);
            let x = tape.constant(Tensor::zeros(&[1, c, len]));
            let (_, counter) = count_macs(|| block.forward(&p, &x))?;
            (counter.total(), store)
        }
        kind => {
            let ffw_kind = match kind {
                BlockKind::Ffw => FfwKind::Vanilla,
                BlockKind::Dcfn => FfwKind::DepthwiseConv,
                BlockKind::Dpfn => FfwKind::DualPath,
                _ => FfwKind::Conv,
            };
            let cfg = FfwConfig {
                channels: c,
                kernel: t,
                dilation: 1,
                kind: ffw_kind,
                dropout: 0.0,
            };
            let block = FeedForward::new(&mut b, "block", cfg)?;
            let store = b.finish();
            let p = store.bind(&tape);
            let x = tape.constant(Tensor::zeros(&[1, c, len]));
            let (_, counter) = count_macs(|| block.forward(&p, &x))?;
            (counter.total(), store)
        }
    };
    Ok(BlockAudit {
        kind,
        dims: *d,
        analytic,
        measured_macs: measured,
        measured_weights: store.count_role(ParamRole::Kernel) as u64,
    })
}
