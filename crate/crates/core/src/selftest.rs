//! Named invariant checks with a pass/fail table, shared by the CLI and the
//! test suite.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{interior_rel_error, istft, stft, AudioClip, StftConfig};
use crate::autodiff::{Tape, Var};
use crate::complexity::{audit_block, measure_cost, table_cost, BlockDims, BlockKind, CostModel};
use crate::config::ModelConfig;
use crate::error::Result;
use crate::gradcheck;
use crate::kernels::{self, shape::shuffle_source};
use crate::network::{transformer_config, Network};
use crate::params::{Bound, ParamBuilder, ParamStore};
use crate::tensor::Tensor;
use crate::train::Problem;
use crate::transformer::{Attention, AttentionKind, AttnConfig, FeedForward, FfwConfig, FfwKind, SeqAxis, Transformer};

pub const GRAD_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

type Check = Box<dyn Fn() -> Result<(bool, String)>>;

pub struct Case {
    pub name: String,
    check: Check,
}

impl Case {
    fn new(name: impl Into<String>, check: impl Fn() -> Result<(bool, String)> + 'static) -> Self {
        Self {
            name: name.into(),
            check: Box::new(check),
        }
    }

    /// Errors count as failures, with the error as detail.
    pub fn run(&self) -> Outcome {
        let (passed, detail) = match (self.check)() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e}")),
        };
        Outcome {
            name: self.name.clone(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    pub seed: u64,
    /// Perturbs one block formula to show reconciliation catches it.
    pub corrupt: Option<BlockKind>,
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn random(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn stft_roundtrip(seed: u64) -> Result<(bool, String)> {
    let cfg = StftConfig::default();
    let mut r = rng(seed, 1);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let x: Vec<f64> = (0..64_000).map(|_| r.gen_range(-1.0..1.0)).collect();
        let clip = AudioClip::from_channels(std::slice::from_ref(&x), 16_000)?;
        let y = istft(&stft(&clip, cfg)?.channel(0), cfg, x.len())?;
        worst = worst.max(interior_rel_error(&x, &y, cfg));
    }
    Ok((worst < 1e-6, format!("worst interior rel L2 {worst:.2e} over 5 clips")))
}

fn shuffle_bijection() -> Result<(bool, String)> {
    for (g, d) in [(2, 2), (3, 5), (4, 4), (4, 64)] {
        let c = g * d;
        let mut seen = vec![false; c];
        for j in 0..c {
            let s = shuffle_source(j, g, d);
            if s >= c || std::mem::replace(&mut seen[s], true) {
                return Ok((false, format!("G={g} D={d}: source {s} repeated or out of range")));
            }
        }
        let x = Tensor::from_fn(&[1, c, 3], |i| i as f64);
        let back = kernels::channel_unshuffle(&kernels::channel_shuffle(&x, g)?, g)?;
        if back != x {
            return Ok((false, format!("G={g} D={d}: unshuffle does not invert shuffle")));
        }
    }
    Ok((true, "4 (G, D) pairs are permutations with exact inverse".into()))
}

fn unfold_restores_length() -> Result<(bool, String)> {
    let mut checked = 0;
    for g in 2..=5 {
        for l in g..g + 12 {
            let x = Tensor::<f64>::zeros(&[1, 3, l]);
            let u = kernels::unfold1d(&x, g)?;
            let w = Tensor::zeros(&[3 * g, 3, g]);
            let y = kernels::transposed_conv1d(&u, &w, None, 0)?;
            if y.shape()[2] != l {
                return Ok((false, format!("G={g} L={l}: restored length {}", y.shape()[2])));
            }
            checked += 1;
        }
    }
    Ok((true, format!("{checked} (G, L) pairs restore L")))
}

fn softmax_normalization(seed: u64) -> Result<(bool, String)> {
    let mut r = rng(seed, 2);
    let x = random(&mut r, &[3, 5, 7]).map(|v| 20.0 * v);
    let mut worst = 0.0f64;
    for axis in 0..3 {
        let y = kernels::softmax(&x, axis)?;
        let sums = kernels::shape::permute(&y, &move_to_end(axis))?;
        let n = x.shape()[axis];
        for row in sums.data().chunks(n) {
            worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok((worst < 1e-12, format!("max |sum softmax - 1| = {worst:.1e} over 3 axes")))
}

fn move_to_end(axis: usize) -> Vec<usize> {
    let mut axes: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    axes.push(axis);
    axes
}

/// Output equals input once the parameters under every prefix are zero.
fn identity_after_zeroing(
    mut store: ParamStore<f64>,
    prefixes: &[&str],
    x: Tensor<f64>,
    f: impl for<'t> Fn(&Bound<'t, f64>, &Var<'t, f64>) -> Result<Var<'t, f64>>,
) -> Result<(bool, String)> {
    let mut zeroed = 0;
    for prefix in prefixes {
        let n = store.zero_under(prefix);
        if n == 0 {
            return Ok((false, format!("nothing to zero under {prefix}")));
        }
        zeroed += n;
    }
    let tape = Tape::inference();
    let p = store.bind(&tape);
    let y = f(&p, &tape.constant(x.clone()))?;
    let diff = y.value().max_abs_diff(&x);
    Ok((diff == 0.0, format!("zeroed {zeroed} tensors under {}, max |y - x| = {diff:e}", prefixes.join(", "))))
}

fn attention_residual(kind: AttentionKind, seed: u64) -> Result<(bool, String)> {
    let mut b = ParamBuilder::new(seed);
    let cfg = AttnConfig {
        channels: 4,
        heads: 2,
        kernel: 3,
        kind,
        dropout: 0.0,
    };
    let attn = Attention::new(&mut b, "attn", cfg)?;
    let x = random(&mut rng(seed, 3), &[2, 4, 9]);
    identity_after_zeroing(b.finish(), &["attn.out"], x, |p, x| attn.forward(p, x))
}

fn ffw_residual(kind: FfwKind, seed: u64) -> Result<(bool, String)> {
    let mut b = ParamBuilder::new(seed);
    let cfg = FfwConfig {
        channels: 4,
        kernel: 5,
        dilation: 2,
        kind,
        dropout: 0.0,
    };
    let ffw = FeedForward::new(&mut b, "ffw", cfg)?;
    let x = random(&mut rng(seed, 4), &[2, 4, 11]);
    identity_after_zeroing(b.finish(), &["ffw.wo"], x, |p, x| ffw.forward(p, x))
}

fn transformer_residual(axis: SeqAxis, seed: u64) -> Result<(bool, String)> {
    let cfg = ModelConfig::tiny();
    let mut b = ParamBuilder::new(seed);
    let t = Transformer::new(&mut b, "tr", axis, transformer_config(&cfg, 0))?;
    let x = random(&mut rng(seed, 5), &[cfg.sub_channels, 6, 9]);
    identity_after_zeroing(b.finish(), &["tr.attn.out", "tr.ffw.wo", "tr.restore"], x, |p, x| t.forward(p, x))
}

fn kernel_gradients(seed: u64) -> Vec<Case> {
    gradcheck::kernel_cases(seed)
        .into_iter()
        .map(|c| {
            Case::new(format!("gradcheck.{}", c.name), move || {
                let r = c.check()?;
                Ok((r.passes(GRAD_TOL), format!("max rel err {:.2e} over {} probes", r.max_rel_err(), r.probes.len())))
            })
        })
        .collect()
}

fn model_gradients(seed: u64) -> Result<(bool, String)> {
    let cfg = ModelConfig::tiny();
    let net = Network::<f64>::build(&cfg, seed)?;
    let problem = Problem::<f64>::toy(&cfg, 0.25, seed)?;
    let check = gradcheck::model_weights(&net, &problem, 10, seed)?;
    let r = &check.report;
    Ok((
        r.passes(GRAD_TOL),
        format!(
            "max rel err {:.2e} over {} weights ({} non-smooth draws skipped)",
            r.max_rel_err(),
            r.probes.len(),
            check.rejected
        ),
    ))
}

fn random_dims(kind: BlockKind, r: &mut ChaCha8Rng) -> BlockDims {
    match kind {
        BlockKind::Dense | BlockKind::Grouped | BlockKind::Sdb2d => {
            let g = r.gen_range(1..=4);
            let k = [1, 3, 5][r.gen_range(0..3)];
            BlockDims::new(g * r.gen_range(1..=3), g, k * k, 1, r.gen_range(1..=12))
        }
        BlockKind::Sdb1d => {
            let g = r.gen_range(1..=4);
            BlockDims::new(g * r.gen_range(1..=3), g, [1, 3, 5][r.gen_range(0..3)], 1, r.gen_range(1..=12))
        }
        _ => BlockDims::new(r.gen_range(1..=6), 1, [1, 3, 5][r.gen_range(0..3)], r.gen_range(1..=3), r.gen_range(1..=12)),
    }
}

fn formula_audit(kind: BlockKind, opts: Options) -> Result<(bool, String)> {
    let mut r = rng(opts.seed, 10 + kind as u64);
    let model = CostModel { corrupt: opts.corrupt };
    for draw in 0..20 {
        let d = random_dims(kind, &mut r);
        let a = audit_block(kind, &d, model)?;
        if !a.exact() {
            return Ok((
                false,
                format!(
                    "draw {draw} {d:?}: analytic {} MACs / {} weights, measured {} / {}",
                    a.analytic.macs, a.analytic.weights, a.measured_macs, a.measured_weights
                ),
            ));
        }
    }
    Ok((true, "20 random draws, MACs and weights exact".into()))
}

fn network_reconciles(model: CostModel) -> Result<(bool, String)> {
    let net = Network::<f32>::build(&ModelConfig::tiny(), 0)?;
    let report = measure_cost(&net, 0.25, model)?;
    let bad: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| r.analytic_macs != r.measured_macs)
        .map(|r| r.scope.as_str())
        .collect();
    Ok((
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} scopes exact, {} MACs", report.rows.len(), report.total.measured_macs)
        } else {
            format!("mismatch in {}", bad.join(", "))
        },
    ))
}

/// Vanilla and conv-efficient attention cost cross at `L = (1 + k²)·D`.
pub fn crossover(d: usize, k: usize) -> Result<(bool, String)> {
    let at = |l: usize| -> Result<(u64, u64)> {
        let dims = BlockDims::new(d, 1, k * k, 1, l);
        Ok((
            table_cost(BlockKind::VanillaAttention, &dims)?.macs,
            table_cost(BlockKind::ConvEfficientAttention, &dims)?.macs,
        ))
    };
    let l = (1 + k * k) * d;
    let (below, at_l, above) = (at(l - 1)?, at(l)?, at(l + 1)?);
    let ok = below.0 < below.1 && at_l.0 == at_l.1 && above.0 > above.1;
    Ok((ok, format!("D={d} k={k}: crossing at L={l} (vanilla {} vs cea {} there)", at_l.0, at_l.1)))
}

fn formula_sanity(seed: u64) -> Result<(bool, String)> {
    let mut r = rng(seed, 6);
    for _ in 0..200 {
        // DPFN and DCFN coincide at D = 1
        let d = r.gen_range(2..=128);
        let l = r.gen_range(1..=512);
        let k = 2 * r.gen_range(1..=4) + 1;
        let dims = BlockDims::new(d, 1, k * k, 1, l);
        let c = |kind| table_cost(kind, &dims);
        let (cea, ea) = (c(BlockKind::ConvEfficientAttention)?, c(BlockKind::EfficientAttention)?);
        let (cfn, dpfn, dcfn, ffw) = (c(BlockKind::Cfn)?, c(BlockKind::Dpfn)?, c(BlockKind::Dcfn)?, c(BlockKind::Ffw)?);
        let macs = cea.macs > ea.macs && cfn.macs > dpfn.macs && dpfn.macs > dcfn.macs && dcfn.macs > ffw.macs;
        let mem = cea.memory() > ea.memory()
            && cfn.memory() > dpfn.memory()
            && dpfn.memory() > dcfn.memory()
            && dcfn.memory() > ffw.memory();
        if !(macs && mem) {
            return Ok((false, format!("ordering broken at D={d} L={l} k={k}")));
        }
    }
    Ok((true, "CEA > EA and CFN > DPFN > DCFN > FFW over 200 draws".into()))
}

fn memory_ratios() -> Result<(bool, String)> {
    let dims = BlockDims::new(64, 4, 9, 1, 64);
    let w = |kind| Ok::<_, crate::Error>(table_cost(kind, &dims)?.weights as f64);
    let sdb = w(BlockKind::Sdb2d)?;
    let (grouped, dense) = (sdb / w(BlockKind::Grouped)?, sdb / w(BlockKind::Dense)?);
    let ok = (grouped - 0.175).abs() < 1e-12 && (dense - 0.04375).abs() < 1e-12;
    Ok((ok, format!("SDB/grouped {grouped}, SDB/dense {dense}")))
}

/// Every case, in table order.
pub fn cases(opts: Options) -> Vec<Case> {
    let seed = opts.seed;
    let mut v = vec![
        Case::new("stft.roundtrip", move || stft_roundtrip(seed)),
        Case::new("structure.shuffle_bijection", shuffle_bijection),
        Case::new("structure.unfold_tconv_length", unfold_restores_length),
        Case::new("structure.softmax_normalization", move || softmax_normalization(seed)),
    ];
    for kind in [AttentionKind::Vanilla, AttentionKind::Efficient, AttentionKind::ConvEfficient] {
        v.push(Case::new(format!("structure.residual.attn.{}", kind.as_str()), move || {
            attention_residual(kind, seed)
        }));
    }
    for kind in [FfwKind::Vanilla, FfwKind::DepthwiseConv, FfwKind::DualPath, FfwKind::Conv] {
        v.push(Case::new(format!("structure.residual.ffw.{}", kind.as_str()), move || {
            ffw_residual(kind, seed)
        }));
    }
    for axis in [SeqAxis::Freq, SeqAxis::Time] {
        v.push(Case::new(format!("structure.residual.transformer.{}", axis.label()), move || {
            transformer_residual(axis, seed)
        }));
    }
    v.extend(kernel_gradients(seed));
    v.push(Case::new("gradcheck.model", move || model_gradients(seed)));
    for kind in BlockKind::ALL {
        v.push(Case::new(format!("formula.{kind}"), move || formula_audit(kind, opts)));
    }
    let model = CostModel { corrupt: opts.corrupt };
    v.push(Case::new("formula.network", move || network_reconciles(model)));
    for (d, k) in [(16, 3), (64, 3), (64, 5)] {
        v.push(Case::new(format!("formula.crossover.d{d}k{k}"), move || crossover(d, k)));
    }
    v.push(Case::new("formula.ordering", move || formula_sanity(seed)));
    v.push(Case::new("formula.memory_ratios", memory_ratios));
    v
}

/// Runs the cases whose name contains `filter`.
pub fn run(opts: Options, filter: Option<&str>) -> Vec<Outcome> {
    cases(opts)
        .iter()
        .filter(|c| filter.is_none_or(|f| c.name.contains(f)))
        .map(Case::run)
        .collect()
}

pub fn table(outcomes: &[Outcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(4).max(4);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:<6}  detail", "case", "result");
    for o in outcomes {
        let _ = writeln!(s, "{:<width$}  {:<6}  {}", o.name, if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    let _ = writeln!(s, "{passed}/{} passed", outcomes.len());
    s
}
