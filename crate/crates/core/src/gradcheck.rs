//! Central finite-difference checks against [`Tape::backward`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Conv1dSpec;
use crate::network::Network;
use crate::params::Bound;
use crate::train::Problem;
use crate::loss::{pcm_loss, stft_mag_loss, MagnitudeMode};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// Denominator floor for the elementwise relative error. Below this
/// magnitude the comparison is effectively absolute.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_err(&self) -> f64 {
        let d = (self.analytic - self.numeric).abs();
        d / self.analytic.abs().max(self.numeric.abs()).max(REL_FLOOR)
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub probes: Vec<Probe>,
}

impl Report {
    pub fn max_rel_err(&self) -> f64 {
        self.probes.iter().map(Probe::rel_err).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_err().total_cmp(&b.rel_err()))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// Scalar-valued function of a list of leaves.
pub trait Objective: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> {}
impl<F> Objective for F where F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> {}

fn evaluate(f: &impl Objective, inputs: &[Arc<Tensor<f64>>]) -> Result<f64> {
    let tape = Tape::inference();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    Ok(f(&tape, &vars)?.value().item())
}

/// Compares analytic and numeric derivatives at the given `(input, index)`
/// positions.
pub fn check_at(
    inputs: &[Tensor<f64>],
    positions: &[(usize, usize)],
    eps: f64,
    f: impl Objective,
) -> Result<Report> {
    let shared: Vec<Arc<Tensor<f64>>> = inputs.iter().cloned().map(Arc::new).collect();
    let tape = Tape::new();
    let vars: Vec<_> = shared.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();
    drop(vars);

    let mut probes = Vec::with_capacity(positions.len());
    for &(input, index) in positions {
        let mut shifted = shared.clone();
        let base = inputs[input].data()[index];
        let mut at = |delta: f64| -> Result<f64> {
            let mut t = inputs[input].clone();
            t.data_mut()[index] = base + delta;
            shifted[input] = Arc::new(t);
            evaluate(&f, &shifted)
        };
        let numeric = (at(eps)? - at(-eps)?) / (2.0 * eps);
        probes.push(Probe {
            input,
            index,
            analytic: analytic[input].data()[index],
            numeric,
        });
    }
    Ok(Report { probes })
}

/// Checks every element of every input.
pub fn check_all(inputs: &[Tensor<f64>], eps: f64, f: impl Objective) -> Result<Report> {
    let positions: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect();
    check_at(inputs, &positions, eps, f)
}

/// A named objective over fixed inputs, one per differentiable kernel.
pub struct KernelCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub f: Box<dyn Objective>,
}

impl KernelCase {
    pub fn check(&self) -> Result<Report> {
        check_all(&self.inputs, DEFAULT_EPS, &*self.f)
    }
}

/// Fixed, uneven weights so a plain sum cannot hide a wrong gradient.
pub fn probe_sum<'t>(v: &Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = Tensor::from_fn(v.shape(), |i| ((i * 7919 + 3) % 13) as f64 / 6.0 - 0.95);
    Ok(v.mul(&v.tape().constant(w))?.sum())
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Entries at least 0.2 away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.gen_range(0.2..1.0);
        if rng.gen::<bool>() { v } else { -v }
    })
}

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, f: impl Objective + 'static) -> KernelCase {
    KernelCase {
        name,
        inputs,
        f: Box::new(f),
    }
}

/// Every differentiable kernel on small random inputs.
pub fn kernel_cases(seed: u64) -> Vec<KernelCase> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    vec![
        case("add", vec![random(r, &[2, 3]), random(r, &[2, 3])], |_, v| probe_sum(&v[0].add(&v[1])?)),
        case("sub", vec![random(r, &[2, 3]), random(r, &[2, 3])], |_, v| probe_sum(&v[0].sub(&v[1])?)),
        case("mul", vec![random(r, &[2, 3]), random(r, &[2, 3])], |_, v| probe_sum(&v[0].mul(&v[1])?)),
        case("scale", vec![random(r, &[4])], |_, v| probe_sum(&v[0].scale(-1.7))),
        case("abs", vec![off_zero(r, &[2, 4])], |_, v| probe_sum(&v[0].abs())),
        case("mean", vec![random(r, &[3, 2])], |_, v| Ok(v[0].mul(&v[0])?.mean())),
        case("reshape", vec![random(r, &[2, 6])], |_, v| probe_sum(&v[0].reshape(&[3, 4])?)),
        case("permute", vec![random(r, &[2, 3, 4])], |_, v| probe_sum(&v[0].permute(&[2, 0, 1])?)),
        case("transpose12", vec![random(r, &[2, 3, 4])], |_, v| probe_sum(&v[0].transpose12()?)),
        case("slice", vec![random(r, &[2, 5, 3])], |_, v| probe_sum(&v[0].slice(1, 1, 3)?)),
        case("concat", vec![random(r, &[2, 2, 3]), random(r, &[2, 1, 3])], |_, v| {
            probe_sum(&crate::autodiff::concat(&[&v[0], &v[1]], 1)?)
        }),
        case("unfold1d", vec![random(r, &[2, 3, 7])], |_, v| probe_sum(&v[0].unfold1d(3)?)),
        case("channel_shuffle", vec![random(r, &[2, 6, 3])], |_, v| probe_sum(&v[0].channel_shuffle(3)?)),
        case("gelu", vec![random(r, &[3, 4]).map(|x| 3.0 * x)], |_, v| probe_sum(&v[0].gelu())),
        case("sigmoid", vec![random(r, &[3, 4]).map(|x| 3.0 * x)], |_, v| probe_sum(&v[0].sigmoid())),
        case("prelu", vec![off_zero(r, &[2, 5]), Tensor::full(&[1], 0.25)], |_, v| {
            probe_sum(&v[0].prelu(&v[1])?)
        }),
        case("glu", vec![random(r, &[2, 4, 3])], |_, v| probe_sum(&v[0].glu(1)?)),
        case("softmax", vec![random(r, &[2, 3, 4])], |_, v| {
            probe_sum(&v[0].softmax(1)?)?.add(&probe_sum(&v[0].softmax(2)?)?)
        }),
        case("layer_norm", vec![random(r, &[2, 4, 3]), random(r, &[4]), random(r, &[4])], |_, v| {
            probe_sum(&v[0].layer_norm(1, &v[1], &v[2])?)
        }),
        case("layer_norm_span", vec![random(r, &[2, 3, 4]), random(r, &[3]), random(r, &[3])], |_, v| {
            probe_sum(&v[0].layer_norm_span(1, 2, &v[1], &v[2])?)
        }),
        case("bmm", vec![random(r, &[2, 3, 4]), random(r, &[2, 4, 2])], |_, v| probe_sum(&v[0].bmm(&v[1])?)),
        case("conv1d", vec![random(r, &[2, 4, 7]), random(r, &[6, 2, 3]), random(r, &[6])], |_, v| {
            let spec = Conv1dSpec::same(3, 2).with_groups(2);
            probe_sum(&v[0].conv1d(&v[1], Some(&v[2]), spec)?)
        }),
        case("conv2d", vec![random(r, &[4, 4, 5]), random(r, &[2, 2, 3, 3]), random(r, &[2])], |_, v| {
            probe_sum(&v[0].conv2d(&v[1], Some(&v[2]), 1, 2)?)
        }),
        case("transposed_conv1d", vec![random(r, &[2, 3, 5]), random(r, &[3, 2, 4]), random(r, &[2])], |_, v| {
            probe_sum(&v[0].transposed_conv1d(&v[1], Some(&v[2]), 0)?)
        }),
        case("transposed_conv2d", vec![random(r, &[3, 4, 4]), random(r, &[3, 2, 3, 3]), random(r, &[2])], |_, v| {
            probe_sum(&v[0].transposed_conv2d(&v[1], Some(&v[2]), 1)?)
        }),
        case("stft_mag_loss", vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[2, 3, 4])], |_, v| {
            stft_mag_loss(&v[0], &v[1], MagnitudeMode::SummedAbs)
        }),
        case("stft_mag_loss_split", vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[2, 3, 4])], |_, v| {
            stft_mag_loss(&v[0], &v[1], MagnitudeMode::SplitAbs)
        }),
        case(
            "pcm_loss",
            vec![off_zero(r, &[2, 3, 4]), off_zero(r, &[2, 3, 4]), off_zero(r, &[2, 3, 4]).map(|x| 3.0 * x)],
            |_, v| Ok(pcm_loss(&v[0], &v[1], &v[2], MagnitudeMode::SummedAbs)?.total),
        ),
    ]
}

/// Largest relative gap between the central differences at `ε` and `ε/2`
/// for a point to count as smooth. A smooth objective gives a gap of order
/// `ε²`; an abs or PReLU kink inside `[−ε, ε]`, or roundoff swamping a tiny
/// derivative, gives one of order 1.
pub const SMOOTH_TOL: f64 = 1e-6;

/// Result of [`model_weights`]: the checked probes plus how many sampled
/// weights were skipped because the objective is not smooth around them.
#[derive(Debug, Clone)]
pub struct ModelCheck {
    pub report: Report,
    pub rejected: usize,
}

fn objective<F: Objective>(f: F) -> F {
    f
}

fn central(f: &impl Objective, inputs: &[Arc<Tensor<f64>>], (i, j): (usize, usize), eps: f64) -> Result<f64> {
    let mut shifted = inputs.to_vec();
    let mut at = |delta: f64| -> Result<f64> {
        let mut t = (*inputs[i]).clone();
        t.data_mut()[j] += delta;
        shifted[i] = Arc::new(t);
        evaluate(f, &shifted)
    };
    Ok((at(eps)? - at(-eps)?) / (2.0 * eps))
}

/// Whether the finite difference at `pos` is well posed: the central
/// differences at `eps` and `eps / 2` agree to [`SMOOTH_TOL`]. Independent
/// of the analytic gradient.
pub fn smooth_at(inputs: &[Tensor<f64>], pos: (usize, usize), eps: f64, f: impl Objective) -> Result<bool> {
    let shared: Vec<Arc<Tensor<f64>>> = inputs.iter().cloned().map(Arc::new).collect();
    let wide = central(&f, &shared, pos, eps)?;
    let narrow = central(&f, &shared, pos, eps / 2.0)?;
    Ok((wide - narrow).abs() <= SMOOTH_TOL * wide.abs().max(narrow.abs()).max(REL_FLOOR))
}

/// Checks `count` weights of `net`, drawn uniformly over all parameter
/// elements, against the PCM loss of `problem`. Draws where the objective is
/// not smooth within `±ε` are skipped and counted.
pub fn model_weights(net: &Network<f64>, problem: &Problem<f64>, count: usize, seed: u64) -> Result<ModelCheck> {
    let inputs = net.params().tensors();
    let total: usize = inputs.iter().map(Tensor::len).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = objective(|tape, vars| {
        let p = Bound::from_vars(vars.to_vec());
        let est = net.forward(&p, &tape.constant(problem.input.clone()))?;
        let target = tape.constant(problem.target.clone());
        let mixture = tape.constant(problem.mixture_ref.clone());
        Ok(pcm_loss(&target, &est, &mixture, problem.mode)?.total)
    });
    let mut positions = Vec::with_capacity(count);
    let mut rejected = 0;
    while positions.len() < count {
        if rejected > 20 * count.max(1) {
            return Err(Error::InvalidArgument(format!(
                "{rejected} sampled weights sit at non-smooth points; objective unsuitable for finite differences"
            )));
        }
        let mut flat = rng.gen_range(0..total);
        let mut i = 0;
        while flat >= inputs[i].len() {
            flat -= inputs[i].len();
            i += 1;
        }
        if smooth_at(&inputs, (i, flat), DEFAULT_EPS, f)? {
            positions.push((i, flat));
        } else {
            rejected += 1;
        }
    }
    Ok(ModelCheck {
        report: check_at(&inputs, &positions, DEFAULT_EPS, f)?,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let a = Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap();
        let b = Tensor::from_f64(&[3], &[1.5, 0.7, -0.4]).unwrap();
        let r = check_all(&[a, b], DEFAULT_EPS, |_, v| Ok(v[0].mul(&v[1])?.gelu().sum())).unwrap();
        assert!(r.passes(1e-6), "{:?}", r.worst());
    }

    #[test]
    fn every_kernel_case_passes() {
        for c in kernel_cases(7) {
            let r = c.check().unwrap();
            assert!(r.passes(1e-6), "{}: {:?}", c.name, r.worst());
        }
    }
}
