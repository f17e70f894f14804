//! Activations, normalization, softmax and batched matrix products.

use crate::error::{shape_err, Result};
use crate::mac;
use crate::tensor::{Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

pub fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

fn erf<S: Scalar>(v: S) -> S {
    S::of(libm::erf(v.f64()))
}

/// Exact (erf-based) GELU.
pub fn gelu<S: Scalar>(v: S) -> S {
    S::of(0.5) * v * (S::one() + erf(v * S::of(std::f64::consts::FRAC_1_SQRT_2)))
}

pub fn gelu_grad<S: Scalar>(v: S) -> S {
    let cdf = S::of(0.5) * (S::one() + erf(v * S::of(std::f64::consts::FRAC_1_SQRT_2)));
    let pdf = (-(v * v) * S::of(0.5)).exp() * S::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + v * pdf
}

pub fn prelu<S: Scalar>(v: S, slope: S) -> S {
    if v > S::zero() {
        v
    } else {
        slope * v
    }
}

/// Gated linear unit along `axis`: first half times sigmoid of the second half.
pub fn glu<S: Scalar>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    if axis >= x.rank() || !x.dim(axis).is_multiple_of(2) {
        return shape_err("glu", format!("axis {axis} of {:?} must have even length", x.shape()));
    }
    let (outer, n, inner) = x.split_at_axis(axis);
    let half = n / 2 * inner;
    let mut out = Vec::with_capacity(outer * half);
    for o in 0..outer {
        let block = &x.data()[o * n * inner..][..n * inner];
        let (a, b) = block.split_at(half);
        out.extend(a.iter().zip(b).map(|(&a, &b)| a * sigmoid(b)));
    }
    let mut shape = x.shape().to_vec();
    shape[axis] /= 2;
    Ok(Tensor::from_parts(shape, out))
}

pub fn glu_backward<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>, axis: usize) -> Tensor<S> {
    let (outer, n, inner) = x.split_at_axis(axis);
    let half = n / 2 * inner;
    let mut dx = vec![S::zero(); x.len()];
    for o in 0..outer {
        let block = &x.data()[o * n * inner..][..n * inner];
        let g = &dy.data()[o * half..][..half];
        let dblock = &mut dx[o * n * inner..][..n * inner];
        for k in 0..half {
            let (a, b) = (block[k], block[half + k]);
            let s = sigmoid(b);
            dblock[k] = g[k] * s;
            dblock[half + k] = g[k] * a * s * (S::one() - s);
        }
    }
    Tensor::from_parts(x.shape().to_vec(), dx)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<S: Scalar>(x: &Tensor<S>, axis: usize) -> Result<Tensor<S>> {
    if axis >= x.rank() {
        return shape_err("softmax", format!("axis {axis} out of range for {:?}", x.shape()));
    }
    let (outer, n, inner) = x.split_at_axis(axis);
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let mut m = S::neg_infinity();
            for k in 0..n {
                m = m.max(out[at(k)]);
            }
            let mut z = S::zero();
            for k in 0..n {
                let e = (out[at(k)] - m).exp();
                out[at(k)] = e;
                z = z + e;
            }
            for k in 0..n {
                out[at(k)] = out[at(k)] / z;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn softmax_backward<S: Scalar>(y: &Tensor<S>, dy: &Tensor<S>, axis: usize) -> Tensor<S> {
    let (outer, n, inner) = y.split_at_axis(axis);
    let mut dx = vec![S::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let dot: S = (0..n).map(|k| y.data()[at(k)] * dy.data()[at(k)]).sum();
            for k in 0..n {
                dx[at(k)] = y.data()[at(k)] * (dy.data()[at(k)] - dot);
            }
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

/// Cached statistics from the forward pass of [`layer_norm`].
pub struct LnCache<S> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
    span: usize,
}

/// `(outer, affine, block, inner)` for statistics over `span` axes from `axis`.
fn ln_layout(shape: &[usize], axis: usize, span: usize) -> (usize, usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let block = shape[axis + 1..axis + span].iter().product();
    let inner = shape[axis + span..].iter().product();
    (outer, shape[axis], block, inner)
}

/// Normalizes every slice along `axis` to zero mean and unit (biased)
/// variance, then applies a per-entry affine `gamma·x̂ + beta`.
pub fn layer_norm<S: Scalar>(
    x: &Tensor<S>,
    axis: usize,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> Result<(Tensor<S>, LnCache<S>)> {
    layer_norm_span(x, axis, 1, gamma, beta)
}

/// Like [`layer_norm`], but the statistics cover the `span` consecutive axes
/// starting at `axis`; the affine is still indexed by `axis` alone.
pub fn layer_norm_span<S: Scalar>(
    x: &Tensor<S>,
    axis: usize,
    span: usize,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> Result<(Tensor<S>, LnCache<S>)> {
    if span == 0 || axis + span > x.rank() {
        return shape_err(
            "layer_norm",
            format!("axes {axis}..{} out of range for {:?}", axis + span, x.shape()),
        );
    }
    let (outer, a, block, inner) = ln_layout(x.shape(), axis, span);
    if gamma.len() != a || beta.len() != a {
        return shape_err("layer_norm", format!("affine params must have {a} entries"));
    }
    let n = a * block;
    let eps = S::of(LN_EPS);
    let nn = S::of(n as f64);
    let mut xhat = vec![S::zero(); x.len()];
    let mut y = vec![S::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(outer * inner);
    let (xs, gs, bs) = (x.data(), gamma.data(), beta.data());
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let mean = (0..n).map(|k| xs[at(k)]).sum::<S>() / nn;
            let var = (0..n).map(|k| (xs[at(k)] - mean).powi(2)).sum::<S>() / nn;
            let r = S::one() / (var + eps).sqrt();
            inv_std.push(r);
            for k in 0..n {
                let h = (xs[at(k)] - mean) * r;
                xhat[at(k)] = h;
                y[at(k)] = gs[k / block] * h + bs[k / block];
            }
        }
    }
    let shape = x.shape().to_vec();
    let y = Tensor::from_parts(shape.clone(), y);
    y.check_finite("layer_norm")?;
    Ok((
        y,
        LnCache {
            xhat: Tensor::from_parts(shape, xhat),
            inv_std,
            span,
        },
    ))
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_backward<S: Scalar>(
    cache: &LnCache<S>,
    gamma: &Tensor<S>,
    dy: &Tensor<S>,
    axis: usize,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (outer, a, block, inner) = ln_layout(cache.xhat.shape(), axis, cache.span);
    let n = a * block;
    let nn = S::of(n as f64);
    let (xh, gs, g) = (cache.xhat.data(), gamma.data(), dy.data());
    let mut dx = vec![S::zero(); xh.len()];
    let mut dgamma = vec![S::zero(); a];
    let mut dbeta = vec![S::zero(); a];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let r = cache.inv_std[o * inner + i];
            let mut sum_d = S::zero();
            let mut sum_dx = S::zero();
            for k in 0..n {
                let d = g[at(k)] * gs[k / block];
                sum_d = sum_d + d;
                sum_dx = sum_dx + d * xh[at(k)];
                dgamma[k / block] = dgamma[k / block] + g[at(k)] * xh[at(k)];
                dbeta[k / block] = dbeta[k / block] + g[at(k)];
            }
            for k in 0..n {
                let d = g[at(k)] * gs[k / block];
                dx[at(k)] = r / nn * (nn * d - sum_d - xh[at(k)] * sum_dx);
            }
        }
    }
    (
        Tensor::from_parts(cache.xhat.shape().to_vec(), dx),
        Tensor::from_parts(vec![a], dgamma),
        Tensor::from_parts(vec![a], dbeta),
    )
}

/// Batched matrix product `[B, m, k] × [B, k, n] -> [B, m, n]`.
pub fn bmm<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let ([ba, m, k], [bb, kb, n]) = (a.shape(), b.shape()) else {
        return shape_err("bmm", format!("{:?} × {:?}: both must be rank 3", a.shape(), b.shape()));
    };
    let (bsz, m, k, n) = (*ba, *m, *k, *n);
    if bsz != *bb || k != *kb {
        return shape_err("bmm", format!("{:?} × {:?}", a.shape(), b.shape()));
    }
    mac::record((bsz * m * k * n) as u64);
    let mut out = vec![S::zero(); bsz * m * n];
    if !mac::is_dry_run() {
        let (ad, bd) = (a.data(), b.data());
        for bi in 0..bsz {
            for i in 0..m {
                let row = &mut out[(bi * m + i) * n..][..n];
                for p in 0..k {
                    let av = ad[(bi * m + i) * k + p];
                    let brow = &bd[(bi * k + p) * n..][..n];
                    for (r, &bv) in row.iter_mut().zip(brow) {
                        *r = *r + av * bv;
                    }
                }
            }
        }
    }
    let out = Tensor::from_parts(vec![bsz, m, n], out);
    out.check_finite("bmm")?;
    Ok(out)
}

/// Swaps the last two axes of a rank-3 tensor.
pub fn transpose12<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.rank() != 3 {
        return shape_err("transpose", format!("expected rank 3, got {:?}", x.shape()));
    }
    super::shape::permute(x, &[0, 2, 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::MacCounter;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::<f64>::zeros(&[2]);
        assert_eq!(softmax(&x, 0).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rows_normalize() {
        let x = Tensor::<f64>::from_fn(&[3, 5, 2], |i| (i as f64 * 0.73).sin() * 30.0);
        for axis in 0..3 {
            let y = softmax(&x, axis).unwrap();
            let (outer, n, inner) = y.split_at_axis(axis);
            for o in 0..outer {
                for i in 0..inner {
                    let s: f64 = (0..n).map(|k| y.data()[(o * n + k) * inner + i]).sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn glu_with_zero_gate_halves() {
        let x = Tensor::<f64>::from_f64(&[4, 1], &[3.0, -2.0, 0.0, 0.0]).unwrap();
        let y = glu(&x, 0).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(y.data(), &[1.5, -1.0]);
        assert!(glu(&Tensor::<f64>::zeros(&[3]), 0).is_err());
    }

    #[test]
    fn layer_norm_of_constant_is_zero() {
        let x = Tensor::<f64>::full(&[4, 3], 2.5);
        let ones = Tensor::full(&[4], 1.0);
        let zeros = Tensor::zeros(&[4]);
        let (y, _) = layer_norm(&x, 0, &ones, &zeros).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_standardizes() {
        let x = Tensor::<f64>::from_fn(&[6, 2], |i| (i * i) as f64);
        let (y, _) = layer_norm(&x, 0, &Tensor::full(&[6], 1.0), &Tensor::zeros(&[6])).unwrap();
        for i in 0..2 {
            let col: Vec<f64> = (0..6).map(|k| y.data()[k * 2 + i]).collect();
            let mean = col.iter().sum::<f64>() / 6.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn activations_monotone() {
        let xs: Vec<f64> = (-50..50).map(|i| i as f64 * 0.1).collect();
        for w in xs.windows(2) {
            assert!(sigmoid(w[1]) > sigmoid(w[0]));
            assert!(prelu(w[1], 0.25) > prelu(w[0], 0.25));
        }
        assert!((gelu(0.0f64)).abs() < 1e-15);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn bmm_counts_and_multiplies() {
        let a = Tensor::<f64>::from_f64(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[1, 3, 1], &[1., 0., -1.]).unwrap();
        let c = MacCounter::new();
        let y = c.measure(|| bmm(&a, &b).unwrap());
        assert_eq!(y.data(), &[-2., -2.]);
        assert_eq!(c.total(), 6);
    }
}
