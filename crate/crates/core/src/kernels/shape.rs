//! Pure data-movement kernels: unfold, channel shuffle, permute, concat, slice.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

fn batched3(op: &'static str, x: &Tensor<impl Scalar>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, l] => Ok((b, c, l)),
        _ => shape_err(op, format!("expected [B, C, L], got {:?}", x.shape())),
    }
}

/// Stacks `g` shifted copies of each channel: `[B, D, L] -> [B, D·g, L-g+1]`.
///
/// Output channel `c·g + s` holds channel `c` shifted left by `s`.
pub fn unfold1d<S: Scalar>(x: &Tensor<S>, g: usize) -> Result<Tensor<S>> {
    let (b, d, l) = batched3("unfold1d", x)?;
    if g == 0 || l < g {
        return shape_err("unfold1d", format!("sequence length {l} shorter than kernel {g}"));
    }
    let lo = l - g + 1;
    let mut out = Vec::with_capacity(b * d * g * lo);
    let xs = x.data();
    for bi in 0..b {
        for c in 0..d {
            let row = &xs[(bi * d + c) * l..][..l];
            for s in 0..g {
                out.extend_from_slice(&row[s..s + lo]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, d * g, lo], out))
}

pub fn unfold1d_backward<S: Scalar>(dy: &Tensor<S>, g: usize, l: usize) -> Tensor<S> {
    let [b, dg, lo] = *dy.shape() else { unreachable!("unfold output is rank 3") };
    let d = dg / g;
    let mut dx = vec![S::zero(); b * d * l];
    let ys = dy.data();
    for bi in 0..b {
        for c in 0..d {
            let row = &mut dx[(bi * d + c) * l..][..l];
            for s in 0..g {
                let src = &ys[(bi * dg + c * g + s) * lo..][..lo];
                for (r, &v) in row[s..s + lo].iter_mut().zip(src) {
                    *r = *r + v;
                }
            }
        }
    }
    Tensor::from_parts(vec![b, d, l], dx)
}

/// Source channel feeding output channel `j` of [`channel_shuffle`].
///
/// With `C = g·D` channels laid out as the unfold produces them
/// (`c·g + s`), output slab `s` (channels `s·D .. (s+1)·D`) gathers shift `s`
/// of every original channel.
pub fn shuffle_source(j: usize, g: usize, d: usize) -> usize {
    (j % d) * g + j / d
}

fn permute_channels<S: Scalar>(x: &Tensor<S>, g: usize, inverse: bool) -> Result<Tensor<S>> {
    let (b, c, l) = batched3("channel_shuffle", x)?;
    if g == 0 || c % g != 0 {
        return shape_err("channel_shuffle", format!("{c} channels not divisible by {g} groups"));
    }
    let d = c / g;
    let xs = x.data();
    let mut out = vec![S::zero(); xs.len()];
    for bi in 0..b {
        for j in 0..c {
            let src = shuffle_source(j, g, d);
            let (from, to) = if inverse { (j, src) } else { (src, j) };
            out[(bi * c + to) * l..][..l].copy_from_slice(&xs[(bi * c + from) * l..][..l]);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Regroups the `[B, g·D, L]` unfold output into `g` contiguous shift slabs.
pub fn channel_shuffle<S: Scalar>(x: &Tensor<S>, g: usize) -> Result<Tensor<S>> {
    permute_channels(x, g, false)
}

pub fn channel_unshuffle<S: Scalar>(x: &Tensor<S>, g: usize) -> Result<Tensor<S>> {
    permute_channels(x, g, true)
}

/// General axis permutation: output axis `i` is input axis `axes[i]`.
pub fn permute<S: Scalar>(x: &Tensor<S>, axes: &[usize]) -> Result<Tensor<S>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return shape_err("permute", format!("{axes:?} is not a permutation of rank {rank}"));
    }
    let in_shape = x.shape();
    let mut in_strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.len();
    let xs = x.data();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], strides[last]);
    let mut base = 0usize;
    while out.len() < n {
        for k in 0..inner_len {
            out.push(xs[base + k * inner_stride]);
        }
        // advance the multi-index over all but the last axis
        let mut ax = last;
        loop {
            if ax == 0 {
                break;
            }
            ax -= 1;
            idx[ax] += 1;
            base += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

pub fn concat<S: Scalar>(xs: &[&Tensor<S>], axis: usize) -> Result<Tensor<S>> {
    let Some(first) = xs.first() else {
        return shape_err("concat", "no inputs");
    };
    if axis >= first.rank() {
        return shape_err("concat", format!("axis {axis} out of range"));
    }
    for x in xs {
        let ok = x.rank() == first.rank()
            && x.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return shape_err("concat", format!("{:?} vs {:?} along axis {axis}", x.shape(), first.shape()));
        }
    }
    let (outer, _, inner) = first.split_at_axis(axis);
    let total: usize = xs.iter().map(|x| x.dim(axis)).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for x in xs {
            let chunk = x.dim(axis) * inner;
            out.extend_from_slice(&x.data()[o * chunk..][..chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Ok(Tensor::from_parts(shape, out))
}

/// `len` entries of `axis` starting at `start`.
pub fn slice<S: Scalar>(x: &Tensor<S>, axis: usize, start: usize, len: usize) -> Result<Tensor<S>> {
    if axis >= x.rank() || len == 0 || start + len > x.dim(axis) {
        return shape_err("slice", format!("[{start}, {}) of axis {axis} in {:?}", start + len, x.shape()));
    }
    let (outer, n, inner) = x.split_at_axis(axis);
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        out.extend_from_slice(&x.data()[(o * n + start) * inner..][..len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Ok(Tensor::from_parts(shape, out))
}

/// Adjoint of [`slice`]: embeds `dy` into zeros of `full_shape`.
pub fn slice_backward<S: Scalar>(dy: &Tensor<S>, full_shape: &[usize], axis: usize, start: usize) -> Tensor<S> {
    let mut out = Tensor::zeros(full_shape);
    let (outer, n, inner) = out.split_at_axis(axis);
    let len = dy.dim(axis);
    let buf = out.data_mut();
    for o in 0..outer {
        buf[(o * n + start) * inner..][..len * inner].copy_from_slice(&dy.data()[o * len * inner..][..len * inner]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfold_enumerates_shifts() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 5], &[1., 2., 3., 4., 5.]).unwrap();
        let y = unfold1d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4]);
        assert_eq!(y.data(), &[1., 2., 3., 4., 2., 3., 4., 5.]);
        assert_eq!(unfold1d(&x, 1).unwrap(), x);
        assert!(unfold1d(&x, 6).is_err());
        let big = Tensor::<f32>::zeros(&[1, 64, 257]);
        assert_eq!(unfold1d(&big, 4).unwrap().shape(), &[1, 256, 254]);
    }

    #[test]
    fn shuffle_groups_shift_copies() {
        // channels as produced by unfold with D=2, G=2: [a0, b0, a1, b1]
        let x = Tensor::<f64>::from_f64(&[1, 4, 1], &[0., 10., 1., 11.]).unwrap();
        let y = channel_shuffle(&x, 2).unwrap();
        assert_eq!(y.data(), &[0., 1., 10., 11.]);
        assert_eq!(channel_unshuffle(&y, 2).unwrap(), x);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
        assert!(channel_shuffle(&x, 3).is_err());
    }

    #[test]
    fn shuffle_after_unfold_gives_shift_slabs() {
        // D=3 channels, G=2: slab s must equal the input shifted by s
        let (d, g, l) = (3, 2, 6);
        let x = Tensor::<f64>::from_fn(&[1, d, l], |i| i as f64);
        let y = channel_shuffle(&unfold1d(&x, g).unwrap(), g).unwrap();
        for s in 0..g {
            for c in 0..d {
                for t in 0..l - g + 1 {
                    assert_eq!(y.data()[(s * d + c) * (l - g + 1) + t], x.data()[c * l + t + s]);
                }
            }
        }
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let axes = [2, 0, 1];
        let y = permute(&x, &axes).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        // y[f, d, t] == x[d, t, f]
        assert_eq!(y.data()[(2 + 1) * 3 + 2], x.data()[(3 + 2) * 4 + 1]);
        assert_eq!(permute(&y, &inverse_axes(&axes)).unwrap(), x);
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_and_slice_are_adjoint() {
        let a = Tensor::<f64>::from_fn(&[2, 1, 3], |i| i as f64);
        let b = Tensor::<f64>::from_fn(&[2, 2, 3], |i| 100.0 + i as f64);
        let c = concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert_eq!(slice(&c, 1, 0, 1).unwrap(), a);
        assert_eq!(slice(&c, 1, 1, 2).unwrap(), b);
        let back = slice_backward(&b, &[2, 3, 3], 1, 1);
        assert_eq!(slice(&back, 1, 1, 2).unwrap(), b);
        assert!(slice(&back, 1, 0, 1).unwrap().data().iter().all(|&v| v == 0.0));
    }
}
