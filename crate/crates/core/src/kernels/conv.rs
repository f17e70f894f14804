//! Direct (non-im2col) convolution kernels.
//!
//! conv1d and conv2d share one batched 2D core; a 1D convolution is a 2D
//! convolution with unit height. Weights use the usual layouts:
//! `[C_out, C_in/groups, kh, kw]` for correlation and `[C_in, C_out, kh, kw]`
//! for transposed convolution.
//!
//! MAC counts follow the closed forms `C_in/groups · C_out · taps · positions`
//! where positions are output positions for correlation and input positions
//! for transposed convolution. Padded taps are counted, bias adds are not.

use crate::error::{shape_err, Result};
use crate::mac;
use crate::tensor::{Scalar, Tensor};

/// Convolution hyper-parameters along the sequence axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Conv1dSpec {
    /// Zero "same" padding for an odd kernel.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            padding: dilation * (kernel - 1) / 2,
            dilation,
            groups: 1,
        }
    }

    pub fn valid() -> Self {
        Self {
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Self::valid()
    }
}

#[derive(Clone, Copy, Debug)]
struct Geom {
    batch: usize,
    cin: usize,
    cout: usize,
    groups: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    dh: usize,
    dw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl Geom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
}

fn conv_out_len(op: &'static str, n: usize, k: usize, d: usize, p: usize) -> Result<usize> {
    let span = d * (k - 1) + 1;
    if n + 2 * p < span {
        return shape_err(op, format!("length {n} (+2·{p} pad) shorter than kernel span {span}"));
    }
    Ok(n + 2 * p - span + 1)
}

/// Signed offset helper: valid output index range `[lo, hi)` such that
/// `idx + off` stays within `[0, n)`.
#[inline]
fn valid_range(out_len: usize, n: usize, off: isize) -> (usize, usize) {
    let lo = if off < 0 { (-off) as usize } else { 0 };
    let hi_i = n as isize - off;
    let hi = if hi_i <= 0 { 0 } else { (hi_i as usize).min(out_len) };
    (lo.min(hi), hi)
}

fn corr_forward<S: Scalar>(x: &[S], w: &[S], bias: Option<&[S]>, g: &Geom) -> Vec<S> {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut out = vec![S::zero(); g.batch * g.cout * plane_out];
    if mac::is_dry_run() {
        return out;
    }
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    for b in 0..g.batch {
        for o in 0..g.cout {
            let grp = o / cout_g;
            let dst = &mut out[(b * g.cout + o) * plane_out..][..plane_out];
            if let Some(bias) = bias {
                dst.fill(bias[o]);
            }
            for ii in 0..cin_g {
                let i = grp * cin_g + ii;
                let src = &x[(b * g.cin + i) * plane_in..][..plane_in];
                for a in 0..g.kh {
                    let offy = (a * g.dh) as isize - g.ph as isize;
                    let (ylo, yhi) = valid_range(g.oh, g.h, offy);
                    for c in 0..g.kw {
                        let wv = w[((o * cin_g + ii) * g.kh + a) * g.kw + c];
                        let offx = (c * g.dw) as isize - g.pw as isize;
                        let (xlo, xhi) = valid_range(g.ow, g.w, offx);
                        if xlo == xhi {
                            continue;
                        }
                        for y in ylo..yhi {
                            let sy = (y as isize + offy) as usize;
                            let srow = &src[sy * g.w..][..g.w];
                            let drow = &mut dst[y * g.ow..][..g.ow];
                            let s0 = (xlo as isize + offx) as usize;
                            for (d, &s) in drow[xlo..xhi].iter_mut().zip(&srow[s0..]) {
                                *d = *d + wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn corr_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    g: &Geom,
    want_bias: bool,
) -> (Vec<S>, Vec<S>, Option<Vec<S>>) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut dx = vec![S::zero(); x.len()];
    let mut dw = vec![S::zero(); w.len()];
    for b in 0..g.batch {
        for o in 0..g.cout {
            let grp = o / cout_g;
            let gy = &dy[(b * g.cout + o) * plane_out..][..plane_out];
            for ii in 0..cin_g {
                let i = grp * cin_g + ii;
                let src = &x[(b * g.cin + i) * plane_in..][..plane_in];
                let dsrc = &mut dx[(b * g.cin + i) * plane_in..][..plane_in];
                for a in 0..g.kh {
                    let offy = (a * g.dh) as isize - g.ph as isize;
                    let (ylo, yhi) = valid_range(g.oh, g.h, offy);
                    for c in 0..g.kw {
                        let widx = ((o * cin_g + ii) * g.kh + a) * g.kw + c;
                        let wv = w[widx];
                        let offx = (c * g.dw) as isize - g.pw as isize;
                        let (xlo, xhi) = valid_range(g.ow, g.w, offx);
                        if xlo == xhi {
                            continue;
                        }
                        let mut acc = S::zero();
                        for y in ylo..yhi {
                            let sy = (y as isize + offy) as usize;
                            let s0 = sy * g.w + (xlo as isize + offx) as usize;
                            let grow = &gy[y * g.ow + xlo..y * g.ow + xhi];
                            let srow = &src[s0..s0 + (xhi - xlo)];
                            for (&gv, &sv) in grow.iter().zip(srow) {
                                acc = acc + gv * sv;
                            }
                            let drow = &mut dsrc[s0..s0 + (xhi - xlo)];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d = *d + wv * gv;
                            }
                        }
                        dw[widx] = dw[widx] + acc;
                    }
                }
            }
        }
    }
    let db = want_bias.then(|| bias_grad(dy, g.batch, g.cout, plane_out));
    (dx, dw, db)
}

fn bias_grad<S: Scalar>(dy: &[S], batch: usize, c: usize, plane: usize) -> Vec<S> {
    let mut db = vec![S::zero(); c];
    for b in 0..batch {
        for (o, acc) in db.iter_mut().enumerate() {
            let s: S = dy[(b * c + o) * plane..][..plane].iter().copied().sum();
            *acc = *acc + s;
        }
    }
    db
}

fn tconv_forward<S: Scalar>(x: &[S], w: &[S], bias: Option<&[S]>, g: &Geom) -> Vec<S> {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut out = vec![S::zero(); g.batch * g.cout * plane_out];
    if mac::is_dry_run() {
        return out;
    }
    for b in 0..g.batch {
        if let Some(bias) = bias {
            for o in 0..g.cout {
                out[(b * g.cout + o) * plane_out..][..plane_out].fill(bias[o]);
            }
        }
        for i in 0..g.cin {
            let src = &x[(b * g.cin + i) * plane_in..][..plane_in];
            for o in 0..g.cout {
                let dst = &mut out[(b * g.cout + o) * plane_out..][..plane_out];
                for a in 0..g.kh {
                    // output row = input row + a - ph
                    let offy = a as isize - g.ph as isize;
                    for c in 0..g.kw {
                        let wv = w[((i * g.cout + o) * g.kh + a) * g.kw + c];
                        let offx = c as isize - g.pw as isize;
                        for y in 0..g.h {
                            let oy = y as isize + offy;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            let srow = &src[y * g.w..][..g.w];
                            let drow = &mut dst[oy as usize * g.ow..][..g.ow];
                            // x range with 0 <= x + offx < ow
                            let (xlo, xhi) = valid_range(g.w, g.ow, offx);
                            if xlo == xhi {
                                continue;
                            }
                            let d0 = (xlo as isize + offx) as usize;
                            for (d, &s) in drow[d0..].iter_mut().zip(&srow[xlo..xhi]) {
                                *d = *d + wv * s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn tconv_backward<S: Scalar>(
    x: &[S],
    w: &[S],
    dy: &[S],
    g: &Geom,
    want_bias: bool,
) -> (Vec<S>, Vec<S>, Option<Vec<S>>) {
    let plane_in = g.h * g.w;
    let plane_out = g.oh * g.ow;
    let mut dx = vec![S::zero(); x.len()];
    let mut dw = vec![S::zero(); w.len()];
    for b in 0..g.batch {
        for i in 0..g.cin {
            let src = &x[(b * g.cin + i) * plane_in..][..plane_in];
            let dsrc = &mut dx[(b * g.cin + i) * plane_in..][..plane_in];
            for o in 0..g.cout {
                let gy = &dy[(b * g.cout + o) * plane_out..][..plane_out];
                for a in 0..g.kh {
                    let offy = a as isize - g.ph as isize;
                    for c in 0..g.kw {
                        let widx = ((i * g.cout + o) * g.kh + a) * g.kw + c;
                        let wv = w[widx];
                        let offx = c as isize - g.pw as isize;
                        let (xlo, xhi) = valid_range(g.w, g.ow, offx);
                        if xlo == xhi {
                            continue;
                        }
                        let mut acc = S::zero();
                        for y in 0..g.h {
                            let oy = y as isize + offy;
                            if oy < 0 || oy >= g.oh as isize {
                                continue;
                            }
                            let d0 = oy as usize * g.ow + (xlo as isize + offx) as usize;
                            let grow = &gy[d0..d0 + (xhi - xlo)];
                            let s0 = y * g.w + xlo;
                            let srow = &src[s0..s0 + (xhi - xlo)];
                            for (&gv, &sv) in grow.iter().zip(srow) {
                                acc = acc + gv * sv;
                            }
                            let drow = &mut dsrc[s0..s0 + (xhi - xlo)];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d = *d + wv * gv;
                            }
                        }
                        dw[widx] = dw[widx] + acc;
                    }
                }
            }
        }
    }
    let db = want_bias.then(|| bias_grad(dy, g.batch, g.cout, plane_out));
    (dx, dw, db)
}

/// Splits a `[B, C, L]` or `[C, L]` input into (batch, channels, length, had_batch).
fn seq_dims(op: &'static str, x: &Tensor<impl Scalar>) -> Result<(usize, usize, usize, bool)> {
    match *x.shape() {
        [c, l] => Ok((1, c, l, false)),
        [b, c, l] => Ok((b, c, l, true)),
        _ => shape_err(op, format!("expected [B, C, L] or [C, L], got {:?}", x.shape())),
    }
}

fn seq_shape(batched: bool, b: usize, c: usize, l: usize) -> Vec<usize> {
    if batched {
        vec![b, c, l]
    } else {
        vec![c, l]
    }
}

fn check_bias<S: Scalar>(op: &'static str, bias: Option<&Tensor<S>>, cout: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != cout => shape_err(op, format!("bias has {} elements, need {cout}", b.len())),
        _ => Ok(()),
    }
}

fn conv1d_geom<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, spec: Conv1dSpec) -> Result<(Geom, bool)> {
    const OP: &str = "conv1d";
    let (batch, cin, l, batched) = seq_dims(OP, x)?;
    let [cout, cin_g, k] = *w.shape() else {
        return shape_err(OP, format!("weight must be [C_out, C_in/g, k], got {:?}", w.shape()));
    };
    let groups = spec.groups.max(1);
    if spec.dilation == 0 {
        return shape_err(OP, "dilation must be >= 1");
    }
    if cin != cin_g * groups || cout % groups != 0 {
        return shape_err(
            OP,
            format!("input has {cin} channels; weight {:?} with {groups} groups", w.shape()),
        );
    }
    let ow = conv_out_len(OP, l, k, spec.dilation, spec.padding)?;
    Ok((
        Geom {
            batch,
            cin,
            cout,
            groups,
            h: 1,
            w: l,
            kh: 1,
            kw: k,
            dh: 1,
            dw: spec.dilation,
            ph: 0,
            pw: spec.padding,
            oh: 1,
            ow,
        },
        batched,
    ))
}

/// 1D correlation over `[B, C_in, L]` (or unbatched `[C_in, L]`).
pub fn conv1d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    spec: Conv1dSpec,
) -> Result<Tensor<S>> {
    let (g, batched) = conv1d_geom(x, w, spec)?;
    check_bias("conv1d", bias, g.cout)?;
    mac::record((g.batch * g.cout * g.cin_g() * g.kw * g.ow) as u64);
    let out = corr_forward(x.data(), w.data(), bias.map(|b| b.data()), &g);
    let out = Tensor::from_parts(seq_shape(batched, g.batch, g.cout, g.ow), out);
    out.check_finite("conv1d")?;
    Ok(out)
}

pub type ConvGrads<S> = (Tensor<S>, Tensor<S>, Option<Tensor<S>>);

pub fn conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    spec: Conv1dSpec,
    want_bias: bool,
) -> Result<ConvGrads<S>> {
    let (g, _) = conv1d_geom(x, w, spec)?;
    let (dx, dw, db) = corr_backward(x.data(), w.data(), dy.data(), &g, want_bias);
    Ok(pack(x, w, dx, dw, db))
}

fn conv2d_geom<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, padding: usize, groups: usize) -> Result<Geom> {
    const OP: &str = "conv2d";
    let [cin, h, wid] = *x.shape() else {
        return shape_err(OP, format!("expected [C, T, F], got {:?}", x.shape()));
    };
    let [cout, cin_g, kh, kw] = *w.shape() else {
        return shape_err(OP, format!("weight must be [C_out, C_in/g, k, k], got {:?}", w.shape()));
    };
    let groups = groups.max(1);
    if cin != cin_g * groups || cout % groups != 0 {
        return shape_err(OP, format!("input has {cin} channels; weight {:?}", w.shape()));
    }
    Ok(Geom {
        batch: 1,
        cin,
        cout,
        groups,
        h,
        w: wid,
        kh,
        kw,
        dh: 1,
        dw: 1,
        ph: padding,
        pw: padding,
        oh: conv_out_len(OP, h, kh, 1, padding)?,
        ow: conv_out_len(OP, wid, kw, 1, padding)?,
    })
}

/// 2D correlation over `[C_in, T, F]` with symmetric zero padding.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    padding: usize,
    groups: usize,
) -> Result<Tensor<S>> {
    let g = conv2d_geom(x, w, padding, groups)?;
    check_bias("conv2d", bias, g.cout)?;
    mac::record((g.cout * g.cin_g() * g.kh * g.kw * g.oh * g.ow) as u64);
    let out = corr_forward(x.data(), w.data(), bias.map(|b| b.data()), &g);
    let out = Tensor::from_parts(vec![g.cout, g.oh, g.ow], out);
    out.check_finite("conv2d")?;
    Ok(out)
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    padding: usize,
    groups: usize,
    want_bias: bool,
) -> Result<ConvGrads<S>> {
    let g = conv2d_geom(x, w, padding, groups)?;
    let (dx, dw, db) = corr_backward(x.data(), w.data(), dy.data(), &g, want_bias);
    Ok(pack(x, w, dx, dw, db))
}

fn tconv1d_geom<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, padding: usize) -> Result<(Geom, bool)> {
    const OP: &str = "transposed_conv1d";
    let (batch, cin, l, batched) = seq_dims(OP, x)?;
    let [wcin, cout, k] = *w.shape() else {
        return shape_err(OP, format!("weight must be [C_in, C_out, k], got {:?}", w.shape()));
    };
    if wcin != cin {
        return shape_err(OP, format!("input has {cin} channels, weight expects {wcin}"));
    }
    if l + k - 1 <= 2 * padding {
        return shape_err(OP, "padding consumes the whole output");
    }
    Ok((
        Geom {
            batch,
            cin,
            cout,
            groups: 1,
            h: 1,
            w: l,
            kh: 1,
            kw: k,
            dh: 1,
            dw: 1,
            ph: 0,
            pw: padding,
            oh: 1,
            ow: l + k - 1 - 2 * padding,
        },
        batched,
    ))
}

/// Stride-1 transposed 1D convolution: `[B, C_in, L] -> [B, C_out, L + k - 1 - 2p]`.
pub fn transposed_conv1d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    padding: usize,
) -> Result<Tensor<S>> {
    let (g, batched) = tconv1d_geom(x, w, padding)?;
    check_bias("transposed_conv1d", bias, g.cout)?;
    mac::record((g.batch * g.cin * g.cout * g.kw * g.w) as u64);
    let out = tconv_forward(x.data(), w.data(), bias.map(|b| b.data()), &g);
    let out = Tensor::from_parts(seq_shape(batched, g.batch, g.cout, g.ow), out);
    out.check_finite("transposed_conv1d")?;
    Ok(out)
}

pub fn transposed_conv1d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    padding: usize,
    want_bias: bool,
) -> Result<ConvGrads<S>> {
    let (g, _) = tconv1d_geom(x, w, padding)?;
    let (dx, dw, db) = tconv_backward(x.data(), w.data(), dy.data(), &g, want_bias);
    Ok(pack(x, w, dx, dw, db))
}

fn tconv2d_geom<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, padding: usize) -> Result<Geom> {
    const OP: &str = "transposed_conv2d";
    let [cin, h, wid] = *x.shape() else {
        return shape_err(OP, format!("expected [C, T, F], got {:?}", x.shape()));
    };
    let [wcin, cout, kh, kw] = *w.shape() else {
        return shape_err(OP, format!("weight must be [C_in, C_out, k, k], got {:?}", w.shape()));
    };
    if wcin != cin {
        return shape_err(OP, format!("input has {cin} channels, weight expects {wcin}"));
    }
    if h + kh - 1 <= 2 * padding || wid + kw - 1 <= 2 * padding {
        return shape_err(OP, "padding consumes the whole output");
    }
    Ok(Geom {
        batch: 1,
        cin,
        cout,
        groups: 1,
        h,
        w: wid,
        kh,
        kw,
        dh: 1,
        dw: 1,
        ph: padding,
        pw: padding,
        oh: h + kh - 1 - 2 * padding,
        ow: wid + kw - 1 - 2 * padding,
    })
}

/// Stride-1 transposed 2D convolution over `[C_in, T, F]`; with
/// `padding = (k - 1) / 2` the spatial size is preserved.
pub fn transposed_conv2d<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    bias: Option<&Tensor<S>>,
    padding: usize,
) -> Result<Tensor<S>> {
    let g = tconv2d_geom(x, w, padding)?;
    check_bias("transposed_conv2d", bias, g.cout)?;
    mac::record((g.cin * g.cout * g.kh * g.kw * g.h * g.w) as u64);
    let out = tconv_forward(x.data(), w.data(), bias.map(|b| b.data()), &g);
    let out = Tensor::from_parts(vec![g.cout, g.oh, g.ow], out);
    out.check_finite("transposed_conv2d")?;
    Ok(out)
}

pub fn transposed_conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
    padding: usize,
    want_bias: bool,
) -> Result<ConvGrads<S>> {
    let g = tconv2d_geom(x, w, padding)?;
    let (dx, dw, db) = tconv_backward(x.data(), w.data(), dy.data(), &g, want_bias);
    Ok(pack(x, w, dx, dw, db))
}

fn pack<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dx: Vec<S>,
    dw: Vec<S>,
    db: Option<Vec<S>>,
) -> ConvGrads<S> {
    let db = db.map(|d| {
        let n = d.len();
        Tensor::from_parts(vec![n], d)
    });
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        db,
    )
}
