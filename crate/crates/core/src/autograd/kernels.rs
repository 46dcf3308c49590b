//! Forward and backward kernels for the spatial ops. All maps are `H × W × C`.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
}

impl ConvSpec {
    /// Stride-1 convolution that preserves spatial size.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        ConvSpec {
            kernel,
            stride: 1,
            dilation,
            pad: dilation * (kernel - 1) / 2,
        }
    }

    /// Non-overlapping `factor × factor` patches (kernel = stride = factor).
    pub fn patch(factor: usize) -> Self {
        ConvSpec {
            kernel: factor,
            stride: factor,
            dilation: 1,
            pad: 0,
        }
    }

    pub fn pointwise() -> Self {
        ConvSpec::same(1, 1)
    }

    pub fn out_dim(&self, n: usize) -> usize {
        let span = self.dilation * (self.kernel - 1) + 1;
        (n + 2 * self.pad).saturating_sub(span) / self.stride + 1
    }

    #[inline]
    fn src(&self, o: usize, k: usize, n: usize) -> Option<usize> {
        let i = (o * self.stride + k * self.dilation) as isize - self.pad as isize;
        if i >= 0 && (i as usize) < n {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// Unfolds the receptive fields into rows: `[ho·wo, k·k·c]`, zero outside the image.
fn im2col<T: Scalar>(x: &Tensor<T>, spec: ConvSpec, ho: usize, wo: usize) -> Vec<T> {
    let (h, wd, ci) = x.hwc();
    let k = spec.kernel;
    let row = k * k * ci;
    let mut cols = vec![T::zero(); ho * wo * row];
    let xs = x.data();
    for oy in 0..ho {
        for ky in 0..k {
            let Some(iy) = spec.src(oy, ky, h) else { continue };
            for ox in 0..wo {
                let base = (oy * wo + ox) * row;
                for kx in 0..k {
                    let Some(ix) = spec.src(ox, kx, wd) else { continue };
                    let dst = base + (ky * k + kx) * ci;
                    cols[dst..dst + ci].copy_from_slice(&xs[(iy * wd + ix) * ci..(iy * wd + ix + 1) * ci]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], spec: ConvSpec, shape: &[usize], ho: usize, wo: usize) -> Tensor<T> {
    let (h, wd, ci) = (shape[0], shape[1], shape[2]);
    let k = spec.kernel;
    let row = k * k * ci;
    let mut dx = Tensor::zeros(shape);
    let d = dx.data_mut();
    for oy in 0..ho {
        for ky in 0..k {
            let Some(iy) = spec.src(oy, ky, h) else { continue };
            for ox in 0..wo {
                let base = (oy * wo + ox) * row;
                for kx in 0..k {
                    let Some(ix) = spec.src(ox, kx, wd) else { continue };
                    let src = &cols[base + (ky * k + kx) * ci..base + (ky * k + kx + 1) * ci];
                    for (o, &v) in d[(iy * wd + ix) * ci..(iy * wd + ix + 1) * ci].iter_mut().zip(src) {
                        *o += v;
                    }
                }
            }
        }
    }
    dx
}

fn is_identity_unfold(spec: ConvSpec) -> bool {
    spec.kernel == 1 && spec.stride == 1 && spec.pad == 0
}

/// Dense convolution; weights are `[k, k, c_in, c_out]`, bias `[c_out]`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, spec: ConvSpec) -> Tensor<T> {
    let (h, wd, ci) = x.hwc();
    let co = w.shape()[3];
    let (ho, wo) = (spec.out_dim(h), spec.out_dim(wd));
    let row = spec.kernel * spec.kernel * ci;
    let mut out = Tensor::zeros(&[ho, wo, co]);
    if let Some(b) = b {
        for px in out.data_mut().chunks_exact_mut(co) {
            px.copy_from_slice(b.data());
        }
    }
    let owned;
    let cols: &[T] = if is_identity_unfold(spec) {
        x.data()
    } else {
        owned = im2col(x, spec, ho, wo);
        &owned
    };
    T::gemm(ho * wo, row, co, cols, false, w.data(), false, out.data_mut(), true);
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: ConvSpec,
    dout: &Tensor<T>,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (ho, wo, co) = dout.hwc();
    let ci = x.hwc().2;
    let row = spec.kernel * spec.kernel * ci;
    let db = want.2.then(|| {
        let mut db = Tensor::zeros(&[co]);
        for px in dout.data().chunks_exact(co) {
            for (d, &g) in db.data_mut().iter_mut().zip(px) {
                *d += g;
            }
        }
        db
    });
    let identity = is_identity_unfold(spec);
    let dw = want.1.then(|| {
        let owned;
        let cols: &[T] = if identity {
            x.data()
        } else {
            owned = im2col(x, spec, ho, wo);
            &owned
        };
        let mut dw = Tensor::zeros(w.shape());
        T::gemm(row, ho * wo, co, cols, true, dout.data(), false, dw.data_mut(), false);
        dw
    });
    let dx = want.0.then(|| {
        let mut dcols = vec![T::zero(); ho * wo * row];
        T::gemm(ho * wo, co, row, dout.data(), false, w.data(), true, &mut dcols, false);
        if identity {
            Tensor::from_vec(x.shape(), dcols).expect("shape preserved")
        } else {
            col2im(&dcols, spec, x.shape(), ho, wo)
        }
    });
    ConvGrads { dx, dw, db }
}

/// Depthwise convolution; weights `[k, k, c]`, bias `[c]`.
pub fn depthwise<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, spec: ConvSpec) -> Tensor<T> {
    let (h, wd, c) = x.hwc();
    let (ho, wo) = (spec.out_dim(h), spec.out_dim(wd));
    let mut out = Tensor::zeros(&[ho, wo, c]);
    let xs = x.data();
    let ws = w.data();
    let od = out.data_mut();
    for oy in 0..ho {
        for ox in 0..wo {
            let opx = &mut od[(oy * wo + ox) * c..(oy * wo + ox + 1) * c];
            if let Some(b) = b {
                opx.copy_from_slice(b.data());
            }
            for ky in 0..spec.kernel {
                let Some(iy) = spec.src(oy, ky, h) else { continue };
                for kx in 0..spec.kernel {
                    let Some(ix) = spec.src(ox, kx, wd) else { continue };
                    let ipx = &xs[(iy * wd + ix) * c..(iy * wd + ix + 1) * c];
                    let wk = &ws[(ky * spec.kernel + kx) * c..(ky * spec.kernel + kx + 1) * c];
                    for ((o, &v), &wv) in opx.iter_mut().zip(ipx).zip(wk) {
                        *o += v * wv;
                    }
                }
            }
        }
    }
    out
}

pub fn depthwise_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: ConvSpec,
    dout: &Tensor<T>,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (h, wd, c) = x.hwc();
    let (ho, wo, _) = dout.hwc();
    let mut dx = want.0.then(|| Tensor::zeros(x.shape()));
    let mut dw = want.1.then(|| Tensor::zeros(w.shape()));
    let db = want.2.then(|| {
        let mut db = Tensor::zeros(&[c]);
        for px in dout.data().chunks_exact(c) {
            for (d, &g) in db.data_mut().iter_mut().zip(px) {
                *d += g;
            }
        }
        db
    });
    let xs = x.data();
    let ws = w.data();
    let gs = dout.data();
    for oy in 0..ho {
        for ox in 0..wo {
            let g = &gs[(oy * wo + ox) * c..(oy * wo + ox + 1) * c];
            for ky in 0..spec.kernel {
                let Some(iy) = spec.src(oy, ky, h) else { continue };
                for kx in 0..spec.kernel {
                    let Some(ix) = spec.src(ox, kx, wd) else { continue };
                    let tap = (ky * spec.kernel + kx) * c;
                    let ibase = (iy * wd + ix) * c;
                    if let Some(dx) = dx.as_mut() {
                        let dxp = &mut dx.data_mut()[ibase..ibase + c];
                        for ((d, &gv), &wv) in dxp.iter_mut().zip(g).zip(&ws[tap..tap + c]) {
                            *d += gv * wv;
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        let drow = &mut dw.data_mut()[tap..tap + c];
                        for ((d, &gv), &xv) in drow.iter_mut().zip(g).zip(&xs[ibase..ibase + c]) {
                            *d += gv * xv;
                        }
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

/// Transposed convolution with kernel = stride = `factor`; weights `[f, f, c_in, c_out]`.
pub fn conv_transpose<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, factor: usize) -> Tensor<T> {
    let (h, wd, ci) = x.hwc();
    let co = w.shape()[3];
    let (ho, wo) = (h * factor, wd * factor);
    let mut out = Tensor::zeros(&[ho, wo, co]);
    let xs = x.data();
    let ws = w.data();
    let od = out.data_mut();
    for oy in 0..ho {
        for ox in 0..wo {
            let (iy, ky) = (oy / factor, oy % factor);
            let (ix, kx) = (ox / factor, ox % factor);
            let opx = &mut od[(oy * wo + ox) * co..(oy * wo + ox + 1) * co];
            if let Some(b) = b {
                opx.copy_from_slice(b.data());
            }
            let ipx = &xs[(iy * wd + ix) * ci..(iy * wd + ix + 1) * ci];
            let tap = (ky * factor + kx) * ci * co;
            for (c, &v) in ipx.iter().enumerate() {
                let wrow = &ws[tap + c * co..tap + (c + 1) * co];
                for (o, &wv) in opx.iter_mut().zip(wrow) {
                    *o += v * wv;
                }
            }
        }
    }
    out
}

pub fn conv_transpose_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    factor: usize,
    dout: &Tensor<T>,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (_, wd, ci) = x.hwc();
    let (ho, wo, co) = dout.hwc();
    let mut dx = want.0.then(|| Tensor::zeros(x.shape()));
    let mut dw = want.1.then(|| Tensor::zeros(w.shape()));
    let db = want.2.then(|| {
        let mut db = Tensor::zeros(&[co]);
        for px in dout.data().chunks_exact(co) {
            for (d, &g) in db.data_mut().iter_mut().zip(px) {
                *d += g;
            }
        }
        db
    });
    let xs = x.data();
    let ws = w.data();
    let gs = dout.data();
    for oy in 0..ho {
        for ox in 0..wo {
            let (iy, ky) = (oy / factor, oy % factor);
            let (ix, kx) = (ox / factor, ox % factor);
            let g = &gs[(oy * wo + ox) * co..(oy * wo + ox + 1) * co];
            let ibase = (iy * wd + ix) * ci;
            let tap = (ky * factor + kx) * ci * co;
            for c in 0..ci {
                if let Some(dx) = dx.as_mut() {
                    let wrow = &ws[tap + c * co..tap + (c + 1) * co];
                    let mut acc = T::zero();
                    for (&gv, &wv) in g.iter().zip(wrow) {
                        acc += gv * wv;
                    }
                    dx.data_mut()[ibase + c] += acc;
                }
                if let Some(dw) = dw.as_mut() {
                    let v = xs[ibase + c];
                    let drow = &mut dw.data_mut()[tap + c * co..tap + (c + 1) * co];
                    for (d, &gv) in drow.iter_mut().zip(g) {
                        *d += v * gv;
                    }
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

pub fn avg_pool<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (h, w, c) = x.hwc();
    let (ho, wo) = (h / f, w / f);
    let inv = T::one() / T::from_usize_lossy(f * f);
    let mut out = Tensor::zeros(&[ho, wo, c]);
    let xs = x.data();
    let od = out.data_mut();
    for y in 0..ho * f {
        for xx in 0..wo * f {
            let o = ((y / f) * wo + xx / f) * c;
            let i = (y * w + xx) * c;
            for ch in 0..c {
                od[o + ch] += xs[i + ch];
            }
        }
    }
    for v in od.iter_mut() {
        *v *= inv;
    }
    out
}

pub fn avg_pool_backward<T: Scalar>(in_shape: &[usize], f: usize, dout: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (_, wo, _) = dout.hwc();
    let inv = T::one() / T::from_usize_lossy(f * f);
    let mut dx = Tensor::zeros(in_shape);
    let gs = dout.data();
    let dd = dx.data_mut();
    for y in 0..(h / f) * f {
        for xx in 0..(w / f) * f {
            let o = ((y / f) * wo + xx / f) * c;
            let i = (y * w + xx) * c;
            for ch in 0..c {
                dd[i + ch] = gs[o + ch] * inv;
            }
        }
    }
    dx
}

pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, f: usize) -> Tensor<T> {
    let (h, w, c) = x.hwc();
    let (ho, wo) = (h * f, w * f);
    let mut out = Tensor::zeros(&[ho, wo, c]);
    let xs = x.data();
    let od = out.data_mut();
    for y in 0..ho {
        for xx in 0..wo {
            let i = ((y / f) * w + xx / f) * c;
            let o = (y * wo + xx) * c;
            od[o..o + c].copy_from_slice(&xs[i..i + c]);
        }
    }
    out
}

pub fn upsample_nearest_backward<T: Scalar>(in_shape: &[usize], f: usize, dout: &Tensor<T>) -> Tensor<T> {
    let (_, w, c) = (in_shape[0], in_shape[1], in_shape[2]);
    let (ho, wo, _) = dout.hwc();
    let mut dx = Tensor::zeros(in_shape);
    let gs = dout.data();
    let dd = dx.data_mut();
    for y in 0..ho {
        for xx in 0..wo {
            let i = ((y / f) * w + xx / f) * c;
            let o = (y * wo + xx) * c;
            for ch in 0..c {
                dd[i + ch] += gs[o + ch];
            }
        }
    }
    dx
}

/// Per-group statistics saved by the group-norm forward pass.
#[derive(Clone, Debug)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn group_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: T,
) -> (Tensor<T>, NormStats<T>) {
    let (h, w, c) = x.hwc();
    let gsize = c / groups;
    let n = T::from_usize_lossy(h * w * gsize);
    let xs = x.data();
    let mut mean = vec![T::zero(); groups];
    let mut var = vec![T::zero(); groups];
    for px in xs.chunks_exact(c) {
        for (ch, &v) in px.iter().enumerate() {
            mean[ch / gsize] += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    for px in xs.chunks_exact(c) {
        for (ch, &v) in px.iter().enumerate() {
            let d = v - mean[ch / gsize];
            var[ch / gsize] += d * d;
        }
    }
    let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v / n + eps).sqrt()).collect();
    let g = gamma.data();
    let b = beta.data();
    let mut out = Tensor::zeros(x.shape());
    for (opx, px) in out.data_mut().chunks_exact_mut(c).zip(xs.chunks_exact(c)) {
        for ch in 0..c {
            let gi = ch / gsize;
            opx[ch] = (px[ch] - mean[gi]) * rstd[gi] * g[ch] + b[ch];
        }
    }
    (out, NormStats { mean, rstd })
}

pub fn group_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &NormStats<T>,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (h, w, c) = x.hwc();
    let groups = stats.mean.len();
    let gsize = c / groups;
    let n = T::from_usize_lossy(h * w * gsize);
    let g = gamma.data();
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut sum_dxhat = vec![T::zero(); groups];
    let mut sum_dxhat_xhat = vec![T::zero(); groups];
    for (px, gp) in x.data().chunks_exact(c).zip(dout.data().chunks_exact(c)) {
        for ch in 0..c {
            let gi = ch / gsize;
            let xhat = (px[ch] - stats.mean[gi]) * stats.rstd[gi];
            dgamma.data_mut()[ch] += gp[ch] * xhat;
            dbeta.data_mut()[ch] += gp[ch];
            let dxhat = gp[ch] * g[ch];
            sum_dxhat[gi] += dxhat;
            sum_dxhat_xhat[gi] += dxhat * xhat;
        }
    }
    let mut dx = Tensor::zeros(x.shape());
    for ((dpx, px), gp) in dx
        .data_mut()
        .chunks_exact_mut(c)
        .zip(x.data().chunks_exact(c))
        .zip(dout.data().chunks_exact(c))
    {
        for ch in 0..c {
            let gi = ch / gsize;
            let xhat = (px[ch] - stats.mean[gi]) * stats.rstd[gi];
            let dxhat = gp[ch] * g[ch];
            dpx[ch] = stats.rstd[gi] / n * (n * dxhat - sum_dxhat[gi] - xhat * sum_dxhat_xhat[gi]);
        }
    }
    (dx, dgamma, dbeta)
}

pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let (h, w, _) = parts[0].hwc();
    let widths: Vec<usize> = parts.iter().map(|p| p.hwc().2).collect();
    let c: usize = widths.iter().sum();
    let mut out = Tensor::zeros(&[h, w, c]);
    let od = out.data_mut();
    for px in 0..h * w {
        let mut off = px * c;
        for (p, &pc) in parts.iter().zip(&widths) {
            od[off..off + pc].copy_from_slice(&p.data()[px * pc..(px + 1) * pc]);
            off += pc;
        }
    }
    out
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = x.hwc();
    let mut out = Tensor::zeros(&[1, 1, c]);
    for px in x.data().chunks_exact(c) {
        for (o, &v) in out.data_mut().iter_mut().zip(px) {
            *o += v;
        }
    }
    out.scale(T::one() / T::from_usize_lossy(h * w));
    out
}

/// Strides of `b` when broadcast against a rank-3 `a` (0 on broadcast axes).
pub fn broadcast_strides(a: &[usize], b: &[usize]) -> Option<[usize; 3]> {
    if a.len() != 3 || b.len() != 3 {
        return None;
    }
    let mut strides = [0usize; 3];
    let mut s = 1;
    for axis in (0..3).rev() {
        if b[axis] == a[axis] {
            strides[axis] = s;
        } else if b[axis] != 1 {
            return None;
        }
        s *= b[axis];
    }
    Some(strides)
}

pub fn mul_broadcast<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, strides: [usize; 3]) -> Tensor<T> {
    let (h, w, c) = a.hwc();
    let mut out = Tensor::zeros(a.shape());
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    let mut i = 0;
    for y in 0..h {
        for x in 0..w {
            let base = y * strides[0] + x * strides[1];
            for ch in 0..c {
                od[i] = ad[i] * bd[base + ch * strides[2]];
                i += 1;
            }
        }
    }
    out
}
