//! Forward and backward kernels used by the denoiser and the embedder.

use super::Tensor4;
use crate::error::{Error, Result};

/// Output positions `lo..hi` whose input coordinate `o * stride + offset - pad`
/// lands inside `0..in_len`.
fn valid_range(offset: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > offset {
        ((in_len - 1 + pad - offset) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv_output_len(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

fn conv_shapes(input: &Tensor4, weight: &Tensor4, stride: usize, pad: usize) -> Result<[usize; 4]> {
    let [n, c, h, w] = input.dims();
    let [oc, ic, kh, kw] = weight.dims();
    if ic != c {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: input has {c} channels, weights expect {ic}"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be at least 1"));
    }
    let oh = conv_output_len(h, kh, stride, pad);
    let ow = conv_output_len(w, kw, stride, pad);
    match (oh, ow) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok([n, oc, oh, ow]),
        _ => Err(Error::ShapeMismatch(format!(
            "conv2d: kernel {kh}x{kw} does not fit {h}x{w} with pad {pad}"
        ))),
    }
}

/// Unrolls one batch item into `col[(i * kh + ky) * kw + kx][oy * ow + ox]`,
/// zero where the window hangs over the padding.
#[allow(clippy::too_many_arguments)]
fn im2col(input: &Tensor4, b: usize, kh: usize, kw: usize, stride: usize, pad: usize, oh: usize, ow: usize, col: &mut [f64]) {
    let [_, ic, h, w] = input.dims();
    let p = oh * ow;
    col.fill(0.0);
    for i in 0..ic {
        let plane = input.plane(b, i);
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(ky, pad, stride, h, oh);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(kx, pad, stride, w, ow);
                let row = &mut col[((i * kh + ky) * kw + kx) * p..][..p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - pad;
                    let src = &plane[iy * w..(iy + 1) * w];
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let shift = ox_lo + kx - pad;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[shift..shift + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `col` back onto the input plane layout.
#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], grad: &mut Tensor4, b: usize, kh: usize, kw: usize, stride: usize, pad: usize, oh: usize, ow: usize) {
    let [_, ic, h, w] = grad.dims();
    let p = oh * ow;
    for i in 0..ic {
        let plane = grad.plane_mut(b, i);
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(ky, pad, stride, h, oh);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(kx, pad, stride, w, ow);
                let row = &col[((i * kh + ky) * kw + kx) * p..][..p];
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - pad;
                    let dst = &mut plane[iy * w..(iy + 1) * w];
                    let src = &row[oy * ow..(oy + 1) * ow];
                    for ox in ox_lo..ox_hi {
                        dst[ox * stride + kx - pad] += src[ox];
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize the reduction.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (x, y) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = a[chunks..].iter().zip(&b[chunks..]).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Cross-correlation with zero padding.
///
/// `weight` is `(out_channels, in_channels, kh, kw)`; `bias` has one entry per
/// output channel.
pub fn conv2d(input: &Tensor4, weight: &Tensor4, bias: &[f64], stride: usize, pad: usize) -> Result<Tensor4> {
    let out_dims = conv_shapes(input, weight, stride, pad)?;
    let [n, oc, oh, ow] = out_dims;
    if bias.len() != oc {
        return Err(Error::ShapeMismatch(format!(
            "conv2d: {} bias values for {oc} output channels",
            bias.len()
        )));
    }
    let [_, ic, kh, kw] = weight.dims();
    let (k, p) = (ic * kh * kw, oh * ow);
    let mut col = vec![0.0; k * p];
    let mut out = Tensor4::zeros(out_dims);
    for b in 0..n {
        im2col(input, b, kh, kw, stride, pad, oh, ow, &mut col);
        #[allow(clippy::needless_range_loop)]
        for o in 0..oc {
            let out_plane = out.plane_mut(b, o);
            out_plane.fill(bias[o]);
            let w_row = &weight.data()[o * k..(o + 1) * k];
            for (j, &wv) in w_row.iter().enumerate() {
                if wv != 0.0 {
                    axpy(out_plane, wv, &col[j * p..(j + 1) * p]);
                }
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads {
    pub input: Option<Tensor4>,
    pub weight: Tensor4,
    pub bias: Vec<f64>,
}

pub fn conv2d_backward(
    input: &Tensor4,
    weight: &Tensor4,
    grad_out: &Tensor4,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let out_dims = conv_shapes(input, weight, stride, pad)?;
    grad_out.expect_dims(out_dims, "conv2d_backward grad_out")?;
    let [n, oc, oh, ow] = out_dims;
    let [_, ic, kh, kw] = weight.dims();
    let (k, p) = (ic * kh * kw, oh * ow);

    let mut g_in = need_input_grad.then(|| Tensor4::zeros(input.dims()));
    let mut g_w = Tensor4::zeros(weight.dims());
    let mut g_b = vec![0.0; oc];
    let mut col = vec![0.0; k * p];
    let mut g_col = vec![0.0; if need_input_grad { k * p } else { 0 }];

    for b in 0..n {
        im2col(input, b, kh, kw, stride, pad, oh, ow, &mut col);
        g_col.fill(0.0);
        #[allow(clippy::needless_range_loop)]
        for o in 0..oc {
            let go = grad_out.plane(b, o);
            g_b[o] += go.iter().sum::<f64>();
            let gw_row = &mut g_w.data_mut()[o * k..(o + 1) * k];
            for (j, gw) in gw_row.iter_mut().enumerate() {
                *gw += dot(go, &col[j * p..(j + 1) * p]);
            }
            if need_input_grad {
                let w_row = &weight.data()[o * k..(o + 1) * k];
                for (j, &wv) in w_row.iter().enumerate() {
                    if wv != 0.0 {
                        axpy(&mut g_col[j * p..(j + 1) * p], wv, go);
                    }
                }
            }
        }
        if let Some(gi) = g_in.as_mut() {
            col2im(&g_col, gi, b, kh, kw, stride, pad, oh, ow);
        }
    }
    Ok(ConvGrads {
        input: g_in,
        weight: g_w,
        bias: g_b,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: &Tensor4) -> Tensor4 {
        match self {
            Activation::Silu => x.map(|v| v / (1.0 + (-v).exp())),
            Activation::Identity => x.clone(),
        }
    }

    /// Gradient through the activation given its pre-activation input.
    pub fn backward(self, pre: &Tensor4, grad: &Tensor4) -> Result<Tensor4> {
        match self {
            Activation::Silu => pre.zip_map(grad, |v, g| {
                let s = 1.0 / (1.0 + (-v).exp());
                g * (s + v * s * (1.0 - s))
            }),
            Activation::Identity => Ok(grad.clone()),
        }
    }
}

/// Adds `bias[n * channels + c]` to every pixel of plane `(n, c)`.
pub fn add_channel_bias(x: &mut Tensor4, bias: &[f64]) -> Result<()> {
    let planes = x.batch() * x.channels();
    if bias.len() != planes {
        return Err(Error::ShapeMismatch(format!(
            "channel bias: {} values for {planes} planes",
            bias.len()
        )));
    }
    let len = x.plane_len();
    for (plane, &b) in x.data_mut().chunks_mut(len).zip(bias) {
        plane.iter_mut().for_each(|v| *v += b);
    }
    Ok(())
}

/// Per-plane sums, the adjoint of [`add_channel_bias`].
pub fn plane_sums(x: &Tensor4) -> Vec<f64> {
    x.data()
        .chunks(x.plane_len())
        .map(|p| p.iter().sum())
        .collect()
}

pub fn upsample2x(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.dims();
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2x_backward(grad: &Tensor4) -> Tensor4 {
    let [n, c, h2, w2] = grad.dims();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor4::zeros([n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let src = grad.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for y in 0..h2 {
                for x in 0..w2 {
                    dst[(y / 2) * w + x / 2] += src[y * w2 + x];
                }
            }
        }
    }
    out
}

pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    let [n, ca, h, w] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::ShapeMismatch(format!(
            "concat: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (ia, ib) = (ca * h * w, cb * h * w);
    for item in 0..n {
        out.extend_from_slice(&a.data()[item * ia..(item + 1) * ia]);
        out.extend_from_slice(&b.data()[item * ib..(item + 1) * ib]);
    }
    Tensor4::from_vec([n, ca + cb, h, w], out)
}

/// Splits along channels at `first`, the adjoint of [`concat_channels`].
pub fn split_channels(x: &Tensor4, first: usize) -> (Tensor4, Tensor4) {
    let [n, c, h, w] = x.dims();
    let plane = h * w;
    let mut a = Vec::with_capacity(n * first * plane);
    let mut b = Vec::with_capacity(n * (c - first) * plane);
    for item in x.data().chunks(c * plane) {
        a.extend_from_slice(&item[..first * plane]);
        b.extend_from_slice(&item[first * plane..]);
    }
    (
        Tensor4::from_vec([n, first, h, w], a).expect("split sizes"),
        Tensor4::from_vec([n, c - first, h, w], b).expect("split sizes"),
    )
}
