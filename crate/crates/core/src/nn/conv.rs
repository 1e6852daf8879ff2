//! 2-D cross-correlation over zero-padded planes.
//!
//! An input plane is padded once into a `hp × wp` buffer. The stride-1
//! output is kept in the same row pitch `wp` (element `(y, x)` at `y·wp + x`,
//! the last `k − 1` columns of each row being scratch), which turns each
//! kernel tap into a single contiguous multiply-add over the plane. Larger
//! strides subsample the stride-1 result.
//!
//! Every output element accumulates its terms in the order `ic, kh, kw`. The
//! kernel-sparse path in `sparse` calls [`accumulate_kernel`] too and so
//! reproduces dense results bit for bit.

use crate::error::{Error, Result};
use crate::nn::spec::conv_output_extent;
use crate::tensor::{dot, Real, Tensor};

/// Geometry shared by all channel pairs of one convolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PlaneGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PlaneGeometry {
    pub fn padded_w(&self) -> usize {
        self.in_w + 2 * self.padding
    }

    pub fn padded_len(&self) -> usize {
        (self.in_h + 2 * self.padding) * self.padded_w()
    }

    /// Length of the pitched stride-1 output buffer.
    pub fn span(&self) -> usize {
        let full_h = self.in_h + 2 * self.padding - self.k + 1;
        let full_w = self.padded_w() - self.k + 1;
        (full_h - 1) * self.padded_w() + full_w
    }

    /// Position of strided output `(y, x)` inside the pitched buffer.
    fn pitched(&self, y: usize, x: usize) -> usize {
        y * self.stride * self.padded_w() + x * self.stride
    }
}

/// `out += kernel ⋆ padded` for one `(out_ch, in_ch)` pair; `out` is a
/// pitched buffer of length [`PlaneGeometry::span`].
pub(crate) fn accumulate_kernel<T: Real>(out: &mut [T], padded: &[T], kernel: &[T], g: PlaneGeometry) {
    let (k, wp, span) = (g.k, g.padded_w(), g.span());
    for kh in 0..k {
        for kw in 0..k {
            let wv = kernel[kh * k + kw];
            let src = &padded[kh * wp + kw..kh * wp + kw + span];
            for (o, &i) in out.iter_mut().zip(src) {
                *o += wv * i;
            }
        }
    }
}

/// Zero-pads each `in_h × in_w` plane of `x` into the pitched layout.
pub(crate) fn pad_planes<T: Real>(x: &[T], g: PlaneGeometry) -> Vec<T> {
    let (plane, wp, p) = (g.in_h * g.in_w, g.padded_w(), g.padding);
    let planes = x.len() / plane;
    let mut out = vec![T::zero(); planes * g.padded_len()];
    for (src, dst) in x.chunks_exact(plane).zip(out.chunks_exact_mut(g.padded_len())) {
        for (y, row) in src.chunks_exact(g.in_w).enumerate() {
            let start = (y + p) * wp + p;
            dst[start..start + g.in_w].copy_from_slice(row);
        }
    }
    out
}

/// Copies the strided outputs out of a pitched buffer.
pub(crate) fn crop_output<T: Real>(pitched: &[T], out: &mut [T], g: PlaneGeometry) {
    for y in 0..g.out_h {
        for x in 0..g.out_w {
            out[y * g.out_w + x] = pitched[g.pitched(y, x)];
        }
    }
}

pub(crate) fn geometry(
    op: &'static str,
    input: &[usize],
    weight: &[usize],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, PlaneGeometry)> {
    let (&[b, n, h, w], &[m, wn, kh, kw]) = (input, weight) else {
        return Err(Error::shape(
            op,
            format!("input and weight must be rank 4, found {input:?} and {weight:?}"),
        ));
    };
    if wn != n {
        return Err(Error::shape(
            op,
            format!("input has {n} channels but weight expects {wn}"),
        ));
    }
    if kh != kw {
        return Err(Error::shape(op, format!("kernel must be square, found {kh}x{kw}")));
    }
    if stride == 0 {
        return Err(Error::Config(format!("{op}: stride must be >= 1")));
    }
    let (Some(out_h), Some(out_w)) = (
        conv_output_extent(h, kh, stride, padding),
        conv_output_extent(w, kw, stride, padding),
    ) else {
        return Err(Error::shape(
            op,
            format!("kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})"),
        ));
    };
    Ok((
        b,
        n,
        m,
        PlaneGeometry {
            in_h: h,
            in_w: w,
            out_h,
            out_w,
            k: kh,
            stride,
            padding,
        },
    ))
}

/// Cross-correlation of `input [B,N,H,W]` with `weight [M,N,k,k]`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (b, n, m, g) = geometry("conv2d_forward", input.shape(), weight.shape(), stride, padding)?;
    let padded = pad_planes(input.data(), g);
    let (pl, out_plane, kk) = (g.padded_len(), g.out_h * g.out_w, g.k * g.k);
    let mut out = Tensor::zeros(&[b, m, g.out_h, g.out_w]);
    let y = out.data_mut();
    let wt = weight.data();
    let mut acc = vec![T::zero(); g.span()];
    for bi in 0..b {
        for oc in 0..m {
            acc.fill(T::zero());
            for ic in 0..n {
                let src = &padded[(bi * n + ic) * pl..(bi * n + ic + 1) * pl];
                accumulate_kernel(&mut acc, src, &wt[(oc * n + ic) * kk..(oc * n + ic + 1) * kk], g);
            }
            crop_output(&acc, &mut y[(bi * m + oc) * out_plane..(bi * m + oc + 1) * out_plane], g);
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input and weight.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let grad_input = conv2d_backward_input(input.shape(), weight, grad_out, stride, padding)?;
    let grad_weight = conv2d_backward_weight(input, weight.shape(), grad_out, stride, padding)?;
    Ok((grad_input, grad_weight))
}

/// Output gradients scattered into pitched buffers, zero everywhere else.
fn pitch_grad_out<T: Real>(grad_out: &[T], g: PlaneGeometry) -> Vec<T> {
    let out_plane = g.out_h * g.out_w;
    let span = g.span();
    let mut out = vec![T::zero(); grad_out.len() / out_plane * span];
    for (src, dst) in grad_out.chunks_exact(out_plane).zip(out.chunks_exact_mut(span)) {
        for y in 0..g.out_h {
            for x in 0..g.out_w {
                dst[g.pitched(y, x)] = src[y * g.out_w + x];
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward_input<T: Real>(
    input_shape: &[usize],
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (b, n, m, g) = geometry("conv2d_backward", input_shape, weight.shape(), stride, padding)?;
    grad_out.expect_shape("conv2d_backward", &[b, m, g.out_h, g.out_w])?;
    let go = pitch_grad_out(grad_out.data(), g);
    let (pl, span, kk, wp, k) = (g.padded_len(), g.span(), g.k * g.k, g.padded_w(), g.k);
    let wt = weight.data();
    let mut padded = vec![T::zero(); pl];
    let mut grad_in = Tensor::zeros(input_shape);
    let in_plane = g.in_h * g.in_w;
    for bi in 0..b {
        for ic in 0..n {
            padded.fill(T::zero());
            for oc in 0..m {
                let gplane = &go[(bi * m + oc) * span..(bi * m + oc + 1) * span];
                let kernel = &wt[(oc * n + ic) * kk..(oc * n + ic + 1) * kk];
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = kernel[kh * k + kw];
                        let dst = &mut padded[kh * wp + kw..kh * wp + kw + span];
                        for (d, &gv) in dst.iter_mut().zip(gplane) {
                            *d += wv * gv;
                        }
                    }
                }
            }
            let dst = &mut grad_in.data_mut()[(bi * n + ic) * in_plane..(bi * n + ic + 1) * in_plane];
            for (y, row) in dst.chunks_exact_mut(g.in_w).enumerate() {
                let start = (y + g.padding) * wp + g.padding;
                row.copy_from_slice(&padded[start..start + g.in_w]);
            }
        }
    }
    Ok(grad_in)
}

pub(crate) fn conv2d_backward_weight<T: Real>(
    input: &Tensor<T>,
    weight_shape: &[usize],
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (b, n, m, g) = geometry("conv2d_backward", input.shape(), weight_shape, stride, padding)?;
    grad_out.expect_shape("conv2d_backward", &[b, m, g.out_h, g.out_w])?;
    let go = pitch_grad_out(grad_out.data(), g);
    let padded = pad_planes(input.data(), g);
    let (pl, span, kk, wp, k) = (g.padded_len(), g.span(), g.k * g.k, g.padded_w(), g.k);
    let mut grad_w = Tensor::zeros(weight_shape);
    let gw = grad_w.data_mut();
    for bi in 0..b {
        for oc in 0..m {
            let gplane = &go[(bi * m + oc) * span..(bi * m + oc + 1) * span];
            for ic in 0..n {
                let src = &padded[(bi * n + ic) * pl..(bi * n + ic + 1) * pl];
                let dst = &mut gw[(oc * n + ic) * kk..(oc * n + ic + 1) * kk];
                for kh in 0..k {
                    for kw in 0..k {
                        dst[kh * k + kw] += dot(gplane, &src[kh * wp + kw..kh * wp + kw + span]);
                    }
                }
            }
        }
    }
    Ok(grad_w)
}
