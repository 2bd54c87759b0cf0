//! Convolution and transposed-convolution kernels, lowered onto the matrix
//! kernels through per-image im2col / col2im. The backward passes recompute
//! patch matrices instead of saving them, trading a little compute for a lot
//! of memory.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matmul::{matmul_nn_acc, matmul_nt_acc, transpose};
use crate::tensor::Element;

/// Valid-geometry output extent; `None` when the kernel does not fit.
pub(crate) fn conv_out_extent(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel > input || kernel == 0 || stride == 0 {
        None
    } else {
        Some((input - kernel) / stride + 1)
    }
}

pub(crate) fn deconv_out_extent(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

#[derive(Debug)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn for_conv(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape(
                "conv2d",
                format!("expected rank-4 input and kernel, got {input:?} and {kernel:?}"),
            ));
        }
        let (batch, in_c, in_h, in_w) = (input[0], input[1], input[2], input[3]);
        let (out_c, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kh != kw {
            return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        if kc != in_c {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {kc} input channels, input has {in_c}"),
            ));
        }
        let out_h = conv_out_extent(in_h, kh, stride).ok_or_else(|| {
            Error::geometry("conv2d", format!("kernel {kh} does not fit input height {in_h}"))
        })?;
        let out_w = conv_out_extent(in_w, kw, stride).ok_or_else(|| {
            Error::geometry("conv2d", format!("kernel {kw} does not fit input width {in_w}"))
        })?;
        Ok(ConvGeom { batch, in_c, in_h, in_w, out_c, k: kh, stride, out_h, out_w })
    }

    /// Geometry for a transposed convolution; `input` is the small side.
    pub fn for_deconv(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(Error::shape(
                "deconv2d",
                format!("expected rank-4 input and kernel, got {input:?} and {kernel:?}"),
            ));
        }
        let (batch, in_c, in_h, in_w) = (input[0], input[1], input[2], input[3]);
        let (kc, out_c, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if in_h == 0 || in_w == 0 || batch == 0 || in_c == 0 {
            return Err(Error::geometry(
                "deconv2d",
                format!("zero-extent input {input:?}"),
            ));
        }
        if kh != kw {
            return Err(Error::shape("deconv2d", format!("kernel must be square, got {kh}x{kw}")));
        }
        if kc != in_c {
            return Err(Error::shape(
                "deconv2d",
                format!("kernel expects {kc} input channels, input has {in_c}"),
            ));
        }
        if stride == 0 {
            return Err(Error::geometry("deconv2d", "stride must be positive"));
        }
        let out_h = deconv_out_extent(in_h, kh, stride);
        let out_w = deconv_out_extent(in_w, kw, stride);
        Ok(ConvGeom { batch, in_c, in_h, in_w, out_c, k: kh, stride, out_h, out_w })
    }
}

/// Gathers k*k patches of `img` (shape [c, big_h, big_w]) into a
/// [c*k*k, n_y*n_x] column matrix, where (n_y, n_x) counts patch positions.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Element>(
    img: &[T],
    c: usize,
    big_w: usize,
    k: usize,
    stride: usize,
    n_y: usize,
    n_x: usize,
    dst: &mut [T],
) {
    let n = n_y * n_x;
    debug_assert_eq!(dst.len(), c * k * k * n);
    let plane = img.len() / c;
    for ch in 0..c {
        let img_ch = &img[ch * plane..(ch + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * n;
                for oy in 0..n_y {
                    let src_row = (oy * stride + ky) * big_w + kx;
                    let dst_row = row + oy * n_x;
                    if stride == 1 {
                        dst[dst_row..dst_row + n_x].copy_from_slice(&img_ch[src_row..src_row + n_x]);
                    } else {
                        for ox in 0..n_x {
                            dst[dst_row + ox] = img_ch[src_row + ox * stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into the image.
#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Element>(
    cols: &[T],
    c: usize,
    big_w: usize,
    k: usize,
    stride: usize,
    n_y: usize,
    n_x: usize,
    img: &mut [T],
) {
    let n = n_y * n_x;
    debug_assert_eq!(cols.len(), c * k * k * n);
    let plane = img.len() / c;
    for ch in 0..c {
        let img_ch = &mut img[ch * plane..(ch + 1) * plane];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((ch * k + ky) * k + kx) * n;
                for oy in 0..n_y {
                    let dst_row = (oy * stride + ky) * big_w + kx;
                    let src_row = row + oy * n_x;
                    for ox in 0..n_x {
                        img_ch[dst_row + ox * stride] =
                            img_ch[dst_row + ox * stride] + cols[src_row + ox];
                    }
                }
            }
        }
    }
}

/// out[b,o,oy,ox] = bias[o] + sum_{c,ky,kx} in[b,c,oy*s+ky,ox*s+kx] * w[o,c,ky,kx]
pub(crate) fn conv2d_forward<T: Element>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    g: &ConvGeom,
) -> Vec<T> {
    let ckk = g.in_c * g.k * g.k;
    let n = g.out_h * g.out_w;
    let in_plane = g.in_c * g.in_h * g.in_w;
    let out_plane = g.out_c * n;
    let mut out = vec![T::zero(); g.batch * out_plane];
    let mut cols = vec![T::zero(); ckk * n];
    for b in 0..g.batch {
        let img = &input[b * in_plane..(b + 1) * in_plane];
        im2col(img, g.in_c, g.in_w, g.k, g.stride, g.out_h, g.out_w, &mut cols);
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        for o in 0..g.out_c {
            let bv = bias[o];
            for v in &mut dst[o * n..(o + 1) * n] {
                *v = bv;
            }
        }
        matmul_nn_acc(kernel, &cols, dst, g.out_c, ckk, n);
    }
    out
}

pub(crate) struct ConvGrads<T: Element> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Element>(
    grad_out: &[T],
    input: &[T],
    kernel: &[T],
    g: &ConvGeom,
    need_input: bool,
    need_kernel: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let ckk = g.in_c * g.k * g.k;
    let n = g.out_h * g.out_w;
    let in_plane = g.in_c * g.in_h * g.in_w;
    let out_plane = g.out_c * n;

    let mut d_input = need_input.then(|| vec![T::zero(); input.len()]);
    let mut d_kernel = need_kernel.then(|| vec![T::zero(); kernel.len()]);
    let mut d_bias = need_bias.then(|| vec![T::zero(); g.out_c]);

    let kernel_t = need_input.then(|| transpose(kernel, g.out_c, ckk));
    let mut cols = vec![T::zero(); ckk * n];

    for b in 0..g.batch {
        let go = &grad_out[b * out_plane..(b + 1) * out_plane];
        if let Some(db) = d_bias.as_deref_mut() {
            for o in 0..g.out_c {
                let mut s = T::zero();
                for &v in &go[o * n..(o + 1) * n] {
                    s = s + v;
                }
                db[o] = db[o] + s;
            }
        }
        if let Some(dk) = d_kernel.as_deref_mut() {
            let img = &input[b * in_plane..(b + 1) * in_plane];
            im2col(img, g.in_c, g.in_w, g.k, g.stride, g.out_h, g.out_w, &mut cols);
            matmul_nt_acc(go, &cols, dk, g.out_c, n, ckk);
        }
        if let Some(di) = d_input.as_deref_mut() {
            let kt = kernel_t.as_deref().expect("kernel transpose present");
            for v in cols.iter_mut() {
                *v = T::zero();
            }
            matmul_nn_acc(kt, go, &mut cols, ckk, g.out_c, n);
            col2im_add(
                &cols,
                g.in_c,
                g.in_w,
                g.k,
                g.stride,
                g.out_h,
                g.out_w,
                &mut di[b * in_plane..(b + 1) * in_plane],
            );
        }
    }
    ConvGrads { input: d_input, kernel: d_kernel, bias: d_bias }
}

/// Transposed convolution: the exact adjoint of `conv2d_forward` in its
/// input, plus a bias on the large side.
pub(crate) fn deconv2d_forward<T: Element>(
    input: &[T],
    kernel: &[T],
    bias: &[T],
    g: &ConvGeom,
) -> Vec<T> {
    let okk = g.out_c * g.k * g.k;
    let n = g.in_h * g.in_w;
    let in_plane = g.in_c * n;
    let out_plane = g.out_c * g.out_h * g.out_w;
    let kernel_t = transpose(kernel, g.in_c, okk);
    let mut out = vec![T::zero(); g.batch * out_plane];
    let mut cols = vec![T::zero(); okk * n];
    for b in 0..g.batch {
        let img = &input[b * in_plane..(b + 1) * in_plane];
        for v in cols.iter_mut() {
            *v = T::zero();
        }
        matmul_nn_acc(&kernel_t, img, &mut cols, okk, g.in_c, n);
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        col2im_add(&cols, g.out_c, g.out_w, g.k, g.stride, g.in_h, g.in_w, dst);
        let hw = g.out_h * g.out_w;
        for o in 0..g.out_c {
            let bv = bias[o];
            for v in &mut dst[o * hw..(o + 1) * hw] {
                *v = *v + bv;
            }
        }
    }
    out
}

pub(crate) fn deconv2d_backward<T: Element>(
    grad_out: &[T],
    input: &[T],
    kernel: &[T],
    g: &ConvGeom,
    need_input: bool,
    need_kernel: bool,
    need_bias: bool,
) -> ConvGrads<T> {
    let okk = g.out_c * g.k * g.k;
    let n = g.in_h * g.in_w;
    let in_plane = g.in_c * n;
    let out_plane = g.out_c * g.out_h * g.out_w;

    let mut d_input = need_input.then(|| vec![T::zero(); input.len()]);
    let mut d_kernel = need_kernel.then(|| vec![T::zero(); kernel.len()]);
    let mut d_bias = need_bias.then(|| vec![T::zero(); g.out_c]);
    let mut gcols = vec![T::zero(); okk * n];
    let hw = g.out_h * g.out_w;

    for b in 0..g.batch {
        let go = &grad_out[b * out_plane..(b + 1) * out_plane];
        if let Some(db) = d_bias.as_deref_mut() {
            for o in 0..g.out_c {
                let mut s = T::zero();
                for &v in &go[o * hw..(o + 1) * hw] {
                    s = s + v;
                }
                db[o] = db[o] + s;
            }
        }
        if need_input || need_kernel {
            im2col(go, g.out_c, g.out_w, g.k, g.stride, g.in_h, g.in_w, &mut gcols);
        }
        if let Some(di) = d_input.as_deref_mut() {
            matmul_nn_acc(
                kernel,
                &gcols,
                &mut di[b * in_plane..(b + 1) * in_plane],
                g.in_c,
                okk,
                n,
            );
        }
        if let Some(dk) = d_kernel.as_deref_mut() {
            let img = &input[b * in_plane..(b + 1) * in_plane];
            matmul_nt_acc(img, &gcols, dk, g.in_c, n, okk);
        }
    }
    ConvGrads { input: d_input, kernel: d_kernel, bias: d_bias }
}
