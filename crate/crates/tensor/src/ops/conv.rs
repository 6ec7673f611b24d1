use crate::element::Element;
use crate::ops::matmul::{matmul, matmul_t};

/// Output extent of a strided cross-correlation.
pub fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output extent of the transpose convolution: stride*(in-1) + k - 2*pad.
pub fn tconv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let grown = stride * (input - 1) + k;
    if grown <= 2 * pad {
        return None;
    }
    Some(grown - 2 * pad)
}

/// Lay out conv patches as a [c*k*k, ho*wo] matrix.
pub fn im2col<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let mut col = vec![T::ZERO; c * k * k * ho * wo];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let rowbase = ((ci * k + ky) * k + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xbase = (ci * h + iy as usize) * w;
                    let cbase = rowbase + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            col[cbase + ox] = x[xbase + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of `im2col`: scatter-add a [c*k*k, ho*wo] matrix back onto a
/// [c, h, w] image.
pub fn col2im<T: Element>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let mut x = vec![T::ZERO; c * h * w];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let rowbase = ((ci * k + ky) * k + kx) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xbase = (ci * h + iy as usize) * w;
                    let cbase = rowbase + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            x[xbase + ix as usize] += col[cbase + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Cross-correlation of x[ci,h,w] with w[co,ci,k,k] plus optional bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward<T: Element>(
    x: &[T],
    ci: usize,
    h: usize,
    w: usize,
    weight: &[T],
    co: usize,
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let col = im2col(x, ci, h, w, k, stride, pad, ho, wo);
    let mut out = matmul(weight, &col, co, ci * k * k, ho * wo);
    if let Some(b) = bias {
        for c in 0..co {
            let bc = b[c];
            for v in &mut out[c * ho * wo..(c + 1) * ho * wo] {
                *v += bc;
            }
        }
    }
    out
}

/// Gradients of conv2d w.r.t. input, weight, and bias.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Element>(
    grad_out: &[T],
    x: &[T],
    ci: usize,
    h: usize,
    w: usize,
    weight: &[T],
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ckk = ci * k * k;
    let col = im2col(x, ci, h, w, k, stride, pad, ho, wo);
    // dW = g . col^T
    let dw = matmul_t(grad_out, co, ho * wo, false, &col, ckk, ho * wo, true);
    // dX = col2im(W^T . g)
    let dcol = matmul_t(weight, co, ckk, true, grad_out, co, ho * wo, false);
    let dx = col2im(&dcol, ci, h, w, k, stride, pad, ho, wo);
    let mut db = vec![T::ZERO; co];
    for c in 0..co {
        let mut s = T::ZERO;
        for &g in &grad_out[c * ho * wo..(c + 1) * ho * wo] {
            s += g;
        }
        db[c] = s;
    }
    (dx, dw, db)
}

/// Transpose convolution of y[ci,hi,wi] with weight[ci,co,k,k]: the adjoint
/// of conv2d under a shared weight layout.
#[allow(clippy::too_many_arguments)]
pub fn tconv2d_forward<T: Element>(
    y: &[T],
    ci: usize,
    hi: usize,
    wi: usize,
    weight: &[T],
    co: usize,
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let ckk = co * k * k;
    let dcol = matmul_t(weight, ci, ckk, true, y, ci, hi * wi, false);
    let mut out = col2im(&dcol, co, ho, wo, k, stride, pad, hi, wi);
    if let Some(b) = bias {
        for c in 0..co {
            let bc = b[c];
            for v in &mut out[c * ho * wo..(c + 1) * ho * wo] {
                *v += bc;
            }
        }
    }
    out
}

/// Gradients of tconv2d w.r.t. input, weight, and bias.
#[allow(clippy::too_many_arguments)]
pub fn tconv2d_backward<T: Element>(
    grad_out: &[T],
    y: &[T],
    ci: usize,
    hi: usize,
    wi: usize,
    weight: &[T],
    co: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ckk = co * k * k;
    let gcol = im2col(grad_out, co, ho, wo, k, stride, pad, hi, wi);
    // dY = W . col(g)
    let dy = matmul(weight, &gcol, ci, ckk, hi * wi);
    // dW = Y . col(g)^T
    let dw = matmul_t(y, ci, hi * wi, false, &gcol, ckk, hi * wi, true);
    let mut db = vec![T::ZERO; co];
    for c in 0..co {
        let mut s = T::ZERO;
        for &g in &grad_out[c * ho * wo..(c + 1) * ho * wo] {
            s += g;
        }
        db[c] = s;
    }
    (dy, dw, db)
}

/// Depthwise cross-correlation: x[c,h,w] with w[c,k,k], one filter per channel.
#[allow(clippy::too_many_arguments)]
pub fn dwconv2d_forward<T: Element>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    k: usize,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let mut out = vec![T::ZERO; c * ho * wo];
    for ch in 0..c {
        let xb = ch * h * w;
        let wb = ch * k * k;
        let ob = ch * ho * wo;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = T::ZERO;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            s += x[xb + iy as usize * w + ix as usize] * weight[wb + ky * k + kx];
                        }
                    }
                }
                if let Some(b) = bias {
                    s += b[ch];
                }
                out[ob + oy * wo + ox] = s;
            }
        }
    }
    out
}

/// Gradients of the depthwise convolution.
#[allow(clippy::too_many_arguments)]
pub fn dwconv2d_backward<T: Element>(
    grad_out: &[T],
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    weight: &[T],
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::ZERO; c * h * w];
    let mut dw = vec![T::ZERO; c * k * k];
    let mut db = vec![T::ZERO; c];
    for ch in 0..c {
        let xb = ch * h * w;
        let wb = ch * k * k;
        let ob = ch * ho * wo;
        for oy in 0..ho {
            for ox in 0..wo {
                let g = grad_out[ob + oy * wo + ox];
                db[ch] += g;
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && (ix as usize) < w {
                            let xi = xb + iy as usize * w + ix as usize;
                            dx[xi] += g * weight[wb + ky * k + kx];
                            dw[wb + ky * k + kx] += g * x[xi];
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}
