//! 2D convolution (cross-correlation) and ReLU, forward and backward.
//! Convolution is lowered to im2col + GEMM; zero padding preserves spatial
//! dims at stride 1 and output dims are `ceil(in/stride)` otherwise.

use ndarray::ArrayView2;

use crate::{Error, Result};

use super::tensor::{Scalar, Tensor};

struct ConvGeometry {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    pad_h: usize,
    pad_w: usize,
    out_h: usize,
    out_w: usize,
}

fn geometry<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
    dilation: usize,
) -> Result<ConvGeometry> {
    if x.shape.len() != 3 || weights.shape.len() != 4 {
        return Err(Error::Net("conv2d: expected 3D input and 4D weights".into()));
    }
    let (c, h, w) = x.chw();
    let (o, ci, kh, kw) = (weights.shape[0], weights.shape[1], weights.shape[2], weights.shape[3]);
    if ci != c {
        return Err(Error::Net(format!("conv2d: input channels {c} != weight channels {ci}")));
    }
    if bias.len() != o {
        return Err(Error::Net("conv2d: bias length mismatch".into()));
    }
    if stride == 0 || dilation == 0 {
        return Err(Error::Net("conv2d: stride and dilation must be >= 1".into()));
    }
    let eff_h = dilation * (kh - 1) + 1;
    let eff_w = dilation * (kw - 1) + 1;
    let pad_h = (eff_h - 1) / 2;
    let pad_w = (eff_w - 1) / 2;
    if h + 2 * pad_h < eff_h || w + 2 * pad_w < eff_w {
        return Err(Error::Net("conv2d: kernel larger than padded input".into()));
    }
    let out_h = (h + 2 * pad_h - eff_h) / stride + 1;
    let out_w = (w + 2 * pad_w - eff_w) / stride + 1;
    Ok(ConvGeometry { c, h, w, o, kh, kw, pad_h, pad_w, out_h, out_w })
}

fn im2col<T: Scalar>(x: &Tensor<T>, g: &ConvGeometry, stride: usize, dilation: usize) -> Vec<T> {
    let n = g.out_h * g.out_w;
    let mut col = vec![T::zero(); g.c * g.kh * g.kw * n];
    for c in 0..g.c {
        let xc = &x.data[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.out_h {
                    let iy = (oy * stride + ky * dilation) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    let out_base = row + oy * g.out_w;
                    for ox in 0..g.out_w {
                        let ix = (ox * stride + kx * dilation) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            col[out_base + ox] = xc[base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Standard cross-correlation with zero padding.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &[T],
    stride: usize,
    dilation: usize,
) -> Result<Tensor<T>> {
    let g = geometry(x, weights, bias, stride, dilation)?;
    let n = g.out_h * g.out_w;
    let ckk = g.c * g.kh * g.kw;
    let col = im2col(x, &g, stride, dilation);
    let wmat = ArrayView2::from_shape((g.o, ckk), &weights.data[..]).unwrap();
    let colmat = ArrayView2::from_shape((ckk, n), &col[..]).unwrap();
    let prod = wmat.dot(&colmat);
    let mut y = Tensor::zeros(&[g.o, g.out_h, g.out_w]);
    let (raw, _) = prod.into_raw_vec_and_offset();
    for o in 0..g.o {
        let dst = &mut y.data[o * n..(o + 1) * n];
        let src = &raw[o * n..(o + 1) * n];
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *s + bias[o];
        }
    }
    Ok(y)
}

/// Gradients of a conv2d w.r.t. input, weights and bias given the upstream
/// gradient `grad_y`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    dilation: usize,
    grad_y: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Vec<T>)> {
    let bias = vec![T::zero(); weights.shape[0]];
    let g = geometry(x, weights, &bias, stride, dilation)?;
    if grad_y.shape != [g.o, g.out_h, g.out_w] {
        return Err(Error::Net("conv2d_backward: grad shape mismatch".into()));
    }
    let n = g.out_h * g.out_w;
    let ckk = g.c * g.kh * g.kw;
    let col = im2col(x, &g, stride, dilation);

    let gy_mat = ArrayView2::from_shape((g.o, n), &grad_y.data[..]).unwrap();
    let colmat = ArrayView2::from_shape((ckk, n), &col[..]).unwrap();
    let gw_arr = gy_mat.dot(&colmat.t());
    let (gw_raw, _) = gw_arr.into_raw_vec_and_offset();
    let grad_w = Tensor::from_vec(&weights.shape, gw_raw)?;

    let mut grad_b = vec![T::zero(); g.o];
    for o in 0..g.o {
        let mut acc = T::zero();
        for v in &grad_y.data[o * n..(o + 1) * n] {
            acc = acc + *v;
        }
        grad_b[o] = acc;
    }

    let wmat = ArrayView2::from_shape((g.o, ckk), &weights.data[..]).unwrap();
    let gcol_arr = wmat.t().dot(&gy_mat);
    let (gcol, _) = gcol_arr.into_raw_vec_and_offset();
    // col2im scatter-add, the transpose of im2col
    let mut grad_x = Tensor::zeros(&[g.c, g.h, g.w]);
    for c in 0..g.c {
        let xc = &mut grad_x.data[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = ((c * g.kh + ky) * g.kw + kx) * n;
                for oy in 0..g.out_h {
                    let iy = (oy * stride + ky * dilation) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    let src_base = row + oy * g.out_w;
                    for ox in 0..g.out_w {
                        let ix = (ox * stride + kx * dilation) as isize - g.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            let dst = base + ix as usize;
                            xc[dst] = xc[dst] + gcol[src_base + ox];
                        }
                    }
                }
            }
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect(),
    }
}

/// `y` is the forward output; gradient passes where the activation is > 0.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, grad_y: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: y.shape.clone(),
        data: y
            .data
            .iter()
            .zip(&grad_y.data)
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
    }
}
