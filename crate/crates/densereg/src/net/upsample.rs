//! Bilinear upsampling by an integer factor (align-corners-false) and its
//! transpose as the backward pass.

use crate::{Error, Result};

use super::tensor::{Scalar, Tensor};

/// Sample positions `(i + 0.5)/factor - 0.5`, clamped to the input range.
fn axis_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|i| {
            let s = ((i as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn bilinear_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Net("upsample factor must be >= 1".into()));
    }
    let (c, h, w) = x.chw();
    let (oh, ow) = (h * factor, w * factor);
    let rows = axis_taps(oh, h, factor);
    let cols = axis_taps(ow, w, factor);
    let mut y = Tensor::zeros(&[c, oh, ow]);
    for ci in 0..c {
        let xc = &x.data[ci * h * w..(ci + 1) * h * w];
        let yc = &mut y.data[ci * oh * ow..(ci + 1) * oh * ow];
        for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                let w00 = T::from_f64((1.0 - wy) * (1.0 - wx));
                let w01 = T::from_f64((1.0 - wy) * wx);
                let w10 = T::from_f64(wy * (1.0 - wx));
                let w11 = T::from_f64(wy * wx);
                yc[oy * ow + ox] = xc[y0 * w + x0] * w00
                    + xc[y0 * w + x1] * w01
                    + xc[y1 * w + x0] * w10
                    + xc[y1 * w + x1] * w11;
            }
        }
    }
    Ok(y)
}

/// Transpose of [`bilinear_upsample`]: scatters the upstream gradient back
/// through the interpolation weights.
pub fn bilinear_upsample_backward<T: Scalar>(
    input_shape: &[usize],
    factor: usize,
    grad_y: &Tensor<T>,
) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::Net("upsample factor must be >= 1".into()));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h * factor, w * factor);
    if grad_y.shape != [c, oh, ow] {
        return Err(Error::Net("upsample backward: grad shape mismatch".into()));
    }
    let rows = axis_taps(oh, h, factor);
    let cols = axis_taps(ow, w, factor);
    let mut gx = Tensor::zeros(input_shape);
    for ci in 0..c {
        let gc = &grad_y.data[ci * oh * ow..(ci + 1) * oh * ow];
        let xc = &mut gx.data[ci * h * w..(ci + 1) * h * w];
        for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                let g = gc[oy * ow + ox];
                xc[y0 * w + x0] = xc[y0 * w + x0] + g * T::from_f64((1.0 - wy) * (1.0 - wx));
                xc[y0 * w + x1] = xc[y0 * w + x1] + g * T::from_f64((1.0 - wy) * wx);
                xc[y1 * w + x0] = xc[y1 * w + x0] + g * T::from_f64(wy * (1.0 - wx));
                xc[y1 * w + x1] = xc[y1 * w + x1] + g * T::from_f64(wy * wx);
            }
        }
    }
    Ok(gx)
}
