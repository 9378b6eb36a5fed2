//! Loss functions: softmax cross entropy for the (K+1)-way bin classifiers
//! and the normalized masked smooth L1 for the residual banks (hard mixture
//! of regression experts: only the responsible bin's unit receives gradient).

use crate::codec::{QuantizedTarget, DUMMY};
use crate::{Error, Result};

use super::model::NetworkOutput;
use super::tensor::{Scalar, Tensor};

/// Mean over non-ignored pixels of `-log softmax(logits)[label]`, plus the
/// gradient `(softmax - onehot) / n_contributing`.
///
/// All pixels ignored yields loss 0 with a zero gradient.
pub fn softmax_xent<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
    ignore: &[bool],
) -> Result<(T, Tensor<T>)> {
    let (c, h, w) = logits.chw();
    let n = h * w;
    if labels.len() != n || ignore.len() != n {
        return Err(Error::Net("softmax_xent: label/ignore length mismatch".into()));
    }
    let count = ignore.iter().filter(|&&ig| !ig).count();
    let mut grad = Tensor::zeros(&logits.shape);
    if count == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_n = T::from_f64(1.0 / count as f64);
    let mut loss = T::zero();
    let mut probs = vec![T::zero(); c];
    for p in 0..n {
        if ignore[p] {
            continue;
        }
        let label = labels[p];
        if label >= c {
            return Err(Error::Net(format!("softmax_xent: label {label} out of range")));
        }
        let mut max = logits.data[p];
        for ch in 1..c {
            let v = logits.data[ch * n + p];
            if v > max {
                max = v;
            }
        }
        let mut sum = T::zero();
        for ch in 0..c {
            let e = (logits.data[ch * n + p] - max).exp();
            probs[ch] = e;
            sum = sum + e;
        }
        loss = loss - ((logits.data[label * n + p] - max) - sum.ln());
        for ch in 0..c {
            let mut g = probs[ch] / sum;
            if ch == label {
                g = g - T::one();
            }
            grad.data[ch * n + p] = g * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}

/// Smooth L1 over the responsible residual channel per pixel, divided by the
/// count of contributing pixels. Non-responsible channels get zero gradient.
pub fn masked_smooth_l1<T: Scalar>(
    bank: &Tensor<T>,
    target_r: &[T],
    gt_q: &[u32],
    mask: &[bool],
) -> Result<(T, Tensor<T>)> {
    let (k, h, w) = bank.chw();
    let n = h * w;
    if target_r.len() != n || gt_q.len() != n || mask.len() != n {
        return Err(Error::Net("masked_smooth_l1: target length mismatch".into()));
    }
    let mut grad = Tensor::zeros(&bank.shape);
    let contributing: usize = (0..n).filter(|&p| mask[p] && gt_q[p] != DUMMY).count();
    if contributing == 0 {
        return Ok((T::zero(), grad));
    }
    let inv_n = T::from_f64(1.0 / contributing as f64);
    let one = T::one();
    let half = T::from_f64(0.5);
    let mut loss = T::zero();
    for p in 0..n {
        if !mask[p] || gt_q[p] == DUMMY {
            continue;
        }
        let q = gt_q[p] as usize;
        if q >= k {
            return Err(Error::Net(format!("masked_smooth_l1: bin {q} out of range")));
        }
        let e = bank.data[q * n + p] - target_r[p];
        let (l, de) = if e.abs() < one {
            (half * e * e, e)
        } else {
            (e.abs() - half, if e > T::zero() { one } else { T::zero() - one })
        };
        loss = loss + l;
        grad.data[q * n + p] = de * inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Loss weights; `w_reg` defaults to 40 for quantized (K >= 2) and 70 for
/// plain regression (K = 1).
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub w_cls: f64,
    pub w_reg: f64,
    pub w_depth: f64,
}

impl LossWeights {
    pub fn for_k(k: usize) -> Self {
        Self { w_cls: 1.0, w_reg: default_w_reg(k), w_depth: 10.0 }
    }
}

pub fn default_w_reg(k: usize) -> f64 {
    if k >= 2 {
        40.0
    } else {
        70.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<T> {
    /// Weighted total.
    pub total: T,
    /// Unweighted classification term (both axes).
    pub cls: T,
    /// Unweighted residual regression term (both axes).
    pub reg: T,
    /// Unweighted depth term.
    pub depth: T,
}

/// Gradients of the weighted total loss w.r.t. each head output.
pub struct HeadGrads<T> {
    pub logits_h: Tensor<T>,
    pub logits_v: Tensor<T>,
    pub res_h: Tensor<T>,
    pub res_v: Tensor<T>,
    pub depth: Tensor<T>,
}

/// `L = w_cls (xent_h + xent_v) + w_reg (sl1_h + sl1_v) + w_depth sl1_depth`.
///
/// Background pixels supervise the dummy class in both classifiers; the
/// regression and depth terms see foreground pixels only.
pub fn total_loss<T: Scalar>(
    out: &NetworkOutput<T>,
    target: &QuantizedTarget,
    z_gt: &[f32],
    weights: &LossWeights,
) -> Result<(LossBreakdown<T>, HeadGrads<T>)> {
    let k = target.k;
    if out.res_h.shape[0] != k || out.logits_h.shape[0] != k + 1 {
        return Err(Error::Net(format!(
            "total_loss: K mismatch (output K = {}, target K = {k})",
            out.res_h.shape[0]
        )));
    }
    let (_, h, w) = out.logits_h.chw();
    let n = h * w;
    if target.width * target.height != n || z_gt.len() != n {
        return Err(Error::Net("total_loss: spatial size mismatch".into()));
    }
    let ignore = vec![false; n];
    let to_labels = |q: &[u32]| -> Vec<usize> {
        q.iter().map(|&v| if v == DUMMY { k } else { v as usize }).collect()
    };
    let (xh, mut g_lh) = softmax_xent(&out.logits_h, &to_labels(&target.q_h), &ignore)?;
    let (xv, mut g_lv) = softmax_xent(&out.logits_v, &to_labels(&target.q_v), &ignore)?;

    let rh: Vec<T> = target.r_h.iter().map(|&v| T::from_f64(v as f64)).collect();
    let rv: Vec<T> = target.r_v.iter().map(|&v| T::from_f64(v as f64)).collect();
    let (sh, mut g_rh) = masked_smooth_l1(&out.res_h, &rh, &target.q_h, &target.mask)?;
    let (sv, mut g_rv) = masked_smooth_l1(&out.res_v, &rv, &target.q_v, &target.mask)?;

    let zt: Vec<T> = z_gt.iter().map(|&v| T::from_f64(v as f64)).collect();
    let depth_q: Vec<u32> = target.mask.iter().map(|&m| if m { 0 } else { DUMMY }).collect();
    let (sd, mut g_d) = masked_smooth_l1(&out.depth, &zt, &depth_q, &target.mask)?;

    let wc = T::from_f64(weights.w_cls);
    let wr = T::from_f64(weights.w_reg);
    let wd = T::from_f64(weights.w_depth);
    for g in &mut g_lh.data {
        *g = *g * wc;
    }
    for g in &mut g_lv.data {
        *g = *g * wc;
    }
    for g in &mut g_rh.data {
        *g = *g * wr;
    }
    for g in &mut g_rv.data {
        *g = *g * wr;
    }
    for g in &mut g_d.data {
        *g = *g * wd;
    }
    let breakdown = LossBreakdown {
        total: wc * (xh + xv) + wr * (sh + sv) + wd * sd,
        cls: xh + xv,
        reg: sh + sv,
        depth: sd,
    };
    Ok((
        breakdown,
        HeadGrads { logits_h: g_lh, logits_v: g_lv, res_h: g_rh, res_v: g_rv, depth: g_d },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_loss_is_log_c() {
        // K+1 = 11 classes, uniform logits: loss = ln 11 per pixel
        let logits: Tensor<f64> = Tensor::zeros(&[11, 2, 2]);
        let labels = vec![0usize, 3, 7, 10];
        let ignore = vec![false; 4];
        let (loss, grad) = softmax_xent(&logits, &labels, &ignore).unwrap();
        assert!((loss - 11f64.ln()).abs() < 1e-12);
        assert!((loss - 2.3979).abs() < 1e-4);
        // rows of softmax sum to 1 => grad over channels sums to ~0 per pixel
        for p in 0..4 {
            let s: f64 = (0..11).map(|c| grad.data[c * 4 + p]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn peaked_logits_drive_loss_to_zero() {
        let mut logits: Tensor<f64> = Tensor::zeros(&[3, 1, 1]);
        logits.data[1] = 100.0;
        let (loss, _) = softmax_xent(&logits, &[1], &[false]).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn all_ignored_is_zero_loss_zero_grad() {
        let logits: Tensor<f64> = Tensor::zeros(&[3, 1, 2]);
        let (loss, grad) = softmax_xent(&logits, &[0, 1], &[true, true]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn smooth_l1_point_values() {
        let mask = [true];
        let gt_q = [0u32];
        // e = 0.5 -> 0.125
        let bank = Tensor::from_vec(&[1, 1, 1], vec![0.5f64]).unwrap();
        let (loss, _) = masked_smooth_l1(&bank, &[0.0], &gt_q, &mask).unwrap();
        assert!((loss - 0.125).abs() < 1e-12);
        // e = 2 -> 1.5
        let bank = Tensor::from_vec(&[1, 1, 1], vec![2.0f64]).unwrap();
        let (loss, grad) = masked_smooth_l1(&bank, &[0.0], &gt_q, &mask).unwrap();
        assert!((loss - 1.5).abs() < 1e-12);
        assert_eq!(grad.data[0], 1.0);
        // perfect prediction -> 0
        let bank = Tensor::from_vec(&[1, 1, 1], vec![0.25f64]).unwrap();
        let (loss, _) = masked_smooth_l1(&bank, &[0.25], &gt_q, &mask).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn non_responsible_channels_get_no_gradient() {
        let bank = Tensor::from_vec(&[3, 1, 2], vec![0.9f64; 6]).unwrap();
        let gt_q = [1u32, 2];
        let mask = [true, true];
        let (_, grad) = masked_smooth_l1(&bank, &[0.1, 0.1], &gt_q, &mask).unwrap();
        // pixel 0 responsible bin 1, pixel 1 responsible bin 2
        assert_eq!(grad.data[0], 0.0); // bin 0, pixel 0
        assert_eq!(grad.data[1], 0.0); // bin 0, pixel 1
        assert!(grad.data[2] != 0.0); // bin 1, pixel 0
        assert_eq!(grad.data[3], 0.0); // bin 1, pixel 1
        assert_eq!(grad.data[4], 0.0); // bin 2, pixel 0
        assert!(grad.data[5] != 0.0); // bin 2, pixel 1
    }

    #[test]
    fn default_regression_weights() {
        assert_eq!(default_w_reg(10), 40.0);
        assert_eq!(default_w_reg(1), 70.0);
        assert_eq!(default_w_reg(2), 40.0);
    }
}
