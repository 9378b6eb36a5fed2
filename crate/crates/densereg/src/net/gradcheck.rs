//! Finite-difference verification of every backward pass, in 64-bit mode.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{QuantizedTarget, DUMMY};
use crate::Result;

use super::conv::{conv2d_backward, conv2d_forward, relu_backward, relu_forward};
use super::loss::{masked_smooth_l1, softmax_xent, total_loss, LossWeights};
use super::model::{DenseRegNet, NetConfig};
use super::tensor::Tensor;
use super::upsample::{bilinear_upsample, bilinear_upsample_backward};

/// Result of one finite-difference suite.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub n_checked: usize,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err <= self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<24} {} max_rel_err={:.3e} (tol {:.1e}, {} coords)",
            self.op,
            if self.pass() { "ok" } else { "FAIL" },
            self.max_rel_err,
            self.tolerance,
            self.n_checked
        )
    }
}

const FD_STEP: f64 = 1e-3;
const OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;
// through the whole net a 1e-3 step crosses ReLU kinks; a smaller step keeps
// the quotient on one smooth piece while f64 still has headroom
const E2E_STEP: f64 = 1e-5;

/// Central-difference check of `analytic` against `f` at up to `n_coords`
/// random coordinates of `x0`.
pub fn check_scalar_fn<F>(
    op: &str,
    x0: &[f64],
    f: F,
    analytic: &[f64],
    n_coords: usize,
    h: f64,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), analytic.len());
    let mut idx: Vec<usize> = (0..x0.len()).collect();
    idx.shuffle(rng);
    idx.truncate(n_coords);
    let mut x = x0.to_vec();
    let mut max_rel = 0.0f64;
    for &i in &idx {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f(&x);
        x[i] = orig - h;
        let fm = f(&x);
        x[i] = orig;
        let numeric = (fp - fm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic[i] - numeric).abs() / denom;
        if !rel.is_finite() || rel > max_rel {
            max_rel = rel;
        }
    }
    GradCheckReport { op: op.into(), max_rel_err: max_rel, tolerance, n_checked: idx.len() }
}

fn rand_vec(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_suite(
    reports: &mut Vec<GradCheckReport>,
    tag: &str,
    stride: usize,
    dilation: usize,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let x = Tensor::from_vec(&[4, 6, 6], rand_vec(4 * 36, -1.0, 1.0, rng))?;
    let w = Tensor::from_vec(&[3, 4, 3, 3], rand_vec(3 * 4 * 9, -0.5, 0.5, rng))?;
    let b = rand_vec(3, -0.5, 0.5, rng);
    let y0 = conv2d_forward(&x, &w, &b, stride, dilation)?;
    let gy = Tensor::from_vec(&y0.shape, rand_vec(y0.numel(), -1.0, 1.0, rng))?;
    let (gx, gw, gb) = conv2d_backward(&x, &w, stride, dilation, &gy)?;

    let shape_x = x.shape.clone();
    let f_x = |data: &[f64]| {
        let xt = Tensor::from_vec(&shape_x, data.to_vec()).unwrap();
        dot(&conv2d_forward(&xt, &w, &b, stride, dilation).unwrap().data, &gy.data)
    };
    reports.push(check_scalar_fn(
        &format!("{tag}/input"),
        &x.data,
        f_x,
        &gx.data,
        100,
        FD_STEP,
        OP_TOL,
        rng,
    ));

    let shape_w = w.shape.clone();
    let f_w = |data: &[f64]| {
        let wt = Tensor::from_vec(&shape_w, data.to_vec()).unwrap();
        dot(&conv2d_forward(&x, &wt, &b, stride, dilation).unwrap().data, &gy.data)
    };
    reports.push(check_scalar_fn(
        &format!("{tag}/weights"),
        &w.data,
        f_w,
        &gw.data,
        100,
        FD_STEP,
        OP_TOL,
        rng,
    ));

    let f_b = |data: &[f64]| {
        dot(&conv2d_forward(&x, &w, data, stride, dilation).unwrap().data, &gy.data)
    };
    reports.push(check_scalar_fn(
        &format!("{tag}/bias"),
        &b,
        f_b,
        &gb,
        100,
        FD_STEP,
        OP_TOL,
        rng,
    ));
    Ok(())
}

fn random_target(k: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> (QuantizedTarget, Vec<f32>) {
    let n = h * w;
    let mut target = QuantizedTarget {
        k,
        width: w,
        height: h,
        q_h: vec![DUMMY; n],
        q_v: vec![DUMMY; n],
        r_h: vec![0.0; n],
        r_v: vec![0.0; n],
        mask: vec![false; n],
    };
    let d = 1.0 / k as f32;
    let mut z = vec![0.0f32; n];
    for p in 0..n {
        if rng.gen_bool(0.7) {
            target.mask[p] = true;
            target.q_h[p] = rng.gen_range(0..k as u32);
            target.q_v[p] = rng.gen_range(0..k as u32);
            target.r_h[p] = rng.gen_range(0.0..d);
            target.r_v[p] = rng.gen_range(0.0..d);
            // keep depth errors away from the smooth-L1 kink at |e| = 1
            z[p] = rng.gen_range(0.0..0.5);
        }
    }
    (target, z)
}

fn network_output(k: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> super::model::NetworkOutput<f64> {
    let n = h * w;
    super::model::NetworkOutput {
        logits_h: Tensor::from_vec(&[k + 1, h, w], rand_vec((k + 1) * n, -1.0, 1.0, rng)).unwrap(),
        logits_v: Tensor::from_vec(&[k + 1, h, w], rand_vec((k + 1) * n, -1.0, 1.0, rng)).unwrap(),
        res_h: Tensor::from_vec(&[k, h, w], rand_vec(k * n, -0.4, 0.4, rng)).unwrap(),
        res_v: Tensor::from_vec(&[k, h, w], rand_vec(k * n, -0.4, 0.4, rng)).unwrap(),
        depth: Tensor::from_vec(&[1, h, w], rand_vec(n, -0.4, 0.4, rng)).unwrap(),
    }
}

/// Runs every finite-difference suite and returns one report per check.
pub fn check_all(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    conv_suite(&mut reports, "conv2d", 1, 1, &mut rng)?;
    conv_suite(&mut reports, "conv2d_stride2", 2, 1, &mut rng)?;
    conv_suite(&mut reports, "conv2d_dilated", 1, 2, &mut rng)?;

    // relu (inputs kept away from the hinge at 0)
    {
        let data: Vec<f64> = (0..48)
            .map(|_| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = Tensor::from_vec(&[3, 4, 4], data)?;
        let gy = Tensor::from_vec(&[3, 4, 4], rand_vec(48, -1.0, 1.0, &mut rng))?;
        let y = relu_forward(&x);
        let gx = relu_backward(&y, &gy);
        let f = |data: &[f64]| {
            let xt = Tensor::from_vec(&[3, 4, 4], data.to_vec()).unwrap();
            dot(&relu_forward(&xt).data, &gy.data)
        };
        reports.push(check_scalar_fn("relu", &x.data, f, &gx.data, 48, FD_STEP, OP_TOL, &mut rng));
    }

    // bilinear upsample
    {
        let x = Tensor::from_vec(&[2, 4, 5], rand_vec(40, -1.0, 1.0, &mut rng))?;
        let y0 = bilinear_upsample(&x, 3)?;
        let gy = Tensor::from_vec(&y0.shape, rand_vec(y0.numel(), -1.0, 1.0, &mut rng))?;
        let gx = bilinear_upsample_backward(&[2, 4, 5], 3, &gy)?;
        let f = |data: &[f64]| {
            let xt = Tensor::from_vec(&[2, 4, 5], data.to_vec()).unwrap();
            dot(&bilinear_upsample(&xt, 3).unwrap().data, &gy.data)
        };
        reports.push(check_scalar_fn(
            "bilinear_upsample",
            &x.data,
            f,
            &gx.data,
            40,
            FD_STEP,
            OP_TOL,
            &mut rng,
        ));
    }

    // softmax cross entropy
    {
        let (c, h, w) = (6usize, 4usize, 4usize);
        let logits = Tensor::from_vec(&[c, h, w], rand_vec(c * h * w, -1.0, 1.0, &mut rng))?;
        let labels: Vec<usize> = (0..h * w).map(|_| rng.gen_range(0..c)).collect();
        let ignore: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.2)).collect();
        let (_, grad) = softmax_xent(&logits, &labels, &ignore)?;
        let f = |data: &[f64]| {
            let lt = Tensor::from_vec(&[c, h, w], data.to_vec()).unwrap();
            softmax_xent(&lt, &labels, &ignore).unwrap().0
        };
        reports.push(check_scalar_fn(
            "softmax_xent",
            &logits.data,
            f,
            &grad.data,
            100,
            FD_STEP,
            OP_TOL,
            &mut rng,
        ));
    }

    // masked smooth L1 (errors kept away from the kink at |e| = 1)
    {
        let (k, h, w) = (5usize, 4usize, 4usize);
        let n = h * w;
        let bank_data: Vec<f64> = (0..k * n)
            .map(|_| {
                if rng.gen_bool(0.7) {
                    rng.gen_range(-0.8..0.8)
                } else {
                    rng.gen_range(1.3..2.0)
                }
            })
            .collect();
        let bank = Tensor::from_vec(&[k, h, w], bank_data)?;
        let target = rand_vec(n, -0.05, 0.05, &mut rng);
        let gt_q: Vec<u32> = (0..n)
            .map(|_| if rng.gen_bool(0.2) { DUMMY } else { rng.gen_range(0..k as u32) })
            .collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.85)).collect();
        let (_, grad) = masked_smooth_l1(&bank, &target, &gt_q, &mask)?;
        let f = |data: &[f64]| {
            let bt = Tensor::from_vec(&[k, h, w], data.to_vec()).unwrap();
            masked_smooth_l1(&bt, &target, &gt_q, &mask).unwrap().0
        };
        reports.push(check_scalar_fn(
            "masked_smooth_l1",
            &bank.data,
            f,
            &grad.data,
            100,
            FD_STEP,
            OP_TOL,
            &mut rng,
        ));
    }

    // total loss gradients per head
    {
        let (k, h, w) = (4usize, 6usize, 6usize);
        let (target, z) = random_target(k, h, w, &mut rng);
        let out = network_output(k, h, w, &mut rng);
        let weights = LossWeights::for_k(k);
        let (_, grads) = total_loss(&out, &target, &z, &weights)?;
        let heads: [(&str, &Tensor<f64>, &Tensor<f64>); 5] = [
            ("logits_h", &out.logits_h, &grads.logits_h),
            ("logits_v", &out.logits_v, &grads.logits_v),
            ("res_h", &out.res_h, &grads.res_h),
            ("res_v", &out.res_v, &grads.res_v),
            ("depth", &out.depth, &grads.depth),
        ];
        for (name, tensor, grad) in heads {
            let f = |data: &[f64]| {
                let mut o = super::model::NetworkOutput {
                    logits_h: out.logits_h.clone(),
                    logits_v: out.logits_v.clone(),
                    res_h: out.res_h.clone(),
                    res_v: out.res_v.clone(),
                    depth: out.depth.clone(),
                };
                let t = Tensor::from_vec(&tensor.shape, data.to_vec()).unwrap();
                match name {
                    "logits_h" => o.logits_h = t,
                    "logits_v" => o.logits_v = t,
                    "res_h" => o.res_h = t,
                    "res_v" => o.res_v = t,
                    _ => o.depth = t,
                }
                total_loss(&o, &target, &z, &weights).unwrap().0.total
            };
            reports.push(check_scalar_fn(
                &format!("total_loss/{name}"),
                &tensor.data,
                f,
                &grad.data,
                100,
                FD_STEP,
                OP_TOL,
                &mut rng,
            ));
        }
    }

    // end-to-end: total-loss gradient w.r.t. 50 random weights
    {
        let k = 3usize;
        let cfg = NetConfig { k, in_channels: 3, widths: [4, 6, 6, 8, 8] };
        let net: DenseRegNet<f64> = DenseRegNet::init(cfg, rng.gen());
        let image = Tensor::from_vec(&[3, 16, 16], rand_vec(3 * 256, 0.0, 1.0, &mut rng))?;
        let (target, z) = random_target(k, 16, 16, &mut rng);
        let weights = LossWeights::for_k(k);
        let (out, cache) = net.forward(&image)?;
        let (_, head_grads) = total_loss(&out, &target, &z, &weights)?;
        let grads = net.backward(&cache, &head_grads)?;

        let n_params = net.params().len();
        let mut max_rel = 0.0f64;
        let mut checked = 0;
        for _ in 0..50 {
            let p = rng.gen_range(0..n_params);
            let coord = rng.gen_range(0..grads.grads[p].0.numel());
            let analytic = grads.grads[p].0.data[coord];
            let eval = |delta: f64| -> f64 {
                let mut nt = net.clone();
                nt.params_mut()[p].0.data[coord] += delta;
                let (o, _) = nt.forward(&image).unwrap();
                total_loss(&o, &target, &z, &weights).unwrap().0.total
            };
            let numeric = (eval(E2E_STEP) - eval(-E2E_STEP)) / (2.0 * E2E_STEP);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
        reports.push(GradCheckReport {
            op: "end_to_end".into(),
            max_rel_err: max_rel,
            tolerance: E2E_TOL,
            n_checked: checked,
        });
    }

    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_injected_sign_flip() {
        // a corrupted smooth-L1 backward must be reported as a failure
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let bank = Tensor::from_vec(&[2, 2, 2], rand_vec(8, -0.8, 0.8, &mut rng)).unwrap();
        let target = rand_vec(4, -0.1, 0.1, &mut rng);
        let gt_q = vec![0u32, 1, 0, 1];
        let mask = vec![true; 4];
        let (_, grad) = masked_smooth_l1(&bank, &target, &gt_q, &mask).unwrap();
        let flipped: Vec<f64> = grad.data.iter().map(|g| -g).collect();
        let f = |data: &[f64]| {
            let bt = Tensor::from_vec(&[2, 2, 2], data.to_vec()).unwrap();
            masked_smooth_l1(&bt, &target, &gt_q, &mask).unwrap().0
        };
        let report = check_scalar_fn(
            "masked_smooth_l1(sign-flipped)",
            &bank.data,
            f,
            &flipped,
            8,
            FD_STEP,
            OP_TOL,
            &mut rng,
        );
        assert!(!report.pass());
        assert!(report.op.contains("masked_smooth_l1"));
    }
}
