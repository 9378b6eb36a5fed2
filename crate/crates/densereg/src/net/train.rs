//! SGD trainer with momentum, warm start and polynomial learning rate decay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::QuantizedTarget;
use crate::{Error, Result};

use super::loss::{default_w_reg, total_loss, LossWeights};
use super::model::{DenseRegNet, NetConfig, NET_STRIDE};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub k: usize,
    pub base_lr: f64,
    pub poly_power: f64,
    pub iterations: usize,
    pub warmup_iters: usize,
    pub warmup_lr: f64,
    pub batch_size: usize,
    pub w_cls: f64,
    pub w_reg: f64,
    pub w_depth: f64,
    pub seed: u64,
    /// Square input crop side; must be a multiple of the net stride.
    pub crop: usize,
    pub widths: [usize; 5],
}

impl TrainConfig {
    /// Defaults; `w_reg` keyed to K (40 quantized, 70 plain regression).
    pub fn new(k: usize) -> Self {
        Self {
            k,
            base_lr: 0.001,
            poly_power: 0.9,
            iterations: 2000,
            warmup_iters: 200,
            warmup_lr: 0.0001,
            batch_size: 4,
            w_cls: 1.0,
            w_reg: default_w_reg(k),
            w_depth: 10.0,
            seed: 0,
            crop: 64,
            widths: [16, 32, 32, 64, 64],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0
            || self.base_lr <= 0.0
            || self.poly_power <= 0.0
            || self.iterations == 0
            || self.warmup_lr <= 0.0
            || self.batch_size == 0
            || self.w_cls <= 0.0
            || self.w_reg <= 0.0
            || self.w_depth <= 0.0
            || self.crop == 0
        {
            return Err(Error::Config("train config fields must be positive".into()));
        }
        if self.crop % NET_STRIDE != 0 {
            return Err(Error::Config(format!("crop must be a multiple of {NET_STRIDE}")));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { w_cls: self.w_cls, w_reg: self.w_reg, w_depth: self.w_depth }
    }
}

/// Warmup learning rate for the first `warmup_iters` iterations, then
/// `base_lr * (1 - t/T)^power`.
pub fn lr_at(cfg: &TrainConfig, t: usize) -> f64 {
    if t < cfg.warmup_iters {
        cfg.warmup_lr
    } else {
        cfg.base_lr * (1.0 - t as f64 / cfg.iterations as f64).powf(cfg.poly_power)
    }
}

/// One training example: image tensor, encoded target, depth ground truth.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Tensor<f32>,
    pub target: QuantizedTarget,
    pub z: Vec<f32>,
}

/// One line of the training log: `iter lr loss loss_cls loss_reg loss_depth`.
#[derive(Debug, Clone, Copy)]
pub struct LogLine {
    pub iter: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_cls: f64,
    pub loss_reg: f64,
    pub loss_depth: f64,
}

impl std::fmt::Display for LogLine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:.6e} {:.6e} {:.6e} {:.6e} {:.6e}",
            self.iter, self.lr, self.loss, self.loss_cls, self.loss_reg, self.loss_depth
        )
    }
}

fn crop_sample(sample: &TrainSample, crop: usize, rng: &mut ChaCha8Rng) -> Result<TrainSample> {
    let (c, h, w) = sample.image.chw();
    if h < crop || w < crop {
        return Err(Error::Net(format!("sample {h}x{w} smaller than crop {crop}")));
    }
    if h == crop && w == crop {
        return Ok(sample.clone());
    }
    let top = rng.gen_range(0..=h - crop);
    let left = rng.gen_range(0..=w - crop);
    let mut image = Tensor::zeros(&[c, crop, crop]);
    for ci in 0..c {
        for y in 0..crop {
            let src = (ci * h + top + y) * w + left;
            let dst = (ci * crop + y) * crop;
            image.data[dst..dst + crop].copy_from_slice(&sample.image.data[src..src + crop]);
        }
    }
    let n = crop * crop;
    let mut target = QuantizedTarget {
        k: sample.target.k,
        width: crop,
        height: crop,
        q_h: Vec::with_capacity(n),
        q_v: Vec::with_capacity(n),
        r_h: Vec::with_capacity(n),
        r_v: Vec::with_capacity(n),
        mask: Vec::with_capacity(n),
    };
    let mut z = Vec::with_capacity(n);
    for y in 0..crop {
        for x in 0..crop {
            let src = (top + y) * w + left + x;
            target.q_h.push(sample.target.q_h[src]);
            target.q_v.push(sample.target.q_v[src]);
            target.r_h.push(sample.target.r_h[src]);
            target.r_v.push(sample.target.r_v[src]);
            target.mask.push(sample.target.mask[src]);
            z.push(sample.z[src]);
        }
    }
    Ok(TrainSample { image, target, z })
}

/// Trains a network from scratch; deterministic given `(dataset, cfg)`.
/// Aborts with a diagnostic if the loss goes non-finite.
pub fn train(dataset: &[TrainSample], cfg: &TrainConfig) -> Result<(DenseRegNet<f32>, Vec<LogLine>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Net("train: dataset is empty".into()));
    }
    for s in dataset {
        if s.target.k != cfg.k {
            return Err(Error::Net(format!(
                "train: sample target K = {} but config K = {}",
                s.target.k, cfg.k
            )));
        }
    }
    let net_cfg = NetConfig { k: cfg.k, in_channels: 3, widths: cfg.widths };
    let mut net: DenseRegNet<f32> = DenseRegNet::init(net_cfg, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5EED));
    let momentum = 0.9f32;
    let mut velocity: Vec<(Tensor<f32>, Vec<f32>)> = net
        .params()
        .iter()
        .map(|(w, b)| (Tensor::zeros(&w.shape), vec![0.0; b.len()]))
        .collect();
    let weights = cfg.weights();
    let mut log = Vec::with_capacity(cfg.iterations);

    for t in 0..cfg.iterations {
        let lr = lr_at(cfg, t) as f32;
        let mut batch_grads: Option<Vec<(Tensor<f32>, Vec<f32>)>> = None;
        let mut loss_sum = 0.0f64;
        let mut cls_sum = 0.0f64;
        let mut reg_sum = 0.0f64;
        let mut depth_sum = 0.0f64;
        for _ in 0..cfg.batch_size {
            let idx = rng.gen_range(0..dataset.len());
            let sample = crop_sample(&dataset[idx], cfg.crop, &mut rng)?;
            let (out, cache) = net.forward(&sample.image)?;
            let (breakdown, head_grads) = total_loss(&out, &sample.target, &sample.z, &weights)?;
            loss_sum += breakdown.total as f64;
            cls_sum += breakdown.cls as f64;
            reg_sum += breakdown.reg as f64;
            depth_sum += breakdown.depth as f64;
            let grads = net.backward(&cache, &head_grads)?;
            match &mut batch_grads {
                None => batch_grads = Some(grads.grads),
                Some(acc) => {
                    for ((aw, ab), (gw, gb)) in acc.iter_mut().zip(grads.grads) {
                        for (a, g) in aw.data.iter_mut().zip(gw.data) {
                            *a += g;
                        }
                        for (a, g) in ab.iter_mut().zip(gb) {
                            *a += g;
                        }
                    }
                }
            }
        }
        let inv_b = 1.0 / cfg.batch_size as f32;
        let loss = loss_sum * inv_b as f64;
        if !loss.is_finite() {
            return Err(Error::Net(format!("train: loss diverged (non-finite) at iteration {t}")));
        }
        let grads = batch_grads.unwrap();
        for (((w, b), (vw, vb)), (gw, gb)) in
            net.params_mut().into_iter().zip(velocity.iter_mut()).zip(grads)
        {
            for ((wi, vi), gi) in w.data.iter_mut().zip(vw.data.iter_mut()).zip(gw.data) {
                *vi = momentum * *vi + gi * inv_b;
                *wi -= lr * *vi;
            }
            for ((bi, vi), gi) in b.iter_mut().zip(vb.iter_mut()).zip(gb) {
                *vi = momentum * *vi + gi * inv_b;
                *bi -= lr * *vi;
            }
        }
        log.push(LogLine {
            iter: t,
            lr: lr as f64,
            loss,
            loss_cls: cls_sum * inv_b as f64,
            loss_reg: reg_sum * inv_b as f64,
            loss_depth: depth_sum * inv_b as f64,
        });
    }
    Ok((net, log))
}
