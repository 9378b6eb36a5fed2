//! The toy fully convolutional network: a 5-layer trunk at stride 4 and five
//! 1x1 heads (bin logits per axis, residual banks per axis, depth), each
//! bilinearly upsampled back to the input resolution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

use super::conv::{conv2d_backward, conv2d_forward, relu_backward, relu_forward};
use super::tensor::{Scalar, Tensor};
use super::upsample::{bilinear_upsample, bilinear_upsample_backward};

/// Total spatial stride of the trunk; input dims must be multiples of this.
pub const NET_STRIDE: usize = 4;

const HEAD_NAMES: [&str; 5] = ["logits_h", "logits_v", "res_h", "res_v", "depth"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub k: usize,
    pub in_channels: usize,
    /// Trunk channel widths, default 16/32/32/64/64.
    pub widths: [usize; 5],
}

impl NetConfig {
    pub fn new(k: usize) -> Self {
        Self { k, in_channels: 3, widths: [16, 32, 32, 64, 64] }
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<T> {
    pub w: Tensor<T>,
    pub b: Vec<T>,
    pub stride: usize,
    pub dilation: usize,
}

/// Per-pixel head outputs at input resolution.
#[derive(Debug, Clone)]
pub struct NetworkOutput<T> {
    /// `(K+1) x H x W` bin logits per axis (class K is the dummy).
    pub logits_h: Tensor<T>,
    pub logits_v: Tensor<T>,
    /// `K x H x W` residual banks per axis.
    pub res_h: Tensor<T>,
    pub res_v: Tensor<T>,
    /// `1 x H x W` normalized depth estimate.
    pub depth: Tensor<T>,
}

/// Activations retained for the backward pass.
pub struct ForwardCache<T> {
    /// Input to each trunk conv (element 0 is the image).
    trunk_inputs: Vec<Tensor<T>>,
    /// Post-ReLU output of the last trunk layer (input to all heads).
    feat: Tensor<T>,
}

/// Parameter gradients in the fixed parameter order (trunk 0..4, then heads
/// logits_h, logits_v, res_h, res_v, depth).
pub struct ParamGrads<T> {
    pub grads: Vec<(Tensor<T>, Vec<T>)>,
}

#[derive(Debug, Clone)]
pub struct DenseRegNet<T> {
    pub cfg: NetConfig,
    pub trunk: Vec<ConvLayer<T>>,
    pub heads: Vec<ConvLayer<T>>,
}

fn trunk_geometry(widths: &[usize; 5], in_channels: usize) -> [(usize, usize, usize, usize, usize); 5] {
    // (in, out, kernel, stride, dilation)
    [
        (in_channels, widths[0], 3, 1, 1),
        (widths[0], widths[1], 3, 2, 1),
        (widths[1], widths[2], 3, 1, 2),
        (widths[2], widths[3], 3, 2, 1),
        (widths[3], widths[4], 3, 1, 1),
    ]
}

impl<T: Scalar> DenseRegNet<T> {
    /// Head channel counts `(K+1, K+1, K, K, 1)`.
    pub fn head_channels(k: usize) -> [usize; 5] {
        [k + 1, k + 1, k, k, 1]
    }

    /// Initializes all weights from seeded Gaussians (std 0.05), biases zero.
    pub fn init(cfg: NetConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 0.05).unwrap();
        let mut make = |ci: usize, co: usize, kern: usize, stride: usize, dilation: usize| {
            let n = co * ci * kern * kern;
            let data = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
            ConvLayer {
                w: Tensor::from_vec(&[co, ci, kern, kern], data).unwrap(),
                b: vec![T::zero(); co],
                stride,
                dilation,
            }
        };
        let trunk = trunk_geometry(&cfg.widths, cfg.in_channels)
            .iter()
            .map(|&(ci, co, kern, s, d)| make(ci, co, kern, s, d))
            .collect();
        let heads = Self::head_channels(cfg.k)
            .iter()
            .map(|&co| make(cfg.widths[4], co, 1, 1, 1))
            .collect();
        Self { cfg, trunk, heads }
    }

    /// Runs the trunk and all heads; output spatial dims equal the input's.
    pub fn forward(&self, image: &Tensor<T>) -> Result<(NetworkOutput<T>, ForwardCache<T>)> {
        if image.shape.len() != 3 || image.shape[0] != self.cfg.in_channels {
            return Err(Error::Net(format!(
                "forward: expected {} input channels, got shape {:?}",
                self.cfg.in_channels, image.shape
            )));
        }
        let (_, h, w) = image.chw();
        if h == 0 || w == 0 || h % NET_STRIDE != 0 || w % NET_STRIDE != 0 {
            return Err(Error::Net(format!(
                "forward: spatial dims must be positive multiples of {NET_STRIDE}, got {h}x{w}"
            )));
        }
        let mut trunk_inputs = Vec::with_capacity(self.trunk.len());
        let mut x = image.clone();
        for layer in &self.trunk {
            trunk_inputs.push(x.clone());
            let y = conv2d_forward(&x, &layer.w, &layer.b, layer.stride, layer.dilation)?;
            x = relu_forward(&y);
        }
        let feat = x;
        let mut ups = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let pre = conv2d_forward(&feat, &head.w, &head.b, 1, 1)?;
            ups.push(bilinear_upsample(&pre, NET_STRIDE)?);
        }
        let depth = ups.pop().unwrap();
        let res_v = ups.pop().unwrap();
        let res_h = ups.pop().unwrap();
        let logits_v = ups.pop().unwrap();
        let logits_h = ups.pop().unwrap();
        Ok((
            NetworkOutput { logits_h, logits_v, res_h, res_v, depth },
            ForwardCache { trunk_inputs, feat },
        ))
    }

    /// Backpropagates head gradients to all parameters.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        head_grads: &super::loss::HeadGrads<T>,
    ) -> Result<ParamGrads<T>> {
        let gs = [
            &head_grads.logits_h,
            &head_grads.logits_v,
            &head_grads.res_h,
            &head_grads.res_v,
            &head_grads.depth,
        ];
        let (fc, fh, fw) = cache.feat.chw();
        let mut g_feat = Tensor::zeros(&[fc, fh, fw]);
        let mut head_grads_out = Vec::with_capacity(self.heads.len());
        for (head, g_full) in self.heads.iter().zip(gs) {
            let pre_shape = [head.w.shape[0], fh, fw];
            let g_pre = bilinear_upsample_backward(&pre_shape, NET_STRIDE, g_full)?;
            let (gx, gw, gb) = conv2d_backward(&cache.feat, &head.w, 1, 1, &g_pre)?;
            for (a, b) in g_feat.data.iter_mut().zip(&gx.data) {
                *a = *a + *b;
            }
            head_grads_out.push((gw, gb));
        }
        let mut trunk_grads_rev = Vec::with_capacity(self.trunk.len());
        let mut g = g_feat;
        for i in (0..self.trunk.len()).rev() {
            let post = if i + 1 < self.trunk.len() {
                &cache.trunk_inputs[i + 1]
            } else {
                &cache.feat
            };
            let g_pre = relu_backward(post, &g);
            let layer = &self.trunk[i];
            let (gx, gw, gb) = conv2d_backward(
                &cache.trunk_inputs[i],
                &layer.w,
                layer.stride,
                layer.dilation,
                &g_pre,
            )?;
            trunk_grads_rev.push((gw, gb));
            g = gx;
        }
        let mut grads: Vec<(Tensor<T>, Vec<T>)> = trunk_grads_rev.into_iter().rev().collect();
        grads.extend(head_grads_out);
        Ok(ParamGrads { grads })
    }

    /// Parameters in the fixed order used by [`ParamGrads`] and checkpoints.
    pub fn params_mut(&mut self) -> Vec<(&mut Tensor<T>, &mut Vec<T>)> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut())
            .map(|l| (&mut l.w, &mut l.b))
            .collect()
    }

    pub fn params(&self) -> Vec<(&Tensor<T>, &Vec<T>)> {
        self.trunk.iter().chain(self.heads.iter()).map(|l| (&l.w, &l.b)).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.trunk.len()).map(|i| format!("trunk{i}")).collect();
        names.extend(HEAD_NAMES.iter().map(|n| format!("head_{n}")));
        names
    }

    pub fn map_to<U: Scalar>(&self) -> DenseRegNet<U> {
        let conv = |l: &ConvLayer<T>| ConvLayer {
            w: l.w.map_to::<U>(),
            b: l.b.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
            stride: l.stride,
            dilation: l.dilation,
        };
        DenseRegNet {
            cfg: self.cfg.clone(),
            trunk: self.trunk.iter().map(conv).collect(),
            heads: self.heads.iter().map(conv).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_dims_and_channels() {
        let net: DenseRegNet<f32> = DenseRegNet::init(NetConfig::new(10), 0);
        let image = Tensor::zeros(&[3, 32, 32]);
        let (out, _) = net.forward(&image).unwrap();
        assert_eq!(out.logits_h.shape, vec![11, 32, 32]);
        assert_eq!(out.logits_v.shape, vec![11, 32, 32]);
        assert_eq!(out.res_h.shape, vec![10, 32, 32]);
        assert_eq!(out.res_v.shape, vec![10, 32, 32]);
        assert_eq!(out.depth.shape, vec![1, 32, 32]);
    }

    #[test]
    fn rejects_bad_input_dims() {
        let net: DenseRegNet<f32> = DenseRegNet::init(NetConfig::new(5), 0);
        assert!(net.forward(&Tensor::zeros(&[3, 30, 32])).is_err());
        assert!(net.forward(&Tensor::zeros(&[1, 32, 32])).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let a: DenseRegNet<f32> = DenseRegNet::init(NetConfig::new(5), 7);
        let b: DenseRegNet<f32> = DenseRegNet::init(NetConfig::new(5), 7);
        for ((wa, ba), (wb, bb)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(wa.data, wb.data);
            assert_eq!(ba, bb);
        }
    }
}
