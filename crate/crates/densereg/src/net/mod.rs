//! Minimal tensor/layer stack with hand-derived backward passes, the
//! classification + residual losses, the toy fully convolutional network
//! with quantized-regression heads, and the SGD trainer.

mod checkpoint;
mod conv;
mod gradcheck;
mod loss;
mod model;
mod tensor;
mod train;
mod upsample;

pub use checkpoint::{load_checkpoint, save_checkpoint, DRN1_MAGIC};
pub use conv::{conv2d_backward, conv2d_forward, relu_backward, relu_forward};
pub use gradcheck::{check_all, check_scalar_fn, GradCheckReport};
pub use loss::{
    default_w_reg, masked_smooth_l1, softmax_xent, total_loss, HeadGrads, LossBreakdown,
    LossWeights,
};
pub use model::{DenseRegNet, ForwardCache, NetConfig, NetworkOutput, ParamGrads, NET_STRIDE};
pub use tensor::{Scalar, Tensor};
pub use train::{lr_at, train, LogLine, TrainConfig, TrainSample};
pub use upsample::{bilinear_upsample, bilinear_upsample_backward};
