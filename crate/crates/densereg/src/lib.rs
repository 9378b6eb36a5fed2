//! Dense image-to-template correspondence at desk scale.
//!
//! The crate covers the full pipeline:
//!
//! - [`template`]: a 3D face-like template mesh with part labels and named
//!   landmarks, plus the cylindrical unwrapping into a deformation-free
//!   UV square.
//! - [`synth`]: synthetic scene generation — thin plate spline warps,
//!   weak-perspective projection and a UV-driven procedural texture, with
//!   exact per-pixel ground truth.
//! - [`raster`]: a software triangle rasterizer with z-buffer visibility
//!   producing per-pixel UV, depth, part label and foreground mask.
//! - [`codec`]: the quantized regression codec — uniform tessellation of
//!   the UV square into K bins per axis, (bin, residual) encoding and the
//!   multiplexed decode back to continuous coordinates.
//! - [`net`]: a small fully convolutional network with hand-derived
//!   backward passes, the classification + residual losses, and an SGD
//!   trainer with polynomial learning rate decay.
//! - [`tasks`]: landmark localization, part segmentation transfer and
//!   depth export on predicted correspondence fields.
//! - [`metrics`]: normalized RMS landmark error, CED curves, AUC, failure
//!   rate, per-class IoU.
//! - [`cli`]: the batch command-line front end (`synth`, `train`, `infer`,
//!   `eval`, `gradcheck`, `ablate`).
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod codec;
pub mod io;
pub mod metrics;
pub mod net;
pub mod raster;
pub mod synth;
pub mod tasks;
pub mod template;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh: {0}")]
    Mesh(String),
    #[error("tps: {0}")]
    Tps(String),
    #[error("synth: {0}")]
    Synth(String),
    #[error("raster: {0}")]
    Raster(String),
    #[error("codec: {0}")]
    Codec(String),
    #[error("net: {0}")]
    Net(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
