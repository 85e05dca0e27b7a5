//! The differentiable-layer engine: tensors, forward/backward passes for
//! the fixed layer set both architectures are built from, the softmax
//! cross-entropy loss, checkpoint serialization, and finite-difference
//! gradient checking.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod network;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use layers::{
    BatchNorm2d, Conv2d, Flatten, FullyConnected, GlobalAvgPool, MaxPool2d, Mode, Relu,
    ResidualBlock,
};
pub use loss::softmax_cross_entropy;
pub use network::{Network, Unit};
pub use tensor::{Parameter, Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("value count {found} does not fill shape {shape:?}")]
    Length { shape: Vec<usize>, found: usize },
    #[error("{context}: got shape {found:?}")]
    Shape { context: String, found: Vec<usize> },
    #[error("channel mismatch: input carries {input}, layer expects {expected}")]
    Channels { input: usize, expected: usize },
    #[error("no positive output dims for {h}x{w} input with k={k}, stride={s}, padding={p}")]
    OutputDims {
        h: usize,
        w: usize,
        k: usize,
        s: usize,
        p: usize,
    },
    #[error("2x2 stride-2 max pooling requires even spatial dims, got {h}x{w}")]
    OddDims { h: usize, w: usize },
    #[error("batch normalization in train mode requires batch >= 2, got {batch}")]
    SmallBatch { batch: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
    #[error("class count {classes} is below 2")]
    ClassCount { classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("gradient-check epsilon must be positive")]
    GradCheckEps,
    #[error("backward called without a cached forward pass")]
    NoCache,
    #[error("checkpoint does not start with the TBNET1 magic")]
    CkptMagic,
    #[error("checkpoint truncated")]
    CkptTruncated,
    #[error("checkpoint carries tensor {found:?} where the network expects {expected:?}")]
    CkptName { expected: String, found: String },
    #[error("checkpoint tensor {name} has dims {found:?}, network expects {expected:?}")]
    CkptShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint holds {found} tensors, network has {expected}")]
    CkptCount { expected: usize, found: usize },
    #[error("checkpoint has {0} trailing bytes")]
    CkptTrailing(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
