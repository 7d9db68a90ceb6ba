//! Deterministic f64 tensor kernels with explicit backward passes.

mod conv;
mod gradcheck;
mod ops;
mod pool;
mod tensor;

pub use conv::{conv2d, conv2d_backward, conv_output_dim, ConvGrads};
pub use gradcheck::{grad_check, relative_error, DifferentiableOp, GradCheckReport, OpFn, FD_STEP};
pub(crate) use ops::relu_backward_inplace;
pub use ops::{
    activate, activation_backward, channel_concat, channel_split, concat_channels, sigmoid, split_channels, upsample2d,
    upsample2d_backward, Activation,
};
pub use pool::{box_mean, box_mean_backward, pool2d, pool2d_backward, PoolMode, Pooled};
pub use tensor::Tensor;
