//! Residual encoder U-Net over 2-D patches, generic over `f32`/`f64`.

mod checkpoint;
mod config;
mod layers;
mod params;
mod tensor;
mod unet;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorRecord, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{parameter_count, NetworkConfig};
pub use layers::{
    conv2d_backward, conv2d_forward, instance_norm_backward, instance_norm_forward, leaky_relu, leaky_relu_backward,
    upconv_backward, upconv_forward, ConvGeom, NormCache,
};
pub use params::{NetworkParams, ParamEntry, ParamInit, ParamLayout};
pub use tensor::{Real, Tensor};
pub use unet::{
    residual_block, softmax_backward, softmax_probabilities, ActivationShapeTrace, BlockWeights, ConvWeights,
    NormWeights, ResEncUNet, Tape, TraceEntry,
};
