//! Small time- and metadata-conditioned encoder-decoder network.
//!
//! Each encoder group is `conv -> norm -> GELU -> (+ embedding) -> conv ->
//! norm -> GELU`, followed by 2x2 max pooling. The embedding is the GELU of
//! the summed projections of sinusoidal time features and the metadata
//! vector; each encoder group adds its own linear projection of it as a
//! per-channel shift. Decoder groups upsample with 2x2 transposed
//! convolutions and concatenate the matching encoder output.

pub mod checkpoint;
mod layers;
mod net;
mod stack;
mod train;

pub use net::{Layout, NetConfig, ParamKind, Segment, SegmentInit, Tape, VectorFieldNet};
pub use stack::ChannelStack;
pub use train::{
    batch_loss, loss_and_grad, pairwise_sum, train, BatchSampler, EpochLog, Sample, TrainConfig, TrainReport,
    TrainState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, DEFAULT_BATCH, DEFAULT_LR, LR_DECAY,
};

#[cfg(test)]
mod tests;
