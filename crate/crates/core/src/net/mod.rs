//! The two-stage temporal denoiser: layer tables, weights and forward passes.

mod forward;
mod model;
mod spec;

pub use forward::{block_forward, cascade_forward, cascade_on_tape, clip_batch_nodes, BoundLayer, BoundModel};
pub use model::{LayerParams, Model};
pub use spec::{
    BlockSpec, ChannelParams, EncoderDecoderLayout, LayerKind, LayerSpec, NetworkSpec, FRAMES_PER_BLOCK,
    FRAME_CHANNELS, NOISE_MAP_CHANNELS, STAGE_COUNT, UPSAMPLE_FACTOR,
};
