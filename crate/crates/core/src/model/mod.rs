//! The masked-modeling network: patch projection, channel/time embeddings,
//! per-step masking, a pre-norm transformer encoder with an appended global
//! token, a narrower decoder, and the momentum copy of the encoder.

mod checkpoint;
mod config;
mod mask;
pub(crate) mod network;
mod params;
mod state;
mod tokens;

pub use checkpoint::{BlobEntry, Checkpoint, CHECKPOINT_FORMAT, MANIFEST_FILE, PARAMS_FILE};
pub use config::{ChannelPolicy, ModelConfig};
pub use mask::{n_visible, sample_mask, MaskPlan};
pub use network::AttentionMaps;
pub use params::{decoder_layout, encoder_layout, init_from_layout, Bound, ParamSet, INIT_STD};
pub use state::ModelState;
pub use tokens::{
    decode, embed, encode, momentum_encode, patchify, Encoded, TokenGrid, TokenIndex,
};

#[cfg(test)]
mod tests;
