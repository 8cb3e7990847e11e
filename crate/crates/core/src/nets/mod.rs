//! Learned components: patch embedding, modality encoders and the DiT denoiser.

mod checkpoint;
mod config;
mod layers;
mod patch;
mod policy;

pub use checkpoint::{Checkpoint, OptimizerSnapshot, CHECKPOINT_VERSION};
pub use config::{ContactInput, EmbodimentSpec, ModalityConfig, NetConfig, Objective, PolicySpec, PredictionHead};
pub use layers::{multi_head_attention, sinusoidal_embedding, Init, LayerNorm, Linear, Mlp};
pub use patch::{Image, PatchEmbedder, PATCH};
pub use policy::{Conditioned, NormStats, Policy, DEPTH_FEATURE_SCALE};

#[cfg(test)]
mod tests;
