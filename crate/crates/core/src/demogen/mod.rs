//! Scripted demonstrations and the on-disk dataset format.

mod dataset;
mod expert;
mod plan;

pub use dataset::{
    decode_episode, encode_episode, read_dataset, read_dataset_with, write_dataset, DatasetManifest, DatasetReader, DatasetWriter, ReadOptions,
    FORMAT_VERSION,
};
pub use expert::{
    expert_commands, generate_episode, single_contact_phase, sub_seed, Episode, ExpertConfig, StepRecord, DEFAULT_INSTRUCTION,
    MAX_ATTEMPTS,
};
pub use plan::{ik, min_jerk, min_jerk_profile};
