//! Config-file sections, flag merging and provenance hashing.

use std::fs;
use std::path::{Path, PathBuf};

use modpol::nets::NetConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub gen_data: GenDataFile,
    pub train: TrainFile,
    pub eval: EvalFile,
    pub ablate: AblateFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenDataFile {
    pub embodiment: Option<String>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub depth_noise: Option<f64>,
    pub miss_probability: Option<f64>,
    pub depth: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub data: Option<PathBuf>,
    pub modality: Option<String>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub warmup_frac: Option<f64>,
    pub checkpoint_every: Option<usize>,
    pub seed: Option<u64>,
    pub contact_input: Option<String>,
    pub objective: Option<String>,
    pub head: Option<String>,
    pub net: Option<NetConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalFile {
    pub mode: Option<String>,
    pub data: Option<PathBuf>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub windows: Option<usize>,
    pub replan_every: Option<usize>,
    pub embodiment: Option<String>,
    pub zero_shot: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateFile {
    pub data: Option<PathBuf>,
    pub source_data: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub n: Option<usize>,
    pub windows: Option<usize>,
    pub replan_every: Option<usize>,
    pub jobs: Option<usize>,
    pub net: Option<NetConfig>,
}

impl FileConfig {
    /// Reads a TOML file; unknown sections or keys are rejected.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }
}

/// Flag value if given, else the file's, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the resolved settings, as embedded in every output.
pub fn config_hash<T: Serialize>(resolved: &T) -> String {
    sha256_hex(&serde_json::to_vec(resolved).expect("resolved configs serialize"))
}

/// `{command, config, config_hash}` for embedding into artifacts.
pub fn provenance<T: Serialize>(command: &str, resolved: &T) -> serde_json::Value {
    serde_json::json!({
        "command": command,
        "config": resolved,
        "config_hash": config_hash(resolved),
    })
}
