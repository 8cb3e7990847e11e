//! Single-file policy checkpoints.
//!
//! ```text
//! "MPCK" | version: u32 | header length: u64 | JSON header
//! f64 LE parameter data, in header order
//! f64 LE optimizer moments m then v, when present
//! crc32 of everything above: u32
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{
    ContactInput, EmbodimentSpec, ModalityConfig, NetConfig, Objective, PolicySpec, PredictionHead,
};
use super::policy::{NormStats, Policy};
use crate::error::{Error, Result};
use crate::Tensor;

const MAGIC: &[u8; 4] = b"MPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// AdamW moments saved alongside the parameters for exact resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSnapshot {
    /// Number of optimizer updates applied so far.
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: PolicySpec,
    pub stats: NormStats,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerSnapshot>,
    /// Training step the parameters correspond to.
    pub step: u64,
    /// Free-form provenance (resolved training config, dataset id, ...).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetRecord {
    d_model: usize,
    n_layers: usize,
    n_heads: usize,
    ff_mult: usize,
    horizon: usize,
    image_size: usize,
    timesteps: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRecord {
    net: NetRecord,
    modality: String,
    embodiment: String,
    contact_input: String,
    objective: String,
    head: String,
    instructions: Vec<String>,
    init_seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StatsRecord {
    state_mean: Vec<f64>,
    state_std: Vec<f64>,
    action_mean: Vec<f64>,
    action_std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: SpecRecord,
    stats: StatsRecord,
    tensors: Vec<TensorRecord>,
    step: u64,
    optimizer_step: Option<u64>,
    meta: serde_json::Value,
}

impl SpecRecord {
    fn from_spec(s: &PolicySpec) -> Self {
        let n = &s.net;
        Self {
            net: NetRecord {
                d_model: n.d_model,
                n_layers: n.n_layers,
                n_heads: n.n_heads,
                ff_mult: n.ff_mult,
                horizon: n.horizon,
                image_size: n.image_size,
                timesteps: n.timesteps,
            },
            modality: s.modality.name().to_string(),
            embodiment: s.embodiment.name.clone(),
            contact_input: s.contact_input.name().to_string(),
            objective: s.objective.name().to_string(),
            head: s.head.name().to_string(),
            instructions: s.instructions.clone(),
            init_seed: s.init_seed,
        }
    }

    fn into_spec(self) -> Result<PolicySpec> {
        let n = self.net;
        Ok(PolicySpec {
            net: NetConfig {
                d_model: n.d_model,
                n_layers: n.n_layers,
                n_heads: n.n_heads,
                ff_mult: n.ff_mult,
                horizon: n.horizon,
                image_size: n.image_size,
                timesteps: n.timesteps,
            },
            modality: self.modality.parse::<ModalityConfig>()?,
            embodiment: EmbodimentSpec::lookup(&self.embodiment)?,
            contact_input: ContactInput::parse(&self.contact_input)?,
            objective: Objective::parse(&self.objective)?,
            head: PredictionHead::parse(&self.head)?,
            instructions: self.instructions,
            init_seed: self.init_seed,
        })
    }
}

fn malformed(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Malformed(format!("{}: {what}", path.display()))
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, step: u64) -> Self {
        Self {
            spec: policy.spec().clone(),
            stats: policy.stats().clone(),
            params: policy
                .params()
                .iter()
                .map(|(_, name, t)| {
                    let values = Tensor::new(t.shape(), t.data().to_vec()).expect("shape matches its own data");
                    (name.to_string(), values)
                })
                .collect(),
            optimizer: None,
            step,
            meta: serde_json::Value::Null,
        }
    }

    /// Rebuilds the policy, validating every tensor name and shape.
    pub fn to_policy(&self) -> Result<Policy> {
        let mut p = Policy::new(self.spec.clone(), self.stats.clone())?;
        p.load_values(&self.params)?;
        Ok(p)
    }

    /// Config error unless the checkpoint was trained for this embodiment and modality.
    pub fn expect(&self, embodiment: &str, modality: Option<ModalityConfig>) -> Result<()> {
        if self.spec.embodiment.name != embodiment {
            return Err(Error::Config(format!(
                "checkpoint is for {}, not {embodiment}",
                self.spec.embodiment.name
            )));
        }
        if let Some(m) = modality.filter(|&m| m != self.spec.modality) {
            return Err(Error::Config(format!("checkpoint uses modality {}, not {m}", self.spec.modality)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.stats;
        let header = Header {
            spec: SpecRecord::from_spec(&self.spec),
            stats: StatsRecord {
                state_mean: s.state_mean.clone(),
                state_std: s.state_std.clone(),
                action_mean: s.action_mean.clone(),
                action_std: s.action_std.clone(),
            },
            tensors: self
                .params
                .iter()
                .map(|(name, t)| TensorRecord { name: name.clone(), shape: t.shape().to_vec() })
                .collect(),
            step: self.step,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            meta: self.meta.clone(),
        };
        if let Some(o) = &self.optimizer {
            let fits = |mv: &[Vec<f64>]| {
                mv.len() == self.params.len() && mv.iter().zip(&self.params).all(|(x, (_, t))| x.len() == t.len())
            };
            if !fits(&o.m) || !fits(&o.v) {
                return Err(Error::Shape("optimizer moments do not match parameter shapes".into()));
            }
        }
        let json = serde_json::to_vec(&header).map_err(|e| Error::Malformed(e.to_string()))?;
        let mut buf = Vec::new();
        buf.extend(MAGIC);
        buf.extend(CHECKPOINT_VERSION.to_le_bytes());
        buf.extend((json.len() as u64).to_le_bytes());
        buf.extend(&json);
        let tensors = self.params.iter().map(|(_, t)| t.data());
        let moments = self.optimizer.iter().flat_map(|o| o.m.iter().chain(&o.v)).map(Vec::as_slice);
        for block in tensors.chain(moments) {
            for v in block {
                buf.extend(v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend(crc.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(Error::BadMagic { path: path.to_path_buf() });
        }
        let truncated = || Error::Truncated("checkpoint".into(), path.to_path_buf());
        if bytes.len() < 20 {
            return Err(truncated());
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { path: path.to_path_buf(), found: version, expected: CHECKPOINT_VERSION });
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        let hlen = usize::try_from(u64::from_le_bytes(body[8..16].try_into().unwrap())).map_err(|_| truncated())?;
        let data_at = 16usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(truncated)?;
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(Error::Checksum { block: "checkpoint".into(), path: path.to_path_buf() });
        }
        let header: Header = serde_json::from_slice(&body[16..data_at]).map_err(|e| malformed(path, e))?;

        let sizes: Vec<usize> = header.tensors.iter().map(|t| t.shape.iter().product()).collect();
        let total: usize = sizes.iter().sum();
        let blocks = if header.optimizer_step.is_some() { 3 } else { 1 };
        if body.len() - data_at != blocks * total * 8 {
            return Err(malformed(path, format!("{} data bytes for {total} scalars", body.len() - data_at)));
        }
        let mut values = body[data_at..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();

        let mut params = Vec::with_capacity(header.tensors.len());
        for (rec, &n) in header.tensors.iter().zip(&sizes) {
            params.push((rec.name.clone(), Tensor::new(&rec.shape, take(n))?));
        }
        let optimizer = header.optimizer_step.map(|step| {
            let m = sizes.iter().map(|&n| take(n)).collect();
            let v = sizes.iter().map(|&n| take(n)).collect();
            OptimizerSnapshot { step, m, v }
        });
        let st = header.stats;
        Ok(Self {
            spec: header.spec.into_spec()?,
            stats: NormStats {
                state_mean: st.state_mean,
                state_std: st.state_std,
                action_mean: st.action_mean,
                action_std: st.action_std,
            },
            params,
            optimizer,
            step: header.step,
            meta: header.meta,
        })
    }

    /// Writes atomically via a sibling temporary file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
