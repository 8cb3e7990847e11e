use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which sensing augmentation a policy is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityConfig {
    Baseline,
    ContactState,
    ContactEncoder,
    Depth,
    DepthContactState,
}

impl ModalityConfig {
    pub const ALL: [ModalityConfig; 5] = [
        ModalityConfig::Baseline,
        ModalityConfig::ContactState,
        ModalityConfig::ContactEncoder,
        ModalityConfig::Depth,
        ModalityConfig::DepthContactState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModalityConfig::Baseline => "baseline",
            ModalityConfig::ContactState => "contact_state",
            ModalityConfig::ContactEncoder => "contact_encoder",
            ModalityConfig::Depth => "depth",
            ModalityConfig::DepthContactState => "depth_contact_state",
        }
    }

    pub fn contact_in_state(self) -> bool {
        matches!(self, ModalityConfig::ContactState | ModalityConfig::DepthContactState)
    }

    pub fn contact_token(self) -> bool {
        matches!(self, ModalityConfig::ContactEncoder)
    }

    pub fn uses_depth(self) -> bool {
        matches!(self, ModalityConfig::Depth | ModalityConfig::DepthContactState)
    }

    pub fn image_channels(self) -> usize {
        if self.uses_depth() {
            4
        } else {
            3
        }
    }

    /// Conditioning token count for a square image of side `image_size`.
    pub fn token_count(self, image_size: usize) -> usize {
        let p = (image_size / super::PATCH).pow(2);
        p + 2 + usize::from(self.contact_token())
    }
}

impl fmt::Display for ModalityConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality `{s}`")))
    }
}

/// Signal fed to the dedicated contact encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactInput {
    Binary,
    /// Per-fingertip forces divided by [`ContactInput::FORCE_SCALE`].
    Forces,
}

impl ContactInput {
    pub const FORCE_SCALE: f64 = 10.0;

    pub fn name(self) -> &'static str {
        match self {
            ContactInput::Binary => "binary",
            ContactInput::Forces => "forces",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(ContactInput::Binary),
            "forces" => Ok(ContactInput::Forces),
            _ => Err(Error::Config(format!("unknown contact input `{s}`"))),
        }
    }
}

/// Training objective and the matching sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    FlowMatch,
    DdpmEps,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::FlowMatch => "flow_match",
            Objective::DdpmEps => "ddpm_eps",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "flow_match" => Ok(Objective::FlowMatch),
            "ddpm_eps" => Ok(Objective::DdpmEps),
            _ => Err(Error::Config(format!("unknown objective `{s}`"))),
        }
    }
}

/// What the flow-matching head regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionHead {
    Velocity,
    Noise,
}

impl PredictionHead {
    pub fn name(self) -> &'static str {
        match self {
            PredictionHead::Velocity => "velocity",
            PredictionHead::Noise => "noise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "velocity" => Ok(PredictionHead::Velocity),
            "noise" => Ok(PredictionHead::Noise),
            _ => Err(Error::Config(format!("unknown prediction head `{s}`"))),
        }
    }
}

/// Per-robot observation and action dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbodimentSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_dim: usize,
    pub n_forces: usize,
}

impl EmbodimentSpec {
    pub fn lookup(name: &str) -> Result<Self> {
        let (state_dim, action_dim) = match name {
            "simGR1" => (7, 3),
            "simG1" => (9, 4),
            _ => return Err(Error::UnknownEmbodiment(name.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            state_dim,
            action_dim,
            n_forces: 2,
        })
    }
}

/// Denoiser and encoder sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub horizon: usize,
    pub image_size: usize,
    /// Discrete timestep count used for the timestep embedding.
    pub timesteps: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ff_mult: 2,
            horizon: 16,
            image_size: 64,
            timesteps: 1000,
        }
    }
}

/// Everything needed to rebuild a policy's parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySpec {
    pub net: NetConfig,
    pub modality: ModalityConfig,
    pub embodiment: EmbodimentSpec,
    pub contact_input: ContactInput,
    pub objective: Objective,
    pub head: PredictionHead,
    pub instructions: Vec<String>,
    pub init_seed: u64,
}

impl PolicySpec {
    pub fn new(modality: ModalityConfig, embodiment: &str, instructions: &[&str]) -> Result<Self> {
        Ok(Self {
            net: NetConfig::default(),
            modality,
            embodiment: EmbodimentSpec::lookup(embodiment)?,
            contact_input: ContactInput::Forces,
            objective: Objective::FlowMatch,
            head: PredictionHead::Velocity,
            instructions: instructions.iter().map(|s| s.to_string()).collect(),
            init_seed: 0,
        })
    }

    /// Input width of the state encoder.
    pub fn state_input_dim(&self) -> usize {
        self.embodiment.state_dim + usize::from(self.modality.contact_in_state())
    }

    pub fn contact_input_dim(&self) -> usize {
        match self.contact_input {
            ContactInput::Binary => 1,
            ContactInput::Forces => self.embodiment.n_forces,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = &self.net;
        if n.d_model == 0 || n.n_heads == 0 || n.d_model % n.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                n.d_model, n.n_heads
            )));
        }
        if n.horizon == 0 || n.timesteps < 2 || n.ff_mult == 0 {
            return Err(Error::Config("horizon, ff_mult must be ≥ 1 and timesteps ≥ 2".into()));
        }
        if n.image_size == 0 || n.image_size % super::PATCH != 0 {
            return Err(Error::Config(format!("image size {} not a multiple of 16", n.image_size)));
        }
        if self.instructions.is_empty() {
            return Err(Error::Config("policy needs at least one instruction".into()));
        }
        Ok(())
    }
}
