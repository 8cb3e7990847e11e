//! The observation → action boundary and the policies that sit behind it.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demogen::{decode_episode, encode_episode, expert_commands, Episode, ExpertConfig, ReadOptions, StepRecord};
use crate::diffusion::{default_schedule, sample_actions_ddpm, sample_actions_flow, FlowMatchConfig};
use crate::error::{Error, Result};
use crate::nets::{EmbodimentSpec, Objective, Policy};
use crate::simenv::Observation;

const REQUEST_MAGIC: &[u8; 4] = b"MPRQ";
const RESPONSE_MAGIC: &[u8; 4] = b"MPRS";

/// One query from the environment side. `episode_seed` and `step` are
/// bookkeeping: learned policies ignore them, oracles key on them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRequest {
    pub embodiment: String,
    pub instruction: String,
    pub episode_seed: u64,
    pub step: u64,
    pub observation: Observation,
}

impl PolicyRequest {
    /// Encodes as a single-step dataset record with an empty action.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let record = Episode {
            embodiment: self.embodiment.clone(),
            instruction: self.instruction.clone(),
            seed: self.episode_seed,
            success: false,
            steps: vec![StepRecord { observation: self.observation.clone(), action: Vec::new() }],
        };
        let mut out = REQUEST_MAGIC.to_vec();
        out.extend(self.step.to_le_bytes());
        out.extend(encode_episode(&record)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != REQUEST_MAGIC {
            return Err(Error::Malformed("not a policy request".into()));
        }
        let step = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes"));
        let mut record = decode_episode(&bytes[12..], ReadOptions::default())?;
        if record.steps.len() != 1 {
            return Err(Error::Malformed(format!("request carries {} steps", record.steps.len())));
        }
        let observation = record.steps.remove(0).observation;
        Ok(Self {
            embodiment: record.embodiment,
            instruction: record.instruction,
            episode_seed: record.seed,
            step,
            observation,
        })
    }
}

/// An action chunk, `H` rows of absolute joint and gripper targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyResponse {
    pub actions: Vec<Vec<f64>>,
}

impl PolicyResponse {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let cols = self.actions.first().map_or(0, Vec::len);
        if self.actions.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged action chunk".into()));
        }
        let mut out = RESPONSE_MAGIC.to_vec();
        out.extend((self.actions.len() as u32).to_le_bytes());
        out.extend((cols as u32).to_le_bytes());
        for v in self.actions.iter().flatten() {
            out.extend(v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != RESPONSE_MAGIC {
            return Err(Error::Malformed("not a policy response".into()));
        }
        let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() != rows * cols * 8 {
            return Err(Error::Malformed(format!("response body has {} bytes for {rows}×{cols}", body.len())));
        }
        let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let actions = if cols == 0 { vec![Vec::new(); rows] } else { values.chunks(cols).map(<[f64]>::to_vec).collect() };
        Ok(Self { actions })
    }
}

/// Anything that turns observations into action chunks.
pub trait ActionSource {
    /// Embodiment the returned actions are meant for.
    fn embodiment(&self) -> &EmbodimentSpec;
    /// Rows per returned chunk.
    fn horizon(&self) -> usize;
    /// Called before the first query of every episode.
    fn reset(&mut self, _episode_seed: u64) -> Result<()> {
        Ok(())
    }
    fn act(&mut self, req: &PolicyRequest) -> Result<PolicyResponse>;
}

impl<S: ActionSource + ?Sized> ActionSource for Box<S> {
    fn embodiment(&self) -> &EmbodimentSpec {
        (**self).embodiment()
    }

    fn horizon(&self) -> usize {
        (**self).horizon()
    }

    fn reset(&mut self, episode_seed: u64) -> Result<()> {
        (**self).reset(episode_seed)
    }

    fn act(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        (**self).act(req)
    }
}

/// Serves one encoded request, as the inference side of the loop would.
pub fn serve(source: &mut dyn ActionSource, request: &[u8]) -> Result<Vec<u8>> {
    let req = PolicyRequest::from_bytes(request)?;
    source.act(&req)?.to_bytes()
}

fn query_seed(base: u64, episode_seed: u64, step: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(episode_seed);
    rng.set_word_pos(u128::from(step) * 16);
    rng.next_u64()
}

/// A trained diffusion policy sampled with a fixed seed per query.
#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    policy: Policy,
    sampler_seed: u64,
    flow: FlowMatchConfig,
}

impl DiffusionPolicy {
    pub fn new(policy: Policy, sampler_seed: u64) -> Result<Self> {
        let spec = policy.spec();
        let flow = FlowMatchConfig { head: spec.head, timesteps: spec.net.timesteps, ..Default::default() };
        flow.validate()?;
        Ok(Self { policy, sampler_seed, flow })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    /// Denormalized chunk for an observation; `seed` fixes the initial latent.
    pub fn sample(&self, obs: &Observation, instruction: &str, seed: u64) -> Result<Vec<Vec<f64>>> {
        let z = self.policy.conditioning(obs, instruction)?;
        let net = self.policy.with_conditioning(z);
        let x = match self.policy.spec().objective {
            Objective::FlowMatch => sample_actions_flow(&net, &self.flow, seed)?,
            Objective::DdpmEps => sample_actions_ddpm(&net, &default_schedule(self.policy.spec().net.timesteps)?, seed)?,
        };
        let a = self.policy.action_dim();
        Ok(x.data().chunks(a).map(|r| self.policy.stats().denormalize_action(r)).collect())
    }
}

impl ActionSource for DiffusionPolicy {
    fn embodiment(&self) -> &EmbodimentSpec {
        &self.policy.spec().embodiment
    }

    fn horizon(&self) -> usize {
        self.policy.horizon()
    }

    fn act(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        let seed = query_seed(self.sampler_seed, req.episode_seed, req.step);
        Ok(PolicyResponse { actions: self.sample(&req.observation, &req.instruction, seed)? })
    }
}

/// Pads or truncates `v` to `dim`, filling with zeros.
pub fn fit_width<T: Copy + Default>(v: &[T], dim: usize) -> Vec<T> {
    let mut out: Vec<T> = v.iter().copied().take(dim).collect();
    out.resize(dim, T::default());
    out
}

/// Runs a policy on another embodiment without adaptation: states are
/// zero-padded or truncated to what the policy expects, and actions are
/// truncated or zero-padded back to the target's width.
#[derive(Debug, Clone)]
pub struct ZeroShot<S> {
    inner: S,
    target: EmbodimentSpec,
}

impl<S: ActionSource> ZeroShot<S> {
    pub fn new(inner: S, target: &str) -> Result<Self> {
        Ok(Self { inner, target: EmbodimentSpec::lookup(target)? })
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    pub fn adapt_request(&self, req: &PolicyRequest) -> PolicyRequest {
        let src = self.inner.embodiment();
        let mut out = req.clone();
        out.embodiment = src.name.clone();
        out.observation.state = fit_width(&req.observation.state, src.state_dim);
        out.observation.forces = fit_width(&req.observation.forces, src.n_forces);
        out
    }

    pub fn adapt_response(&self, resp: PolicyResponse) -> PolicyResponse {
        let a = self.target.action_dim;
        PolicyResponse { actions: resp.actions.iter().map(|r| fit_width(r, a)).collect() }
    }
}

impl<S: ActionSource> ActionSource for ZeroShot<S> {
    fn embodiment(&self) -> &EmbodimentSpec {
        &self.target
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn reset(&mut self, episode_seed: u64) -> Result<()> {
        self.inner.reset(episode_seed)
    }

    fn act(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        let inner_req = self.adapt_request(req);
        let resp = self.inner.act(&inner_req)?;
        Ok(self.adapt_response(resp))
    }
}

/// The scripted expert as an oracle policy. It plans from the episode seed,
/// so it only makes sense in environments reset with that seed.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    spec: EmbodimentSpec,
    cfg: ExpertConfig,
    horizon: usize,
    plan: Vec<Vec<f64>>,
}

impl ExpertPolicy {
    /// Never misses a grasp on purpose.
    pub fn new(embodiment: &str, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self {
            spec: EmbodimentSpec::lookup(embodiment)?,
            cfg: ExpertConfig { miss_probability: 0.0, ..ExpertConfig::default() },
            horizon,
            plan: Vec::new(),
        })
    }
}

fn chunk_from(rows: &[Vec<f64>], start: usize, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let last = rows.last().ok_or_else(|| Error::Contract("no actions to replay".into()))?;
    Ok((start..start + horizon).map(|i| rows.get(i).unwrap_or(last).clone()).collect())
}

impl ActionSource for ExpertPolicy {
    fn embodiment(&self) -> &EmbodimentSpec {
        &self.spec
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, episode_seed: u64) -> Result<()> {
        self.plan = expert_commands(&self.spec.name, episode_seed, &self.cfg)?;
        Ok(())
    }

    fn act(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        Ok(PolicyResponse { actions: chunk_from(&self.plan, req.step as usize, self.horizon)? })
    }
}

/// Replays recorded actions, keyed by episode seed; the tail of an episode is
/// padded by repeating its final action.
#[derive(Debug, Clone)]
pub struct ReplayPolicy {
    spec: EmbodimentSpec,
    horizon: usize,
    episodes: HashMap<u64, Vec<Vec<f64>>>,
}

impl ReplayPolicy {
    pub fn new(episodes: &[Episode], horizon: usize) -> Result<Self> {
        let first = episodes.first().ok_or_else(|| Error::Contract("nothing to replay".into()))?;
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        let map = episodes
            .iter()
            .map(|e| (e.seed, e.steps.iter().map(|s| s.action.iter().map(|&v| v as f64).collect()).collect()))
            .collect();
        Ok(Self { spec: EmbodimentSpec::lookup(&first.embodiment)?, horizon, episodes: map })
    }
}

impl ActionSource for ReplayPolicy {
    fn embodiment(&self) -> &EmbodimentSpec {
        &self.spec
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn act(&mut self, req: &PolicyRequest) -> Result<PolicyResponse> {
        let rows = self
            .episodes
            .get(&req.episode_seed)
            .ok_or_else(|| Error::Data(format!("no recorded episode with seed {}", req.episode_seed)))?;
        Ok(PolicyResponse { actions: chunk_from(rows, req.step as usize, self.horizon)? })
    }
}
