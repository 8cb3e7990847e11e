use serde::{Deserialize, Serialize};

use super::policy::{serve, ActionSource, PolicyRequest, PolicyResponse};
use crate::demogen::DEFAULT_INSTRUCTION;
use crate::error::{Error, Result};
use crate::simenv::{Env, EnvConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOptions {
    /// Actions executed from each chunk before querying again.
    pub replan_every: usize,
    pub instruction: String,
    pub env: EnvConfig,
    pub config_id: String,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            replan_every: 16,
            instruction: DEFAULT_INSTRUCTION.to_string(),
            env: EnvConfig::default(),
            config_id: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub config_id: String,
    pub embodiment: String,
    pub replan_every: usize,
    pub n_rollouts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub rollouts: Vec<RolloutRecord>,
}

impl RolloutReport {
    /// Builds the report; the rate is a single division of two counts.
    pub fn from_records(config_id: &str, embodiment: &str, replan_every: usize, rollouts: Vec<RolloutRecord>) -> Self {
        let n = rollouts.len();
        let successes = rollouts.iter().filter(|r| r.success).count();
        Self {
            config_id: config_id.to_string(),
            embodiment: embodiment.to_string(),
            replan_every,
            n_rollouts: n,
            successes,
            success_rate: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            rollouts,
        }
    }
}

/// Runs `n` episodes on `embodiment` from seeds `seed_base..seed_base+n`.
/// Every query crosses an encode/decode boundary.
pub fn rollout(
    source: &mut dyn ActionSource,
    embodiment: &str,
    n: usize,
    seed_base: u64,
    opts: &RolloutOptions,
) -> Result<RolloutReport> {
    if opts.replan_every == 0 {
        return Err(Error::Config("replan_every must be positive".into()));
    }
    let mut env = Env::new(embodiment, opts.env.clone())?;
    let policy_emb = &source.embodiment().name;
    if policy_emb != embodiment {
        return Err(Error::Config(format!(
            "{policy_emb} policy cannot drive {embodiment}; wrap it for zero-shot evaluation"
        )));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n as u64 {
        let seed = seed_base + i;
        let mut obs = env.reset(seed);
        source.reset(seed)?;
        let mut queries = 0;
        let success = 'episode: loop {
            let req = PolicyRequest {
                embodiment: embodiment.to_string(),
                instruction: opts.instruction.clone(),
                episode_seed: seed,
                step: env.steps() as u64,
                observation: obs.clone(),
            };
            let reply = serve(source, &req.to_bytes()?)?;
            let PolicyResponse { actions } = PolicyResponse::from_bytes(&reply)?;
            queries += 1;
            if actions.is_empty() {
                return Err(Error::Contract("policy returned an empty chunk".into()));
            }
            for a in actions.iter().take(opts.replan_every) {
                let r = env.step(a)?;
                obs = r.observation;
                if r.done {
                    break 'episode r.success;
                }
            }
        };
        records.push(RolloutRecord { seed, success, steps: env.steps(), queries });
    }
    Ok(RolloutReport::from_records(&opts.config_id, embodiment, opts.replan_every, records))
}
