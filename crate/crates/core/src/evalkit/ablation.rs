use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::offline::offline_mse;
use super::policy::{ActionSource, DiffusionPolicy, ZeroShot};
use super::rollout::{rollout, RolloutOptions};
use crate::demogen::{Episode, DEFAULT_INSTRUCTION};
use crate::error::{Error, Result};
use crate::nets::{Checkpoint, ContactInput, ModalityConfig, NetConfig, Objective, PolicySpec, PredictionHead};
use crate::trainer::{split_held_out, summarize, train, TrainConfig, TrainOptions, TrainingSet};

/// Environment variable naming the default cell cache directory.
pub const CACHE_DIR_ENV: &str = "MODPOL_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AblationRow {
    /// Baseline trained on the other embodiment, run through the zero-shot adapter.
    ZeroShot,
    FinetuneBaseline,
    ContactEncoder,
    ContactState,
    Depth,
}

impl AblationRow {
    pub const ALL: [AblationRow; 5] = [
        AblationRow::ZeroShot,
        AblationRow::FinetuneBaseline,
        AblationRow::ContactEncoder,
        AblationRow::ContactState,
        AblationRow::Depth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationRow::ZeroShot => "ZERO_SHOT",
            AblationRow::FinetuneBaseline => "FINETUNE_BASELINE",
            AblationRow::ContactEncoder => "CONTACT_ENCODER",
            AblationRow::ContactState => "CONTACT_STATE",
            AblationRow::Depth => "DEPTH",
        }
    }

    pub fn modality(self) -> ModalityConfig {
        match self {
            AblationRow::ZeroShot | AblationRow::FinetuneBaseline => ModalityConfig::Baseline,
            AblationRow::ContactEncoder => ModalityConfig::ContactEncoder,
            AblationRow::ContactState => ModalityConfig::ContactState,
            AblationRow::Depth => ModalityConfig::Depth,
        }
    }
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation row `{s}`")))
    }
}

/// Episodes for the evaluated embodiment and for the zero-shot source, each
/// with an identifier that stands in for its content in cache keys.
#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub target: &'a [Episode],
    pub target_id: &'a str,
    pub source: &'a [Episode],
    pub source_id: &'a str,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub net: NetConfig,
    pub contact_input: ContactInput,
    pub objective: Objective,
    pub head: PredictionHead,
    /// Shared by every cell; the seed is replaced by the cell's seed.
    pub train: TrainConfig,
    pub n_rollouts: usize,
    pub rollout_seed_base: u64,
    pub offline_windows: usize,
    pub replan_every: usize,
    pub rows: Vec<AblationRow>,
    /// Worker threads; cells are independent.
    #[serde(skip)]
    pub jobs: usize,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            contact_input: ContactInput::Forces,
            objective: Objective::FlowMatch,
            head: PredictionHead::Velocity,
            train: TrainConfig { lr: 1e-3, batch_size: 16, total_steps: 2000, checkpoint_every: 0, ..TrainConfig::default() },
            n_rollouts: 20,
            rollout_seed_base: 1_000_000,
            offline_windows: 64,
            replan_every: 16,
            rows: AblationRow::ALL.to_vec(),
            jobs: 1,
            cache_dir: None,
        }
    }
}

/// Outcome of one trained policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub row: AblationRow,
    pub seed: u64,
    pub successes: usize,
    pub n_rollouts: usize,
    pub success_rate: f64,
    pub offline_mse: f64,
    pub train_steps: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub row: AblationRow,
    pub seeds: Vec<u64>,
    pub median_success: f64,
    pub mean_mse: f64,
    pub median_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub cells: Vec<AblationCell>,
    pub rows: Vec<RowSummary>,
    pub config: AblationConfig,
}

impl AblationTable {
    pub fn row(&self, row: AblationRow) -> Option<&RowSummary> {
        self.rows.iter().find(|r| r.row == row)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Serialize, Deserialize)]
struct CachedCell {
    key: serde_json::Value,
    cell: AblationCell,
}

/// Everything a cell's numbers depend on; the row selection is not part of it.
fn cell_key(row: AblationRow, seed: u64, data: &AblationData, cfg: &AblationConfig) -> serde_json::Value {
    let mut config = serde_json::to_value(cfg).expect("serializable");
    config.as_object_mut().expect("struct").remove("rows");
    json!({
        "row": row,
        "seed": seed,
        "train_data": if row == AblationRow::ZeroShot { data.source_id } else { data.target_id },
        "eval_data": data.target_id,
        "config": config,
    })
}

fn cell_stem(cache: &Path, row: AblationRow, seed: u64) -> PathBuf {
    cache.join(format!("{}-seed{seed}", row.name().to_lowercase()))
}

fn load_cached(stem: &Path, key: &serde_json::Value) -> Option<AblationCell> {
    let text = fs::read_to_string(stem.with_extension("json")).ok()?;
    let cached: CachedCell = serde_json::from_str(&text).ok()?;
    (cached.key == *key).then_some(cached.cell)
}

/// Cells whose finished result is already in the cache for this configuration.
pub fn cached_cells(data: &AblationData, cfg: &AblationConfig, seeds: &[u64]) -> Vec<(AblationRow, u64)> {
    let Some(dir) = &cfg.cache_dir else { return Vec::new() };
    cfg.rows
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .filter(|&(r, s)| load_cached(&cell_stem(dir, r, s), &cell_key(r, s, data, cfg)).is_some())
        .collect()
}

fn run_cell(row: AblationRow, seed: u64, data: &AblationData, cfg: &AblationConfig) -> Result<AblationCell> {
    let key = cell_key(row, seed, data, cfg);
    let stem = cfg.cache_dir.as_deref().map(|d| cell_stem(d, row, seed));
    if let Some(cell) = stem.as_deref().and_then(|s| load_cached(s, &key)) {
        return Ok(cell);
    }

    let train_eps = if row == AblationRow::ZeroShot { data.source } else { data.target };
    let (train_part, _) = split_held_out(train_eps);
    let embodiment = &train_eps.first().ok_or_else(|| Error::Contract("no training episodes".into()))?.embodiment;
    let mut spec = PolicySpec::new(row.modality(), embodiment, &[DEFAULT_INSTRUCTION])?;
    spec.net = cfg.net.clone();
    spec.contact_input = cfg.contact_input;
    spec.objective = cfg.objective;
    spec.head = cfg.head;
    spec.init_seed = seed;
    let train_cfg = TrainConfig { seed, checkpoint_every: 0, ..cfg.train.clone() };

    let ckpt_path = stem.as_ref().map(|s| s.with_extension("ckpt"));
    let resumed = ckpt_path
        .as_deref()
        .and_then(|p| Checkpoint::load(p).ok())
        .filter(|c| c.meta.get("cell") == Some(&key));
    let (policy, final_loss) = match resumed {
        Some(c) => {
            let loss = c.meta.get("final_loss").and_then(serde_json::Value::as_f64);
            (c.to_policy()?, loss)
        }
        None => {
            let set = TrainingSet::new(train_part.to_vec(), summarize(train_part)?)?;
            let out = train(spec, &set, &train_cfg, TrainOptions::default())?;
            let loss = out.losses.last().map(|r| r.loss);
            if let Some(p) = &ckpt_path {
                let mut ckpt = Checkpoint::from_policy(&out.policy, train_cfg.total_steps as u64);
                ckpt.meta = json!({ "cell": key, "final_loss": loss });
                ckpt.save(p)?;
            }
            (out.policy, loss)
        }
    };

    let config_id = format!("{row}/seed{seed}");
    let target = &data.target.first().ok_or_else(|| Error::Contract("no evaluation episodes".into()))?.embodiment;
    let diffusion = DiffusionPolicy::new(policy, seed)?;
    let mut source: Box<dyn ActionSource> =
        if row == AblationRow::ZeroShot { Box::new(ZeroShot::new(diffusion, target)?) } else { Box::new(diffusion) };
    let offline = offline_mse(source.as_mut(), data.target, cfg.offline_windows, seed, &config_id, data.target_id)?;
    let opts = RolloutOptions { replan_every: cfg.replan_every, config_id: config_id.clone(), ..RolloutOptions::default() };
    let online = rollout(source.as_mut(), target, cfg.n_rollouts, cfg.rollout_seed_base, &opts)?;

    let cell = AblationCell {
        row,
        seed,
        successes: online.successes,
        n_rollouts: online.n_rollouts,
        success_rate: online.success_rate,
        offline_mse: offline.mean_mse,
        train_steps: train_cfg.total_steps,
        final_loss,
    };
    if let Some(stem) = &stem {
        let path = stem.with_extension("json");
        let text = serde_json::to_string_pretty(&CachedCell { key, cell: cell.clone() }).expect("serializable");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(cell)
}

/// Trains and evaluates one policy per (row, seed) and summarizes each row.
/// With a cache directory, finished cells are reused and trained policies
/// are kept, so an interrupted run picks up where it stopped.
pub fn run_ablation(data: &AblationData, cfg: &AblationConfig, seeds: &[u64]) -> Result<AblationTable> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!("ablation needs at least 3 seeds, got {}", seeds.len())));
    }
    if cfg.rows.is_empty() {
        return Err(Error::Config("no ablation rows selected".into()));
    }
    cfg.train.validate()?;
    if let Some(dir) = &cfg.cache_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let cells: Vec<(AblationRow, u64)> = cfg.rows.iter().flat_map(|&r| seeds.iter().map(move |&s| (r, s))).collect();
    let results: Mutex<Vec<Option<Result<AblationCell>>>> = Mutex::new(cells.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.jobs.clamp(1, cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(row, seed)) = cells.get(i) else { break };
                let r = run_cell(row, seed, data, cfg);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    let cells = results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect::<Result<Vec<_>>>()?;

    let rows = cfg
        .rows
        .iter()
        .map(|&row| {
            let mine: Vec<&AblationCell> = cells.iter().filter(|c| c.row == row).collect();
            let success: Vec<f64> = mine.iter().map(|c| c.success_rate).collect();
            let mse: Vec<f64> = mine.iter().map(|c| c.offline_mse).collect();
            RowSummary {
                row,
                seeds: mine.iter().map(|c| c.seed).collect(),
                median_success: median(&success),
                mean_mse: mean(&mse),
                median_mse: median(&mse),
            }
        })
        .collect();
    Ok(AblationTable { cells, rows, config: cfg.clone() })
}
