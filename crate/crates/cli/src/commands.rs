use std::fs;
use std::path::{Path, PathBuf};

use modpol::demogen::{generate_episode, read_dataset_with, DatasetManifest, DatasetWriter, Episode, ExpertConfig, ReadOptions};
use modpol::evalkit::{
    cached_cells, emit_report, offline_mse, rollout, run_ablation, AblationConfig, AblationData, ActionSource,
    DiffusionPolicy, ExpertPolicy, Report, ReportFormat, ReplayPolicy, RolloutOptions, ZeroShot, CACHE_DIR_ENV,
};
use modpol::nets::{Checkpoint, ContactInput, ModalityConfig, NetConfig, Objective, PolicySpec, PredictionHead};
use modpol::trainer::{split_held_out, summarize, train, TrainConfig, TrainOptions, TrainingSet};
use serde::Serialize;
use serde_json::json;

use crate::config::{config_hash, pick, provenance, sha256_hex, FileConfig};
use crate::{AblateArgs, EvalArgs, EvalMode, Failure, GenDataArgs, TrainArgs};

/// Desk-scale defaults shared by `train` and `ablate`.
const DEFAULT_LR: f64 = 1e-3;
const DEFAULT_BATCH: usize = 16;
const DEFAULT_STEPS: usize = 2000;
/// Rollout seeds start here so they never coincide with generation seeds.
const DEFAULT_ROLLOUT_SEED: u64 = 1_000_000;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("valid JSON") + "\n";
    fs::write(path, text).map_err(|e| Failure::Run(modpol::Error::Io { path: path.to_path_buf(), source: e }))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Run(modpol::Error::Io { path: dir.to_path_buf(), source: e }))
}

/// Content identifier of a dataset file: the hash of its manifest.
fn dataset_id(manifest: &DatasetManifest) -> String {
    sha256_hex(&serde_json::to_vec(manifest).expect("manifest serializes"))
}

fn load_dataset(path: &Path, depth: bool) -> Result<(DatasetManifest, Vec<Episode>, String), Failure> {
    let (manifest, episodes) = read_dataset_with(path, ReadOptions { load_depth: depth })?;
    let id = dataset_id(&manifest);
    Ok((manifest, episodes, id))
}

#[derive(Debug, Serialize)]
struct GenDataRun {
    embodiment: String,
    episodes: usize,
    seed: u64,
    depth_noise: f64,
    miss_probability: f64,
    depth: bool,
}

pub fn gen_data(args: GenDataArgs, file: &FileConfig) -> Result<(), Failure> {
    let f = &file.gen_data;
    let defaults = ExpertConfig::default();
    let run = GenDataRun {
        embodiment: args.embodiment.or(f.embodiment.clone()).ok_or_else(|| usage("--embodiment is required"))?,
        episodes: pick(args.episodes, f.episodes, 100),
        seed: pick(args.seed, f.seed, 0),
        depth_noise: pick(args.depth_noise, f.depth_noise, defaults.env.render.depth_noise),
        miss_probability: pick(args.miss_probability, f.miss_probability, defaults.miss_probability),
        depth: !args.no_depth && f.depth.unwrap_or(true),
    };
    let jobs = pick(args.jobs, f.jobs, 1).max(1);
    if run.episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    modpol::nets::EmbodimentSpec::lookup(&run.embodiment)?;
    let mut cfg = ExpertConfig { miss_probability: run.miss_probability, ..defaults };
    cfg.env.render.depth_noise = run.depth_noise;

    let mut writer = DatasetWriter::create(&args.out)?;
    writer.set_meta(provenance("gen-data", &run));
    let seeds: Vec<u64> = (run.seed..run.seed + run.episodes as u64).collect();
    for batch in seeds.chunks(jobs * 4) {
        let episodes: Vec<modpol::Result<Episode>> = std::thread::scope(|scope| {
            let per = batch.len().div_ceil(jobs);
            let handles: Vec<_> = batch
                .chunks(per)
                .map(|part| scope.spawn(|| part.iter().map(|&s| generate_episode(&run.embodiment, s, &cfg)).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("generation thread")).collect()
        });
        for ep in episodes {
            let mut ep = ep?;
            if !run.depth {
                ep.steps.iter_mut().for_each(|s| s.observation.depth = None);
            }
            writer.push(&ep)?;
        }
    }
    let manifest = writer.finish()?;
    println!(
        "wrote {} {} episodes ({} steps) to {}",
        manifest.episode_count,
        manifest.embodiment,
        manifest.total_steps,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainRun {
    data: String,
    modality: ModalityConfig,
    contact_input: ContactInput,
    objective: Objective,
    head: PredictionHead,
    net: NetConfig,
    train: TrainConfig,
    resume_step: Option<u64>,
}

pub fn train_cmd(args: TrainArgs, file: &FileConfig) -> Result<(), Failure> {
    let f = &file.train;
    let data_path = args.data.or(f.data.clone()).ok_or_else(|| usage("--data is required"))?;
    let modality: ModalityConfig = pick(args.modality, f.modality.clone(), "baseline".into()).parse()?;
    let contact_input = ContactInput::parse(&pick(args.contact_input, f.contact_input.clone(), "forces".into()))?;
    let objective = Objective::parse(&pick(args.objective, f.objective.clone(), "flow_match".into()))?;
    let head = PredictionHead::parse(&pick(args.head, f.head.clone(), "velocity".into()))?;
    let d = TrainConfig::default();
    let train_cfg = TrainConfig {
        lr: pick(args.lr, f.lr, DEFAULT_LR),
        weight_decay: pick(None, f.weight_decay, d.weight_decay),
        warmup_frac: pick(None, f.warmup_frac, d.warmup_frac),
        batch_size: pick(args.batch_size, f.batch_size, DEFAULT_BATCH),
        total_steps: pick(args.steps, f.steps, DEFAULT_STEPS),
        checkpoint_every: pick(args.checkpoint_every, f.checkpoint_every, d.checkpoint_every),
        seed: pick(args.seed, f.seed, 0),
    };
    train_cfg.validate()?;
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;

    let (manifest, episodes, data_id) = load_dataset(&data_path, modality.uses_depth())?;
    if modality.uses_depth() && !manifest.has_depth {
        return Err(usage(format!("{modality} needs depth, but {} was stored without it", data_path.display())));
    }
    let mut spec = PolicySpec::new(modality, &manifest.embodiment, &[])?;
    spec.instructions = manifest.instructions.clone();
    spec.net = f.net.clone().unwrap_or_default();
    spec.contact_input = contact_input;
    spec.objective = objective;
    spec.head = head;
    spec.init_seed = train_cfg.seed;
    spec.validate()?;

    let (train_part, held) = split_held_out(&episodes);
    let set = TrainingSet::new(train_part.to_vec(), summarize(train_part)?)?;
    set.check_compatible(&spec)?;
    let run = TrainRun {
        data: data_id,
        modality,
        contact_input,
        objective,
        head,
        net: spec.net.clone(),
        train: train_cfg.clone(),
        resume_step: resume.as_ref().map(|c| c.step),
    };
    let meta = provenance("train", &run);
    create_dir(&args.out)?;
    write_json(&args.out.join("run.json"), &meta)?;
    let opts = TrainOptions { out_dir: Some(args.out.clone()), resume, meta };
    let out = train(spec, &set, &train_cfg, opts)?;
    let last = out.losses.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {modality} on {} episodes ({} held out) for {} steps; final loss {last:.5}; outputs in {}",
        train_part.len(),
        held.len(),
        train_cfg.total_steps,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalRun {
    mode: &'static str,
    policy: String,
    embodiment: String,
    zero_shot: bool,
    data: Option<String>,
    n: usize,
    seed: u64,
    windows: usize,
    replan_every: usize,
}

pub fn eval(args: EvalArgs, file: &FileConfig) -> Result<(), Failure> {
    let f = &file.eval;
    let mode = match args.mode {
        Some(m) => m,
        None => match f.mode.as_deref() {
            None | Some("offline") => EvalMode::Offline,
            Some("online") => EvalMode::Online,
            Some(other) => return Err(usage(format!("unknown eval mode `{other}`"))),
        },
    };
    let seed = pick(args.seed, f.seed, if mode == EvalMode::Online { DEFAULT_ROLLOUT_SEED } else { 0 });
    let n = pick(args.n, f.n, 20);
    let windows = pick(args.windows, f.windows, 64);
    let replan_every = pick(args.replan_every, f.replan_every, 16);
    let zero_shot = args.zero_shot || f.zero_shot.unwrap_or(false);
    let data_path = args.data.or(f.data.clone());
    let dataset = data_path.as_deref().map(|p| load_dataset(p, true)).transpose()?;

    let sources = [args.ckpt.is_some(), args.replay, args.expert].iter().filter(|&&b| b).count();
    if sources != 1 {
        return Err(usage("give exactly one of --ckpt, --replay or --expert"));
    }
    let (source, policy_id): (Box<dyn ActionSource>, String) = if let Some(path) = &args.ckpt {
        let bytes = fs::read(path).map_err(|e| Failure::Run(modpol::Error::Io { path: path.clone(), source: e }))?;
        let ckpt = Checkpoint::from_bytes(&bytes, path)?;
        (Box::new(DiffusionPolicy::new(ckpt.to_policy()?, seed)?), sha256_hex(&bytes))
    } else if args.replay {
        let (_, eps, id) = dataset.as_ref().ok_or_else(|| usage("--replay needs --data"))?;
        (Box::new(ReplayPolicy::new(eps, 16)?), format!("replay:{id}"))
    } else {
        let emb = args
            .embodiment
            .clone()
            .or(f.embodiment.clone())
            .or(dataset.as_ref().map(|d| d.0.embodiment.clone()))
            .ok_or_else(|| usage("--expert needs --embodiment"))?;
        (Box::new(ExpertPolicy::new(&emb, 16)?), format!("expert:{emb}"))
    };
    let policy_emb = source.embodiment().name.clone();
    let target = args
        .embodiment
        .or(f.embodiment.clone())
        .or(dataset.as_ref().filter(|_| mode == EvalMode::Offline).map(|d| d.0.embodiment.clone()))
        .unwrap_or_else(|| policy_emb.clone());
    modpol::nets::EmbodimentSpec::lookup(&target)?;
    let mut source: Box<dyn ActionSource> = match (target == policy_emb, zero_shot) {
        (true, _) => source,
        (false, true) => Box::new(ZeroShot::new(source, &target)?),
        (false, false) => {
            return Err(usage(format!("{policy_emb} policy on {target}: pass --zero-shot to evaluate across embodiments")))
        }
    };

    let run = EvalRun {
        mode: if mode == EvalMode::Offline { "offline" } else { "online" },
        policy: policy_id,
        embodiment: target.clone(),
        zero_shot,
        data: dataset.as_ref().map(|d| d.2.clone()),
        n,
        seed,
        windows,
        replan_every,
    };
    let meta = provenance("eval", &run);
    let config_id = format!("{}/{}", run.mode, &config_hash(&run)[..12]);
    create_dir(&args.out)?;
    match mode {
        EvalMode::Offline => {
            let (_, eps, id) = dataset.as_ref().ok_or_else(|| usage("offline evaluation needs --data"))?;
            let report = offline_mse(source.as_mut(), eps, windows, seed, &config_id, id)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            emit_report(Report::Offline(&report), &args.out, "offline", &ReportFormat::ALL, &meta)?;
            println!("offline MSE {:.6} over {} windows", report.mean_mse, report.windows.len());
        }
        EvalMode::Online => {
            let opts = RolloutOptions { replan_every, config_id, ..RolloutOptions::default() };
            let report = rollout(source.as_mut(), &target, n, seed, &opts)?;
            emit_report(Report::Rollout(&report), &args.out, "online", &ReportFormat::ALL, &meta)?;
            println!("success rate {} ({}/{})", report.success_rate, report.successes, report.n_rollouts);
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblateRun<'a> {
    data: &'a str,
    source_data: &'a str,
    seeds: &'a [u64],
    ablation: &'a AblationConfig,
}

pub fn ablate(args: AblateArgs, file: &FileConfig) -> Result<(), Failure> {
    let f = &file.ablate;
    let data_path = args.data.or(f.data.clone()).ok_or_else(|| usage("--data is required"))?;
    let source_path = args.source_data.or(f.source_data.clone()).ok_or_else(|| usage("--source-data is required"))?;
    let seeds = args.seeds.or(f.seeds.clone()).unwrap_or_else(|| (0..5).collect());
    if seeds.len() < 3 {
        return Err(usage(format!("ablation needs at least 3 seeds, got {}", seeds.len())));
    }
    let d = AblationConfig::default();
    let cache_dir: PathBuf = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| args.out.join("cache"));
    let cfg = AblationConfig {
        net: f.net.clone().unwrap_or(d.net.clone()),
        train: TrainConfig {
            lr: pick(args.lr, f.lr, d.train.lr),
            batch_size: pick(args.batch_size, f.batch_size, d.train.batch_size),
            total_steps: pick(args.steps, f.steps, d.train.total_steps),
            ..d.train.clone()
        },
        n_rollouts: pick(args.n, f.n, d.n_rollouts),
        offline_windows: pick(args.windows, f.windows, d.offline_windows),
        replan_every: pick(args.replan_every, f.replan_every, d.replan_every),
        jobs: pick(args.jobs, f.jobs, 1).max(1),
        cache_dir: Some(cache_dir.clone()),
        ..d
    };
    cfg.train.validate()?;
    let (target_manifest, target, target_id) = load_dataset(&data_path, true)?;
    let (source_manifest, source, source_id) = load_dataset(&source_path, true)?;
    if target_manifest.embodiment == source_manifest.embodiment {
        return Err(usage("--source-data must hold the other embodiment"));
    }
    let data = AblationData { target: &target, target_id: &target_id, source: &source, source_id: &source_id };
    let run = AblateRun { data: &target_id, source_data: &source_id, seeds: &seeds, ablation: &cfg };
    let meta = provenance("ablate", &run);

    let done = cached_cells(&data, &cfg, &seeds);
    for (row, seed) in &done {
        println!("skipping {row} seed {seed}: cached in {}", cache_dir.display());
    }
    let table = run_ablation(&data, &cfg, &seeds)?;
    create_dir(&args.out)?;
    emit_report(Report::Ablation(&table), &args.out, "ablation", &ReportFormat::ALL, &meta)?;
    write_json(&args.out.join("run.json"), &json!({ "provenance": meta }))?;
    println!("{:<18} {:>14} {:>12} {:>12}", "config", "median_success", "mean_mse", "median_mse");
    for r in &table.rows {
        println!("{:<18} {:>14.3} {:>12.6} {:>12.6}", r.row.name(), r.median_success, r.mean_mse, r.median_mse);
    }
    Ok(())
}
