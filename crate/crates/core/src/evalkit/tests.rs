use std::sync::OnceLock;

use proptest::prelude::*;

use super::*;
use crate::demogen::{generate_episode, Episode, ExpertConfig, DEFAULT_INSTRUCTION};
use crate::error::Error;
use crate::nets::{EmbodimentSpec, ModalityConfig, NetConfig, Policy, PolicySpec};
use crate::simenv::Env;
use crate::trainer::{split_held_out, summarize, TrainConfig};

fn episodes(emb: &str) -> &'static [Episode] {
    static GR1: OnceLock<Vec<Episode>> = OnceLock::new();
    static G1: OnceLock<Vec<Episode>> = OnceLock::new();
    let cell = if emb == "simGR1" { &GR1 } else { &G1 };
    cell.get_or_init(|| (0..10).map(|s| generate_episode(emb, s, &ExpertConfig::default()).unwrap()).collect())
}

fn tiny_net() -> NetConfig {
    NetConfig { d_model: 16, n_layers: 1, n_heads: 2, ..NetConfig::default() }
}

fn untrained(emb: &str) -> DiffusionPolicy {
    let eps = episodes(emb);
    let (train, _) = split_held_out(eps);
    let mut spec = PolicySpec::new(ModalityConfig::Baseline, emb, &[DEFAULT_INSTRUCTION]).unwrap();
    spec.net = tiny_net();
    DiffusionPolicy::new(Policy::new(spec, summarize(train).unwrap()).unwrap(), 3).unwrap()
}

/// Returns `offset` added to the recorded actions.
struct Offset {
    inner: ReplayPolicy,
    offset: f64,
}

impl ActionSource for Offset {
    fn embodiment(&self) -> &EmbodimentSpec {
        self.inner.embodiment()
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn act(&mut self, req: &PolicyRequest) -> crate::Result<PolicyResponse> {
        let mut r = self.inner.act(req)?;
        r.actions.iter_mut().flatten().for_each(|v| *v += self.offset);
        Ok(r)
    }
}

/// Records the state width it was queried with and answers with a ramp.
struct Probe {
    spec: EmbodimentSpec,
    seen_state: Vec<f32>,
}

impl ActionSource for Probe {
    fn embodiment(&self) -> &EmbodimentSpec {
        &self.spec
    }
    fn horizon(&self) -> usize {
        2
    }
    fn act(&mut self, req: &PolicyRequest) -> crate::Result<PolicyResponse> {
        self.seen_state = req.observation.state.clone();
        let a = self.spec.action_dim;
        Ok(PolicyResponse { actions: vec![(1..=a).map(|i| i as f64).collect(); 2] })
    }
}

fn request(emb: &str, with_depth: bool) -> PolicyRequest {
    let mut obs = episodes(emb)[0].steps[5].observation.clone();
    if !with_depth {
        obs.depth = None;
    }
    PolicyRequest { embodiment: emb.into(), instruction: DEFAULT_INSTRUCTION.into(), episode_seed: 42, step: 7, observation: obs }
}

#[test]
fn request_and_response_round_trip() {
    for depth in [true, false] {
        let req = request("simG1", depth);
        assert_eq!(PolicyRequest::from_bytes(&req.to_bytes().unwrap()).unwrap(), req);
    }
    let resp = PolicyResponse { actions: vec![vec![0.1, -2.5, f64::MIN_POSITIVE], vec![3.0, 4.0, 5.0]] };
    assert_eq!(PolicyResponse::from_bytes(&resp.to_bytes().unwrap()).unwrap(), resp);
    let mut bytes = resp.to_bytes().unwrap();
    bytes.pop();
    assert!(matches!(PolicyResponse::from_bytes(&bytes), Err(Error::Malformed(_))));
    assert!(PolicyRequest::from_bytes(b"MPRSxxxxxxxxxxxx").is_err());
    let ragged = PolicyResponse { actions: vec![vec![1.0], vec![1.0, 2.0]] };
    assert!(ragged.to_bytes().is_err());
}

#[test]
fn zero_shot_adapter_truncates_and_pads() {
    assert_eq!(fit_width(&[1.0f32, 2.0, 3.0], 2), vec![1.0, 2.0]);
    assert_eq!(fit_width(&[1.0f64, 2.0], 4), vec![1.0, 2.0, 0.0, 0.0]);
    assert_eq!(fit_width::<f64>(&[], 0), Vec::<f64>::new());

    // simGR1 policy on simG1: 9-dim state truncated to 7, 3-dim actions padded to 4.
    let probe = Probe { spec: EmbodimentSpec::lookup("simGR1").unwrap(), seen_state: vec![] };
    let mut zs = ZeroShot::new(probe, "simG1").unwrap();
    assert_eq!(zs.embodiment().name, "simG1");
    let req = request("simG1", true);
    let resp = zs.act(&req).unwrap();
    assert_eq!(resp.actions, vec![vec![1.0, 2.0, 3.0, 0.0]; 2]);
    assert_eq!(zs.adapt_request(&req).observation.state, req.observation.state[..7].to_vec());

    // simG1 policy on simGR1: 7-dim state zero-padded to 9, 4-dim actions truncated to 3.
    let probe = Probe { spec: EmbodimentSpec::lookup("simG1").unwrap(), seen_state: vec![] };
    let mut zs = ZeroShot::new(probe, "simGR1").unwrap();
    let req = request("simGR1", true);
    let resp = zs.act(&req).unwrap();
    assert_eq!(resp.actions, vec![vec![1.0, 2.0, 3.0]; 2]);
    let mut padded = req.observation.state.clone();
    padded.extend([0.0, 0.0]);
    assert_eq!(zs.inner().seen_state, padded);
}

#[test]
fn replay_scores_exactly_zero_and_offsets_score_their_norm() {
    let eps = episodes("simGR1");
    let mut replay = ReplayPolicy::new(eps, 16).unwrap();
    let r = offline_mse(&mut replay, eps, 40, 9, "replay", "gr1").unwrap();
    assert_eq!(r.windows.len(), 40);
    assert!(r.windows.iter().all(|w| w.mse == 0.0));
    assert_eq!(r.mean_mse, 0.0);
    assert!(r.warnings.is_empty());

    let mut shifted = Offset { inner: ReplayPolicy::new(eps, 16).unwrap(), offset: 1.0 };
    let r = offline_mse(&mut shifted, eps, 40, 9, "offset", "gr1").unwrap();
    assert!(r.windows.iter().all(|w| w.mse == 3.0), "{:?}", r.per_window());
    assert_eq!(r.mean_mse, 3.0);
    let trace = r.trace.unwrap();
    assert_eq!(trace.predicted.len(), trace.ground_truth.len());
}

#[test]
fn offline_windows_come_from_the_trailing_episodes_and_clamp() {
    let eps = episodes("simG1");
    let (_, held) = split_held_out(eps);
    assert_eq!(held.len(), 1);
    let available = held[0].len();
    let mut replay = ReplayPolicy::new(eps, 16).unwrap();
    let r = offline_mse(&mut replay, eps, available + 50, 0, "c", "d").unwrap();
    assert_eq!(r.windows.len(), available);
    assert_eq!(r.warnings.len(), 1);
    assert!(r.windows.iter().all(|w| w.episode_seed == held[0].seed));

    let a = offline_mse(&mut replay, eps, 10, 5, "c", "d").unwrap();
    let b = offline_mse(&mut replay, eps, 10, 5, "c", "d").unwrap();
    assert_eq!(a, b);
    assert!(matches!(offline_mse(&mut replay, &eps[..1], 10, 5, "c", "d"), Err(Error::Contract(_))));
    let mut other = ReplayPolicy::new(episodes("simGR1"), 16).unwrap();
    assert!(matches!(offline_mse(&mut other, eps, 10, 5, "c", "d"), Err(Error::Config(_))));
}

#[test]
fn chunk_mse_scores_only_recorded_rows() {
    let truth = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
    let pred = vec![vec![1.0, 0.0], vec![1.0, 3.0], vec![100.0, 100.0]];
    assert_eq!(chunk_mse(&pred, &truth).unwrap(), (1.0 + 4.0) / 2.0);
    assert!(chunk_mse(&pred[..1], &truth).is_err());
    assert!(chunk_mse(&[vec![1.0]], &[vec![1.0, 2.0]]).is_err());
}

#[test]
fn untrained_policy_error_matches_its_noise_oracle() {
    // A zero-initialized output layer predicts zero velocity, so the sampler
    // returns its initial noise: â = μ + σ·ε. The expected error per row is
    // therefore Σ_j σ_j² + ‖a − μ‖².
    let eps = episodes("simG1");
    let (train, held) = split_held_out(eps);
    let stats = summarize(train).unwrap();
    let mut policy = untrained("simG1");
    let r = offline_mse(&mut policy, eps, 60, 1, "untrained", "g1").unwrap();
    let noise: f64 = stats.action_std.iter().map(|s| s.max(1e-3).powi(2)).sum();
    let oracle = r
        .windows
        .iter()
        .map(|w| {
            let ep = held.iter().find(|e| e.seed == w.episode_seed).unwrap();
            let rows = &ep.steps[w.t..(w.t + 16).min(ep.len())];
            let spread: f64 = rows
                .iter()
                .map(|s| s.action.iter().zip(&stats.action_mean).map(|(&a, m)| (a as f64 - m).powi(2)).sum::<f64>())
                .sum::<f64>()
                / rows.len() as f64;
            noise + spread
        })
        .sum::<f64>()
        / r.windows.len() as f64;
    let rel = (r.mean_mse - oracle).abs() / oracle;
    assert!(rel < 0.15, "mse {} oracle {oracle}", r.mean_mse);
}

#[test]
fn expert_succeeds_on_every_rollout() {
    for emb in ["simGR1", "simG1"] {
        let mut expert = ExpertPolicy::new(emb, 16).unwrap();
        let r = rollout(&mut expert, emb, 20, 5_000, &RolloutOptions::default()).unwrap();
        assert_eq!(r.success_rate, 1.0, "{emb}: {:?}", r.rollouts);
        assert_eq!(r.n_rollouts, 20);
        assert_eq!(r.rollouts.iter().map(|x| x.seed).collect::<Vec<_>>(), (5_000..5_020).collect::<Vec<_>>());
        let k1 = RolloutOptions { replan_every: 1, ..RolloutOptions::default() };
        let r1 = rollout(&mut expert, emb, 3, 5_000, &k1).unwrap();
        assert_eq!(r1.success_rate, 1.0);
        assert_eq!(r1.replan_every, 1);
        assert!(r1.rollouts.iter().zip(&r.rollouts).all(|(a, b)| a.steps == b.steps && a.queries >= b.queries));
    }
}

#[test]
fn untrained_policy_never_succeeds() {
    let mut policy = untrained("simG1");
    let r = rollout(&mut policy, "simG1", 20, 77, &RolloutOptions::default()).unwrap();
    assert_eq!(r.success_rate, 0.0);
    assert_eq!(r.successes, 0);
    assert!(r.rollouts.iter().all(|x| x.steps == Env::new("simG1", Default::default()).unwrap().config().episode_cap));
}

#[test]
fn embodiment_mismatch_needs_the_zero_shot_wrapper() {
    let policy = untrained("simGR1");
    let mut bare = policy.clone();
    assert!(matches!(rollout(&mut bare, "simG1", 1, 0, &RolloutOptions::default()), Err(Error::Config(_))));
    let mut wrapped = ZeroShot::new(policy, "simG1").unwrap();
    let r = rollout(&mut wrapped, "simG1", 2, 0, &RolloutOptions::default()).unwrap();
    assert_eq!(r.n_rollouts, 2);
    assert_eq!(r.embodiment, "simG1");
}

#[test]
fn rollouts_are_reproducible() {
    let mut a = untrained("simGR1");
    let mut b = untrained("simGR1");
    let opts = RolloutOptions::default();
    assert_eq!(rollout(&mut a, "simGR1", 2, 11, &opts).unwrap(), rollout(&mut b, "simGR1", 2, 11, &opts).unwrap());
}

proptest! {
    #[test]
    fn success_rate_is_the_exact_ratio(outcomes in prop::collection::vec(any::<bool>(), 1..64)) {
        let records: Vec<RolloutRecord> = outcomes
            .iter()
            .enumerate()
            .map(|(i, &s)| RolloutRecord { seed: i as u64, success: s, steps: 10, queries: 1 })
            .collect();
        let r = RolloutReport::from_records("c", "simG1", 16, records);
        let k = outcomes.iter().filter(|&&s| s).count();
        prop_assert_eq!(r.successes, k);
        prop_assert_eq!(r.success_rate, k as f64 / outcomes.len() as f64);
    }

    #[test]
    fn median_is_order_free(mut v in prop::collection::vec(-1e3f64..1e3, 1..20)) {
        let m = median(&v);
        v.reverse();
        prop_assert_eq!(m, median(&v));
        let below = v.iter().filter(|&&x| x < m).count();
        let above = v.iter().filter(|&&x| x > m).count();
        prop_assert!(below <= v.len() / 2 && above <= v.len() / 2);
    }
}

#[test]
fn half_successes_is_exactly_one_half() {
    let records = (0..20).map(|i| RolloutRecord { seed: i, success: i % 2 == 0, steps: 1, queries: 1 }).collect();
    assert_eq!(RolloutReport::from_records("c", "simG1", 16, records).success_rate, 0.5);
}

fn sample_rollout_report() -> RolloutReport {
    let records = (0..4).map(|i| RolloutRecord { seed: 100 + i, success: i != 2, steps: 40 + i as usize, queries: 3 }).collect();
    RolloutReport::from_records("FINETUNE_BASELINE/seed0", "simG1", 16, records)
}

fn sample_offline_report() -> OfflineReport {
    let eps = episodes("simGR1");
    let mut shifted = Offset { inner: ReplayPolicy::new(eps, 16).unwrap(), offset: 0.125 };
    offline_mse(&mut shifted, eps, 8, 2, "offset<&>", "gr1").unwrap()
}

#[test]
fn csv_round_trips_and_keeps_its_column_order() {
    let rollout = sample_rollout_report();
    let offline = sample_offline_report();
    for report in [Report::Rollout(&rollout), Report::Offline(&offline)] {
        let rows = report.csv_rows();
        let text = to_csv(&rows);
        assert!(text.starts_with("config,seed,success_rate,mse,steps\n"));
        assert_eq!(parse_csv(&text).unwrap(), rows);
    }
    let awkward = vec![CsvRow { config: "x".into(), seed: 1, success_rate: Some(0.1 + 0.2), mse: Some(1e-300), steps: None }];
    assert_eq!(parse_csv(&to_csv(&awkward)).unwrap(), awkward);
    assert!(parse_csv("a,b\n").is_err());
}

#[test]
fn emitted_files_are_versioned_and_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let provenance = serde_json::json!({ "config_hash": "abc123" });
    let offline = sample_offline_report();
    let files = emit_report(Report::Offline(&offline), dir.path(), "off", &ReportFormat::ALL, &provenance).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["off.csv", "off.json", "off_mse.svg", "off_trace.svg"]);
    for f in &files {
        let text = std::fs::read_to_string(f).unwrap();
        if f.extension().unwrap() == "svg" {
            let doc = roxmltree::Document::parse(&text).unwrap();
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            assert!(text.contains("abc123"));
        }
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&files[1]).unwrap()).unwrap();
    assert_eq!(json["schema_version"], REPORT_SCHEMA_VERSION);
    assert_eq!(json["kind"], "offline");
    assert_eq!(json["provenance"]["config_hash"], "abc123");
    let back: OfflineReport = serde_json::from_value(json["report"].clone()).unwrap();
    assert_eq!(back, offline);

    let rollout = sample_rollout_report();
    let files = emit_report(Report::Rollout(&rollout), dir.path(), "on", &[ReportFormat::Svg], &provenance).unwrap();
    roxmltree::Document::parse(&std::fs::read_to_string(&files[0]).unwrap()).unwrap();
}

#[test]
fn empty_reports_are_refused_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let empty = RolloutReport::from_records("c", "simG1", 16, vec![]);
    let err = emit_report(Report::Rollout(&empty), dir.path(), "empty", &ReportFormat::ALL, &serde_json::Value::Null);
    assert!(matches!(err, Err(Error::Contract(_))));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    let bad = RolloutReport::from_records("a,b", "simG1", 16, sample_rollout_report().rollouts);
    assert!(emit_report(Report::Rollout(&bad), dir.path(), "bad", &[ReportFormat::Csv], &serde_json::Value::Null).is_err());
}

fn degenerate_config() -> AblationConfig {
    AblationConfig {
        net: tiny_net(),
        train: TrainConfig { total_steps: 0, batch_size: 2, checkpoint_every: 0, ..TrainConfig::default() },
        n_rollouts: 2,
        offline_windows: 4,
        ..AblationConfig::default()
    }
}

#[test]
fn degenerate_ablation_matches_zero_shot_everywhere() {
    let data = AblationData { target: episodes("simG1"), target_id: "g1", source: episodes("simGR1"), source_id: "gr1" };
    let cfg = degenerate_config();
    let table = run_ablation(&data, &cfg, &[0, 1, 2]).unwrap();
    assert_eq!(table.rows.iter().map(|r| r.row).collect::<Vec<_>>(), AblationRow::ALL.to_vec());
    assert_eq!(table.cells.len(), 15);
    let zero = table.row(AblationRow::ZeroShot).unwrap().median_success;
    assert_eq!(zero, 0.0);
    assert!(table.rows.iter().all(|r| r.median_success == zero && r.seeds == [0, 1, 2]));
    for r in &table.rows {
        let mse: Vec<f64> = table.cells.iter().filter(|c| c.row == r.row).map(|c| c.offline_mse).collect();
        assert!((r.mean_mse - mse.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    }

    let again = run_ablation(&data, &cfg, &[0, 1, 2]).unwrap();
    assert_eq!(again, table);
    assert!(matches!(run_ablation(&data, &cfg, &[0, 1]), Err(Error::Config(_))));
}

#[test]
fn ablation_cells_are_cached_and_reused() {
    let dir = tempfile::tempdir().unwrap();
    let data = AblationData { target: episodes("simG1"), target_id: "g1", source: episodes("simGR1"), source_id: "gr1" };
    let cfg = AblationConfig {
        rows: vec![AblationRow::FinetuneBaseline],
        cache_dir: Some(dir.path().to_path_buf()),
        jobs: 2,
        ..degenerate_config()
    };
    assert!(cached_cells(&data, &cfg, &[4, 5, 6]).is_empty());
    let first = run_ablation(&data, &cfg, &[4, 5, 6]).unwrap();
    assert_eq!(cached_cells(&data, &cfg, &[4, 5, 6]).len(), 3);
    let cell = dir.path().join("finetune_baseline-seed5.json");
    assert!(cell.exists() && dir.path().join("finetune_baseline-seed5.ckpt").exists());

    // A cached cell is returned as stored, without retraining or evaluating.
    let text = std::fs::read_to_string(&cell).unwrap().replace("\"successes\": 0", "\"successes\": 1");
    std::fs::write(&cell, text).unwrap();
    let second = run_ablation(&data, &cfg, &[4, 5, 6]).unwrap();
    assert_eq!(second.cells[1].successes, 1);
    assert_eq!(second.cells[0], first.cells[0]);

    // A different configuration does not reuse it.
    let other = AblationConfig { n_rollouts: 1, ..cfg.clone() };
    let third = run_ablation(&data, &other, &[4, 5, 6]).unwrap();
    assert_eq!(third.cells[1].n_rollouts, 1);
}
