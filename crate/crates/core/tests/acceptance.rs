//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit
//! when any hard gate fails.
//!
//! Trained ablation cells are cached under `target/tmp/acceptance` (or
//! `$MODPOL_CACHE_DIR`), so only the first run pays for the full ablation.
//! Delete that directory after changing training or evaluation code.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use modpol::demogen::{
    encode_episode, generate_episode, DatasetReader, DatasetWriter, Episode, ExpertConfig, DEFAULT_INSTRUCTION,
};
use modpol::diffusion::{ddpm_reverse_step, default_schedule, FlowMatchConfig};
use modpol::evalkit::{
    median, offline_mse, rollout, run_ablation, AblationCell, AblationConfig, AblationData, AblationRow, AblationTable,
    ExpertPolicy, ReplayPolicy, RolloutOptions, CACHE_DIR_ENV,
};
use modpol::gradcore::{Elementwise, Graph, Tensor, Var};
use modpol::nets::{Image, ModalityConfig, PatchEmbedder, PolicySpec};
use modpol::trainer::{summarize, train, LossRecord, TrainConfig, TrainOptions, TrainingSet};
use modpol::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPISODES: usize = 200;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const ZERO_SHOT_SEEDS: usize = 3;
const ZERO_SHOT_MAX: f64 = 0.05;
const FINETUNE_GAIN: f64 = 0.20;
const SMOKE_LOSS_RATIO: f64 = 0.1;
const SMOKE_BUDGET: Duration = Duration::from_secs(20 * 60);
const GRAD_INSTANCES: usize = 100;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const RGBD_IMAGES: usize = 50;
const RGBD_BUDGET: Duration = Duration::from_secs(5);
const DDPM_TUPLES: usize = 1000;
const DDPM_TOL: f64 = 1e-12;
const BETA_DRAWS: usize = 1_000_000;
const BETA_MEAN: f64 = 0.6;
const BETA_TOL: f64 = 0.005;
const ROUND_TRIP_EPISODES: usize = 1000;

struct Outcome {
    id: &'static str,
    pass: bool,
    hard: bool,
    detail: String,
}

#[derive(Default)]
struct Ledger(Vec<Outcome>);

impl Ledger {
    fn record(&mut self, id: &'static str, pass: bool, detail: String) {
        self.push(id, pass, true, detail);
    }

    fn advisory(&mut self, id: &'static str, pass: bool, detail: String) {
        self.push(id, pass, false, detail);
    }

    fn push(&mut self, id: &'static str, pass: bool, hard: bool, detail: String) {
        let tag = match (pass, hard) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "INFO",
        };
        println!("[{tag}] {id}: {detail}");
        self.0.push(Outcome { id, pass, hard, detail });
    }
}

// ---------------------------------------------------------------- criterion 1

type OpFn = dyn Fn(&mut Graph<f64>, &[Var]) -> modpol::Result<Var>;

struct GradOp {
    name: &'static str,
    shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>,
    f: Box<OpFn>,
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..=4)
}

fn random_data(rng: &mut ChaCha8Rng, shape: &[usize]) -> Vec<f64> {
    (0..shape.iter().product::<usize>()).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn grad_ops() -> Vec<GradOp> {
    fn op(name: &'static str, shapes: fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> modpol::Result<Var> + 'static) -> GradOp {
        GradOp { name, shapes, f: Box::new(f) }
    }
    fn same2(r: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        let s = vec![dim(r), dim(r)];
        vec![s.clone(), s]
    }
    fn one(r: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
        vec![vec![dim(r), dim(r)]]
    }
    vec![
        op("matmul", |r| { let (m, k, n) = (dim(r), dim(r), dim(r)); vec![vec![m, k], vec![k, n]] }, |g, v| g.matmul(v[0], v[1])),
        op("matmul_t", |r| { let (m, k, n) = (dim(r), dim(r), dim(r)); vec![vec![m, k], vec![n, k]] }, |g, v| g.matmul_t(v[0], v[1])),
        op("transpose", one, |g, v| g.transpose(v[0])),
        op("add", same2, |g, v| g.add(v[0], v[1])),
        op("add_broadcast", |r| { let (m, n) = (dim(r), dim(r)); vec![vec![m, n], vec![n]] }, |g, v| g.add(v[0], v[1])),
        op("sub", same2, |g, v| g.sub(v[0], v[1])),
        op("mul", same2, |g, v| g.mul(v[0], v[1])),
        op("mul_broadcast", |r| { let (m, n) = (dim(r), dim(r)); vec![vec![m, n], vec![n]] }, |g, v| g.mul(v[0], v[1])),
        op("scale", one, |g, v| Ok(g.scale(v[0], -1.7))),
        op("gelu", one, |g, v| Ok(g.gelu(v[0]))),
        op("tanh", one, |g, v| Ok(g.tanh(v[0]))),
        op("sigmoid", one, |g, v| Ok(g.sigmoid(v[0]))),
        op("elementwise_add", same2, |g, v| g.elementwise(Elementwise::Add, v[0], Some(v[1]))),
        op("elementwise_mul", same2, |g, v| g.elementwise(Elementwise::Mul, v[0], Some(v[1]))),
        op("elementwise_gelu", one, |g, v| g.elementwise(Elementwise::Gelu, v[0], None)),
        op("elementwise_tanh", one, |g, v| g.elementwise(Elementwise::Tanh, v[0], None)),
        op("elementwise_sigmoid", one, |g, v| g.elementwise(Elementwise::Sigmoid, v[0], None)),
        op(
            "layernorm",
            |r| { let (m, n) = (dim(r), r.random_range(2..=5)); vec![vec![m, n], vec![n], vec![n]] },
            |g, v| g.layernorm(v[0], v[1], v[2], 1e-5),
        ),
        op("softmax", one, |g, v| g.softmax(v[0])),
        op(
            "concat_rows",
            |r| { let n = dim(r); vec![vec![dim(r), n], vec![dim(r), n], vec![dim(r), n]] },
            |g, v| g.concat_rows(v),
        ),
        op(
            "concat_cols",
            |r| { let m = dim(r); vec![vec![m, dim(r)], vec![m, dim(r)]] },
            |g, v| g.concat_cols(v),
        ),
        op("slice_rows", |r| vec![vec![dim(r) + 2, dim(r)]], |g, v| g.slice_rows(v[0], 1, 2)),
        op("slice_cols", |r| vec![vec![dim(r), dim(r) + 2]], |g, v| g.slice_cols(v[0], 1, 2)),
        op("sum", one, |g, v| Ok(g.sum(v[0]))),
        op("mean", one, |g, v| Ok(g.mean(v[0]))),
        op("reshape", one, |g, v| { let n: usize = g.shape(v[0]).iter().product(); g.reshape(v[0], &[n]) }),
    ]
}

/// `Σ op(x) ⊙ R` for a fixed random `R`, so every output element contributes.
fn weighted_loss(op: &GradOp, shapes: &[Vec<usize>], xs: &[Vec<f64>], weights: Option<&[f64]>, grad: bool) -> (Graph<'static, f64>, Vec<Var>, Var, Vec<usize>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = shapes
        .iter()
        .zip(xs)
        .map(|(s, x)| {
            let t = Tensor::new(s, x.clone()).unwrap();
            g.leaf(if grad { t.with_grad() } else { t })
        })
        .collect();
    let out = (op.f)(&mut g, &vars).unwrap();
    let out_shape = g.shape(out).to_vec();
    let n: usize = out_shape.iter().product();
    let w = weights.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; n]);
    let wv = g.constant(Tensor::new(&out_shape, w).unwrap());
    let prod = g.mul(out, wv).unwrap();
    let loss = g.sum(prod);
    (g, vars, loss, out_shape)
}

/// Largest relative error between analytic and central-difference gradients.
fn grad_instance(op: &GradOp, rng: &mut ChaCha8Rng) -> f64 {
    let shapes = (op.shapes)(rng);
    let xs: Vec<Vec<f64>> = shapes.iter().map(|s| random_data(rng, s)).collect();
    let (_, _, _, out_shape) = weighted_loss(op, &shapes, &xs, None, false);
    let weights = random_data(rng, &out_shape);
    let (g, vars, loss, _) = weighted_loss(op, &shapes, &xs, Some(&weights), true);
    let grads = g.backward(loss).unwrap();
    let eval = |xs: &[Vec<f64>]| {
        let (g, _, loss, _) = weighted_loss(op, &shapes, xs, Some(&weights), false);
        g.value(loss).data()[0]
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).expect("leaf gradient").to_vec();
        for i in 0..xs[k].len() {
            let mut plus = xs.clone();
            plus[k][i] += h;
            let mut minus = xs.clone();
            minus[k][i] -= h;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
            let denom = numeric.abs().max(analytic[i].abs()).max(1e-3);
            worst = worst.max((numeric - analytic[i]).abs() / denom);
        }
    }
    worst
}

fn criterion_gradients(ledger: &mut Ledger) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    let ops = grad_ops();
    for op in &ops {
        let op_worst = (0..GRAD_INSTANCES).map(|_| grad_instance(op, &mut rng)).fold(0.0, f64::max);
        worst = worst.max(op_worst);
        if op_worst >= GRAD_TOL {
            failures.push(format!("{} ({op_worst:.2e})", op.name));
        }
    }
    let took = start.elapsed();
    ledger.record(
        "1 gradient suite",
        failures.is_empty() && took < GRAD_BUDGET,
        format!(
            "{} ops × {GRAD_INSTANCES} instances, max rel. error {worst:.2e} (< {GRAD_TOL:e}), {:.1} s (< {} s){}",
            ops.len(),
            took.as_secs_f64(),
            GRAD_BUDGET.as_secs(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

fn criterion_rgbd(ledger: &mut Ledger) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = 32;
    let weight = Tensor::new(&[d, 768], (0..d * 768).map(|_| rng.random_range(-0.1..0.1)).collect()).unwrap();
    let bias = Tensor::new(&[d], (0..d).map(|_| rng.random_range(-0.1..0.1)).collect()).unwrap();
    let rgb = PatchEmbedder::new(3, weight, bias).unwrap();
    let rgbd = rgb.expand_to_rgbd().unwrap();
    let mut mismatches = 0;
    for _ in 0..RGBD_IMAGES {
        let px: Vec<f64> = (0..64 * 64 * 3).map(|_| rng.random::<f64>()).collect();
        let with_depth: Vec<f64> = px.chunks(3).flat_map(|c| [c[0], c[1], c[2], 0.0]).collect();
        let a = rgb.embed_patches(&Image::new(64, 64, 3, px).unwrap()).unwrap();
        let b = rgbd.embed_patches(&Image::new(64, 64, 4, with_depth).unwrap()).unwrap();
        let same = a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        mismatches += usize::from(!same);
    }
    let took = start.elapsed();
    ledger.record(
        "2 RGB-D init identity",
        mismatches == 0 && took < RGBD_BUDGET,
        format!("{} of {RGBD_IMAGES} images bit-equal, {:.2} s (< {} s)", RGBD_IMAGES - mismatches, took.as_secs_f64(), RGBD_BUDGET.as_secs()),
    );
}

// ---------------------------------------------------------------- criterion 3

fn criterion_samplers(ledger: &mut Ledger) {
    let steps = 1000;
    let sched = default_schedule::<f64>(steps).unwrap();
    // Independent tables straight from the linear β ramp.
    let beta: Vec<f64> = (0..steps).map(|i| 1e-4 + (0.02 - 1e-4) * i as f64 / (steps - 1) as f64).collect();
    let alpha_bar: Vec<f64> = beta.iter().scan(1.0, |acc, b| { *acc *= 1.0 - b; Some(*acc) }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..DDPM_TUPLES {
        let t = rng.random_range(0..steps);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let e: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t8 = |v: &Vec<f64>| Tensor::new(&[8], v.clone()).unwrap();
        let got = ddpm_reverse_step(&t8(&x), &t8(&e), t, &t8(&z), &sched).unwrap();
        let a = 1.0 - beta[t];
        let sigma = if t == 0 { 0.0 } else { beta[t].sqrt() };
        for i in 0..8 {
            let want = (x[i] - (1.0 - a) / (1.0 - alpha_bar[t]).sqrt() * e[i]) / a.sqrt() + sigma * z[i];
            worst = worst.max((got.data()[i] - want).abs());
        }
    }
    let cfg = FlowMatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mean = (0..BETA_DRAWS).map(|_| cfg.sample_tau(&mut rng)).sum::<f64>() / BETA_DRAWS as f64;
    ledger.record(
        "3 sampler exactness",
        worst < DDPM_TOL && (mean - BETA_MEAN).abs() <= BETA_TOL,
        format!(
            "DDPM step max abs error {worst:.1e} over {DDPM_TUPLES} tuples (< {DDPM_TOL:e}); Beta({}, {}) mean {mean:.5} (target {BETA_MEAN} ± {BETA_TOL})",
            cfg.beta_dist_alpha, cfg.beta_dist_beta
        ),
    );
}

// ---------------------------------------------------------------- criterion 4

struct Smoke {
    losses: Vec<LossRecord>,
    params: Vec<Vec<u64>>,
    took: Duration,
}

fn pipeline_smoke(g1: &[Episode], train_cfg: &TrainConfig) -> Smoke {
    let start = Instant::now();
    let mut spec = PolicySpec::new(ModalityConfig::ContactState, "simG1", &[DEFAULT_INSTRUCTION]).unwrap();
    spec.init_seed = train_cfg.seed;
    let set = TrainingSet::new(g1.to_vec(), summarize(g1).unwrap()).unwrap();
    let out = train(spec, &set, train_cfg, TrainOptions::default()).unwrap();
    let params = out.policy.params().iter().map(|(_, _, t)| t.data().iter().map(|v| v.to_bits()).collect()).collect();
    Smoke { losses: out.losses, params, took: start.elapsed() }
}

fn criterion_smoke(ledger: &mut Ledger, smoke: &Smoke, gen_time: Duration) {
    let initial = smoke.losses.first().map_or(f64::NAN, |r| r.loss);
    let last = smoke.losses.last().map_or(f64::NAN, |r| r.loss);
    let total = smoke.took + gen_time;
    ledger.record(
        "4 pipeline smoke",
        last <= SMOKE_LOSS_RATIO * initial && total < SMOKE_BUDGET,
        format!(
            "{EPISODES} simG1 episodes, CONTACT_STATE {} steps: loss {initial:.4} → {last:.4} (ratio {:.4}, ≤ {SMOKE_LOSS_RATIO}), {:.0} s (< {} min)",
            smoke.losses.len(),
            last / initial,
            total.as_secs_f64(),
            SMOKE_BUDGET.as_secs() / 60
        ),
    );
}

// ---------------------------------------------------------------- criteria 5–7

fn cells(table: &AblationTable, row: AblationRow) -> Vec<&AblationCell> {
    table.cells.iter().filter(|c| c.row == row).collect()
}

fn success_list(cells: &[&AblationCell]) -> String {
    cells.iter().map(|c| format!("{:.2}", c.success_rate)).collect::<Vec<_>>().join("/")
}

fn criteria_ablation(ledger: &mut Ledger, table: &AblationTable) {
    let zs = cells(table, AblationRow::ZeroShot);
    let zs3: Vec<&AblationCell> = zs.iter().copied().filter(|c| c.seed < ZERO_SHOT_SEEDS as u64).collect();
    let zs3_median = median(&zs3.iter().map(|c| c.success_rate).collect::<Vec<_>>());
    ledger.record(
        "5 zero-shot failure",
        zs3.len() == ZERO_SHOT_SEEDS && zs3_median <= ZERO_SHOT_MAX,
        format!(
            "simGR1 policy on simG1, {} rollouts × {ZERO_SHOT_SEEDS} seeds: success {} → median {zs3_median:.3} (≤ {ZERO_SHOT_MAX})",
            zs3.first().map_or(0, |c| c.n_rollouts),
            success_list(&zs3)
        ),
    );

    let summary = |row| table.row(row).expect("row ran");
    let base = summary(AblationRow::FinetuneBaseline);
    let zero = summary(AblationRow::ZeroShot);
    let gain = base.median_success - zero.median_success;
    ledger.record(
        "6 fine-tuning gain",
        gain >= FINETUNE_GAIN - 1e-12 && gain > 0.0,
        format!(
            "FINETUNE_BASELINE median {:.3} vs ZERO_SHOT median {:.3} over {} seeds: gain {:+.1} pp (≥ {:.0} pp)",
            base.median_success,
            zero.median_success,
            base.seeds.len(),
            100.0 * gain,
            100.0 * FINETUNE_GAIN
        ),
    );

    let cs = summary(AblationRow::ContactState);
    ledger.record(
        "7 modality ordering (CONTACT_STATE vs BASELINE)",
        cs.median_success >= base.median_success && cs.median_mse <= base.median_mse,
        format!(
            "median success {:.3} vs {:.3}; median offline MSE {:.5} vs {:.5} (CONTACT_STATE {} | BASELINE {})",
            cs.median_success,
            base.median_success,
            cs.median_mse,
            base.median_mse,
            success_list(&cells(table, AblationRow::ContactState)),
            success_list(&cells(table, AblationRow::FinetuneBaseline)),
        ),
    );

    let order = [AblationRow::ContactState, AblationRow::Depth, AblationRow::ContactEncoder, AblationRow::FinetuneBaseline];
    let medians: Vec<f64> = order.iter().map(|&r| summary(r).median_success).collect();
    let holds = medians.windows(2).all(|w| w[0] >= w[1]);
    ledger.advisory(
        "7 full ordering (advisory)",
        holds,
        format!(
            "{} (expected non-increasing); median MSE {}",
            order.iter().zip(&medians).map(|(r, m)| format!("{r} {m:.3}")).collect::<Vec<_>>().join(" ≥ "),
            order.iter().map(|&r| format!("{r} {:.5}", summary(r).median_mse)).collect::<Vec<_>>().join(", ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

struct Exactness {
    replay: modpol::evalkit::OfflineReport,
    expert: modpol::evalkit::RolloutReport,
}

fn exactness(g1: &[Episode], cfg: &AblationConfig) -> Exactness {
    let mut replay = ReplayPolicy::new(g1, cfg.net.horizon).unwrap();
    let replay = offline_mse(&mut replay, g1, cfg.offline_windows, 0, "replay", "g1").unwrap();
    let mut expert = ExpertPolicy::new("simG1", cfg.net.horizon).unwrap();
    let opts = RolloutOptions { replan_every: cfg.replan_every, config_id: "expert".into(), ..RolloutOptions::default() };
    let expert = rollout(&mut expert, "simG1", cfg.n_rollouts, cfg.rollout_seed_base, &opts).unwrap();
    Exactness { replay, expert }
}

fn criterion_exactness(ledger: &mut Ledger, ex: &Exactness) {
    ledger.record(
        "8 evaluation exactness",
        ex.replay.mean_mse == 0.0 && ex.expert.success_rate == 1.0 && ex.expert.n_rollouts == 20,
        format!(
            "ground-truth replay offline MSE {} over {} windows; scripted expert {}/{} = {}",
            ex.replay.mean_mse, ex.replay.windows.len(), ex.expert.successes, ex.expert.n_rollouts, ex.expert.success_rate
        ),
    );
}

// ---------------------------------------------------------------- criterion 10

fn criterion_round_trip(ledger: &mut Ledger, dir: &std::path::Path) {
    use std::io::{Read, Seek, SeekFrom, Write};
    let start = Instant::now();
    let cfg = ExpertConfig::default();
    let path = dir.join("round_trip.mpds");
    let episode = |i: usize| generate_episode("simG1", 50_000 + i as u64, &cfg).unwrap();
    let mut writer = DatasetWriter::create(&path).unwrap();
    for i in 0..ROUND_TRIP_EPISODES {
        writer.push(&episode(i)).unwrap();
    }
    let manifest = writer.finish().unwrap();
    let mut reader = DatasetReader::open(&path).unwrap();
    let mut exact = 0;
    for i in 0..reader.len() {
        let back = reader.episode(i).unwrap();
        let original = episode(i);
        exact += usize::from(back == original && encode_episode(&back).unwrap() == encode_episode(&original).unwrap());
    }
    drop(reader);

    // Flip one byte in the middle of episode 500's record.
    let at = (manifest.offsets[500] + manifest.offsets[501]) / 2;
    let mut file = std::fs::OpenOptions::new().read(true).write(true).open(&path).unwrap();
    let mut b = [0u8];
    file.seek(SeekFrom::Start(at)).unwrap();
    file.read_exact(&mut b).unwrap();
    file.seek(SeekFrom::Start(at)).unwrap();
    file.write_all(&[b[0] ^ 0x10]).unwrap();
    drop(file);
    let mut reader = DatasetReader::open(&path).unwrap();
    let detected = matches!(reader.episode(500), Err(Error::Checksum { .. })) && reader.episode(499).is_ok();
    std::fs::remove_file(&path).unwrap();

    ledger.record(
        "10 dataset integrity",
        exact == ROUND_TRIP_EPISODES && manifest.episode_count == ROUND_TRIP_EPISODES && detected,
        format!(
            "{exact} of {ROUND_TRIP_EPISODES} episodes round-tripped bit-exactly; single-byte corruption {} by CRC ({:.0} s)",
            if detected { "detected" } else { "NOT detected" },
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- driver

/// Generates `n` episodes from seeds `0..n` and a content id for cache keys.
fn dataset(embodiment: &str, n: usize) -> (Vec<Episode>, String) {
    let cfg = ExpertConfig::default();
    let mut crc = crc32fast::Hasher::new();
    let eps: Vec<Episode> = (0..n as u64)
        .map(|s| {
            let ep = generate_episode(embodiment, s, &cfg).unwrap();
            crc.update(&encode_episode(&ep).unwrap());
            ep
        })
        .collect();
    let id = format!("{embodiment}-{n}-{:08x}", crc.finalize());
    (eps, id)
}

fn main() {
    let mut ledger = Ledger::default();
    let tmp = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    let cache_dir = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| tmp.join("acceptance"));
    std::fs::create_dir_all(&cache_dir).unwrap();

    criterion_gradients(&mut ledger);
    criterion_rgbd(&mut ledger);
    criterion_samplers(&mut ledger);

    let gen_start = Instant::now();
    let (g1, g1_id) = dataset("simG1", EPISODES);
    let gen_time = gen_start.elapsed();
    let (gr1, gr1_id) = dataset("simGR1", EPISODES);

    let mut cfg = AblationConfig::default();
    cfg.jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    cfg.cache_dir = Some(cache_dir.clone());
    let smoke_cfg = TrainConfig { seed: 0, ..cfg.train.clone() };

    let smoke = pipeline_smoke(&g1, &smoke_cfg);
    criterion_smoke(&mut ledger, &smoke, gen_time);

    let data = AblationData { target: &g1, target_id: &g1_id, source: &gr1, source_id: &gr1_id };
    let ablation_start = Instant::now();
    let table = run_ablation(&data, &cfg, &SEEDS).unwrap();
    println!("       ablation table ({:.0} s, cache {}):", ablation_start.elapsed().as_secs_f64(), cache_dir.display());
    for r in &table.rows {
        let succ = success_list(&cells(&table, r.row));
        println!(
            "         {:<18} median success {:.3}  median MSE {:.5}  mean MSE {:.5}  [{succ}]",
            r.row.name(),
            r.median_success,
            r.median_mse,
            r.mean_mse
        );
    }
    criteria_ablation(&mut ledger, &table);

    let ex = exactness(&g1, &cfg);
    criterion_exactness(&mut ledger, &ex);

    // Criterion 9: rerun 4 and 8 in full and a fresh, uncached subset of the
    // ablation, and compare every number bit for bit.
    let (g1_again, g1_again_id) = dataset("simG1", EPISODES);
    let same_data = g1_again == g1 && g1_again_id == g1_id;
    let smoke_again = pipeline_smoke(&g1_again, &smoke_cfg);
    let same_smoke = smoke_again.losses == smoke.losses && smoke_again.params == smoke.params;
    let ex_again = exactness(&g1_again, &cfg);
    let same_ex = ex_again.replay == ex.replay && ex_again.expert == ex.expert;
    let fresh_cfg = AblationConfig { rows: vec![AblationRow::ContactState], cache_dir: None, ..cfg.clone() };
    let fresh = run_ablation(&data, &fresh_cfg, &SEEDS[..3]).unwrap();
    let same_cells = fresh.cells.iter().all(|c| table.cells.iter().any(|t| t == c));
    ledger.record(
        "9 determinism",
        same_data && same_smoke && same_ex && same_cells,
        format!(
            "regenerated data {}, smoke losses+weights {}, replay/expert reports {}, {} fresh CONTACT_STATE cells {}",
            verdict(same_data),
            verdict(same_smoke),
            verdict(same_ex),
            fresh.cells.len(),
            verdict(same_cells)
        ),
    );

    criterion_round_trip(&mut ledger, &tmp);

    let failed: Vec<&Outcome> = ledger.0.iter().filter(|o| o.hard && !o.pass).collect();
    println!(
        "acceptance: {} of {} hard criteria passed",
        ledger.0.iter().filter(|o| o.hard && o.pass).count(),
        ledger.0.iter().filter(|o| o.hard).count()
    );
    if !failed.is_empty() {
        for o in &failed {
            eprintln!("failed: {} — {}", o.id, o.detail);
        }
        std::process::exit(1);
    }
}

fn verdict(same: bool) -> &'static str {
    if same { "identical" } else { "DIFFER" }
}
