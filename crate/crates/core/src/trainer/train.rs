use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{TrainingSet, Window};
use super::optim::{lr_at, AdamW, TrainConfig};
use crate::diffusion::{default_schedule, flow_match_sample, forward_diffuse, gaussian, FlowMatchConfig, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nets::{Checkpoint, Objective, Policy, PolicySpec};
use crate::{Graph, Tensor};

pub const LOSS_CSV: &str = "loss.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory for checkpoints and the loss CSV; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
    /// Continue from this checkpoint's step, parameters and optimizer state.
    pub resume: Option<Checkpoint>,
    /// Extra provenance stored in every checkpoint.
    pub meta: serde_json::Value,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub policy: Policy,
    pub optimizer: AdamW,
    /// Losses of the steps run by this call.
    pub losses: Vec<LossRecord>,
    pub checkpoints: Vec<PathBuf>,
}

/// Random stream for one optimizer step, so a resumed run draws exactly what
/// an uninterrupted run would have.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

enum Noising {
    Flow(FlowMatchConfig),
    Ddpm(NoiseSchedule<f64>),
}

impl Noising {
    fn new(spec: &PolicySpec) -> Result<Self> {
        Ok(match spec.objective {
            Objective::FlowMatch => {
                let cfg = FlowMatchConfig { head: spec.head, timesteps: spec.net.timesteps, ..Default::default() };
                cfg.validate()?;
                Noising::Flow(cfg)
            }
            Objective::DdpmEps => Noising::Ddpm(default_schedule(spec.net.timesteps)?),
        })
    }

    /// Network input, timestep and regression target for clean actions `x0`.
    fn draw(&self, x0: &Tensor, rng: &mut ChaCha8Rng) -> Result<(Tensor, usize, Tensor)> {
        match self {
            Noising::Flow(cfg) => {
                let s = flow_match_sample(x0, cfg, rng);
                Ok((s.x_tau, s.t_idx, s.target))
            }
            Noising::Ddpm(sched) => {
                let t = rng.random_range(0..sched.len());
                let eps: Tensor = gaussian(x0.shape(), rng);
                Ok((forward_diffuse(x0, t, &eps, sched)?, t, eps))
            }
        }
    }
}

/// Masked mean squared error of one window, scaled by `weight`; adds its
/// gradients to the policy's buffers and returns the scaled loss.
fn accumulate_window(
    policy: &mut Policy,
    data: &TrainingSet,
    w: Window,
    noising: &Noising,
    weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let h = policy.horizon();
    let (x0, mask) = data.target(w, h)?;
    let (x, t, target) = noising.draw(&x0, rng)?;
    let valid: f64 = mask.data().iter().sum();
    let (loss, grads) = {
        let mut g = Graph::with_params(policy.params());
        let z = policy.build_conditioning(&mut g, data.observation(w), data.instruction(w))?;
        let xv = g.constant(x);
        let pred = policy.denoise(&mut g, xv, t, z)?;
        let target = g.constant(target);
        let mask = g.constant(mask);
        let diff = g.sub(pred, target)?;
        let sq = g.mul(diff, diff)?;
        let masked = g.mul(sq, mask)?;
        let total = g.sum(masked);
        let loss = g.scale(total, weight / valid);
        (g.value(loss).data()[0], g.backward(loss)?)
    };
    policy.params_mut().accumulate(&grads)?;
    Ok(loss)
}

/// Mean batch loss of `policy` at `step` without updating it.
pub fn batch_loss(policy: &mut Policy, data: &TrainingSet, cfg: &TrainConfig, step: usize) -> Result<f64> {
    let noising = Noising::new(policy.spec())?;
    let mut rng = step_rng(cfg.seed, step);
    let weight = 1.0 / cfg.batch_size as f64;
    let mut loss = 0.0;
    for _ in 0..cfg.batch_size {
        let w = data.windows()[rng.random_range(0..data.windows().len())];
        loss += accumulate_window(policy, data, w, &noising, weight, &mut rng)?;
    }
    policy.params_mut().zero_grad();
    Ok(loss)
}

fn write_loss_csv(path: &Path, rows: &[LossRecord]) -> Result<()> {
    let mut s = String::from("step,lr,loss\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e}", r.step, r.lr, r.loss);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Rows of an existing loss CSV, or nothing when it is absent.
pub fn read_loss_csv(path: &Path) -> Result<Vec<LossRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let bad = |line: &str| Error::Malformed(format!("{}: bad row `{line}`", path.display()));
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 {
                return Err(bad(line));
            }
            Ok(LossRecord {
                step: f[0].parse().map_err(|_| bad(line))?,
                lr: f[1].parse().map_err(|_| bad(line))?,
                loss: f[2].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

fn checkpoint(policy: &Policy, opt: &AdamW, step: usize, cfg: &TrainConfig, meta: &serde_json::Value) -> Checkpoint {
    let mut ck = Checkpoint::from_policy(policy, step as u64);
    ck.optimizer = Some(opt.snapshot());
    ck.meta = serde_json::json!({
        "train_config": cfg,
        "rng": { "algorithm": "chacha8", "seed": cfg.seed, "next_stream": step },
        "extra": meta,
    });
    ck
}

/// Trains `spec` on `data`. Validation happens before the first step; the
/// result is a pure function of the data, `spec`, `cfg` and the resume point.
pub fn train(spec: PolicySpec, data: &TrainingSet, cfg: &TrainConfig, opts: TrainOptions) -> Result<TrainOutput> {
    cfg.validate()?;
    spec.validate()?;
    data.check_compatible(&spec)?;
    let noising = Noising::new(&spec)?;

    let (mut policy, mut opt, start) = match &opts.resume {
        Some(ck) => {
            if ck.spec != spec {
                return Err(Error::Config("resume checkpoint was trained with a different policy spec".into()));
            }
            if ck.stats != *data.stats() {
                return Err(Error::Config("resume checkpoint has different normalization statistics".into()));
            }
            let snap = ck
                .optimizer
                .as_ref()
                .ok_or_else(|| Error::Config("resume checkpoint has no optimizer state".into()))?;
            let policy = ck.to_policy()?;
            let opt = AdamW::from_snapshot(policy.params(), cfg.weight_decay, snap)?;
            (policy, opt, ck.step as usize)
        }
        None => {
            let policy = Policy::new(spec, data.stats().clone())?;
            let opt = AdamW::new(policy.params(), cfg.weight_decay);
            (policy, opt, 0)
        }
    };
    if start > cfg.total_steps {
        return Err(Error::Config(format!("resume step {start} is past total_steps {}", cfg.total_steps)));
    }

    let out = opts.out_dir.as_deref();
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let history = match out {
        Some(dir) if start > 0 => {
            let mut rows = read_loss_csv(&dir.join(LOSS_CSV))?;
            rows.retain(|r| r.step < start);
            rows
        }
        _ => Vec::new(),
    };

    let weight = 1.0 / cfg.batch_size as f64;
    let n_windows = data.windows().len();
    let mut losses = Vec::with_capacity(cfg.total_steps - start);
    let mut checkpoints = Vec::new();
    for step in start..cfg.total_steps {
        let mut rng = step_rng(cfg.seed, step);
        policy.params_mut().zero_grad();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let w = data.windows()[rng.random_range(0..n_windows)];
            loss += accumulate_window(&mut policy, data, w, &noising, weight, &mut rng)?;
        }
        if !loss.is_finite() {
            return Err(Error::Contract(format!("loss diverged at step {step}")));
        }
        let lr = lr_at(step, cfg);
        opt.step(policy.params_mut(), lr)?;
        losses.push(LossRecord { step, lr, loss });

        let done = step + 1;
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.total_steps {
                let path = dir.join(format!("step_{done:06}.ckpt"));
                checkpoint(&policy, &opt, done, cfg, &opts.meta).save(&path)?;
                write_loss_csv(&dir.join(LOSS_CSV), &[history.as_slice(), losses.as_slice()].concat())?;
                checkpoints.push(path);
            }
        }
    }
    policy.params_mut().zero_grad();

    if let Some(dir) = out {
        let path = dir.join(FINAL_CHECKPOINT);
        checkpoint(&policy, &opt, cfg.total_steps, cfg, &opts.meta).save(&path)?;
        write_loss_csv(&dir.join(LOSS_CSV), &[history.as_slice(), losses.as_slice()].concat())?;
        checkpoints.push(path);
    }
    Ok(TrainOutput { policy, optimizer: opt, losses, checkpoints })
}
