use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::OptimizerSnapshot;
use crate::ParamSet;

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Fraction of `total_steps` spent in linear warmup.
    pub warmup_frac: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    /// Checkpoint cadence in optimizer steps; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-5,
            warmup_frac: 0.05,
            batch_size: 32,
            total_steps: 2000,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return Err(Error::Config(format!("warmup_frac {} must lie in (0, 1)", self.warmup_frac)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("lr and weight_decay must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Last step of the linear ramp, where the rate peaks.
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_frac * self.total_steps as f64).round() as usize
    }
}

/// Linear warmup to `cfg.lr`, then half-cosine decay to zero at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_steps();
    let total = cfg.total_steps;
    if step >= total {
        return 0.0;
    }
    if step < w {
        return cfg.lr * step as f64 / w as f64;
    }
    let progress = (step - w) as f64 / (total - w) as f64;
    cfg.lr * 0.5 * (1.0 + (PI * progress).cos())
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn from_snapshot(params: &ParamSet, weight_decay: f64, snap: &OptimizerSnapshot) -> Result<Self> {
        let mut opt = Self::new(params, weight_decay);
        let fits = |mv: &[Vec<f64>]| mv.len() == opt.m.len() && mv.iter().zip(&opt.m).all(|(a, b)| a.len() == b.len());
        if !fits(&snap.m) || !fits(&snap.v) {
            return Err(Error::Shape("optimizer snapshot does not match the parameters".into()));
        }
        opt.step = snap.step;
        opt.m = snap.m.clone();
        opt.v = snap.v.clone();
        Ok(opt)
    }

    pub fn snapshot(&self) -> OptimizerSnapshot {
        OptimizerSnapshot { step: self.step, m: self.m.clone(), v: self.v.clone() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the gradients held in `params`.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        let grads: Vec<Option<Vec<f64>>> = params.iter().map(|(_, _, t)| t.grad().map(<[f64]>::to_vec)).collect();
        self.apply(params, &grads, lr)
    }

    /// One update from explicit per-tensor gradients, in parameter order.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &[Option<Vec<f64>>], lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Shape(format!("optimizer tracks {} tensors, got {}", self.m.len(), params.len())));
        }
        let ids: Vec<_> = params.ids().collect();
        for (k, &id) in ids.iter().enumerate() {
            match grads.get(k) {
                Some(Some(g)) if g.len() == self.m[k].len() => {}
                Some(Some(g)) => {
                    return Err(Error::Shape(format!(
                        "gradient for `{}` has {} values, expected {}",
                        params.name(id),
                        g.len(),
                        self.m[k].len()
                    )))
                }
                _ => return Err(Error::Contract(format!("parameter `{}` has no gradient", params.name(id)))),
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, id) in ids.into_iter().enumerate() {
            let grad = grads[k].as_deref().expect("checked above");
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in params.get_mut(id).data_mut().iter_mut().enumerate() {
                let g = grad[i];
                *p -= lr * self.weight_decay * *p;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
