use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use super::schedule::{ddpm_reverse_step_scaled, NoiseSchedule};
use crate::error::{Error, Result};
use crate::gradcore::{Scalar, Tensor};
use crate::nets::PredictionHead;

/// A noise or velocity predictor with its conditioning already bound.
pub trait Denoiser<F> {
    fn horizon(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Prediction for the noisy chunk `x: [H × a]` at network timestep `t`.
    fn predict(&self, x: &Tensor<F>, t: usize) -> Result<Tensor<F>>;
}

/// Standard-normal tensor of the given shape drawn from `rng`.
pub fn gaussian<F: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<F> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            F::lit(v)
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches data")
}

/// The initial latent a sampler seeded with `seed` starts from.
pub fn initial_noise<F: Scalar>(horizon: usize, action_dim: usize, seed: u64) -> Tensor<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian(&[horizon, action_dim], &mut rng)
}

fn check_prediction<F: Scalar>(pred: &Tensor<F>, x: &Tensor<F>) -> Result<()> {
    if pred.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "denoiser returned {:?} for input {:?}",
            pred.shape(),
            x.shape()
        )));
    }
    Ok(())
}

/// Ancestral sampling through every position of `sched`, returning the
/// latent and the number of network evaluations.
pub fn ddpm_sample_scaled<F: Scalar, D: Denoiser<F> + ?Sized>(
    net: &D,
    sched: &NoiseSchedule<F>,
    sigma_scale: F,
    seed: u64,
) -> Result<(Tensor<F>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [net.horizon(), net.action_dim()];
    let mut x: Tensor<F> = gaussian(&shape, &mut rng);
    let mut calls = 0;
    for i in (0..sched.len()).rev() {
        let eps = net.predict(&x, sched.timesteps[i])?;
        check_prediction(&eps, &x)?;
        calls += 1;
        let z = gaussian(&shape, &mut rng);
        x = ddpm_reverse_step_scaled(&x, &eps, i, &z, sched, sigma_scale)?;
    }
    Ok((x, calls))
}

/// Full reverse chain `T → 0`; bit-reproducible for a fixed seed.
pub fn sample_actions_ddpm<F: Scalar, D: Denoiser<F> + ?Sized>(
    net: &D,
    sched: &NoiseSchedule<F>,
    seed: u64,
) -> Result<Tensor<F>> {
    ddpm_sample_scaled(net, sched, F::one(), seed).map(|(x, _)| x)
}

/// Timestep distribution and integration settings for flow matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMatchConfig {
    pub beta_dist_alpha: f64,
    pub beta_dist_beta: f64,
    pub n_sample_steps: usize,
    /// Discretization used to turn `τ` into a network timestep.
    pub timesteps: usize,
    pub head: PredictionHead,
}

impl Default for FlowMatchConfig {
    fn default() -> Self {
        Self {
            beta_dist_alpha: 1.5,
            beta_dist_beta: 1.0,
            n_sample_steps: 10,
            timesteps: 1000,
            head: PredictionHead::Velocity,
        }
    }
}

impl FlowMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_dist_alpha > 0.0 && self.beta_dist_beta > 0.0) {
            return Err(Error::Config("Beta shape parameters must be positive".into()));
        }
        if self.n_sample_steps == 0 || self.timesteps < 2 {
            return Err(Error::Config("need ≥ 1 sampling step and ≥ 2 timesteps".into()));
        }
        Ok(())
    }

    /// Draws `τ ~ Beta(α, β)`; with `β = 1` the CDF is `τ^α`, inverted exactly.
    pub fn sample_tau(&self, rng: &mut impl Rng) -> f64 {
        if self.beta_dist_beta == 1.0 {
            let u: f64 = rng.random();
            u.powf(1.0 / self.beta_dist_alpha)
        } else {
            Beta::new(self.beta_dist_alpha, self.beta_dist_beta)
                .expect("validated shape parameters")
                .sample(rng)
        }
    }

    pub fn step_index(&self, tau: f64) -> usize {
        (tau * (self.timesteps - 1) as f64).round() as usize
    }
}

/// One flow-matching training example.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSample<F> {
    pub tau: F,
    pub t_idx: usize,
    pub eps: Tensor<F>,
    pub x_tau: Tensor<F>,
    /// `ε − x0` for the velocity head, `ε` for the noise head.
    pub target: Tensor<F>,
}

/// Draws `τ` and `ε` and forms `x_τ = (1−τ)·x0 + τ·ε`.
pub fn flow_match_sample<F: Scalar>(x0: &Tensor<F>, cfg: &FlowMatchConfig, rng: &mut impl Rng) -> FlowSample<F> {
    let tau_f = cfg.sample_tau(rng);
    let tau = F::lit(tau_f);
    let eps: Tensor<F> = gaussian(x0.shape(), rng);
    let x_tau = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| (F::one() - tau) * x + tau * e)
        .collect();
    let target = match cfg.head {
        PredictionHead::Velocity => x0.data().iter().zip(eps.data()).map(|(&x, &e)| e - x).collect(),
        PredictionHead::Noise => eps.data().to_vec(),
    };
    FlowSample {
        tau,
        t_idx: cfg.step_index(tau_f),
        x_tau: Tensor::new(x0.shape(), x_tau).expect("shape"),
        target: Tensor::new(x0.shape(), target).expect("shape"),
        eps,
    }
}

/// Mean squared error of the network's prediction on a freshly drawn example.
pub fn flow_match_loss<F: Scalar, D: Denoiser<F> + ?Sized>(
    net: &D,
    x0: &Tensor<F>,
    cfg: &FlowMatchConfig,
    rng: &mut impl Rng,
) -> Result<F> {
    let s = flow_match_sample(x0, cfg, rng);
    let pred = net.predict(&s.x_tau, s.t_idx)?;
    check_prediction(&pred, x0)?;
    let n = F::from_usize(pred.len().max(1)).unwrap();
    let sse = pred
        .data()
        .iter()
        .zip(s.target.data())
        .fold(F::zero(), |acc, (&p, &t)| acc + (p - t) * (p - t));
    Ok(sse / n)
}

/// Euler integration of the learned field from `τ = 1` to `τ = 0`.
pub fn sample_actions_flow<F: Scalar, D: Denoiser<F> + ?Sized>(
    net: &D,
    cfg: &FlowMatchConfig,
    seed: u64,
) -> Result<Tensor<F>> {
    cfg.validate()?;
    let mut x: Tensor<F> = initial_noise(net.horizon(), net.action_dim(), seed);
    let n = cfg.n_sample_steps;
    let dt = F::one() / F::from_usize(n).unwrap();
    // Floor for converting a noise prediction into a velocity near τ = 1.
    let floor = F::lit(0.5 / n as f64);
    for i in 0..n {
        let tau_f = 1.0 - i as f64 / n as f64;
        let tau = F::lit(tau_f);
        let pred = net.predict(&x, cfg.step_index(tau_f))?;
        check_prediction(&pred, &x)?;
        let data: Vec<F> = match cfg.head {
            PredictionHead::Velocity => x.data().iter().zip(pred.data()).map(|(&xv, &v)| xv - dt * v).collect(),
            PredictionHead::Noise => {
                let denom = (F::one() - tau).max(floor);
                x.data()
                    .iter()
                    .zip(pred.data())
                    .map(|(&xv, &e)| xv - dt * (e - xv) / denom)
                    .collect()
            }
        };
        x = Tensor::new(x.shape(), data)?;
    }
    Ok(x)
}

/// One branch of the contact-adaptive schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveBranch {
    pub steps: usize,
    pub sigma_scale: f64,
}

/// More, noisier denoising iterations before contact; fewer, quieter ones after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveScheduleConfig {
    pub pre_contact: AdaptiveBranch,
    pub post_contact: AdaptiveBranch,
}

impl AdaptiveScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let (pre, post) = (self.pre_contact, self.post_contact);
        if pre.steps < post.steps || post.steps == 0 {
            return Err(Error::Config("need pre_contact.steps ≥ post_contact.steps ≥ 1".into()));
        }
        if pre.sigma_scale < 1.0 || !(0.0..=1.0).contains(&post.sigma_scale) {
            return Err(Error::Config("need pre sigma_scale ≥ 1 and post sigma_scale in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ancestral sampling whose step count and noise level depend on the contact bit.
/// Returns the latent and the number of denoising iterations run.
pub fn adaptive_sample<F: Scalar, D: Denoiser<F> + ?Sized>(
    net: &D,
    contact: bool,
    cfg: &AdaptiveScheduleConfig,
    base: &NoiseSchedule<F>,
    seed: u64,
) -> Result<(Tensor<F>, usize)> {
    cfg.validate()?;
    let branch = if contact { cfg.post_contact } else { cfg.pre_contact };
    let sched = base.respaced(branch.steps.min(base.len()))?;
    ddpm_sample_scaled(net, &sched, F::lit(branch.sigma_scale), seed)
}
