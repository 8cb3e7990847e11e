use crate::error::{Error, Result};
use crate::gradcore::{Scalar, Tensor};

/// Discrete-time variance schedule.
///
/// `timesteps[i]` is the network timestep index used at schedule position `i`;
/// it is the identity for a base schedule and a subsequence for a respaced one.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<F> {
    pub beta: Vec<F>,
    pub alpha: Vec<F>,
    pub alpha_bar: Vec<F>,
    pub sigma: Vec<F>,
    pub timesteps: Vec<usize>,
}

impl<F: Scalar> NoiseSchedule<F> {
    /// Builds every derived table from `β`. Each `β_t` must lie in `(0, 1]`.
    pub fn from_betas(beta: Vec<F>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if let Some(b) = beta.iter().find(|&&b| !(b > F::zero() && b <= F::one())) {
            return Err(Error::Config(format!("β = {b:?} outside (0, 1]")));
        }
        let alpha: Vec<F> = beta.iter().map(|&b| F::one() - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = F::one();
        for &a in &alpha {
            acc = acc * a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        let timesteps = (0..beta.len()).collect();
        Ok(Self { beta, alpha, alpha_bar, sigma, timesteps })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// A shorter schedule over `steps` evenly spaced base timesteps with `β`
    /// recomputed from `ᾱ` so that the marginals match. `steps == T` returns
    /// the schedule unchanged.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        let t = self.len();
        if steps == 0 || steps > t {
            return Err(Error::Config(format!("cannot respace {t} steps to {steps}")));
        }
        if steps == t {
            return Ok(self.clone());
        }
        let picks: Vec<usize> = if steps == 1 {
            vec![t - 1]
        } else {
            (0..steps)
                .map(|i| ((i * (t - 1)) as f64 / (steps - 1) as f64).round() as usize)
                .collect()
        };
        let mut prev = F::one();
        let mut beta = Vec::with_capacity(steps);
        for &p in &picks {
            let ab = self.alpha_bar[p];
            beta.push(F::one() - ab / prev);
            prev = ab;
        }
        let mut out = Self::from_betas(beta)?;
        out.timesteps = picks.iter().map(|&p| self.timesteps[p]).collect();
        Ok(out)
    }
}

/// `β` linearly interpolated from `beta_start` to `beta_end` over `t` steps.
pub fn linear_schedule<F: Scalar>(t: usize, beta_start: F, beta_end: F) -> Result<NoiseSchedule<F>> {
    if t < 2 {
        return Err(Error::Config(format!("schedule needs T ≥ 2, got {t}")));
    }
    if !(beta_start > F::zero() && beta_start <= beta_end && beta_end < F::one()) {
        return Err(Error::Config(format!(
            "need 0 < beta_start ≤ beta_end < 1, got {beta_start:?}, {beta_end:?}"
        )));
    }
    let span = F::from_usize(t - 1).unwrap();
    let beta = (0..t)
        .map(|i| beta_start + (beta_end - beta_start) * F::from_usize(i).unwrap() / span)
        .collect();
    NoiseSchedule::from_betas(beta)
}

/// The classic DDPM schedule, `β` from 1e-4 to 0.02.
pub fn default_schedule<F: Scalar>(t: usize) -> Result<NoiseSchedule<F>> {
    linear_schedule(t, F::lit(1e-4), F::lit(0.02))
}

fn check_step<F>(sched: &NoiseSchedule<F>, t: usize) -> Result<()> {
    if t >= sched.beta.len() {
        return Err(Error::Contract(format!("timestep {t} outside schedule of {}", sched.beta.len())));
    }
    Ok(())
}

fn check_same(a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("shape mismatch: {a:?} vs {b:?}")));
    }
    Ok(())
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_diffuse<F: Scalar>(x0: &Tensor<F>, t: usize, eps: &Tensor<F>, sched: &NoiseSchedule<F>) -> Result<Tensor<F>> {
    check_step(sched, t)?;
    check_same(x0.shape(), eps.shape())?;
    let ab = sched.alpha_bar[t];
    let (a, b) = (ab.sqrt(), (F::one() - ab).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + b * e).collect();
    Tensor::new(x0.shape(), data)
}

/// One ancestral step `x_{t−1} = (x_t − (1−α_t)/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·z`.
///
/// `σ_0` is taken as zero so the chain ends deterministically.
pub fn ddpm_reverse_step<F: Scalar>(
    x_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    z: &Tensor<F>,
    sched: &NoiseSchedule<F>,
) -> Result<Tensor<F>> {
    ddpm_reverse_step_scaled(x_t, eps_hat, t, z, sched, F::one())
}

/// [`ddpm_reverse_step`] with the injected noise scaled by `sigma_scale`.
pub fn ddpm_reverse_step_scaled<F: Scalar>(
    x_t: &Tensor<F>,
    eps_hat: &Tensor<F>,
    t: usize,
    z: &Tensor<F>,
    sched: &NoiseSchedule<F>,
    sigma_scale: F,
) -> Result<Tensor<F>> {
    check_step(sched, t)?;
    check_same(x_t.shape(), eps_hat.shape())?;
    check_same(x_t.shape(), z.shape())?;
    let alpha = sched.alpha[t];
    let ab = sched.alpha_bar[t];
    let sigma = if t == 0 { F::zero() } else { sched.sigma[t] * sigma_scale };
    let coef = (F::one() - alpha) / (F::one() - ab).sqrt();
    let inv = F::one() / alpha.sqrt();
    let data = x_t
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(z.data())
        .map(|((&x, &e), &n)| {
            let mean = inv * (x - coef * e);
            if sigma == F::zero() {
                mean
            } else {
                mean + sigma * n
            }
        })
        .collect();
    Tensor::new(x_t.shape(), data)
}
