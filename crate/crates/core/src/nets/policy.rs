//! Policy assembly: modality encoders, conditioning set and the DiT denoiser.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ContactInput, PolicySpec};
use super::layers::{init_tensor, multi_head_attention, sinusoidal_embedding, Init, LayerNorm, Linear, Mlp};
use super::patch::{Image, PatchEmbedder, PATCH};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::gradcore::{ParamId, Var};
use crate::simenv::Observation;
use crate::{Graph, ParamSet, Tensor};

/// Depth enters the embedder as height above the table in units of this value.
pub const DEPTH_FEATURE_SCALE: f64 = 0.3;
const TABLE_DEPTH: f64 = 1.0;
const STD_FLOOR: f64 = 1e-3;

/// Per-dimension z-score statistics for states and actions.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
}

impl NormStats {
    /// Identity normalization.
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
        }
    }

    /// Population mean and standard deviation of each column.
    pub fn column_stats<'a>(rows: impl IntoIterator<Item = &'a [f32]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for (i, &v) in r.iter().take(dim).enumerate() {
                sum[i] += v as f64;
                sq[i] += (v as f64) * (v as f64);
            }
        }
        let n = n.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq.iter().zip(&mean).map(|(s, m)| (s / n - m * m).max(0.0).sqrt()).collect();
        (mean, std)
    }

    fn floor(std: f64) -> f64 {
        std.max(STD_FLOOR)
    }

    pub fn normalize_state(&self, s: &[f32]) -> Vec<f64> {
        s.iter()
            .zip(self.state_mean.iter().zip(&self.state_std))
            .map(|(&v, (m, sd))| (v as f64 - m) / Self::floor(*sd))
            .collect()
    }

    pub fn normalize_action(&self, a: &[f32]) -> Vec<f64> {
        a.iter()
            .zip(self.action_mean.iter().zip(&self.action_std))
            .map(|(&v, (m, sd))| (v as f64 - m) / Self::floor(*sd))
            .collect()
    }

    pub fn denormalize_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.action_mean.iter().zip(&self.action_std))
            .map(|(&v, (m, sd))| v * Self::floor(*sd) + m)
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln_self: LayerNorm,
    self_q: Linear,
    self_k: Linear,
    self_v: Linear,
    self_o: Linear,
    ln_cross: LayerNorm,
    ln_cond: LayerNorm,
    cross_q: Linear,
    cross_k: Linear,
    cross_v: Linear,
    cross_o: Linear,
    ln_ff: LayerNorm,
    ff: Mlp,
}

impl Block {
    fn new(params: &mut ParamSet, name: &str, d: usize, ff: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let lin = |p: &mut ParamSet, n: &str, rng: &mut ChaCha8Rng| Linear::new(p, &format!("{name}.{n}"), d, d, Init::FanIn, rng);
        Ok(Self {
            ln_self: LayerNorm::new(params, &format!("{name}.ln_self"), d)?,
            self_q: lin(params, "self_q", rng)?,
            self_k: lin(params, "self_k", rng)?,
            self_v: lin(params, "self_v", rng)?,
            self_o: lin(params, "self_o", rng)?,
            ln_cross: LayerNorm::new(params, &format!("{name}.ln_cross"), d)?,
            ln_cond: LayerNorm::new(params, &format!("{name}.ln_cond"), d)?,
            cross_q: lin(params, "cross_q", rng)?,
            cross_k: lin(params, "cross_k", rng)?,
            cross_v: lin(params, "cross_v", rng)?,
            cross_o: lin(params, "cross_o", rng)?,
            ln_ff: LayerNorm::new(params, &format!("{name}.ln_ff"), d)?,
            ff: Mlp::new(params, &format!("{name}.ff"), (d, d * ff, d), rng)?,
        })
    }

    fn forward(&self, g: &mut Graph, h: Var, z: Var, heads: usize) -> Result<Var> {
        let x = self.ln_self.forward(g, h)?;
        let q = self.self_q.forward(g, x)?;
        let k = self.self_k.forward(g, x)?;
        let v = self.self_v.forward(g, x)?;
        let a = multi_head_attention(g, q, k, v, heads)?;
        let a = self.self_o.forward(g, a)?;
        let h = g.add(h, a)?;

        let x = self.ln_cross.forward(g, h)?;
        let zn = self.ln_cond.forward(g, z)?;
        let q = self.cross_q.forward(g, x)?;
        let k = self.cross_k.forward(g, zn)?;
        let v = self.cross_v.forward(g, zn)?;
        let a = multi_head_attention(g, q, k, v, heads)?;
        let a = self.cross_o.forward(g, a)?;
        let h = g.add(h, a)?;

        let x = self.ln_ff.forward(g, h)?;
        let f = self.ff.forward(g, x)?;
        g.add(h, f)
    }
}

/// A complete modality-conditioned diffusion policy.
#[derive(Debug, Clone)]
pub struct Policy {
    spec: PolicySpec,
    stats: NormStats,
    params: ParamSet,
    patch_w: ParamId,
    patch_b: ParamId,
    vision_pos: ParamId,
    task: ParamId,
    state_enc: Mlp,
    contact_enc: Option<Mlp>,
    action_in: Linear,
    action_pos: ParamId,
    time_mlp: Mlp,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    action_out: Linear,
}

impl Policy {
    /// Builds a freshly initialized policy. Depth-enabled policies start from a
    /// 3-channel patch kernel expanded by RGB kernel averaging.
    pub fn new(spec: PolicySpec, stats: NormStats) -> Result<Self> {
        spec.validate()?;
        let e = &spec.embodiment;
        if stats.state_mean.len() != e.state_dim || stats.action_mean.len() != e.action_dim {
            return Err(Error::Config(format!(
                "normalization stats are {}/{}-dimensional, {} needs {}/{}",
                stats.state_mean.len(),
                stats.action_mean.len(),
                e.name,
                e.state_dim,
                e.action_dim
            )));
        }
        let n = &spec.net;
        let d = n.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
        let mut params = ParamSet::new();

        let rgb_cols = PATCH * PATCH * 3;
        let w3 = init_tensor(&[d, rgb_cols], Init::FanIn, rgb_cols, &mut rng);
        let mut embedder = PatchEmbedder::new(3, w3, Tensor::zeros(&[d]))?;
        if spec.modality.uses_depth() {
            embedder = embedder.expand_to_rgbd()?;
        }
        let patch_w = params.register("vision.patch.w", embedder.weight().clone())?;
        let patch_b = params.register("vision.patch.b", embedder.bias().clone())?;
        let n_patches = (n.image_size / PATCH).pow(2);
        let vision_pos = params.register("vision.pos", init_tensor(&[n_patches, d], Init::Normal(0.02), 1, &mut rng))?;
        let task = params.register(
            "text.table",
            init_tensor(&[spec.instructions.len(), d], Init::Normal(0.02), 1, &mut rng),
        )?;
        let state_enc = Mlp::new(&mut params, "state", (spec.state_input_dim(), d, d), &mut rng)?;
        let contact_enc = if spec.modality.contact_token() {
            Some(Mlp::new(&mut params, "contact", (spec.contact_input_dim(), d, d), &mut rng)?)
        } else {
            None
        };
        let action_in = Linear::new(&mut params, "action.in", e.action_dim, d, Init::FanIn, &mut rng)?;
        let action_pos = params.register("action.pos", init_tensor(&[n.horizon, d], Init::Normal(0.02), 1, &mut rng))?;
        let time_mlp = Mlp::new(&mut params, "time", (d, d, d), &mut rng)?;
        let blocks = (0..n.n_layers)
            .map(|i| Block::new(&mut params, &format!("dit.{i}"), d, n.ff_mult, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let ln_out = LayerNorm::new(&mut params, "dit.ln_out", d)?;
        let action_out = Linear::new(&mut params, "action.out", d, e.action_dim, Init::Zeros, &mut rng)?;

        Ok(Self {
            spec,
            stats,
            params,
            patch_w,
            patch_b,
            vision_pos,
            task,
            state_enc,
            contact_enc,
            action_in,
            action_pos,
            time_mlp,
            blocks,
            ln_out,
            action_out,
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn horizon(&self) -> usize {
        self.spec.net.horizon
    }

    pub fn action_dim(&self) -> usize {
        self.spec.embodiment.action_dim
    }

    /// Snapshot of the current patch embedding as a standalone embedder.
    pub fn patch_embedder(&self) -> Result<PatchEmbedder<f64>> {
        PatchEmbedder::new(
            self.spec.modality.image_channels(),
            self.params.get(self.patch_w).clone(),
            self.params.get(self.patch_b).clone(),
        )
    }

    pub fn instruction_index(&self, instruction: &str) -> Result<usize> {
        self.spec
            .instructions
            .iter()
            .position(|s| s == instruction)
            .ok_or_else(|| Error::UnknownInstruction(instruction.to_string()))
    }

    /// The image as embedder input: RGB in [0,1], plus height above the table
    /// when depth is fused.
    pub fn vision_input(&self, rgb: &[u8], depth: Option<&[f32]>) -> Result<Image<f64>> {
        let s = self.spec.net.image_size;
        if rgb.len() != s * s * 3 {
            return Err(Error::Shape(format!("rgb has {} bytes, expected {}", rgb.len(), s * s * 3)));
        }
        if !self.spec.modality.uses_depth() {
            return Image::new(s, s, 3, rgb.iter().map(|&b| b as f64 / 255.0).collect());
        }
        let depth = depth.ok_or_else(|| Error::Data(format!("{} policy needs depth", self.spec.modality)))?;
        if depth.len() != s * s {
            return Err(Error::Shape(format!("depth has {} values, expected {}", depth.len(), s * s)));
        }
        let mut data = Vec::with_capacity(s * s * 4);
        for (px, &dv) in rgb.chunks_exact(3).zip(depth) {
            data.extend(px.iter().map(|&b| b as f64 / 255.0));
            data.push((TABLE_DEPTH - dv as f64) / DEPTH_FEATURE_SCALE);
        }
        Image::new(s, s, 4, data)
    }

    pub fn encode_vision(&self, g: &mut Graph, img: &Image<f64>) -> Result<Var> {
        let channels = self.spec.modality.image_channels();
        if img.channels != channels {
            return Err(Error::Config(format!("{} policy expects {channels} channels, got {}", self.spec.modality, img.channels)));
        }
        let patches = g.constant(img.patch_matrix()?);
        let w = g.param(self.patch_w);
        let b = g.param(self.patch_b);
        let pos = g.param(self.vision_pos);
        let e = g.matmul_t(patches, w)?;
        let e = g.add(e, b)?;
        g.add(e, pos)
    }

    /// State token. `contact` must be present exactly when contact is fused into the state.
    pub fn encode_state(&self, g: &mut Graph, state: &[f32], contact: Option<bool>) -> Result<Var> {
        let base = self.spec.embodiment.state_dim;
        if state.len() != base {
            return Err(Error::Shape(format!("state has {} dims, expected {base}", state.len())));
        }
        let mut s = self.stats.normalize_state(state);
        match (contact, self.spec.modality.contact_in_state()) {
            (Some(c), true) => s.push(if c { 1.0 } else { 0.0 }),
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Config(format!("{} policy does not take contact in the state", self.spec.modality)))
            }
            (None, true) => return Err(Error::Data(format!("{} policy needs the contact bit", self.spec.modality))),
        }
        let n = s.len();
        let x = g.constant(Tensor::new(&[1, n], s)?);
        self.state_enc.forward(g, x)
    }

    pub fn contact_features(&self, contact: bool, forces: &[f32]) -> Result<Vec<f64>> {
        match self.spec.contact_input {
            ContactInput::Binary => Ok(vec![if contact { 1.0 } else { 0.0 }]),
            ContactInput::Forces => {
                let n = self.spec.embodiment.n_forces;
                if forces.len() != n {
                    return Err(Error::Data(format!("expected {n} fingertip forces, got {}", forces.len())));
                }
                Ok(forces.iter().map(|&f| f as f64 / ContactInput::FORCE_SCALE).collect())
            }
        }
    }

    /// Full conditioning set `[vision; text; state; contact?]`, `[K × d]`.
    pub fn build_conditioning(&self, g: &mut Graph, obs: &Observation, instruction: &str) -> Result<Var> {
        let task_idx = self.instruction_index(instruction)?;
        let img = self.vision_input(&obs.rgb, obs.depth.as_deref())?;
        let vision = self.encode_vision(g, &img)?;
        let table = g.param(self.task);
        let text = g.slice_rows(table, task_idx, 1)?;
        let contact_bit = self.spec.modality.contact_in_state().then_some(obs.contact);
        let state = self.encode_state(g, &obs.state, contact_bit)?;
        let mut tokens = vec![vision, text, state];
        if let Some(enc) = &self.contact_enc {
            let c = self.contact_features(obs.contact, &obs.forces)?;
            let n = c.len();
            let x = g.constant(Tensor::new(&[1, n], c)?);
            tokens.push(enc.forward(g, x)?);
        }
        g.concat_rows(&tokens)
    }

    /// Predicts velocity or noise for the noisy action chunk `x: [H × a]` at step `t`.
    pub fn denoise(&self, g: &mut Graph, x: Var, t: usize, z: Var) -> Result<Var> {
        let n = &self.spec.net;
        let shape = g.shape(x).to_vec();
        if shape != [n.horizon, self.action_dim()] {
            return Err(Error::Shape(format!(
                "noisy actions {shape:?}, expected [{}, {}]",
                n.horizon,
                self.action_dim()
            )));
        }
        if g.shape(z).len() != 2 || g.shape(z)[1] != n.d_model {
            return Err(Error::Shape(format!("conditioning {:?} has wrong width", g.shape(z))));
        }
        let h = self.action_in.forward(g, x)?;
        let pos = g.param(self.action_pos);
        let h = g.add(h, pos)?;
        let temb = g.constant(sinusoidal_embedding(t, n.d_model));
        let temb = self.time_mlp.forward(g, temb)?;
        let temb = g.reshape(temb, &[n.d_model])?;
        let mut h = g.add(h, temb)?;
        for block in &self.blocks {
            h = block.forward(g, h, z, n.n_heads)?;
        }
        let h = self.ln_out.forward(g, h)?;
        self.action_out.forward(g, h)
    }

    /// Conditioning tokens as a plain tensor for repeated inference.
    pub fn conditioning(&self, obs: &Observation, instruction: &str) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.params);
        let z = self.build_conditioning(&mut g, obs, instruction)?;
        Ok(g.value(z).clone())
    }

    /// Binds precomputed conditioning for use with a sampler.
    pub fn with_conditioning(&self, z: Tensor) -> Conditioned<'_> {
        Conditioned { policy: self, z }
    }

    /// Replaces parameter values by name, e.g. after loading a checkpoint.
    pub fn load_values(&mut self, values: &[(String, Tensor)]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, policy has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (name, t) in values {
            let id = self
                .params
                .lookup(name)
                .ok_or_else(|| Error::Config(format!("unexpected parameter `{name}`")))?;
            if self.params.get(id).shape() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    self.params.get(id).shape()
                )));
            }
            self.params.set_values(id, t.data())?;
        }
        Ok(())
    }
}

/// A policy with fixed conditioning tokens.
#[derive(Debug, Clone)]
pub struct Conditioned<'a> {
    policy: &'a Policy,
    z: Tensor,
}

impl Denoiser<f64> for Conditioned<'_> {
    fn horizon(&self) -> usize {
        self.policy.horizon()
    }

    fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    fn predict(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.policy.params);
        let xv = g.constant(x.clone());
        let z = g.constant(self.z.clone());
        let out = self.policy.denoise(&mut g, xv, t, z)?;
        Ok(g.value(out).clone())
    }
}
