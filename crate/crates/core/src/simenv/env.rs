use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::embodiment::Embodiment;
use super::render::{render, RenderConfig};
use super::scene::{detect_contact_and_force, Bounds, Disc, Scene};
use crate::error::{Error, Result};

/// Control period, seconds.
pub const TICK: f64 = 0.05;
/// Joint speed limit, rad/s.
pub const MAX_JOINT_SPEED: f64 = 1.5;
/// Gripper aperture rate limit, 1/s.
pub const MAX_APERTURE_RATE: f64 = 4.0;
pub const EPISODE_CAP: usize = 200;
/// Aperture below which a touching gripper holds the object.
pub const GRASP_APERTURE: f64 = 0.5;

/// One multi-modal observation; field types match the dataset record.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `64 × 64 × 3`, row-major.
    pub rgb: Vec<u8>,
    /// `64 × 64` meters, absent when a dataset was stored without depth.
    pub depth: Option<Vec<f32>>,
    pub state: Vec<f32>,
    pub contact: bool,
    pub forces: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub penetration: f64,
    pub ee: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub success: bool,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub render: RenderConfig,
    pub table: Bounds,
    /// Object centers are drawn uniformly from this box.
    pub spawn: Bounds,
    pub object_radius: f64,
    pub bowl: Disc,
    /// Uniform perturbation of each rest-pose joint, radians.
    pub rest_noise: f64,
    pub episode_cap: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            table: Bounds { min: [0.1, -0.4], max: [0.9, 0.4] },
            spawn: Bounds { min: [0.52, -0.24], max: [0.68, -0.08] },
            object_radius: 0.045,
            bowl: Disc { center: [0.45, 0.22], radius: 0.10 },
            rest_noise: 0.15,
            episode_cap: EPISODE_CAP,
        }
    }
}

/// Nominal folded pose with the gripper near (0.25, 0).
pub fn nominal_rest(embodiment: &Embodiment) -> Vec<f64> {
    match embodiment.n_joints() {
        2 => vec![-1.0853, 2.5559],
        _ => vec![-0.3, 1.5857, 2.6858],
    }
}

/// Planar pick-and-place world for one embodiment.
#[derive(Debug, Clone)]
pub struct Env {
    embodiment: Embodiment,
    cfg: EnvConfig,
    scene: Scene,
    q: Vec<f64>,
    qd: Vec<f64>,
    aperture: f64,
    rng: ChaCha8Rng,
    steps: usize,
    last_contact: (bool, Vec<f64>, f64),
}

impl Env {
    pub fn new(embodiment: &str, cfg: EnvConfig) -> Result<Self> {
        let embodiment = Embodiment::lookup(embodiment)?;
        let n = embodiment.n_joints();
        let scene = Scene {
            object: Disc { center: cfg.spawn.min, radius: cfg.object_radius },
            bowl: cfg.bowl,
            table: cfg.table,
            grasp_offset: None,
        };
        Ok(Self {
            q: nominal_rest(&embodiment),
            qd: vec![0.0; n],
            aperture: 1.0,
            embodiment,
            cfg,
            scene,
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            last_contact: (false, vec![0.0; 2], 0.0),
        })
    }

    /// Convenience: construct and reset in one call.
    pub fn reset_new(embodiment: &str, seed: u64, cfg: EnvConfig) -> Result<(Self, Observation)> {
        let mut env = Self::new(embodiment, cfg)?;
        let obs = env.reset(seed);
        Ok((env, obs))
    }

    /// Randomizes object placement and rest pose from `seed`.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let s = self.cfg.spawn;
        let center = [
            self.rng.random_range(s.min[0]..=s.max[0]),
            self.rng.random_range(s.min[1]..=s.max[1]),
        ];
        self.scene = Scene {
            object: Disc { center, radius: self.cfg.object_radius },
            bowl: self.cfg.bowl,
            table: self.cfg.table,
            grasp_offset: None,
        };
        let noise = self.cfg.rest_noise;
        self.q = nominal_rest(&self.embodiment)
            .into_iter()
            .map(|q| q + if noise > 0.0 { self.rng.random_range(-noise..=noise) } else { 0.0 })
            .map(|q| q.clamp(-self.embodiment.joint_limit, self.embodiment.joint_limit))
            .collect();
        self.qd = vec![0.0; self.q.len()];
        self.aperture = 1.0;
        self.steps = 0;
        self.update_contact();
        self.observe()
    }

    pub fn embodiment(&self) -> &Embodiment {
        &self.embodiment
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Direct scene access for scripted setups.
    pub fn scene_mut(&mut self) -> &mut Scene {
        &mut self.scene
    }

    pub fn joints(&self) -> &[f64] {
        &self.q
    }

    pub fn aperture(&self) -> f64 {
        self.aperture
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn ee_pose(&self) -> [f64; 3] {
        self.embodiment.forward_kinematics(&self.q)
    }

    /// Current targets as an action: holding them is a fixed point.
    pub fn hold_action(&self) -> Vec<f64> {
        let mut a = self.q.clone();
        a.push(self.aperture);
        a
    }

    pub fn contact(&self) -> (bool, &[f64]) {
        (self.last_contact.0, &self.last_contact.1)
    }

    fn update_contact(&mut self) {
        let pose = self.ee_pose();
        let tips = self.embodiment.fingertips(pose, self.aperture);
        self.last_contact = detect_contact_and_force(&tips, &self.scene.object);
    }

    fn state_vector(&self) -> Vec<f32> {
        let pose = self.ee_pose();
        let mut s: Vec<f32> = self.q.iter().chain(&self.qd).map(|&v| v as f32).collect();
        s.extend([pose[0] as f32, pose[1] as f32, self.aperture as f32]);
        s
    }

    pub fn observe(&mut self) -> Observation {
        let (rgb, depth) = render(
            &self.scene,
            Some((&self.embodiment, &self.q, self.aperture)),
            &self.cfg.render,
            &mut self.rng,
        );
        Observation {
            rgb,
            depth: Some(depth),
            state: self.state_vector(),
            contact: self.last_contact.0,
            forces: self.last_contact.1.iter().map(|&f| f as f32).collect(),
        }
    }

    /// Advances one tick toward the commanded joint and aperture targets.
    pub fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        let n = self.embodiment.n_joints();
        if action.len() != n + 1 {
            return Err(Error::Shape(format!(
                "{} expects {}-dim actions, got {}",
                self.embodiment.name,
                n + 1,
                action.len()
            )));
        }
        let lim = self.embodiment.joint_limit;
        let dq_max = MAX_JOINT_SPEED * TICK;
        for i in 0..n {
            let target = if action[i].is_finite() { action[i].clamp(-lim, lim) } else { self.q[i] };
            let dq = (target - self.q[i]).clamp(-dq_max, dq_max);
            let next = (self.q[i] + dq).clamp(-lim, lim);
            self.qd[i] = (next - self.q[i]) / TICK;
            self.q[i] = next;
        }
        let ap_target = if action[n].is_finite() { action[n].clamp(0.0, 1.0) } else { self.aperture };
        let da_max = MAX_APERTURE_RATE * TICK;
        self.aperture = (self.aperture + (ap_target - self.aperture).clamp(-da_max, da_max)).clamp(0.0, 1.0);

        let pose = self.ee_pose();
        let ee = [pose[0], pose[1]];
        if let Some(off) = self.scene.grasp_offset {
            self.scene.object.center = [ee[0] + off[0], ee[1] + off[1]];
            if self.aperture >= GRASP_APERTURE {
                self.scene.grasp_offset = None;
            }
        } else if self.aperture < GRASP_APERTURE {
            let tips = self.embodiment.fingertips(pose, self.aperture);
            if tips.iter().any(|&t| self.scene.object.distance_to_center(t) < self.scene.object.radius) {
                let c = self.scene.object.center;
                self.scene.grasp_offset = Some([c[0] - ee[0], c[1] - ee[1]]);
            }
        }
        self.update_contact();
        self.steps += 1;

        let success = self.scene.is_success();
        let done = success || self.steps >= self.cfg.episode_cap;
        let observation = self.observe();
        Ok(StepResult {
            observation,
            success,
            done,
            info: StepInfo { penetration: self.last_contact.2, ee },
        })
    }
}
