use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::plan::{ik, min_jerk, min_jerk_profile};
use crate::error::{Error, Result};
use crate::simenv::{Embodiment, Env, EnvConfig, Observation, MAX_APERTURE_RATE, MAX_JOINT_SPEED, TICK};

/// The single task instruction of the pick-and-place family.
pub const DEFAULT_INSTRUCTION: &str = "pick up the apple and place it in the bowl";
/// Consecutive rejected attempts after which generation gives up.
pub const MAX_ATTEMPTS: u32 = 10;
/// Peak-to-mean velocity ratio of the quintic profile.
const MIN_JERK_PEAK: f64 = 1.875;
/// Required gap between open fingertips and the object while approaching, m.
const CLEARANCE: f64 = 0.01;

/// One recorded control tick: the observation and the action taken from it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Observation,
    pub action: Vec<f32>,
}

/// One demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub embodiment: String,
    pub instruction: String,
    /// Environment seed the episode was recorded with.
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn contact_trace(&self) -> String {
        self.steps.iter().map(|s| if s.observation.contact { '1' } else { '0' }).collect()
    }
}

/// True for traces of the form `0* 1+ 0*`.
pub fn single_contact_phase(trace: &str) -> bool {
    let t = trace.trim_start_matches('0');
    let rest = t.trim_start_matches('1');
    rest.len() < t.len() && rest.chars().all(|c| c == '0')
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    pub env: EnvConfig,
    /// Chance of a deliberate short grasp that closes on air and retries.
    pub miss_probability: f64,
    pub pregrasp_distance: f64,
    /// Fraction of the joint speed limit the plan may use.
    pub speed_margin: f64,
    pub dwell_ticks: usize,
    pub instruction: String,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            miss_probability: 0.3,
            pregrasp_distance: 0.12,
            speed_margin: 0.9,
            dwell_ticks: 3,
            instruction: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

/// Drives the environment tick by tick and records what it sees and does.
struct Recorder<'a> {
    env: Env,
    cfg: &'a ExpertConfig,
    q: Vec<f64>,
    aperture: f64,
    obs: Observation,
    steps: Vec<StepRecord>,
    /// Exact commands sent to the environment.
    commands: Vec<Vec<f64>>,
    done: bool,
    success: bool,
}

impl<'a> Recorder<'a> {
    fn max_dq(&self) -> f64 {
        MAX_JOINT_SPEED * TICK * self.cfg.speed_margin
    }

    fn emit(&mut self, q: &[f64], aperture: f64) -> Result<()> {
        if self.done {
            return Ok(());
        }
        let mut action: Vec<f64> = q.to_vec();
        action.push(aperture);
        let r = self.env.step(&action)?;
        self.steps.push(StepRecord {
            observation: std::mem::replace(&mut self.obs, r.observation),
            action: action.iter().map(|&v| v as f32).collect(),
        });
        self.commands.push(action);
        self.q = q.to_vec();
        self.aperture = aperture;
        self.done = r.done;
        self.success = r.success;
        Ok(())
    }

    /// Minimum-jerk joint-space waypoints from `start` to `target`, excluding `start`.
    fn joint_plan(&self, start: &[f64], target: &[f64]) -> Vec<Vec<f64>> {
        let span = start.iter().zip(target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let n = ((span * MIN_JERK_PEAK / self.max_dq()).ceil() as usize).max(1) + 1;
        (1..n)
            .map(|i| {
                let s = min_jerk_profile(i as f64 / (n - 1) as f64);
                start.iter().zip(target).map(|(a, b)| a + s * (b - a)).collect()
            })
            .collect()
    }

    /// Smallest gap between an open fingertip and the object rim along `plan`.
    fn clearance(&self, plan: &[Vec<f64>]) -> f64 {
        let emb = self.env.embodiment();
        let object = self.env.scene().object;
        plan.iter()
            .flat_map(|q| emb.fingertips(emb.forward_kinematics(q), self.aperture))
            .map(|t| object.distance_to_center(t) - object.radius)
            .fold(f64::INFINITY, f64::min)
    }

    fn execute(&mut self, plan: Vec<Vec<f64>>) -> Result<()> {
        for q in plan {
            self.emit(&q, self.aperture)?;
        }
        Ok(())
    }

    /// Joint-space move that keeps the open fingers clear of the object,
    /// detouring through one of `vias` when the direct path would brush it.
    /// When no candidate is clear, returns false, or takes the direct path
    /// anyway unless `strict`.
    fn clear_joint_move(&mut self, target: &[f64], vias: &[[f64; 2]], strict: bool) -> Result<bool> {
        let emb = self.env.embodiment().clone();
        let direct = self.joint_plan(&self.q, target);
        if self.clearance(&direct) > CLEARANCE {
            self.execute(direct)?;
            return Ok(true);
        }
        for &via in vias {
            let Ok(qv) = ik(&emb, via) else { continue };
            let mut plan = self.joint_plan(&self.q, &qv);
            let tail = self.joint_plan(&qv, target);
            plan.extend(tail);
            if self.clearance(&plan) > CLEARANCE {
                self.execute(plan)?;
                return Ok(true);
            }
        }
        if !strict {
            self.execute(direct)?;
        }
        Ok(!strict)
    }

    /// Minimum-jerk straight line of the end effector, tracked through IK.
    fn cartesian_move(&mut self, target: [f64; 2]) -> Result<()> {
        let emb = self.env.embodiment().clone();
        let p = emb.forward_kinematics(&self.q);
        let start = [p[0], p[1]];
        let mut n = 2;
        for _ in 0..32 {
            let path = min_jerk(start, target, n)?;
            let qs = path[1..].iter().map(|&pt| ik(&emb, pt)).collect::<Result<Vec<_>>>()?;
            let mut prev = self.q.clone();
            let mut worst: f64 = 0.0;
            for q in &qs {
                worst = worst.max(prev.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
                prev = q.clone();
            }
            if worst <= self.max_dq() {
                return self.execute(qs);
            }
            n = ((n as f64 * worst / self.max_dq() * 1.05).ceil() as usize).max(n + 1);
        }
        Err(Error::Contract("cartesian segment did not satisfy the speed limit".into()))
    }

    /// Commands a new aperture and waits until it is reached plus `dwell` ticks.
    fn gripper(&mut self, target: f64, dwell: usize) -> Result<()> {
        let ticks = ((target - self.aperture).abs() / (MAX_APERTURE_RATE * TICK)).ceil() as usize + dwell;
        let q = self.q.clone();
        for _ in 0..ticks {
            self.emit(&q, target)?;
        }
        Ok(())
    }
}

/// One scripted rollout and the exact commands it sent. In strict mode,
/// `None` when no collision-free approach exists.
fn attempt(embodiment: &str, env_seed: u64, cfg: &ExpertConfig, strict: bool) -> Result<Option<(Episode, Vec<Vec<f64>>)>> {
    let (env, obs) = Env::reset_new(embodiment, env_seed, cfg.env.clone())?;
    let emb: Embodiment = env.embodiment().clone();
    let object = env.scene().object;
    let bowl = env.scene().bowl;
    let mut script_rng = ChaCha8Rng::seed_from_u64(env_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut rec = Recorder {
        q: env.joints().to_vec(),
        aperture: env.aperture(),
        env,
        cfg,
        obs,
        steps: Vec::new(),
        commands: Vec::new(),
        done: false,
        success: false,
    };

    let c = object.center;
    let grasp_q = ik(&emb, c)?;
    let theta: f64 = grasp_q.iter().sum();
    let u = [theta.cos(), theta.sin()];
    let along = |d: f64| [c[0] - d * u[0], c[1] - d * u[1]];

    let pregrasp = along(cfg.pregrasp_distance);
    let n = [-u[1], u[0]];
    let side = |d: f64, l: f64| [c[0] - d * u[0] + l * n[0], c[1] - d * u[1] + l * n[1]];
    let vias = [
        along(2.0 * cfg.pregrasp_distance),
        side(cfg.pregrasp_distance, 0.12),
        side(cfg.pregrasp_distance, -0.12),
        side(2.0 * cfg.pregrasp_distance, 0.12),
        side(2.0 * cfg.pregrasp_distance, -0.12),
    ];
    if !rec.clear_joint_move(&ik(&emb, pregrasp)?, &vias, strict)? {
        return Ok(None);
    }
    if script_rng.random_bool(cfg.miss_probability) {
        let short = object.radius + script_rng.random_range(0.025..0.04);
        rec.cartesian_move(along(short))?;
        rec.gripper(0.0, 1)?;
        rec.gripper(1.0, 1)?;
    }
    rec.cartesian_move(c)?;
    rec.gripper(0.0, cfg.dwell_ticks)?;
    let offset = rec.env.scene().grasp_offset.unwrap_or([0.0, 0.0]);
    rec.cartesian_move([bowl.center[0] - offset[0], bowl.center[1] - offset[1]])?;
    rec.gripper(1.0, cfg.dwell_ticks)?;

    let episode = Episode {
        embodiment: emb.name.to_string(),
        instruction: cfg.instruction.clone(),
        seed: env_seed,
        steps: rec.steps,
        success: rec.success,
    };
    Ok(Some((episode, rec.commands)))
}

/// Environment seed of the `attempt`-th try for `seed`.
pub fn sub_seed(seed: u64, attempt: u32) -> u64 {
    seed.wrapping_mul(16).wrapping_add(attempt as u64)
}

/// Runs the scripted expert, retrying with the next sub-seed until an episode
/// succeeds with a single contiguous contact phase.
pub fn generate_episode(embodiment: &str, seed: u64, cfg: &ExpertConfig) -> Result<Episode> {
    Embodiment::lookup(embodiment)?;
    for k in 0..MAX_ATTEMPTS {
        match attempt(embodiment, sub_seed(seed, k), cfg, true) {
            Ok(Some((ep, _))) if ep.success && single_contact_phase(&ep.contact_trace()) => return Ok(ep),
            Ok(_) | Err(Error::Unreachable { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation { seed, attempts: MAX_ATTEMPTS })
}

/// Commands the expert sends in an environment reset with `env_seed`, without
/// rejection: replaying them from that reset reproduces its rollout exactly.
pub fn expert_commands(embodiment: &str, env_seed: u64, cfg: &ExpertConfig) -> Result<Vec<Vec<f64>>> {
    let (_, commands) = attempt(embodiment, env_seed, cfg, false)?.expect("non-strict attempts always finish");
    Ok(commands)
}
