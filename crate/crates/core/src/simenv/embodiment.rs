use crate::error::{Error, Result};

/// Planar serial arm with a two-finger gripper.
#[derive(Debug, Clone, PartialEq)]
pub struct Embodiment {
    pub name: &'static str,
    pub link_lengths: Vec<f64>,
    /// Symmetric joint limit in radians.
    pub joint_limit: f64,
    /// Fingertip separation at aperture 1.
    pub finger_span: f64,
}

pub const EMBODIMENTS: [&str; 2] = ["simGR1", "simG1"];

impl Embodiment {
    pub fn lookup(name: &str) -> Result<Self> {
        match name {
            "simGR1" => Ok(Self {
                name: "simGR1",
                link_lengths: vec![0.45, 0.40],
                joint_limit: 3.1,
                finger_span: 0.16,
            }),
            "simG1" => Ok(Self {
                name: "simG1",
                link_lengths: vec![0.35, 0.30, 0.25],
                joint_limit: 3.1,
                finger_span: 0.16,
            }),
            other => Err(Error::UnknownEmbodiment(other.to_string())),
        }
    }

    pub fn n_joints(&self) -> usize {
        self.link_lengths.len()
    }

    /// Joint angles, joint velocities, end-effector (x, y), aperture.
    pub fn state_dim(&self) -> usize {
        2 * self.n_joints() + 3
    }

    /// Joint targets plus aperture target.
    pub fn action_dim(&self) -> usize {
        self.n_joints() + 1
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    /// Positions of every joint and the end effector, base first.
    pub fn joint_positions(&self, q: &[f64]) -> Vec<[f64; 2]> {
        let mut pts = vec![[0.0, 0.0]];
        let (mut x, mut y, mut th) = (0.0, 0.0, 0.0);
        for (l, &qi) in self.link_lengths.iter().zip(q) {
            th += qi;
            x += l * th.cos();
            y += l * th.sin();
            pts.push([x, y]);
        }
        pts
    }

    /// End-effector pose `(x, y, θ)`.
    pub fn forward_kinematics(&self, q: &[f64]) -> [f64; 3] {
        let p = *self.joint_positions(q).last().unwrap();
        [p[0], p[1], q.iter().sum()]
    }

    /// Fingertip positions for a given pose and aperture.
    pub fn fingertips(&self, pose: [f64; 3], aperture: f64) -> [[f64; 2]; 2] {
        let half = 0.5 * aperture * self.finger_span;
        let (nx, ny) = (-pose[2].sin(), pose[2].cos());
        [
            [pose[0] + half * nx, pose[1] + half * ny],
            [pose[0] - half * nx, pose[1] - half * ny],
        ]
    }
}
