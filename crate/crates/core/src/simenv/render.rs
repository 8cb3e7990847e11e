//! Orthographic top-down rasterizer producing RGB and metric depth.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::embodiment::Embodiment;
use super::scene::{Bounds, Scene};

pub const IMAGE_SIZE: usize = 64;
pub const TABLE_DEPTH: f64 = 1.0;
pub const OBJECT_HEIGHT: f64 = 0.05;
pub const BOWL_HEIGHT: f64 = 0.02;
pub const ARM_HEIGHT: f64 = 0.3;
pub const FINGER_HEIGHT: f64 = 0.25;
const NOISE_TRUNCATION: f64 = 4.0;
const LINK_HALF_WIDTH: f64 = 0.015;
const FINGER_RADIUS: f64 = 0.012;

const TABLE_RGB: [u8; 3] = [200, 196, 186];
const BOWL_RGB: [u8; 3] = [60, 90, 200];
const OBJECT_RGB: [u8; 3] = [220, 40, 40];
const ARM_RGB: [u8; 3] = [70, 70, 70];
const FINGER_RGB: [u8; 3] = [240, 200, 40];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    /// Standard deviation of additive depth noise, meters.
    pub depth_noise: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { depth_noise: 0.01 }
    }
}

/// World coordinates of a pixel center. Column follows +x, row follows −y.
pub fn pixel_to_world(table: &Bounds, row: usize, col: usize) -> [f64; 2] {
    let sx = (table.max[0] - table.min[0]) / IMAGE_SIZE as f64;
    let sy = (table.max[1] - table.min[1]) / IMAGE_SIZE as f64;
    [
        table.min[0] + (col as f64 + 0.5) * sx,
        table.max[1] - (row as f64 + 0.5) * sy,
    ]
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Rasterizes the scene. `arm` is `None` for an empty table view.
pub fn render(
    scene: &Scene,
    arm: Option<(&Embodiment, &[f64], f64)>,
    cfg: &RenderConfig,
    rng: &mut impl Rng,
) -> (Vec<u8>, Vec<f32>) {
    let n = IMAGE_SIZE * IMAGE_SIZE;
    let mut rgb = vec![0u8; n * 3];
    let mut depth = vec![0f32; n];

    let geometry = arm.map(|(emb, q, aperture)| {
        let joints = emb.joint_positions(q);
        let pose = emb.forward_kinematics(q);
        (joints, emb.fingertips(pose, aperture))
    });

    for row in 0..IMAGE_SIZE {
        for col in 0..IMAGE_SIZE {
            let p = pixel_to_world(&scene.table, row, col);
            let (mut color, mut height) = (TABLE_RGB, 0.0);
            if scene.bowl.contains(p) {
                (color, height) = (BOWL_RGB, BOWL_HEIGHT);
            }
            if scene.object.contains(p) {
                (color, height) = (OBJECT_RGB, OBJECT_HEIGHT);
            }
            if let Some((joints, tips)) = &geometry {
                if joints.windows(2).any(|w| segment_distance(p, w[0], w[1]) <= LINK_HALF_WIDTH) {
                    (color, height) = (ARM_RGB, ARM_HEIGHT);
                }
                if tips
                    .iter()
                    .any(|t| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt() <= FINGER_RADIUS)
                {
                    (color, height) = (FINGER_RGB, FINGER_HEIGHT);
                }
            }
            let i = row * IMAGE_SIZE + col;
            rgb[i * 3..i * 3 + 3].copy_from_slice(&color);
            depth[i] = (TABLE_DEPTH - height) as f32;
        }
    }

    if cfg.depth_noise > 0.0 {
        // Tails are cut at ±4σ so depth stays inside a known band.
        let bound = NOISE_TRUNCATION * cfg.depth_noise;
        let noise = Normal::new(0.0, cfg.depth_noise).expect("finite depth noise");
        for d in depth.iter_mut() {
            let e = noise.sample(rng).clamp(-bound, bound);
            *d = (*d as f64 + e).max(0.0) as f32;
        }
    }
    (rgb, depth)
}
