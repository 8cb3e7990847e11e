//! Deterministic planar pick-and-place world.
//!
//! Two serial arms (`simGR1`: 2 links, `simG1`: 3 links) move a disc into a
//! bowl. Grasping is kinematic: a closing gripper whose fingertip is inside
//! the disc carries it until the gripper reopens.

mod embodiment;
mod env;
mod render;
mod scene;

pub use embodiment::{Embodiment, EMBODIMENTS};
pub use env::{
    nominal_rest, Env, EnvConfig, Observation, StepInfo, StepResult, EPISODE_CAP, GRASP_APERTURE,
    MAX_APERTURE_RATE, MAX_JOINT_SPEED, TICK,
};
pub use render::{
    pixel_to_world, render, RenderConfig, ARM_HEIGHT, BOWL_HEIGHT, IMAGE_SIZE, OBJECT_HEIGHT, TABLE_DEPTH,
};
pub use scene::{detect_contact_and_force, Bounds, Disc, Scene, CONTACT_STIFFNESS, CONTACT_THRESHOLD};
