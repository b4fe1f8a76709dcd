use glam::Vec3;
use serde::{Deserialize, Serialize};

use crate::motion::{finite_difference, MotionClip};

pub const DEFAULT_D_MAX: f32 = 0.01;
pub const DEFAULT_V_MAX: f32 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactTrack {
    pub values: Vec<bool>,
    pub d_max: f32,
    pub v_max: f32,
}

impl ContactTrack {
    pub fn as_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }
}

/// A frame is in contact when the bone is within `d_max` of the ground and
/// slower than `v_max`.
pub fn detect_contacts(positions: &[Vec3], velocities: &[Vec3], d_max: f32, v_max: f32) -> ContactTrack {
    let values = positions
        .iter()
        .zip(velocities)
        .map(|(p, v)| p.y - d_max <= 0.0 && v.length() < v_max)
        .collect();
    ContactTrack { values, d_max, v_max }
}

/// Contacts of one joint from its world trajectory.
pub fn joint_contacts(clip: &MotionClip, joint: usize, d_max: f32, v_max: f32) -> ContactTrack {
    let pos = clip.joint_track(joint);
    let vel = finite_difference(&pos, clip.fps);
    detect_contacts(&pos, &vel, d_max, v_max)
}
