use std::fmt;
use std::str::FromStr;

use glam::{DQuat, DVec3, Quat, Vec3};
use serde::{Deserialize, Serialize};

use super::Skeleton;
use crate::error::{Error, Result};

pub const DEFAULT_FPS: f32 = 60.0;
/// Largest joint displacement between consecutive frames, metres.
pub const TELEPORT_LIMIT: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gait {
    BR,
    BW,
    FR,
    FW,
    SR,
    SW,
    Idle,
    Transition,
}

impl Gait {
    pub const ALL: [Gait; 8] = [
        Gait::BR,
        Gait::BW,
        Gait::FR,
        Gait::FW,
        Gait::SR,
        Gait::SW,
        Gait::Idle,
        Gait::Transition,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Gait> {
        Gait::ALL.get(c as usize).copied()
    }
}

impl fmt::Display for Gait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Gait::BR => "BR",
            Gait::BW => "BW",
            Gait::FR => "FR",
            Gait::FW => "FW",
            Gait::SR => "SR",
            Gait::SW => "SW",
            Gait::Idle => "Idle",
            Gait::Transition => "Transition",
        };
        f.write_str(s)
    }
}

impl FromStr for Gait {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Gait::ALL
            .into_iter()
            .find(|g| g.to_string().eq_ignore_ascii_case(s) || (s.eq_ignore_ascii_case("id") && *g == Gait::Idle) || (s.eq_ignore_ascii_case("tr") && *g == Gait::Transition))
            .ok_or_else(|| Error::invalid(format!("unknown gait label {s:?}")))
    }
}

/// World-space joint transforms of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
}

impl Frame {
    pub fn root_position(&self) -> Vec3 {
        self.positions[0]
    }

    pub fn root_rotation(&self) -> Quat {
        self.rotations[0]
    }
}

/// Extra per-frame float channels carried alongside a clip (phase tracks,
/// contact labels).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxChannel {
    pub name: String,
    pub width: usize,
    /// `frames * width` values, frame-major.
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub skeleton: Skeleton,
    pub fps: f32,
    pub frames: Vec<Frame>,
    pub style: String,
    pub gait: Gait,
    pub aux: Vec<AuxChannel>,
}

impl MotionClip {
    pub fn new(skeleton: Skeleton, fps: f32, frames: Vec<Frame>) -> Self {
        MotionClip {
            skeleton,
            fps,
            frames,
            style: String::new(),
            gait: Gait::FW,
            aux: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.len()
    }

    /// World trajectory of one joint.
    pub fn joint_track(&self, joint: usize) -> Vec<Vec3> {
        self.frames.iter().map(|f| f.positions[joint]).collect()
    }

    /// Forward-difference world velocity of one joint (backward at the end).
    pub fn joint_velocities(&self, joint: usize) -> Vec<Vec3> {
        let track = self.joint_track(joint);
        finite_difference(&track, self.fps)
    }

    pub fn aux(&self, name: &str) -> Option<&AuxChannel> {
        self.aux.iter().find(|a| a.name == name)
    }

    pub fn set_aux(&mut self, channel: AuxChannel) -> Result<()> {
        if channel.values.len() != channel.width * self.len() {
            return Err(Error::shape(format!(
                "aux channel {} has {} values for {} frames of width {}",
                channel.name,
                channel.values.len(),
                self.len(),
                channel.width
            )));
        }
        self.aux.retain(|a| a.name != channel.name);
        self.aux.push(channel);
        Ok(())
    }

    /// Frames `range` as a new clip (aux channels sliced accordingly).
    pub fn slice(&self, start: usize, end: usize) -> Result<MotionClip> {
        if start >= end || end > self.len() {
            return Err(Error::OutOfBounds(format!(
                "frame range {start}..{end} of {}",
                self.len()
            )));
        }
        let aux = self
            .aux
            .iter()
            .map(|a| AuxChannel {
                name: a.name.clone(),
                width: a.width,
                values: a.values[start * a.width..end * a.width].to_vec(),
            })
            .collect();
        Ok(MotionClip {
            skeleton: self.skeleton.clone(),
            fps: self.fps,
            frames: self.frames[start..end].to_vec(),
            style: self.style.clone(),
            gait: self.gait,
            aux,
        })
    }

    /// Checks unit quaternions and the teleport guard.
    pub fn validate(&self) -> Result<()> {
        let n = self.skeleton.len();
        for (i, f) in self.frames.iter().enumerate() {
            if f.positions.len() != n || f.rotations.len() != n {
                return Err(Error::shape(format!(
                    "frame {i} has {} positions / {} rotations for {n} joints",
                    f.positions.len(),
                    f.rotations.len()
                )));
            }
            if let Some(j) = f
                .rotations
                .iter()
                .position(|q| (q.length() - 1.0).abs() > 1e-5)
            {
                return Err(Error::invalid(format!(
                    "frame {i} joint {j}: rotation is not unit length"
                )));
            }
        }
        for (i, w) in self.frames.windows(2).enumerate() {
            if let Some(j) =
                (0..n).find(|&j| w[0].positions[j].distance(w[1].positions[j]) >= TELEPORT_LIMIT)
            {
                return Err(Error::invalid(format!(
                    "joint {j} moves more than {TELEPORT_LIMIT} m between frames {i} and {}",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

pub fn finite_difference(track: &[Vec3], fps: f32) -> Vec<Vec3> {
    let n = track.len();
    (0..n)
        .map(|i| {
            if n < 2 {
                Vec3::ZERO
            } else if i + 1 < n {
                (track[i + 1] - track[i]) * fps
            } else {
                (track[i] - track[i - 1]) * fps
            }
        })
        .collect()
}

/// Forward kinematics in double precision. `local` are joint rotations
/// relative to their parents; `root_position` is the root's world position.
pub fn forward_kinematics(skeleton: &Skeleton, local: &[DQuat], root_position: DVec3) -> Frame {
    let n = skeleton.len();
    let mut pos = vec![DVec3::ZERO; n];
    let mut rot = vec![DQuat::IDENTITY; n];
    for (j, joint) in skeleton.joints().iter().enumerate() {
        match joint.parent {
            None => {
                pos[j] = root_position;
                rot[j] = local[j];
            }
            Some(p) => {
                rot[j] = (rot[p] * local[j]).normalize();
                pos[j] = pos[p] + rot[p] * joint.offset.as_dvec3();
            }
        }
    }
    Frame {
        positions: pos.iter().map(|p| p.as_vec3()).collect(),
        rotations: rot.iter().map(|q| q.as_quat().normalize()).collect(),
    }
}

/// Forward kinematics from world-space joint rotations: each joint is placed
/// at its parent's position plus the parent's world rotation applied to the
/// rest offset.
pub fn place_joints(skeleton: &Skeleton, world: &[DQuat], root_position: DVec3) -> Frame {
    let n = skeleton.len();
    let mut pos = vec![DVec3::ZERO; n];
    for (j, joint) in skeleton.joints().iter().enumerate() {
        pos[j] = match joint.parent {
            None => root_position,
            Some(p) => pos[p] + world[p] * joint.offset.as_dvec3(),
        };
    }
    Frame {
        positions: pos.iter().map(|p| p.as_vec3()).collect(),
        rotations: world.iter().map(|q| q.normalize().as_quat()).collect(),
    }
}
