//! Analytic two-bone IK and foot-contact locking.

use glam::{Quat, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::Skeleton;

/// New middle and end positions of a root-mid-end chain with bone lengths
/// `l1`, `l2`, reaching for `target`. The bend stays in the plane spanned by
/// the original chain. Out-of-reach targets fully extend the chain along the
/// root-target ray.
pub fn two_bone_ik(root: Vec3, mid: Vec3, end: Vec3, target: Vec3, l1: f32, l2: f32) -> (Vec3, Vec3) {
    let to_t = target - root;
    let dist = to_t.length();
    if dist < 1e-6 || l1 <= 0.0 || l2 <= 0.0 {
        return (mid, end);
    }
    let axis = to_t / dist;
    let reach = l1 + l2;
    if dist >= reach {
        return (root + axis * l1, root + axis * reach);
    }
    // too close: fold as far as the lengths allow
    let d = dist.max((l1 - l2).abs() + 1e-6);
    // bend direction: original knee offset orthogonal to the target axis
    let mut bend = (mid - root) - axis * (mid - root).dot(axis);
    if bend.length_squared() < 1e-12 {
        bend = (mid - end) - axis * (mid - end).dot(axis);
    }
    let bend = bend.try_normalize().unwrap_or_else(|| axis.any_orthonormal_vector());
    let along = (l1 * l1 - l2 * l2 + d * d) / (2.0 * d);
    let up = (l1 * l1 - along * along).max(0.0).sqrt();
    let new_mid = root + axis * along + bend * up;
    let new_end = root + axis * d;
    (new_mid, new_end)
}

/// Rotation taking direction `a` onto `b`.
fn swing(a: Vec3, b: Vec3) -> Quat {
    match (a.try_normalize(), b.try_normalize()) {
        (Some(a), Some(b)) => Quat::from_rotation_arc(a, b),
        _ => Quat::IDENTITY,
    }
}

/// Joints of one root-mid-end chain plus everything below the end joint.
#[derive(Debug, Clone)]
pub struct Limb {
    pub root: usize,
    pub mid: usize,
    pub end: usize,
    /// Descendants of `end`, moved rigidly with it.
    pub below: Vec<usize>,
    pub rest_lengths: (f32, f32),
}

impl Limb {
    /// Chain ending at `end`, walking up two parents.
    pub fn from_end(skeleton: &Skeleton, end: usize) -> Result<Limb> {
        let mid = skeleton
            .parent(end)
            .ok_or_else(|| Error::invalid("limb end has no parent"))?;
        let root = skeleton
            .parent(mid)
            .ok_or_else(|| Error::invalid("limb middle has no parent"))?;
        let j = skeleton.joints();
        let mut below = Vec::new();
        for k in 0..skeleton.len() {
            let mut p = skeleton.parent(k);
            while let Some(q) = p {
                if q == end {
                    below.push(k);
                    break;
                }
                p = skeleton.parent(q);
            }
        }
        Ok(Limb {
            root,
            mid,
            end,
            below,
            rest_lengths: (j[mid].offset.length(), j[end].offset.length()),
        })
    }

    /// Moves the chain so `end` reaches `target`, updating positions and the
    /// world rotations of the two bones.
    pub fn solve(&self, positions: &mut [Vec3], rotations: &mut [Quat], target: Vec3) {
        let (r, m, e) = (positions[self.root], positions[self.mid], positions[self.end]);
        let (l1, l2) = self.rest_lengths;
        let (m2, e2) = two_bone_ik(r, m, e, target, l1, l2);
        if !(m2.is_finite() && e2.is_finite()) {
            return;
        }
        let upper = swing(m - r, m2 - r);
        let lower = swing(e - m, e2 - m2);
        rotations[self.root] = (upper * rotations[self.root]).normalize();
        rotations[self.mid] = (lower * rotations[self.mid]).normalize();
        let shift = e2 - e;
        for &k in &self.below {
            positions[k] += shift;
        }
        positions[self.mid] = m2;
        positions[self.end] = e2;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FootIkConfig {
    pub contact_threshold: f32,
    /// Seconds to fade from the anchor back to the predicted foot.
    pub release_time: f32,
    pub ground_height: f32,
}

impl Default for FootIkConfig {
    fn default() -> Self {
        FootIkConfig {
            contact_threshold: 0.5,
            release_time: 0.1,
            ground_height: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootAnchor {
    pub locked: bool,
    pub point: Vec3,
    /// Frames left in the release fade.
    pub release_left: u32,
}

/// Per-foot contact locking state.
#[derive(Debug, Clone)]
pub struct FootIk {
    pub limbs: [Limb; 2],
    pub anchors: [FootAnchor; 2],
    pub cfg: FootIkConfig,
    pub fps: f32,
}

impl FootIk {
    pub fn new(skeleton: &Skeleton, cfg: FootIkConfig, fps: f32) -> Result<FootIk> {
        let [l, r] = skeleton.feet();
        Ok(FootIk {
            limbs: [Limb::from_end(skeleton, l)?, Limb::from_end(skeleton, r)?],
            anchors: [FootAnchor::default(); 2],
            cfg,
            fps,
        })
    }

    fn release_frames(&self) -> u32 {
        (self.cfg.release_time * self.fps).round().max(1.0) as u32
    }

    /// Pins feet in contact to their anchors. A pose with both contacts
    /// below threshold and no release in progress is left untouched.
    pub fn apply(&mut self, positions: &mut [Vec3], rotations: &mut [Quat], contacts: [f32; 2]) {
        let fade = self.release_frames();
        for s in 0..2 {
            let limb = &self.limbs[s];
            let foot = positions[limb.end];
            let a = &mut self.anchors[s];
            let on = contacts[s].is_finite() && contacts[s] >= self.cfg.contact_threshold;
            let target = if on {
                if !a.locked {
                    a.locked = true;
                    a.point = foot;
                    a.point.y = a.point.y.max(self.cfg.ground_height);
                }
                a.release_left = 0;
                Some(a.point)
            } else {
                if a.locked {
                    a.locked = false;
                    a.release_left = fade;
                }
                if a.release_left > 0 {
                    let w = a.release_left as f32 / (fade + 1) as f32;
                    a.release_left -= 1;
                    Some(foot.lerp(a.point, w))
                } else {
                    None
                }
            };
            let target = match target {
                Some(t) => t,
                None if foot.y < self.cfg.ground_height => Vec3::new(foot.x, self.cfg.ground_height, foot.z),
                None => continue,
            };
            limb.solve(positions, rotations, target);
        }
    }
}
