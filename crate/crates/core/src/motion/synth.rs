//! Procedural walking clips with exactly known contacts and phases.

use std::f64::consts::{PI, TAU};

use glam::{DMat3, DQuat, DVec3};
use serde::{Deserialize, Serialize};

use super::{place_joints, Gait, MotionClip, Skeleton};
use crate::error::{Error, Result};

const HIP_LATERAL: f64 = 0.09;
const HIP_DROP: f64 = 0.06;
const THIGH: f64 = 0.42;
const SHIN: f64 = 0.42;
/// Fraction of full leg length the hip-ankle distance may reach.
const REACH: f64 = 0.97;
const ROOT_HEIGHT: f64 = 0.9;

/// Parameters of one procedural style.
///
/// Feet step at `foot_frequency` with the given duty cycle; `foot_offsets`
/// are cycle offsets in [0, 1). Hands swing as `hand_amplitude * sin(2 pi f t
/// + hand_offset)` radians about the shoulder's side axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleRecipe {
    pub name: String,
    pub speed: f64,
    /// Yaw rate in rad/s, positive turns left.
    pub turn_rate: f64,
    /// Forward torso lean, radians.
    pub lean: f64,
    pub foot_frequency: f64,
    pub duty: f64,
    pub foot_offsets: [f64; 2],
    pub step_height: f64,
    pub hand_frequency: [f64; 2],
    pub hand_amplitude: [f64; 2],
    pub hand_offset: [f64; 2],
    /// Initial yaw, radians.
    pub heading: f64,
}

impl Default for StyleRecipe {
    fn default() -> Self {
        StyleRecipe {
            name: "neutral".into(),
            speed: 1.2,
            turn_rate: 0.0,
            lean: 0.0,
            foot_frequency: 1.0,
            duty: 0.6,
            foot_offsets: [0.0, 0.5],
            step_height: 0.12,
            hand_frequency: [1.0, 1.0],
            hand_amplitude: [0.4, 0.4],
            hand_offset: [PI, 0.0],
            heading: 0.0,
        }
    }
}

impl StyleRecipe {
    pub fn idle() -> Self {
        StyleRecipe {
            name: "idle".into(),
            speed: 0.0,
            step_height: 0.0,
            hand_amplitude: [0.0, 0.0],
            ..Default::default()
        }
    }

    /// Named desk-scale styles used by tests and examples.
    pub fn preset(name: &str) -> Option<Self> {
        let base = StyleRecipe {
            name: name.into(),
            ..Default::default()
        };
        Some(match name {
            "neutral" => base,
            "proud" => StyleRecipe {
                speed: 1.0,
                lean: -0.12,
                step_height: 0.18,
                hand_amplitude: [0.15, 0.15],
                ..base
            },
            "hurried" => StyleRecipe {
                speed: 1.5,
                lean: 0.25,
                foot_frequency: 1.5,
                duty: 0.5,
                step_height: 0.1,
                hand_frequency: [1.5, 1.5],
                hand_amplitude: [0.7, 0.7],
                ..base
            },
            "swagger" => StyleRecipe {
                speed: 0.9,
                lean: 0.05,
                step_height: 0.14,
                hand_frequency: [0.75, 0.75],
                hand_amplitude: [0.8, 0.3],
                hand_offset: [0.0, 0.0],
                ..base
            },
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let freqs = [self.foot_frequency, self.hand_frequency[0], self.hand_frequency[1]];
        if freqs.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::invalid("frequencies must be positive"));
        }
        if !(self.duty > 0.0 && self.duty < 1.0) {
            return Err(Error::invalid(format!("duty cycle {} outside (0, 1)", self.duty)));
        }
        if self.speed < 0.0 || self.step_height < 0.0 {
            return Err(Error::invalid("speed and step height must be non-negative"));
        }
        Ok(())
    }

    pub fn gait(&self) -> Gait {
        if self.speed == 0.0 {
            Gait::Idle
        } else if self.duty < 0.5 {
            Gait::FR
        } else {
            Gait::FW
        }
    }
}

/// A generated clip plus its ground truth.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub clip: MotionClip,
    /// Per foot (left, right), per frame.
    pub contacts: [Vec<bool>; 2],
    /// Per end effector (hand l/r, foot l/r), per frame, radians in [0, 2 pi).
    pub phases: [Vec<f64>; 4],
    pub frequencies: [f64; 4],
}

struct Gen<'a> {
    r: &'a StyleRecipe,
    fps: f64,
}

impl Gen<'_> {
    fn yaw(&self, t: f64) -> f64 {
        self.r.heading + self.r.turn_rate * t
    }

    fn root_ground(&self, t: f64) -> DVec3 {
        let w = self.r.turn_rate;
        let h = self.r.heading;
        let (x, z) = if w.abs() < 1e-9 {
            (0.0, self.r.speed * t)
        } else {
            (self.r.speed / w * (1.0 - (w * t).cos()), self.r.speed / w * (w * t).sin())
        };
        // rotate the heading-0 path by the initial heading
        DQuat::from_rotation_y(h) * DVec3::new(x, 0.0, z)
    }

    /// Mid-stance time of cycle `m` for foot `k`.
    fn plant_time(&self, k: usize, m: f64) -> f64 {
        (m + self.r.duty / 2.0 - self.r.foot_offsets[k]) / self.r.foot_frequency
    }

    fn plant(&self, k: usize, m: f64) -> (DVec3, f64) {
        let t = self.plant_time(k, m);
        let side = if k == 0 { 1.0 } else { -1.0 };
        let yaw = self.yaw(t);
        let p = self.root_ground(t) + DQuat::from_rotation_y(yaw) * DVec3::new(side * HIP_LATERAL, 0.0, 0.0);
        (p, yaw)
    }

    /// Ankle position, foot yaw and stance flag for foot `k` at frame `i`.
    fn foot(&self, k: usize, i: usize) -> (DVec3, f64, bool) {
        let r = self.r;
        let u = r.foot_frequency * i as f64 / self.fps + r.foot_offsets[k];
        let m = u.floor();
        let c = u - m;
        if c < r.duty - 1e-9 {
            let (p, yaw) = self.plant(k, m);
            return (p, yaw, true);
        }
        // frames since lift-off, so the first swing frame is still planted
        let delta = r.foot_frequency / self.fps;
        let steps = ((c - r.duty) / delta + 1e-9).floor();
        let w = (steps * delta / (1.0 - r.duty)).clamp(0.0, 1.0);
        let (a, ya) = self.plant(k, m);
        let (b, yb) = self.plant(k, m + 1.0);
        let s = w - (TAU * w).sin() / TAU;
        let mut p = a + (b - a) * s;
        p.y = r.step_height * (PI * w).sin();
        (p, ya + (yb - ya) * s, false)
    }
}

/// Rotation taking -Y onto `dir` with Z kept as close to `forward` as possible.
fn bone_rotation(dir: DVec3, forward: DVec3) -> DQuat {
    let y = -dir.normalize();
    let mut z = forward - y * forward.dot(y);
    if z.length_squared() < 1e-12 {
        z = y.any_orthonormal_vector();
    }
    let z = z.normalize();
    let x = y.cross(z);
    DQuat::from_mat3(&DMat3::from_cols(x, y, z)).normalize()
}

/// Knee position for a two-bone leg bending towards `forward`.
fn knee(hip: DVec3, ankle: DVec3, forward: DVec3) -> DVec3 {
    let d = ankle - hip;
    let len = d.length().clamp(1e-9, THIGH + SHIN);
    let axis = d / d.length().max(1e-9);
    // distance along the hip-ankle axis to the knee's projection
    let a = (THIGH * THIGH - SHIN * SHIN + len * len) / (2.0 * len);
    let b = (THIGH * THIGH - a * a).max(0.0).sqrt();
    let mut perp = forward - axis * forward.dot(axis);
    if perp.length_squared() < 1e-12 {
        perp = axis.any_orthonormal_vector();
    }
    hip + axis * a + perp.normalize() * b
}

pub fn synth_gait(recipe: &StyleRecipe, n_frames: usize) -> Result<SynthClip> {
    synth_gait_at(recipe, n_frames, 60.0)
}

pub fn synth_gait_at(recipe: &StyleRecipe, n_frames: usize, fps: f64) -> Result<SynthClip> {
    recipe.validate()?;
    let skel = Skeleton::humanoid();
    let g = Gen { r: recipe, fps };
    let reach = REACH * (THIGH + SHIN);
    let mut frames = Vec::with_capacity(n_frames);
    let mut contacts = [Vec::with_capacity(n_frames), Vec::with_capacity(n_frames)];
    let mut phases: [Vec<f64>; 4] = Default::default();
    let delta = recipe.foot_frequency / fps;
    // feet that never leave their spot are in contact throughout
    let planted = recipe.speed == 0.0 && recipe.turn_rate == 0.0 && recipe.step_height == 0.0;

    for i in 0..n_frames {
        let t = i as f64 / fps;
        let yaw = g.yaw(t);
        let qyaw = DQuat::from_rotation_y(yaw);
        let fwd = qyaw * DVec3::Z;
        let ground = g.root_ground(t);
        let feet = [g.foot(0, i), g.foot(1, i)];

        // root height limited by what both legs can reach
        let mut h = ROOT_HEIGHT;
        for (k, (ankle, _, _)) in feet.iter().enumerate() {
            let side = if k == 0 { 1.0 } else { -1.0 };
            let hip_ground = ground + qyaw * DVec3::new(side * HIP_LATERAL, 0.0, 0.0);
            let dh = DVec3::new(ankle.x - hip_ground.x, 0.0, ankle.z - hip_ground.z).length();
            let max_h = HIP_DROP + ankle.y + (reach * reach - dh * dh).max(0.0).sqrt();
            h = h.min(max_h);
        }
        let root = DVec3::new(ground.x, h, ground.z);

        let mut world = vec![qyaw; skel.len()];
        let torso = qyaw * DQuat::from_rotation_x(recipe.lean);
        for j in [1, 2, 3, 4, 5, 6, 7, 8, 9, 13] {
            world[j] = torso;
        }
        for (side, chain) in [(0usize, [10, 11, 12]), (1, [14, 15, 16])] {
            let theta = recipe.hand_amplitude[side]
                * (TAU * recipe.hand_frequency[side] * t + recipe.hand_offset[side]).sin();
            let q = qyaw * DQuat::from_rotation_x(-theta);
            for j in chain {
                world[j] = q;
            }
        }
        for (k, (ankle, foot_yaw, _)) in feet.iter().enumerate() {
            let [up, leg, foot, toe] = if k == 0 { [17, 18, 19, 20] } else { [21, 22, 23, 24] };
            let side = if k == 0 { 1.0 } else { -1.0 };
            let hip = root + qyaw * DVec3::new(side * HIP_LATERAL, -HIP_DROP, 0.0);
            let kn = knee(hip, *ankle, fwd);
            world[up] = bone_rotation(kn - hip, fwd);
            world[leg] = bone_rotation(*ankle - kn, fwd);
            let qf = DQuat::from_rotation_y(*foot_yaw);
            world[foot] = qf;
            world[toe] = qf;
        }
        frames.push(place_joints(&skel, &world, root));

        for k in 0..2 {
            contacts[k].push(feet[k].2 || planted);
        }
        for k in 0..2 {
            let ph = TAU * recipe.hand_frequency[k] * t + recipe.hand_offset[k];
            phases[k].push(ph.rem_euclid(TAU));
        }
        for k in 0..2 {
            // contact square wave peaks at the centre of the stance frames
            let centre = (recipe.duty - delta) / 2.0;
            let cyc = recipe.foot_frequency * t + recipe.foot_offsets[k] - centre;
            phases[2 + k].push((TAU * cyc + PI / 2.0).rem_euclid(TAU));
        }
    }

    let mut clip = MotionClip::new(skel, fps as f32, frames);
    clip.style = recipe.name.clone();
    clip.gait = recipe.gait();
    Ok(SynthClip {
        clip,
        contacts,
        phases,
        frequencies: [
            recipe.hand_frequency[0],
            recipe.hand_frequency[1],
            recipe.foot_frequency,
            recipe.foot_frequency,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intervals(flags: &[bool]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = None;
        for (i, &f) in flags.iter().enumerate() {
            match (f, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((s, i - s));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, flags.len() - s));
        }
        out
    }

    #[test]
    fn stepping_schedule_closed_form() {
        let r = StyleRecipe {
            foot_frequency: 1.0,
            duty: 0.6,
            ..Default::default()
        };
        let s = synth_gait(&r, 600).unwrap();
        for k in 0..2 {
            let iv = intervals(&s.contacts[k]);
            let full: Vec<_> = iv.iter().filter(|(st, len)| *st > 0 && st + len < 600).collect();
            // left foot: cycles start at frames 0, 60, ..., all 10 intervals complete
            if k == 0 {
                assert_eq!(iv.len(), 10);
                assert!(iv.iter().all(|&(_, len)| len == 36), "{iv:?}");
            } else {
                assert!(full.iter().all(|(_, len)| *len == 36), "{iv:?}");
                let total: usize = iv.iter().map(|x| x.1).sum();
                assert_eq!(total, 360);
            }
        }
    }

    #[test]
    fn idle_recipe_is_static() {
        let s = synth_gait(&StyleRecipe::idle(), 120).unwrap();
        let f0 = &s.clip.frames[0];
        for f in &s.clip.frames {
            for (a, b) in f.positions.iter().zip(&f0.positions) {
                assert!(a.distance(*b) < 1e-6);
            }
        }
        assert!(s.contacts.iter().all(|c| c.iter().all(|&x| x)));
    }

    #[test]
    fn hand_period_matches_frequency() {
        let r = StyleRecipe {
            hand_frequency: [0.5, 0.5],
            ..Default::default()
        };
        let s = synth_gait(&r, 400).unwrap();
        let hand = s.clip.skeleton.end_effectors()[0];
        let along = |i: usize| {
            let f = &s.clip.frames[i];
            let d = f.positions[hand] - f.positions[0];
            d.z as f64
        };
        for i in 0..200 {
            assert!((along(i) - along(i + 120)).abs() < 1e-4, "frame {i}");
        }
        assert!((along(0) - along(30)).abs() > 0.05);
    }

    #[test]
    fn rejects_bad_recipes() {
        let mut r = StyleRecipe::default();
        r.duty = 1.0;
        assert!(synth_gait(&r, 10).is_err());
        r.duty = 0.5;
        r.foot_frequency = 0.0;
        assert!(synth_gait(&r, 10).is_err());
    }

    #[test]
    fn bones_are_rigid_and_feet_plant_on_ground() {
        for name in ["neutral", "proud", "hurried", "swagger"] {
            let s = synth_gait(&StyleRecipe::preset(name).unwrap(), 300).unwrap();
            assert!(super::super::bone_length_drift(&s.clip) < 1e-5, "{name}");
            s.clip.validate().unwrap();
            let feet = s.clip.skeleton.feet();
            for (i, f) in s.clip.frames.iter().enumerate() {
                for k in 0..2 {
                    let y = f.positions[feet[k]].y;
                    assert!(y > -1e-5, "{name} frame {i}");
                    if s.contacts[k][i] {
                        assert!(y.abs() < 1e-5);
                    }
                }
            }
        }
    }
}
