//! Character-space features and training-example assembly.

use std::ops::Range;

use glam::{Quat, Vec2, Vec3};

use super::{EndEffector, MotionClip, FEATURE_JOINTS};
use crate::error::{Error, Result};

pub const INPUT_DIM: usize = 348;
pub const PHASE_DIM: usize = 8;
pub const OUTPUT_DIM: usize = 342;
pub const CLIP_FRAMES: usize = 240;
pub const POSE_DIM: usize = 300;

/// Trajectory sample offsets of the input frame, in frames.
pub const INPUT_OFFSETS: [i32; 12] = [-60, -50, -40, -30, -20, -10, 0, 10, 20, 30, 40, 50];
/// Future trajectory offsets of the output frame, counted from the next frame.
pub const OUTPUT_OFFSETS: [i32; 6] = [10, 20, 30, 40, 50, 60];
pub const HISTORY: usize = 60;

/// Channel ranges inside the input vector.
pub mod input_layout {
    use std::ops::Range;
    pub const TRAJ_POS: Range<usize> = 0..24;
    pub const TRAJ_DIR: Range<usize> = 24..48;
    pub const JOINT_POS: Range<usize> = 48..123;
    pub const JOINT_VEL: Range<usize> = 123..198;
    pub const JOINT_ROT: Range<usize> = 198..348;
}

/// Channel ranges inside the output vector.
pub mod output_layout {
    use std::ops::Range;
    pub const TRAJ_POS: Range<usize> = 0..12;
    pub const TRAJ_DIR: Range<usize> = 12..24;
    pub const JOINT_POS: Range<usize> = 24..99;
    pub const JOINT_VEL: Range<usize> = 99..174;
    pub const JOINT_ROT: Range<usize> = 174..324;
    pub const CONTACTS: Range<usize> = 324..326;
    pub const PHASE_NEXT: Range<usize> = 326..334;
    pub const PHASE_UPDATE: Range<usize> = 334..342;
}

/// Channel ranges inside one style-clip row.
pub mod pose_layout {
    use std::ops::Range;
    pub const JOINT_POS: Range<usize> = 0..75;
    pub const JOINT_VEL: Range<usize> = 75..150;
    pub const JOINT_ROT: Range<usize> = 150..300;
}

/// Ground-projected root frame: origin on the floor below the root, yaw only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Basis {
    pub origin: Vec3,
    pub rotation: Quat,
}

impl Basis {
    pub const IDENTITY: Basis = Basis {
        origin: Vec3::ZERO,
        rotation: Quat::IDENTITY,
    };

    /// Basis from a ground position and a ground forward direction.
    pub fn from_forward(origin_xz: Vec2, forward_xz: Vec2) -> Basis {
        let f = forward_xz.normalize();
        Basis {
            origin: Vec3::new(origin_xz.x, 0.0, origin_xz.y),
            rotation: Quat::from_rotation_y(f.x.atan2(f.y)),
        }
    }

    pub fn forward(&self) -> Vec2 {
        let f = self.rotation * Vec3::Z;
        Vec2::new(f.x, f.z)
    }

    pub fn yaw(&self) -> f32 {
        let f = self.forward();
        f.x.atan2(f.y)
    }

    pub fn to_local_point(&self, p: Vec3) -> Vec3 {
        self.rotation.inverse() * (p - self.origin)
    }

    pub fn to_local_dir(&self, v: Vec3) -> Vec3 {
        self.rotation.inverse() * v
    }

    pub fn to_local_rot(&self, q: Quat) -> Quat {
        self.rotation.inverse() * q
    }

    pub fn to_world_point(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.origin
    }

    pub fn to_world_dir(&self, v: Vec3) -> Vec3 {
        self.rotation * v
    }
}

/// Ground projection of the root's facing axis, `None` when degenerate.
pub fn ground_forward(root_rotation: Quat) -> Option<Vec2> {
    let f = root_rotation * Vec3::Z;
    let g = Vec2::new(f.x, f.z);
    (g.length() >= 1e-6).then(|| g.normalize())
}

/// Forward and up axes of a rotation, packed as six values.
pub fn rotation_6d(q: Quat) -> [f32; 6] {
    let f = q * Vec3::Z;
    let u = q * Vec3::Y;
    [f.x, f.y, f.z, u.x, u.y, u.z]
}

/// Rotation whose forward and up axes best match a packed 6-value pair.
pub fn rotation_from_6d(v: &[f32]) -> Quat {
    let f = Vec3::new(v[0], v[1], v[2]).normalize_or(Vec3::Z);
    let mut u = Vec3::new(v[3], v[4], v[5]);
    u = (u - f * u.dot(f)).normalize_or(f.any_orthonormal_vector());
    let x = u.cross(f);
    Quat::from_mat3(&glam::Mat3::from_cols(x, u, f)).normalize()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterFrame {
    pub root_position_xz: Vec2,
    pub root_forward_xz: Vec2,
    pub joint_positions_local: Vec<Vec3>,
    pub joint_velocities_local: Vec<Vec3>,
    pub joint_rotations_local: Vec<[f32; 6]>,
}

impl CharacterFrame {
    /// Packs positions, velocities and rotations into one 300-value row.
    pub fn pose_row(&self) -> Vec<f32> {
        let mut row = Vec::with_capacity(POSE_DIM);
        row.extend(self.joint_positions_local.iter().flat_map(|p| p.to_array()));
        row.extend(self.joint_velocities_local.iter().flat_map(|p| p.to_array()));
        row.extend(self.joint_rotations_local.iter().flatten());
        row
    }
}

/// Per-frame character bases of a clip. A frame whose facing axis is
/// vertical reuses the previous frame's heading; frame 0 cannot.
pub fn clip_bases(clip: &MotionClip) -> Result<Vec<Basis>> {
    let mut out: Vec<Basis> = Vec::with_capacity(clip.len());
    for (i, f) in clip.frames.iter().enumerate() {
        let r = f.root_position();
        let origin = Vec2::new(r.x, r.z);
        let fwd = match ground_forward(f.root_rotation()) {
            Some(v) => v,
            None if i == 0 => {
                return Err(Error::Degenerate("root facing axis is vertical at frame 0".into()))
            }
            None => out[i - 1].forward(),
        };
        out.push(Basis::from_forward(origin, fwd));
    }
    Ok(out)
}

/// Local joint positions of one frame in `basis`.
fn local_positions(positions: &[Vec3], basis: &Basis) -> Vec<Vec3> {
    positions.iter().map(|p| basis.to_local_point(*p)).collect()
}

pub fn character_space(clip: &MotionClip, i: usize) -> Result<CharacterFrame> {
    if i >= clip.len() {
        return Err(Error::OutOfBounds(format!("frame {i} of {}", clip.len())));
    }
    let n = clip.len();
    // only the headings up to i+1 are needed, but the fallback chain may reach back to 0
    let bases = clip_bases(&clip.slice(0, (i + 2).min(n))?)?;
    Ok(frame_in_own_space(clip, &bases, i))
}

fn frame_in_own_space(clip: &MotionClip, bases: &[Basis], i: usize) -> CharacterFrame {
    let n = clip.len();
    let b = bases[i];
    let pos = local_positions(&clip.frames[i].positions, &b);
    let vel = if n < 2 {
        vec![Vec3::ZERO; pos.len()]
    } else {
        let (a, c) = if i + 1 < n { (i, i + 1) } else { (i - 1, i) };
        let pa = local_positions(&clip.frames[a].positions, &bases[a]);
        let pc = local_positions(&clip.frames[c].positions, &bases[c]);
        pa.iter().zip(&pc).map(|(x, y)| (*y - *x) * clip.fps).collect()
    };
    let rot = clip.frames[i]
        .rotations
        .iter()
        .map(|q| rotation_6d(b.to_local_rot(*q)))
        .collect();
    CharacterFrame {
        root_position_xz: Vec2::new(b.origin.x, b.origin.z),
        root_forward_xz: b.forward(),
        joint_positions_local: pos,
        joint_velocities_local: vel,
        joint_rotations_local: rot,
    }
}

/// Per-clip annotations consumed by example assembly: local phase features
/// per end effector and continuous foot contact labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotations {
    pub phases: [Option<Vec<[f32; 2]>>; 4],
    pub contacts: Option<[Vec<f32>; 2]>,
}

pub const CONTACT_CHANNEL: &str = "contacts";

pub fn phase_channel_name(e: EndEffector) -> String {
    format!("phase.{}", e.short_name())
}

impl Annotations {
    pub fn from_clip(clip: &MotionClip) -> Annotations {
        let mut a = Annotations::default();
        for e in EndEffector::ALL {
            if let Some(ch) = clip.aux(&phase_channel_name(e)) {
                if ch.width == 2 {
                    a.phases[e.index()] = Some(ch.values.chunks(2).map(|c| [c[0], c[1]]).collect());
                }
            }
        }
        if let Some(ch) = clip.aux(CONTACT_CHANNEL) {
            if ch.width == 2 {
                a.contacts = Some([
                    ch.values.iter().step_by(2).copied().collect(),
                    ch.values.iter().skip(1).step_by(2).copied().collect(),
                ]);
            }
        }
        a
    }

    pub fn phase_vector(&self, i: usize) -> Result<[f32; PHASE_DIM]> {
        let mut p = [0.0; PHASE_DIM];
        for e in EndEffector::ALL {
            let track = self.phases[e.index()].as_ref().ok_or_else(|| {
                Error::invalid(format!("missing phase track for {}", e.short_name()))
            })?;
            let v = track
                .get(i)
                .ok_or_else(|| Error::OutOfBounds(format!("phase frame {i}")))?;
            p[2 * e.index()] = v[0];
            p[2 * e.index() + 1] = v[1];
        }
        Ok(p)
    }
}

/// One supervised sample: network input, phase, target and the frame the
/// style-clip window is centred on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x: Vec<f32>,
    pub p: [f32; PHASE_DIM],
    pub z: Vec<f32>,
    pub frame: usize,
    pub clip_start: usize,
}

/// Everything about a clip that example assembly needs, computed once.
#[derive(Debug, Clone)]
pub struct ClipFeatures {
    pub fps: f32,
    pub bases: Vec<Basis>,
    /// `frames x 300` pose rows in each frame's own character space.
    pub pose: Vec<f32>,
    positions: Vec<Vec<Vec3>>,
    rotations: Vec<Vec<Quat>>,
    local_vel: Vec<Vec<Vec3>>,
}

impl ClipFeatures {
    pub fn new(clip: &MotionClip) -> Result<Self> {
        clip.skeleton.check_feature_ready()?;
        if clip.len() < 2 {
            return Err(Error::invalid("clip needs at least two frames"));
        }
        let bases = clip_bases(clip)?;
        let mut pose = Vec::with_capacity(clip.len() * POSE_DIM);
        let mut local_vel = Vec::with_capacity(clip.len());
        for i in 0..clip.len() {
            let cf = frame_in_own_space(clip, &bases, i);
            pose.extend(cf.pose_row());
            local_vel.push(cf.joint_velocities_local);
        }
        Ok(ClipFeatures {
            fps: clip.fps,
            bases,
            pose,
            positions: clip.frames.iter().map(|f| f.positions.clone()).collect(),
            rotations: clip.frames.iter().map(|f| f.rotations.clone()).collect(),
            local_vel,
        })
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn pose_row(&self, i: usize) -> &[f32] {
        &self.pose[i * POSE_DIM..(i + 1) * POSE_DIM]
    }

    /// Frames on which a full example can be assembled.
    pub fn valid_frames(&self) -> Range<usize> {
        let n = self.len();
        if n < HISTORY + 62 {
            return 0..0;
        }
        HISTORY..n - 61
    }

    /// Start of the 240-frame window centred on `i`, clamped to the clip.
    pub fn clip_window_start(&self, i: usize) -> Result<usize> {
        let n = self.len();
        if n < CLIP_FRAMES {
            return Err(Error::OutOfBounds(format!(
                "clip has {n} frames, a style window needs {CLIP_FRAMES}"
            )));
        }
        Ok(i.saturating_sub(CLIP_FRAMES / 2).min(n - CLIP_FRAMES))
    }

    /// The `240 x 300` style clip starting at `start`.
    pub fn style_clip(&self, start: usize) -> Result<&[f32]> {
        if start + CLIP_FRAMES > self.len() {
            return Err(Error::OutOfBounds(format!(
                "style window {start}..{} of {}",
                start + CLIP_FRAMES,
                self.len()
            )));
        }
        Ok(&self.pose[start * POSE_DIM..(start + CLIP_FRAMES) * POSE_DIM])
    }

    fn traj_sample(&self, basis: &Basis, j: usize) -> ([f32; 2], [f32; 2]) {
        let p = basis.to_local_point(self.bases[j].origin);
        let f = self.bases[j].forward();
        let d = basis.to_local_dir(Vec3::new(f.x, 0.0, f.y));
        let d2 = Vec2::new(d.x, d.z).normalize();
        ([p.x, p.z], [d2.x, d2.y])
    }

    pub fn input_vector(&self, i: usize) -> Result<Vec<f32>> {
        let n = self.len() as i64;
        if (i as i64) - (HISTORY as i64) < 0 || i as i64 + INPUT_OFFSETS[11] as i64 >= n {
            return Err(Error::OutOfBounds(format!("input trajectory window at frame {i}")));
        }
        let b = self.bases[i];
        let mut x = vec![0.0; INPUT_DIM];
        for (k, off) in INPUT_OFFSETS.iter().enumerate() {
            let (p, d) = self.traj_sample(&b, (i as i64 + *off as i64) as usize);
            x[input_layout::TRAJ_POS.start + 2 * k..][..2].copy_from_slice(&p);
            x[input_layout::TRAJ_DIR.start + 2 * k..][..2].copy_from_slice(&d);
        }
        x[input_layout::JOINT_POS.start..].copy_from_slice(self.pose_row(i));
        Ok(x)
    }

    pub fn output_vector(&self, i: usize, ann: &Annotations) -> Result<Vec<f32>> {
        let n = self.len();
        let next = i + 1;
        if next + OUTPUT_OFFSETS[5] as usize >= n {
            return Err(Error::OutOfBounds(format!("output trajectory window at frame {i}")));
        }
        let b = self.bases[i];
        let mut z = vec![0.0; OUTPUT_DIM];
        for (k, off) in OUTPUT_OFFSETS.iter().enumerate() {
            let (p, d) = self.traj_sample(&b, next + *off as usize);
            z[output_layout::TRAJ_POS.start + 2 * k..][..2].copy_from_slice(&p);
            z[output_layout::TRAJ_DIR.start + 2 * k..][..2].copy_from_slice(&d);
        }
        // next frame's pose expressed in this frame's character space
        let rel = b.rotation.inverse() * self.bases[next].rotation;
        for j in 0..FEATURE_JOINTS {
            let p = b.to_local_point(self.positions[next][j]);
            let v = rel * self.local_vel[next][j];
            let r = rotation_6d(b.to_local_rot(self.rotations[next][j]));
            z[output_layout::JOINT_POS.start + 3 * j..][..3].copy_from_slice(&p.to_array());
            z[output_layout::JOINT_VEL.start + 3 * j..][..3].copy_from_slice(&v.to_array());
            z[output_layout::JOINT_ROT.start + 6 * j..][..6].copy_from_slice(&r);
        }
        if let Some(c) = &ann.contacts {
            z[output_layout::CONTACTS.start] = c[0][next];
            z[output_layout::CONTACTS.start + 1] = c[1][next];
        } else {
            return Err(Error::invalid("missing contact labels"));
        }
        let p0 = ann.phase_vector(i)?;
        let p1 = ann.phase_vector(next)?;
        for c in 0..PHASE_DIM {
            z[output_layout::PHASE_NEXT.start + c] = p1[c];
            z[output_layout::PHASE_UPDATE.start + c] = p1[c] - p0[c];
        }
        Ok(z)
    }
}

pub fn assemble_example(feat: &ClipFeatures, i: usize, ann: &Annotations) -> Result<TrainingExample> {
    let x = feat.input_vector(i)?;
    let z = feat.output_vector(i, ann)?;
    let p = ann.phase_vector(i)?;
    let clip_start = feat.clip_window_start(i)?;
    Ok(TrainingExample {
        x,
        p,
        z,
        frame: i,
        clip_start,
    })
}
