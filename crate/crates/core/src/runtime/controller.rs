//! Autoregressive character controller.

use std::collections::VecDeque;

use glam::{Quat, Vec2, Vec3};
use serde::{Deserialize, Serialize};

use super::{
    blend_user_trajectory, ActiveStyle, ControlInput, FootIk, FootIkConfig, Limb, StyleSelection, StyleTable,
    TrajectoryConfig, TrajectorySample,
};
use crate::error::{Error, Result};
use crate::model::StyleModel;
use crate::motion::{
    input_layout as il, output_layout as ol, rotation_6d, rotation_from_6d, Basis, Frame, Gait, MotionClip, Skeleton,
    DEFAULT_FPS, FEATURE_JOINTS, HISTORY, INPUT_DIM, INPUT_OFFSETS, OUTPUT_DIM, OUTPUT_OFFSETS, PHASE_DIM,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub trajectory: TrajectoryConfig,
    pub foot_ik: FootIkConfig,
    /// Weight of the predicted absolute phase against the integrated update.
    pub phase_blend: f32,
    /// Two-bone arm IK towards the predicted wrists while styles are blended.
    pub arm_ik: bool,
    pub fps: f32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            trajectory: TrajectoryConfig::default(),
            foot_ik: FootIkConfig::default(),
            phase_blend: 0.5,
            arm_ik: true,
            fps: DEFAULT_FPS,
        }
    }
}

/// World-space output of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub root: Basis,
    pub positions: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    pub contacts: [f32; 2],
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub root: Basis,
    /// Current pose in the current root's character space.
    pub local_positions: Vec<Vec3>,
    pub local_velocities: Vec<Vec3>,
    pub local_rotations: Vec<[f32; 6]>,
    /// Root samples of the previous `HISTORY` frames, oldest first.
    pub history: VecDeque<TrajectorySample>,
    /// World-space future predicted by the last step, 10..60 frames ahead.
    pub future: [TrajectorySample; 6],
    pub phase: [f32; PHASE_DIM],
    pub selection: Option<StyleSelection>,
    pub active: Option<ActiveStyle>,
    pub feet: FootIk,
    arms: [Limb; 2],
    pub pose: Pose,
    pub frame: u64,
    pub cfg: ControllerConfig,
}

/// Outcome of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Set when the prediction was not finite and the pose was frozen.
    pub diagnostic: Option<String>,
    pub gating: Vec<f32>,
}

fn sample_from_local(basis: &Basis, pos: [f32; 2], dir: [f32; 2]) -> TrajectorySample {
    let p = basis.to_world_point(Vec3::new(pos[0], 0.0, pos[1]));
    let d = basis.to_world_dir(Vec3::new(dir[0], 0.0, dir[1]));
    TrajectorySample {
        position: Vec2::new(p.x, p.z),
        direction: Vec2::new(d.x, d.z).try_normalize().unwrap_or(basis.forward()),
    }
}

fn sample_to_local(basis: &Basis, s: &TrajectorySample) -> ([f32; 2], [f32; 2]) {
    let p = basis.to_local_point(Vec3::new(s.position.x, 0.0, s.position.y));
    let d = basis.to_local_dir(Vec3::new(s.direction.x, 0.0, s.direction.y));
    let d = Vec2::new(d.x, d.z).try_normalize().unwrap_or(Vec2::Y);
    ([p.x, p.z], [d.x, d.y])
}

fn lerp_sample(a: &TrajectorySample, b: &TrajectorySample, t: f32) -> TrajectorySample {
    TrajectorySample {
        position: a.position.lerp(b.position, t),
        direction: a.direction.lerp(b.direction, t).try_normalize().unwrap_or(b.direction),
    }
}

fn vec3s(v: &[f32]) -> Vec<Vec3> {
    v.chunks(3).map(Vec3::from_slice).collect()
}

fn check_model(model: &StyleModel) -> Result<&Skeleton> {
    let d = model.dims();
    if d.input != INPUT_DIM || d.output != OUTPUT_DIM || d.phase != PHASE_DIM {
        return Err(Error::shape("the controller needs a model with the standard feature layout"));
    }
    let sk = model
        .skeleton
        .as_ref()
        .ok_or_else(|| Error::invalid("model carries no skeleton"))?;
    sk.check_feature_ready()?;
    Ok(sk)
}

impl ControllerState {
    /// State from an unstandardised input frame and phase vector placed at
    /// `root`. The history is filled by interpolating the sparse past
    /// trajectory samples.
    pub fn from_input(model: &StyleModel, x: &[f32], phase: &[f32], root: Basis, cfg: ControllerConfig) -> Result<Self> {
        let skeleton = check_model(model)?;
        if x.len() != INPUT_DIM || phase.len() != PHASE_DIM {
            return Err(Error::shape("seed frame has the wrong width"));
        }
        let samples: Vec<TrajectorySample> = (0..INPUT_OFFSETS.len())
            .map(|k| {
                let p = [x[il::TRAJ_POS.start + 2 * k], x[il::TRAJ_POS.start + 2 * k + 1]];
                let d = [x[il::TRAJ_DIR.start + 2 * k], x[il::TRAJ_DIR.start + 2 * k + 1]];
                sample_from_local(&root, p, d)
            })
            .collect();
        let mut history = VecDeque::with_capacity(HISTORY);
        for f in 0..HISTORY {
            let k = f / 10;
            history.push_back(lerp_sample(&samples[k], &samples[k + 1], (f % 10) as f32 / 10.0));
        }
        let mut future = [samples[11]; 6];
        future[..5].copy_from_slice(&samples[7..12]);
        let (a, b) = (samples[10], samples[11]);
        future[5] = TrajectorySample {
            position: b.position * 2.0 - a.position,
            direction: b.direction,
        };
        let local_positions = vec3s(&x[il::JOINT_POS]);
        let local_velocities = vec3s(&x[il::JOINT_VEL]);
        let local_rotations: Vec<[f32; 6]> = x[il::JOINT_ROT]
            .chunks(6)
            .map(|c| rotation_6d(rotation_from_6d(c)))
            .collect();
        let positions = local_positions.iter().map(|p| root.to_world_point(*p)).collect();
        let rotations = local_rotations
            .iter()
            .map(|r| root.rotation * rotation_from_6d(r))
            .collect();
        let [lh, rh, _, _] = skeleton.end_effectors();
        Ok(ControllerState {
            root,
            local_positions,
            local_velocities,
            local_rotations,
            history,
            future,
            phase: phase.try_into().expect("checked width"),
            selection: None,
            active: None,
            feet: FootIk::new(skeleton, cfg.foot_ik, cfg.fps)?,
            arms: [Limb::from_end(skeleton, lh)?, Limb::from_end(skeleton, rh)?],
            pose: Pose {
                root,
                positions,
                rotations,
                contacts: [0.0; 2],
            },
            frame: 0,
            cfg,
        })
    }

    /// State at the data's mean input frame, standing at the origin.
    pub fn rest(model: &StyleModel, cfg: ControllerConfig) -> Result<Self> {
        let m = &model.norm.input_mean;
        if m.len() != INPUT_DIM + PHASE_DIM {
            return Err(Error::shape("normalisation does not match the feature layout"));
        }
        ControllerState::from_input(model, &m[..INPUT_DIM], &m[INPUT_DIM..], Basis::IDENTITY, cfg)
    }

    fn current_sample(&self) -> TrajectorySample {
        TrajectorySample {
            position: Vec2::new(self.root.origin.x, self.root.origin.z),
            direction: self.root.forward(),
        }
    }

    /// Input frame for the next prediction.
    pub fn input_frame(&self, control: &ControlInput) -> Vec<f32> {
        let history: Vec<TrajectorySample> = self.history.iter().copied().collect();
        let traj = blend_user_trajectory(
            &self.future,
            &history,
            self.current_sample(),
            control,
            &self.cfg.trajectory,
            self.cfg.fps,
        );
        let mut x = vec![0f32; INPUT_DIM];
        for (k, s) in traj.iter().enumerate() {
            let (p, d) = sample_to_local(&self.root, s);
            x[il::TRAJ_POS.start + 2 * k..][..2].copy_from_slice(&p);
            x[il::TRAJ_DIR.start + 2 * k..][..2].copy_from_slice(&d);
        }
        for j in 0..FEATURE_JOINTS {
            x[il::JOINT_POS.start + 3 * j..][..3].copy_from_slice(&self.local_positions[j].to_array());
            x[il::JOINT_VEL.start + 3 * j..][..3].copy_from_slice(&self.local_velocities[j].to_array());
            x[il::JOINT_ROT.start + 6 * j..][..6].copy_from_slice(&self.local_rotations[j]);
        }
        x
    }

    fn resolve_style(&mut self, sel: &StyleSelection, styles: &StyleTable) -> Result<()> {
        if self.selection.as_ref() != Some(sel) || self.active.is_none() {
            self.active = Some(styles.resolve(sel)?);
            self.selection = Some(sel.clone());
        }
        Ok(())
    }

    /// Advances one frame. Errors leave the state untouched; a non-finite
    /// prediction freezes the pose and is reported in the diagnostic.
    pub fn step(&mut self, control: &ControlInput, model: &StyleModel, styles: &StyleTable) -> Result<StepReport> {
        self.resolve_style(&control.style, styles)?;
        let x = self.input_frame(control);
        let active = self.active.as_ref().expect("resolved above");
        let (out, gating) = model.predict(&x, &self.phase, active.as_runtime())?;
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            let msg = format!("non-finite prediction in channel {i} at frame {}; pose frozen", self.frame);
            log::warn!("{msg}");
            self.frame += 1;
            return Ok(StepReport {
                diagnostic: Some(msg),
                gating,
            });
        }
        self.apply_output(&out);
        Ok(StepReport {
            diagnostic: None,
            gating,
        })
    }

    /// Advances the state with a de-standardised output vector.
    pub fn apply_output(&mut self, out: &[f32]) {
        let old = self.root;
        let traj_local = |k: usize| -> ([f32; 2], [f32; 2]) {
            (
                [out[ol::TRAJ_POS.start + 2 * k], out[ol::TRAJ_POS.start + 2 * k + 1]],
                [out[ol::TRAJ_DIR.start + 2 * k], out[ol::TRAJ_DIR.start + 2 * k + 1]],
            )
        };

        // root moves by the first predicted sample spread over its horizon
        let horizon = (OUTPUT_OFFSETS[0] + 1) as f32;
        let (p0, d0) = traj_local(0);
        let step = Vec3::new(p0[0], 0.0, p0[1]) / horizon;
        let dyaw = d0[0].atan2(d0[1]) / horizon;
        let origin = old.to_world_point(step);
        let yaw = old.yaw() + dyaw;
        let root = Basis::from_forward(Vec2::new(origin.x, origin.z), Vec2::new(yaw.sin(), yaw.cos()));

        let mut positions = Vec::with_capacity(FEATURE_JOINTS);
        let mut rotations = Vec::with_capacity(FEATURE_JOINTS);
        for j in 0..FEATURE_JOINTS {
            let p = Vec3::from_slice(&out[ol::JOINT_POS.start + 3 * j..][..3]);
            let v = Vec3::from_slice(&out[ol::JOINT_VEL.start + 3 * j..][..3]);
            let r = rotation_from_6d(&out[ol::JOINT_ROT.start + 6 * j..][..6]);
            let pw = old.to_world_point(p);
            let qw = old.rotation * r;
            positions.push(pw);
            rotations.push(qw);
            self.local_positions[j] = root.to_local_point(pw);
            self.local_velocities[j] = root.to_local_dir(old.to_world_dir(v));
            self.local_rotations[j] = rotation_6d(root.to_local_rot(qw));
        }

        for (k, f) in self.future.iter_mut().enumerate() {
            let (p, d) = traj_local(k);
            *f = sample_from_local(&old, p, d);
        }

        let rho = self.cfg.phase_blend;
        for c in 0..PHASE_DIM {
            let integrated = self.phase[c] + out[ol::PHASE_UPDATE.start + c];
            self.phase[c] = (1.0 - rho) * integrated + rho * out[ol::PHASE_NEXT.start + c];
        }

        let current = self.current_sample();
        self.history.pop_front();
        self.history.push_back(current);
        self.root = root;

        let contacts = [out[ol::CONTACTS.start], out[ol::CONTACTS.start + 1]];
        if self.cfg.arm_ik && self.selection.as_ref().is_some_and(|s| s.is_blend()) {
            for arm in &self.arms {
                let target = positions[arm.end];
                arm.solve(&mut positions, &mut rotations, target);
            }
        }
        self.feet.apply(&mut positions, &mut rotations, contacts);
        self.pose = Pose {
            root,
            positions,
            rotations,
            contacts,
        };
        self.frame += 1;
    }
}

/// Runs `controls` through the controller, returning every pose.
pub fn rollout<'a>(
    state: &mut ControllerState,
    model: &StyleModel,
    styles: &StyleTable,
    controls: impl IntoIterator<Item = &'a ControlInput>,
) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for c in controls {
        let r = state.step(c, model, styles)?;
        if let Some(d) = r.diagnostic {
            return Err(Error::Numeric(d));
        }
        poses.push(state.pose.clone());
    }
    Ok(poses)
}

/// Packs a pose stream into a clip for storage or inspection.
pub fn poses_to_clip(skeleton: &Skeleton, poses: &[Pose], fps: f32, style: &str) -> MotionClip {
    let frames = poses
        .iter()
        .map(|p| Frame {
            positions: p.positions.clone(),
            rotations: p.rotations.clone(),
        })
        .collect();
    let mut clip = MotionClip::new(skeleton.clone(), fps, frames);
    clip.style = style.to_string();
    clip.gait = Gait::Transition;
    clip
}
