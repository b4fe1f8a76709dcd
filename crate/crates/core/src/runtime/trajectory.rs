//! User control and its blend with the network's predicted trajectory.

use glam::Vec2;
use serde::{Deserialize, Serialize};

use super::StyleSelection;
use crate::motion::{INPUT_OFFSETS, OUTPUT_OFFSETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlGait {
    #[default]
    Idle,
    Walk,
    Run,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Desired travel direction on the ground; zero means idle.
    pub target_direction_xz: [f32; 2],
    /// Metres per second, capped per gait.
    pub target_speed: f32,
    pub gait: ControlGait,
    pub style: StyleSelection,
}

impl ControlInput {
    pub fn idle(style: StyleSelection) -> Self {
        ControlInput {
            target_direction_xz: [0.0, 0.0],
            target_speed: 0.0,
            gait: ControlGait::Idle,
            style,
        }
    }

    pub fn walk(dir: [f32; 2], speed: f32, style: StyleSelection) -> Self {
        ControlInput {
            target_direction_xz: dir,
            target_speed: speed,
            gait: ControlGait::Walk,
            style,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    /// Trust in the user's path; 1 follows it completely.
    pub responsiveness: f32,
    pub walk_speed_cap: f32,
    pub run_speed_cap: f32,
    /// Seconds over which the desired path turns onto the target heading.
    pub turn_time: f32,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        TrajectoryConfig {
            responsiveness: 0.5,
            walk_speed_cap: 2.0,
            run_speed_cap: 5.0,
            turn_time: 1.0,
        }
    }
}

impl TrajectoryConfig {
    /// Effective speed after the gait cap.
    pub fn speed(&self, c: &ControlInput) -> f32 {
        let cap = match c.gait {
            ControlGait::Idle => 0.0,
            ControlGait::Walk => self.walk_speed_cap,
            ControlGait::Run => self.run_speed_cap,
        };
        if Vec2::from(c.target_direction_xz).length() < 1e-6 || !c.target_speed.is_finite() {
            return 0.0;
        }
        c.target_speed.clamp(0.0, cap)
    }
}

/// One root sample on the ground: position and unit facing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub position: Vec2,
    pub direction: Vec2,
}

fn signed_angle(from: Vec2, to: Vec2) -> f32 {
    // yaw is measured from +Z towards +X
    let a = from.x.atan2(from.y);
    let b = to.x.atan2(to.y);
    let mut d = b - a;
    while d > std::f32::consts::PI {
        d -= std::f32::consts::TAU;
    }
    while d < -std::f32::consts::PI {
        d += std::f32::consts::TAU;
    }
    d
}

fn heading(yaw: f32) -> Vec2 {
    Vec2::new(yaw.sin(), yaw.cos())
}

/// Desired future root samples at the output offsets: a constant-curvature
/// arc that turns from the current facing onto the target heading within
/// `turn_time`, then continues straight.
pub fn desired_trajectory(
    current: TrajectorySample,
    control: &ControlInput,
    cfg: &TrajectoryConfig,
    fps: f32,
) -> [TrajectorySample; 6] {
    let speed = cfg.speed(control);
    let yaw0 = current.direction.x.atan2(current.direction.y);
    let target = Vec2::from(control.target_direction_xz);
    let turn = if speed > 0.0 {
        signed_angle(current.direction, target)
    } else {
        0.0
    };
    let turn_frames = (cfg.turn_time * fps).max(1.0);
    let yaw_at = |f: f32| yaw0 + turn * (f / turn_frames).min(1.0);
    let mut out = [current; 6];
    let mut pos = current.position;
    let mut frame = 0;
    for (k, off) in OUTPUT_OFFSETS.iter().enumerate() {
        // the previous step predicted these offsets counted from this frame
        while frame < *off {
            frame += 1;
            let mid = yaw_at(frame as f32 - 0.5);
            pos += heading(mid) * speed / fps;
        }
        out[k] = TrajectorySample {
            position: pos,
            direction: heading(yaw_at(frame as f32)),
        };
    }
    out
}

/// Weight of the user's path on future sample `k` (0 nearest, 5 farthest).
pub fn blend_weight(tau: f32, k: usize) -> f32 {
    tau.powf((6 - k) as f32 / 6.0)
}

fn mix(a: TrajectorySample, b: TrajectorySample, w: f32) -> TrajectorySample {
    let dir = a.direction * (1.0 - w) + b.direction * w;
    TrajectorySample {
        position: a.position * (1.0 - w) + b.position * w,
        direction: if dir.length() > 1e-6 { dir.normalize() } else { b.direction },
    }
}

/// Blends the predicted future with the desired one. All samples are in
/// world space; the result is returned for the output offsets.
pub fn blend_future(
    predicted: &[TrajectorySample; 6],
    desired: &[TrajectorySample; 6],
    tau: f32,
) -> [TrajectorySample; 6] {
    std::array::from_fn(|k| mix(predicted[k], desired[k], blend_weight(tau, k)))
}

/// Full twelve-sample input trajectory: six past samples from the history,
/// the current root and the first five blended future samples.
pub fn blend_user_trajectory(
    predicted: &[TrajectorySample; 6],
    history: &[TrajectorySample],
    current: TrajectorySample,
    control: &ControlInput,
    cfg: &TrajectoryConfig,
    fps: f32,
) -> [TrajectorySample; 12] {
    let desired = desired_trajectory(current, control, cfg, fps);
    let future = blend_future(predicted, &desired, cfg.responsiveness.clamp(f32::MIN_POSITIVE, 1.0));
    let n = history.len() as i32;
    std::array::from_fn(|k| {
        let off = INPUT_OFFSETS[k];
        match off.cmp(&0) {
            std::cmp::Ordering::Less => history[(n + off).max(0) as usize],
            std::cmp::Ordering::Equal => current,
            // a sample at +10 lines up with the previous step's first output
            std::cmp::Ordering::Greater => future[(off / 10 - 1) as usize],
        }
    })
}
