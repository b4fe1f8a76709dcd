//! JSON messages exchanged with viewer clients, one per WebSocket text frame.

use serde::{Deserialize, Serialize};

use super::{ControlGait, ControlInput, Pose, StyleSelection};
use crate::error::{Error, Result};
use crate::motion::Skeleton;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Control {
        dir: [f32; 2],
        speed: f32,
        gait: ControlGait,
        /// Keeps the current style when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        style: Option<StyleSelection>,
    },
    ClaimControl,
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<ClientMessage> {
        let m: ClientMessage = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if let ClientMessage::Control { dir, speed, style, .. } = &m {
            if !(dir[0].is_finite() && dir[1].is_finite() && speed.is_finite()) {
                return Err(Error::invalid("control values must be finite"));
            }
            if let Some(s) = style {
                s.validate()?;
            }
        }
        Ok(m)
    }

    /// Control input this message asks for, falling back to `current` style.
    pub fn to_control(&self, current: &StyleSelection) -> Option<ControlInput> {
        match self {
            ClientMessage::Control { dir, speed, gait, style } => Some(ControlInput {
                target_direction_xz: *dir,
                target_speed: *speed,
                gait: *gait,
                style: style.clone().unwrap_or_else(|| current.clone()),
            }),
            ClientMessage::ClaimControl => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointInfo {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Controller,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleTelemetry {
    pub selection: StyleSelection,
    /// Gating weights over the experts.
    pub gating: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub tick: u64,
    /// Seconds since the session started.
    pub time: f64,
    /// Ground position and yaw (radians from +Z towards +X).
    pub root: [f32; 4],
    /// Position then rotation quaternion (x, y, z, w) per joint.
    pub joints: Vec<[f32; 7]>,
    pub contacts: [f32; 2],
    pub style_telemetry: StyleTelemetry,
}

impl PoseFrame {
    pub fn new(tick: u64, fps: f32, pose: &Pose, telemetry: StyleTelemetry) -> Self {
        let o = pose.root.origin;
        PoseFrame {
            tick,
            time: tick as f64 / fps as f64,
            root: [o.x, o.y, o.z, pose.root.yaw()],
            joints: pose
                .positions
                .iter()
                .zip(&pose.rotations)
                .map(|(p, q)| [p.x, p.y, p.z, q.x, q.y, q.z, q.w])
                .collect(),
            contacts: pose.contacts,
            style_telemetry: telemetry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        joints: Vec<JointInfo>,
        fps: f32,
        styles: Vec<String>,
        role: Role,
    },
    Pose(PoseFrame),
    Role {
        role: Role,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn hello(skeleton: &Skeleton, fps: f32, styles: Vec<String>, role: Role) -> Self {
        ServerMessage::Hello {
            joints: skeleton
                .joints()
                .iter()
                .map(|j| JointInfo {
                    name: j.name.clone(),
                    parent: j.parent,
                    offset: j.offset.to_array(),
                })
                .collect(),
            fps,
            styles,
            role,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error {
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_messages_parse() {
        let m = ClientMessage::parse(
            r#"{"type":"control","dir":[0,1],"speed":1.2,"gait":"walk","style":{"mode":"single","id":"proud"}}"#,
        )
        .unwrap();
        let c = m.to_control(&StyleSelection::single("x")).unwrap();
        assert_eq!(c.target_direction_xz, [0.0, 1.0]);
        assert_eq!(c.style, StyleSelection::single("proud"));
        let m = ClientMessage::parse(r#"{"type":"control","dir":[1,0],"speed":0,"gait":"idle"}"#).unwrap();
        assert_eq!(m.to_control(&StyleSelection::single("x")).unwrap().style, StyleSelection::single("x"));
        assert_eq!(ClientMessage::parse(r#"{"type":"claim_control"}"#).unwrap(), ClientMessage::ClaimControl);
    }

    #[test]
    fn malformed_messages_are_rejected() {
        for bad in [
            "not json",
            r#"{"type":"dance"}"#,
            r#"{"type":"control","dir":[0,1],"speed":1,"gait":"fly"}"#,
            r#"{"type":"control","dir":[0,1],"speed":1,"gait":"walk","style":{"mode":"triangle","ids":["a","b","c"],"lambda":[0.5,0.5,0.5]}}"#,
        ] {
            assert!(ClientMessage::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hello_lists_the_skeleton() {
        let sk = Skeleton::humanoid();
        let j = ServerMessage::hello(&sk, 60.0, vec!["a".into()], Role::Observer).to_json();
        let v: serde_json::Value = serde_json::from_str(&j).unwrap();
        assert_eq!(v["type"], "hello");
        assert_eq!(v["joints"].as_array().unwrap().len(), 25);
        let bones = v["joints"].as_array().unwrap().iter().filter(|j| !j["parent"].is_null()).count();
        assert_eq!(bones, 24);
    }
}
