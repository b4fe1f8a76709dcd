use glam::Vec3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joints that take part in feature extraction.
pub const FEATURE_JOINTS: usize = 25;
/// Edges of the feature joint tree.
pub const BONES: usize = FEATURE_JOINTS - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent, metres.
    pub offset: Vec3,
}

/// End effectors in phase-channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EndEffector {
    LeftHand,
    RightHand,
    LeftFoot,
    RightFoot,
}

impl EndEffector {
    pub const ALL: [EndEffector; 4] = [
        EndEffector::LeftHand,
        EndEffector::RightHand,
        EndEffector::LeftFoot,
        EndEffector::RightFoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_foot(self) -> bool {
        matches!(self, EndEffector::LeftFoot | EndEffector::RightFoot)
    }

    pub fn mirrored(self) -> Self {
        match self {
            EndEffector::LeftHand => EndEffector::RightHand,
            EndEffector::RightHand => EndEffector::LeftHand,
            EndEffector::LeftFoot => EndEffector::RightFoot,
            EndEffector::RightFoot => EndEffector::LeftFoot,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            EndEffector::LeftHand => "l_hand",
            EndEffector::RightHand => "r_hand",
            EndEffector::LeftFoot => "l_foot",
            EndEffector::RightFoot => "r_foot",
        }
    }

    pub fn from_short_name(s: &str) -> Option<Self> {
        EndEffector::ALL.into_iter().find(|e| e.short_name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
    /// Left hand, right hand, left foot, right foot.
    end_effectors: [usize; 4],
}

impl Skeleton {
    pub fn new(joints: Vec<Joint>, end_effectors: [usize; 4]) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::invalid("skeleton has no joints"));
        }
        if joints[0].parent.is_some() {
            return Err(Error::invalid("joint 0 must be the root"));
        }
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "joint {i} ({}) must have a parent with a smaller index",
                        j.name
                    )))
                }
            }
        }
        if let Some(bad) = end_effectors.iter().find(|&&e| e >= joints.len()) {
            return Err(Error::invalid(format!("end effector index {bad} out of range")));
        }
        Ok(Skeleton {
            joints,
            end_effectors,
        })
    }

    /// Builds a skeleton and locates hands and feet from joint names.
    pub fn from_joints(joints: Vec<Joint>) -> Result<Self> {
        let find = |side: Side, part: &[&str]| {
            joints.iter().position(|j| {
                let (s, rest) = split_side(&j.name);
                s == Some(side) && part.iter().any(|p| rest.eq_ignore_ascii_case(p))
            })
        };
        let hands = ["hand", "wrist"];
        let feet = ["foot", "ankle"];
        let ee = [
            find(Side::Left, &hands),
            find(Side::Right, &hands),
            find(Side::Left, &feet),
            find(Side::Right, &feet),
        ];
        if ee.iter().any(Option::is_none) {
            return Err(Error::invalid(
                "could not identify left/right hand and foot joints by name",
            ));
        }
        Skeleton::new(joints, ee.map(Option::unwrap))
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.joints[j].parent
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn end_effectors(&self) -> [usize; 4] {
        self.end_effectors
    }

    pub fn end_effector(&self, e: EndEffector) -> usize {
        self.end_effectors[e.index()]
    }

    pub fn feet(&self) -> [usize; 2] {
        [self.end_effectors[2], self.end_effectors[3]]
    }

    /// (parent, child) joint pairs, one per non-root joint.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.parent.map(|p| (p, i)))
            .collect()
    }

    /// Resolves a user-facing bone name: a joint name or an end-effector alias
    /// such as `l_hand`.
    pub fn resolve(&self, name: &str) -> Option<usize> {
        EndEffector::from_short_name(name)
            .map(|e| self.end_effector(e))
            .or_else(|| self.joint_index(name))
    }

    pub fn check_feature_ready(&self) -> Result<()> {
        if self.joints.len() != FEATURE_JOINTS {
            return Err(Error::invalid(format!(
                "feature extraction needs {FEATURE_JOINTS} joints, skeleton has {}",
                self.joints.len()
            )));
        }
        Ok(())
    }

    /// Left/right partner of every joint; centre-line joints map to themselves.
    pub fn mirror_table(&self) -> Result<Vec<usize>> {
        let mut table = Vec::with_capacity(self.joints.len());
        let mut unmatched = Vec::new();
        for (i, j) in self.joints.iter().enumerate() {
            match mirror_name(&j.name) {
                None => table.push(i),
                Some(partner) => match self.joint_index(&partner) {
                    Some(p) => table.push(p),
                    None => {
                        unmatched.push(j.name.clone());
                        table.push(i);
                    }
                },
            }
        }
        if !unmatched.is_empty() {
            return Err(Error::UnmatchedJoints(unmatched));
        }
        Ok(table)
    }

    /// Keeps only `keep` (sorted ascending), re-parenting each joint to its
    /// nearest kept ancestor. Offsets are re-derived by the caller from
    /// world positions when needed; here they are summed along the removed
    /// chain, which is exact for rest poses.
    pub fn subset(&self, keep: &[usize]) -> Result<(Skeleton, Vec<usize>)> {
        if keep.first() != Some(&0) {
            return Err(Error::invalid("joint subset must keep the root"));
        }
        let mut remap = vec![usize::MAX; self.joints.len()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new;
        }
        let mut joints = Vec::with_capacity(keep.len());
        for &old in keep {
            let src = &self.joints[old];
            let mut offset = src.offset;
            let mut parent = src.parent;
            while let Some(p) = parent {
                if remap[p] != usize::MAX {
                    break;
                }
                offset += self.joints[p].offset;
                parent = self.joints[p].parent;
            }
            joints.push(Joint {
                name: src.name.clone(),
                parent: parent.map(|p| remap[p]),
                offset,
            });
        }
        let skel = Skeleton::from_joints(joints)?;
        Ok((skel, keep.to_vec()))
    }

    /// The 25-joint humanoid used by the procedural clip generator.
    /// Y is up, Z is forward, +X is the character's left.
    pub fn humanoid() -> Skeleton {
        let spec: [(&str, Option<usize>, [f32; 3]); FEATURE_JOINTS] = [
            ("Hips", None, [0.0, 0.9, 0.0]),
            ("Spine", Some(0), [0.0, 0.1, 0.0]),
            ("Spine1", Some(1), [0.0, 0.1, 0.0]),
            ("Spine2", Some(2), [0.0, 0.1, 0.0]),
            ("Spine3", Some(3), [0.0, 0.1, 0.0]),
            ("Spine4", Some(4), [0.0, 0.1, 0.0]),
            ("Neck", Some(5), [0.0, 0.08, 0.0]),
            ("Neck1", Some(6), [0.0, 0.05, 0.0]),
            ("Head", Some(7), [0.0, 0.08, 0.0]),
            ("LeftShoulder", Some(5), [0.08, 0.0, 0.0]),
            ("LeftArm", Some(9), [0.12, 0.0, 0.0]),
            ("LeftForeArm", Some(10), [0.0, -0.28, 0.0]),
            ("LeftHand", Some(11), [0.0, -0.26, 0.0]),
            ("RightShoulder", Some(5), [-0.08, 0.0, 0.0]),
            ("RightArm", Some(13), [-0.12, 0.0, 0.0]),
            ("RightForeArm", Some(14), [0.0, -0.28, 0.0]),
            ("RightHand", Some(15), [0.0, -0.26, 0.0]),
            ("LeftUpLeg", Some(0), [0.09, -0.06, 0.0]),
            ("LeftLeg", Some(17), [0.0, -0.42, 0.0]),
            ("LeftFoot", Some(18), [0.0, -0.42, 0.0]),
            ("LeftToeBase", Some(19), [0.0, 0.0, 0.12]),
            ("RightUpLeg", Some(0), [-0.09, -0.06, 0.0]),
            ("RightLeg", Some(21), [0.0, -0.42, 0.0]),
            ("RightFoot", Some(22), [0.0, -0.42, 0.0]),
            ("RightToeBase", Some(23), [0.0, 0.0, 0.12]),
        ];
        let joints = spec
            .iter()
            .map(|(n, p, o)| Joint {
                name: n.to_string(),
                parent: *p,
                offset: Vec3::from_array(*o),
            })
            .collect();
        Skeleton::new(joints, [12, 16, 19, 23]).expect("humanoid skeleton is valid")
    }

    /// Copy with rest offsets replaced (used by mirroring).
    pub(crate) fn with_offsets(&self, offsets: &[Vec3]) -> Skeleton {
        let mut s = self.clone();
        for (j, o) in s.joints.iter_mut().zip(offsets) {
            j.offset = *o;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

const SIDE_PREFIXES: [(&str, &str); 6] = [
    ("Left", "Right"),
    ("left", "right"),
    ("L_", "R_"),
    ("l_", "r_"),
    ("L", "R"),
    ("l", "r"),
];

/// Splits a side prefix off a joint name: `LeftHand -> (Left, "Hand")`.
fn split_side(name: &str) -> (Option<Side>, &str) {
    for (l, r) in SIDE_PREFIXES {
        for (prefix, side) in [(l, Side::Left), (r, Side::Right)] {
            if let Some(rest) = name.strip_prefix(prefix) {
                // single-letter prefixes only count before an upper-case letter
                let single = prefix.len() == 1;
                if !rest.is_empty()
                    && (!single || rest.chars().next().is_some_and(|c| c.is_ascii_uppercase()))
                {
                    return (Some(side), rest.trim_start_matches('_'));
                }
            }
        }
    }
    (None, name)
}

fn mirror_name(name: &str) -> Option<String> {
    for (l, r) in SIDE_PREFIXES {
        let single = l.len() == 1;
        let ok = |rest: &str| {
            !rest.is_empty() && (!single || rest.chars().next().is_some_and(|c| c.is_ascii_uppercase()))
        };
        if let Some(rest) = name.strip_prefix(l) {
            if ok(rest) {
                return Some(format!("{r}{rest}"));
            }
        }
        if let Some(rest) = name.strip_prefix(r) {
            if ok(rest) {
                return Some(format!("{l}{rest}"));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn humanoid_has_feature_layout() {
        let s = Skeleton::humanoid();
        assert_eq!(s.len(), FEATURE_JOINTS);
        assert_eq!(s.bones().len(), BONES);
        s.check_feature_ready().unwrap();
        assert_eq!(s.joints()[s.end_effector(EndEffector::LeftHand)].name, "LeftHand");
        assert_eq!(s.joints()[s.end_effector(EndEffector::RightFoot)].name, "RightFoot");
        assert_eq!(s.resolve("l_hand"), Some(12));
        let found = Skeleton::from_joints(s.joints().to_vec()).unwrap();
        assert_eq!(found.end_effectors(), s.end_effectors());
    }

    #[test]
    fn mirror_table_pairs_sides() {
        let s = Skeleton::humanoid();
        let t = s.mirror_table().unwrap();
        assert_eq!(t[0], 0);
        assert_eq!(s.joints()[t[12]].name, "RightHand");
        for (i, &m) in t.iter().enumerate() {
            assert_eq!(t[m], i);
        }
    }

    #[test]
    fn unmatched_side_joint_is_reported() {
        let mut joints = Skeleton::humanoid().joints().to_vec();
        joints[24].name = "RightToeEnd".into();
        let s = Skeleton::from_joints(joints).unwrap();
        match s.mirror_table() {
            Err(Error::UnmatchedJoints(names)) => {
                assert!(names.contains(&"LeftToeBase".to_string()));
                assert!(names.contains(&"RightToeEnd".to_string()));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_topology() {
        let joints = vec![
            Joint { name: "a".into(), parent: None, offset: Vec3::ZERO },
            Joint { name: "b".into(), parent: Some(2), offset: Vec3::ZERO },
            Joint { name: "c".into(), parent: Some(0), offset: Vec3::ZERO },
        ];
        assert!(Skeleton::new(joints, [0; 4]).is_err());
    }

    #[test]
    fn side_prefixes() {
        assert_eq!(mirror_name("LeftArm").as_deref(), Some("RightArm"));
        assert_eq!(mirror_name("r_wrist").as_deref(), Some("l_wrist"));
        assert_eq!(mirror_name("LHand").as_deref(), Some("RHand"));
        assert_eq!(mirror_name("Leg"), None);
        assert_eq!(mirror_name("Root"), None);
    }
}
