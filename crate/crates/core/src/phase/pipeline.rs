use glam::Vec3;
use serde::{Deserialize, Serialize};

use super::{
    condition_source, contact_source, fit_sinusoid, joint_contacts, pca_source, phase_features,
    ButterworthSpec, ContactTrack, FitConfig, PhaseTrack, SourceOrigin, SourceSeries, DEFAULT_D_MAX,
    DEFAULT_V_MAX,
};
use crate::error::Result;
use crate::motion::{
    clip_bases, finite_difference, phase_channel_name, AuxChannel, Basis, EndEffector, MotionClip,
    CONTACT_CHANNEL,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub d_max: f32,
    pub v_max: f32,
    pub window_s: f64,
    pub filter: ButterworthSpec,
    pub fit: FitConfig,
    /// Source per end effector (hands, then feet).
    pub modes: [SourceOrigin; 4],
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            d_max: DEFAULT_D_MAX,
            v_max: DEFAULT_V_MAX,
            window_s: 1.0,
            filter: ButterworthSpec::default(),
            fit: FitConfig::default(),
            modes: [
                SourceOrigin::Pca,
                SourceOrigin::Pca,
                SourceOrigin::Contact,
                SourceOrigin::Contact,
            ],
        }
    }
}

/// Everything computed for one bone, kept for plotting.
#[derive(Debug, Clone)]
pub struct BonePhase {
    pub source: SourceSeries,
    pub conditioned: SourceSeries,
    pub track: PhaseTrack,
}

#[derive(Debug, Clone)]
pub struct ClipPhases {
    pub bones: [BonePhase; 4],
    pub contacts: [ContactTrack; 2],
}

fn local_track(clip: &MotionClip, bases: &[Basis], joint: usize) -> Vec<Vec3> {
    clip.frames
        .iter()
        .zip(bases)
        .map(|(f, b)| b.to_local_point(f.positions[joint]))
        .collect()
}

/// Phase of a single bone from the chosen source.
pub fn extract_bone_phase(clip: &MotionClip, joint: usize, mode: SourceOrigin, cfg: &PhaseConfig) -> Result<BonePhase> {
    let bases = clip_bases(clip)?;
    bone_phase_with(clip, &bases, joint, mode, cfg)
}

fn bone_phase_with(
    clip: &MotionClip,
    bases: &[Basis],
    joint: usize,
    mode: SourceOrigin,
    cfg: &PhaseConfig,
) -> Result<BonePhase> {
    let fps = clip.fps as f64;
    let local = local_track(clip, bases, joint);
    let source = match mode {
        SourceOrigin::Contact => contact_source(&joint_contacts(clip, joint, cfg.d_max, cfg.v_max), joint),
        SourceOrigin::Pca => pca_source(&local, Vec3::Z, joint)?,
    };
    let conditioned = condition_source(&source, fps, cfg.window_s, &cfg.filter)?;
    let mut track = fit_sinusoid(&conditioned.values, fps, &cfg.fit, joint);
    let vel = finite_difference(&local, clip.fps);
    phase_features(&mut track, &vel, fps);
    Ok(BonePhase {
        source,
        conditioned,
        track,
    })
}

pub fn extract_clip_phases(clip: &MotionClip, cfg: &PhaseConfig) -> Result<ClipPhases> {
    let bases = clip_bases(clip)?;
    let ee = clip.skeleton.end_effectors();
    let mut bones = Vec::with_capacity(4);
    for e in EndEffector::ALL {
        bones.push(bone_phase_with(clip, &bases, ee[e.index()], cfg.modes[e.index()], cfg)?);
    }
    let feet = clip.skeleton.feet();
    let contacts = [
        joint_contacts(clip, feet[0], cfg.d_max, cfg.v_max),
        joint_contacts(clip, feet[1], cfg.d_max, cfg.v_max),
    ];
    Ok(ClipPhases {
        bones: bones.try_into().unwrap_or_else(|_| unreachable!()),
        contacts,
    })
}

/// Stores phase features and contact labels as auxiliary channels.
pub fn annotate_clip(clip: &mut MotionClip, phases: &ClipPhases) -> Result<()> {
    for e in EndEffector::ALL {
        let t = &phases.bones[e.index()].track;
        clip.set_aux(AuxChannel {
            name: phase_channel_name(e),
            width: 2,
            values: t.feature.iter().flat_map(|v| [v[0] as f32, v[1] as f32]).collect(),
        })?;
    }
    let [l, r] = [phases.contacts[0].as_f32(), phases.contacts[1].as_f32()];
    clip.set_aux(AuxChannel {
        name: CONTACT_CHANNEL.into(),
        width: 2,
        values: l.iter().zip(&r).flat_map(|(a, b)| [*a, *b]).collect(),
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synth_gait, Annotations, StyleRecipe};

    #[test]
    fn annotations_round_trip_through_aux() {
        let mut clip = synth_gait(&StyleRecipe::default(), 300).unwrap().clip;
        let ph = extract_clip_phases(&clip, &PhaseConfig::default()).unwrap();
        annotate_clip(&mut clip, &ph).unwrap();
        let ann = Annotations::from_clip(&clip);
        let p = ann.phase_vector(100).unwrap();
        assert_eq!(p[4] as f64 as f32, ph.bones[2].track.feature[100][0] as f32);
        assert!(ann.contacts.is_some());
    }

    #[test]
    fn in_sync_and_opposed_arms_differ() {
        let same = StyleRecipe {
            hand_offset: [0.0, 0.0],
            ..Default::default()
        };
        let opposed = StyleRecipe {
            hand_offset: [std::f64::consts::PI, 0.0],
            ..Default::default()
        };
        let cfg = PhaseConfig::default();
        let a = extract_clip_phases(&synth_gait(&same, 400).unwrap().clip, &cfg).unwrap();
        let b = extract_clip_phases(&synth_gait(&opposed, 400).unwrap().clip, &cfg).unwrap();
        let dphi = |p: &ClipPhases| {
            let d = p.bones[0].track.phi[200] - p.bones[1].track.phi[200];
            (d + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI
        };
        assert!(dphi(&a).abs() < 0.2, "{}", dphi(&a));
        assert!(dphi(&b).abs() > std::f64::consts::PI - 0.2, "{}", dphi(&b));
    }
}
