use glam::{Quat, Vec3};

use super::{phase_channel_name, EndEffector, Frame, MotionClip, CONTACT_CHANNEL};
use crate::error::Result;

fn reflect(p: Vec3) -> Vec3 {
    Vec3::new(-p.x, p.y, p.z)
}

/// Conjugation by the x -> -x reflection.
fn reflect_rot(q: Quat) -> Quat {
    Quat::from_xyzw(q.x, -q.y, -q.z, q.w)
}

/// Reflects a clip across the x = 0 plane and swaps left/right joints and
/// annotations.
pub fn mirror_clip(clip: &MotionClip) -> Result<MotionClip> {
    let table = clip.skeleton.mirror_table()?;
    let offsets: Vec<Vec3> = table
        .iter()
        .map(|&p| reflect(clip.skeleton.joints()[p].offset))
        .collect();
    let skeleton = clip.skeleton.with_offsets(&offsets);
    let frames = clip
        .frames
        .iter()
        .map(|f| Frame {
            positions: table.iter().map(|&p| reflect(f.positions[p])).collect(),
            rotations: table.iter().map(|&p| reflect_rot(f.rotations[p])).collect(),
        })
        .collect();

    let mut aux = Vec::with_capacity(clip.aux.len());
    for a in &clip.aux {
        let partner = EndEffector::ALL
            .into_iter()
            .find(|e| phase_channel_name(*e) == a.name)
            .map(|e| phase_channel_name(e.mirrored()));
        let mut out = a.clone();
        if let Some(name) = partner {
            if let Some(src) = clip.aux(&name) {
                out.values = src.values.clone();
            }
        } else if a.name == CONTACT_CHANNEL && a.width == 2 {
            for pair in out.values.chunks_mut(2) {
                pair.swap(0, 1);
            }
        }
        aux.push(out);
    }

    Ok(MotionClip {
        skeleton,
        fps: clip.fps,
        frames,
        style: clip.style.clone(),
        gait: clip.gait,
        aux,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{clip_bases, synth_gait, AuxChannel, StyleRecipe};

    #[test]
    fn involution() {
        let s = synth_gait(&StyleRecipe::default(), 120).unwrap();
        let back = mirror_clip(&mirror_clip(&s.clip).unwrap()).unwrap();
        for (a, b) in s.clip.frames.iter().zip(&back.frames) {
            for (p, q) in a.positions.iter().zip(&b.positions) {
                assert!(p.distance(*q) < 1e-5);
            }
        }
        assert_eq!(back.skeleton, s.clip.skeleton);
    }

    #[test]
    fn raised_left_hand_becomes_right() {
        let r = StyleRecipe {
            hand_amplitude: [1.2, 0.0],
            hand_offset: [std::f64::consts::FRAC_PI_2, 0.0],
            ..StyleRecipe::idle()
        };
        let s = synth_gait(&r, 2).unwrap();
        let m = mirror_clip(&s.clip).unwrap();
        let ee = s.clip.skeleton.end_effectors();
        let (l, rr) = (ee[0], ee[1]);
        assert!(s.clip.frames[0].positions[l].y > s.clip.frames[0].positions[rr].y + 0.1);
        assert!(m.frames[0].positions[rr].y > m.frames[0].positions[l].y + 0.1);
    }

    #[test]
    fn turning_direction_flips() {
        let r = StyleRecipe {
            turn_rate: 0.5,
            ..Default::default()
        };
        let s = synth_gait(&r, 240).unwrap();
        let m = mirror_clip(&s.clip).unwrap();
        let yaw_change = |c: &MotionClip| {
            let b = clip_bases(c).unwrap();
            let a = b[200].yaw() - b[20].yaw();
            (a + std::f32::consts::PI).rem_euclid(std::f32::consts::TAU) - std::f32::consts::PI
        };
        let turn = yaw_change(&s.clip);
        assert!((turn - 0.5 * 3.0).abs() < 1e-3, "{turn}");
        assert!((yaw_change(&m) + turn).abs() < 1e-4);
        // same radius: path length per unit heading change is preserved
        let radius = |c: &MotionClip| {
            let b = clip_bases(c).unwrap();
            let chord = (b[200].origin - b[20].origin).length();
            chord / (2.0 * (turn.abs() / 2.0).sin())
        };
        assert!((radius(&s.clip) - radius(&m)).abs() < 1e-4);
        assert!((radius(&s.clip) - 1.2 / 0.5).abs() < 1e-3);
    }

    #[test]
    fn swaps_annotations() {
        let mut clip = synth_gait(&StyleRecipe::default(), 3).unwrap().clip;
        clip.set_aux(AuxChannel {
            name: CONTACT_CHANNEL.into(),
            width: 2,
            values: vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0],
        })
        .unwrap();
        for e in EndEffector::ALL {
            clip.set_aux(AuxChannel {
                name: phase_channel_name(e),
                width: 2,
                values: vec![e.index() as f32; 6],
            })
            .unwrap();
        }
        let m = mirror_clip(&clip).unwrap();
        assert_eq!(m.aux(CONTACT_CHANNEL).unwrap().values, vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(m.aux("phase.l_hand").unwrap().values[0], 1.0);
        assert_eq!(m.aux("phase.r_foot").unwrap().values[0], 2.0);
    }
}
