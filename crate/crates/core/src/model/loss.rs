use crate::error::{Error, Result};
use crate::motion::{output_layout, NormalizationStats, Skeleton};
use crate::nn::{BoneLossSpec, Scalar, Tape, Var, NORM_STABILIZER};

/// Where the joint positions sit in an output vector and which joint
/// pairs form bones.
#[derive(Debug, Clone, PartialEq)]
pub struct LossLayout {
    pub position_offset: usize,
    pub joints: usize,
    pub bones: Vec<(usize, usize)>,
}

impl LossLayout {
    pub fn for_skeleton(skeleton: &Skeleton) -> Self {
        LossLayout {
            position_offset: output_layout::JOINT_POS.start,
            joints: skeleton.len(),
            bones: skeleton.bones(),
        }
    }

    fn position_range(&self) -> std::ops::Range<usize> {
        self.position_offset..self.position_offset + 3 * self.joints
    }
}

fn bone_len(p: &[f32], a: usize, b: usize) -> f64 {
    let mut s = NORM_STABILIZER;
    for c in 0..3 {
        let d = p[3 * a + c] as f64 - p[3 * b + c] as f64;
        s += d * d;
    }
    s.sqrt()
}

/// `(mse, bone length loss)` of one prediction in output units.
pub fn compute_loss(z: &[f32], z_hat: &[f32], layout: &LossLayout) -> Result<(f64, f64)> {
    if z.len() != z_hat.len() || layout.position_range().end > z.len() || layout.bones.is_empty() {
        return Err(Error::shape(format!(
            "loss over {} and {} values with positions {:?}",
            z.len(),
            z_hat.len(),
            layout.position_range()
        )));
    }
    let mse = z
        .iter()
        .zip(z_hat)
        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
        .sum::<f64>()
        / z.len() as f64;
    let (p, q) = (&z[layout.position_range()], &z_hat[layout.position_range()]);
    let bll = layout
        .bones
        .iter()
        .map(|&(a, b)| (bone_len(p, a, b) - bone_len(q, a, b)).abs())
        .sum::<f64>()
        / layout.bones.len() as f64;
    Ok((mse, bll))
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub mse: Var,
    pub bone: Var,
}

/// Training loss on the tape: MSE between the standardised prediction and
/// the standardised target, plus the bone-length term on de-standardised
/// positions.
pub fn tape_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    z_raw: &[f32],
    norm: &NormalizationStats,
    layout: &LossLayout,
) -> Result<LossVars> {
    let width = norm.output_mean.len();
    if z_raw.len() % width != 0 {
        return Err(Error::shape("target batch is not a whole number of rows"));
    }
    let range = layout.position_range();
    let mut target = Vec::with_capacity(z_raw.len());
    let mut positions = Vec::with_capacity(z_raw.len() / width * range.len());
    for row in z_raw.chunks(width) {
        for (i, v) in row.iter().enumerate() {
            target.push(T::from_f64(((v - norm.output_mean[i]) / norm.output_std[i]) as f64));
        }
        positions.extend(row[range.clone()].iter().map(|v| T::from_f64(*v as f64)));
    }
    let spec = BoneLossSpec {
        bones: layout.bones.clone(),
        position_offset: range.start,
        scale: norm.output_std[range.clone()].iter().map(|v| T::from_f64(*v as f64)).collect(),
        shift: norm.output_mean[range].iter().map(|v| T::from_f64(*v as f64)).collect(),
    };
    let mse = tape.mse(pred, &target)?;
    let bone = tape.bone_length(pred, &positions, &spec)?;
    let total = tape.add(mse, bone)?;
    Ok(LossVars { total, mse, bone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{Skeleton, OUTPUT_DIM};

    #[test]
    fn perfect_prediction_is_zero() {
        let layout = LossLayout::for_skeleton(&Skeleton::humanoid());
        let z: Vec<f32> = (0..OUTPUT_DIM).map(|i| (i as f32 * 0.37).sin()).collect();
        assert_eq!(compute_loss(&z, &z, &layout).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn one_stretched_bone() {
        let sk = Skeleton::humanoid();
        let layout = LossLayout::for_skeleton(&sk);
        let mut z = vec![0f32; OUTPUT_DIM];
        // place every joint at its bind pose position
        let mut world = vec![glam::Vec3::ZERO; sk.len()];
        for (j, joint) in sk.joints().iter().enumerate() {
            world[j] = joint.parent.map_or(glam::Vec3::ZERO, |p| world[p]) + joint.offset;
            z[layout.position_offset + 3 * j..][..3].copy_from_slice(&world[j].to_array());
        }
        // stretch the bone into one leaf joint by delta along its own direction
        let (parent, child) = *layout
            .bones
            .iter()
            .find(|(_, c)| sk.joints().iter().all(|j| j.parent != Some(*c)))
            .unwrap();
        let dir = (world[child] - world[parent]).normalize();
        let delta = 0.05f32;
        let mut zh = z.clone();
        let moved = world[child] + dir * delta;
        zh[layout.position_offset + 3 * child..][..3].copy_from_slice(&moved.to_array());
        let (_, bll) = compute_loss(&z, &zh, &layout).unwrap();
        assert!((bll - delta as f64 / 24.0).abs() < 1e-7, "{bll}");
    }
}
