//! One-dimensional source functions from which phases are fitted.

use glam::Vec3;
use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ContactTrack;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceOrigin {
    Contact,
    Pca,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSeries {
    pub values: Vec<f64>,
    pub origin: SourceOrigin,
    pub bone: usize,
}

pub fn contact_source(track: &ContactTrack, bone: usize) -> SourceSeries {
    SourceSeries {
        values: track.values.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
        origin: SourceOrigin::Contact,
        bone,
    }
}

/// Ratio of the two largest covariance eigenvalues below which the principal
/// direction is considered ambiguous.
pub const DEGENERACY_RATIO: f64 = 1.05;

/// First principal direction of `positions` (centred, unscaled covariance),
/// directed so that its dot product with `forward` is non-negative. Returns
/// `None` for data without variance.
pub fn principal_direction(positions: &[Vec3], forward: Vec3) -> Option<Vec3> {
    let n = positions.len() as f64;
    let mean = positions.iter().fold(glam::DVec3::ZERO, |a, p| a + p.as_dvec3()) / n;
    let mut cov = Matrix3::<f64>::zeros();
    for p in positions {
        let d = p.as_dvec3() - mean;
        let v = nalgebra::Vector3::new(d.x, d.y, d.z);
        cov += v * v.transpose();
    }
    cov /= n;
    if cov.abs().max() < 1e-18 {
        return None;
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    let c = eig.eigenvectors.column(order[0]);
    let mut dir = glam::DVec3::new(c[0], c[1], c[2]).normalize();
    if l2 > 0.0 && l1 / l2 < DEGENERACY_RATIO {
        log::warn!("principal components are nearly degenerate ({l1:.3e} vs {l2:.3e})");
        // lexicographically positive before directing
        let first = [dir.x, dir.y, dir.z].into_iter().find(|v| v.abs() > 1e-12).unwrap_or(1.0);
        if first < 0.0 {
            dir = -dir;
        }
    }
    if dir.dot(forward.as_dvec3()) < 0.0 {
        dir = -dir;
    }
    Some(dir.as_vec3())
}

/// Centred positions projected onto the directed first principal component.
pub fn pca_source(positions: &[Vec3], forward: Vec3, bone: usize) -> Result<SourceSeries> {
    if positions.len() < 3 {
        return Err(Error::invalid("principal component source needs at least 3 frames"));
    }
    let values = match principal_direction(positions, forward) {
        None => vec![0.0; positions.len()],
        Some(dir) => {
            let n = positions.len() as f64;
            let mean = positions.iter().fold(glam::DVec3::ZERO, |a, p| a + p.as_dvec3()) / n;
            let d = dir.as_dvec3();
            positions.iter().map(|p| (p.as_dvec3() - mean).dot(d)).collect()
        }
    };
    Ok(SourceSeries {
        values,
        origin: SourceOrigin::Pca,
        bone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_oscillation_gives_sinusoid() {
        let amp = 0.3;
        let pos: Vec<Vec3> = (0..240)
            .map(|i| {
                let s = (std::f32::consts::TAU * i as f32 / 60.0).sin() * amp;
                Vec3::new(0.2, 1.0, s)
            })
            .collect();
        let s = pca_source(&pos, Vec3::Z, 0).unwrap();
        for (i, v) in s.values.iter().enumerate() {
            let expect = (std::f64::consts::TAU * i as f64 / 60.0).sin() * amp as f64;
            assert!((v - expect).abs() < 1e-5);
        }
        let r = pca_source(&pos, -Vec3::Z, 0).unwrap();
        for (a, b) in s.values.iter().zip(&r.values) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn static_bone_is_zero() {
        let s = pca_source(&[Vec3::ONE; 10], Vec3::Z, 0).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert!(pca_source(&[Vec3::ONE; 2], Vec3::Z, 0).is_err());
    }

    #[test]
    fn contact_square_wave() {
        let values: Vec<bool> = (0..120).map(|i| (i / 30) % 2 == 0).collect();
        let s = contact_source(&ContactTrack { values, d_max: 0.01, v_max: 0.15 }, 3);
        assert_eq!(s.values[0], 1.0);
        assert_eq!(s.values[30], 0.0);
        assert_eq!(s.values[60], 1.0);
    }
}
