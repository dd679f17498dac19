//! Composition of scaled relative motions into global poses, and similarity
//! alignment of camera centers for evaluation.

use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{rotation_from_matrix, GlobalPose, RelativePose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ChainError {
    #[error("triplet {triplet} has a non-positive scale ratio {ratio}")]
    NegativeScale { triplet: usize, ratio: f64 },
    #[error("chain broken at {at}")]
    BrokenChain { at: usize },
    #[error("camera centers are collinear or coincident")]
    DegenerateAlignment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    #[default]
    Path,
    /// The last relative pose links the last camera back to the first.
    Cycle,
}

/// Relative motions between consecutive cameras and the ratio selected for
/// each triplet. Triplet `i` is the cameras at positions `i, i+1, i+2` (modulo
/// the camera count for cycles) and `ratios[i] = λ_{i+1,i+2} / λ_{i,i+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInput {
    pub topology: Topology,
    pub relposes: Vec<RelativePose>,
    pub ratios: Vec<Option<f64>>,
}

impl ChainInput {
    pub fn camera_count(&self) -> usize {
        match self.topology {
            Topology::Path => self.relposes.len() + 1,
            Topology::Cycle => self.relposes.len(),
        }
    }

    /// Number of ratios needed to place every camera.
    pub fn triplet_count(&self) -> usize {
        self.relposes.len().saturating_sub(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// One pose per camera in chain order; the first is the identity.
    pub poses: Vec<GlobalPose>,
    /// Baseline length of each consecutive pair, the first being 1.
    pub baselines: Vec<f64>,
    /// Distance between the first center and its prediction after walking the
    /// whole cycle. `None` for paths.
    pub closure_gap: Option<f64>,
}

impl ChainOutput {
    pub fn centers(&self) -> Vec<Vec3> {
        self.poses.iter().map(|p| p.center).collect()
    }
}

pub fn compose_chain(inp: &ChainInput) -> Result<ChainOutput, ChainError> {
    if inp.relposes.is_empty() {
        return Err(ChainError::BrokenChain { at: 0 });
    }
    for (i, w) in inp.relposes.windows(2).enumerate() {
        if w[0].to != w[1].from {
            return Err(ChainError::BrokenChain { at: i + 1 });
        }
    }
    if inp.topology == Topology::Cycle {
        let (first, last) = (&inp.relposes[0], &inp.relposes[inp.relposes.len() - 1]);
        if last.to != first.from || inp.relposes.len() < 3 {
            return Err(ChainError::BrokenChain { at: inp.relposes.len() - 1 });
        }
    }
    if inp.ratios.len() < inp.triplet_count() {
        return Err(ChainError::BrokenChain { at: inp.ratios.len() });
    }

    let mut baselines = vec![1.0];
    for i in 0..inp.triplet_count() {
        let r = inp.ratios[i].ok_or(ChainError::BrokenChain { at: i })?;
        if !r.is_finite() {
            return Err(ChainError::BrokenChain { at: i });
        }
        if r <= 0.0 {
            return Err(ChainError::NegativeScale { triplet: i, ratio: r });
        }
        baselines.push(baselines[i] * r);
    }

    let mut rotation = Rotation3::identity();
    let mut translation = Vec3::zeros();
    let mut poses = vec![GlobalPose::identity()];
    for (rel, lambda) in inp.relposes.iter().zip(&baselines) {
        rotation = rel.rotation * rotation;
        translation = rel.rotation * translation + rel.direction.into_inner() * *lambda;
        poses.push(GlobalPose::from_translation(rotation, translation));
    }
    let closure_gap = match inp.topology {
        Topology::Path => None,
        Topology::Cycle => {
            let predicted = poses.pop().expect("cycle has a closing pose");
            Some((predicted.center - poses[0].center).norm())
        }
    };
    Ok(ChainOutput { poses, baselines, closure_gap })
}

/// A similarity `x ↦ s R x + t` mapping estimated centers onto reference ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub scale: f64,
    pub rotation: Rotation3<f64>,
    pub translation: Vec3,
    pub errors: Vec<f64>,
}

impl Alignment {
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p * self.scale + self.translation
    }

    pub fn mean_error(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Least-squares similarity from `est` to `reference` (closed form through
/// the SVD of the cross-covariance). Two centers are aligned exactly.
pub fn align_similarity(est: &[Vec3], reference: &[Vec3]) -> Result<Alignment, ChainError> {
    let n = est.len();
    if n != reference.len() || n < 2 {
        return Err(ChainError::DegenerateAlignment);
    }
    let mean_e = est.iter().sum::<Vec3>() / n as f64;
    let mean_r = reference.iter().sum::<Vec3>() / n as f64;
    let spread_e: f64 = est.iter().map(|p| (p - mean_e).norm_squared()).sum::<f64>() / n as f64;
    if !(spread_e > 0.0) {
        return Err(ChainError::DegenerateAlignment);
    }

    let (scale, rotation) = if n == 2 {
        let de = est[1] - est[0];
        let dr = reference[1] - reference[0];
        let rotation = Rotation3::rotation_between(&de, &dr)
            .or_else(|| {
                // opposite directions: half turn about any perpendicular axis
                let axis = de.cross(&Vec3::x()).try_normalize(1e-12).or_else(|| de.cross(&Vec3::y()).try_normalize(1e-12))?;
                Some(Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), std::f64::consts::PI))
            })
            .ok_or(ChainError::DegenerateAlignment)?;
        (dr.norm() / de.norm(), rotation)
    } else {
        let mut cov = Matrix3::zeros();
        for (e, r) in est.iter().zip(reference) {
            cov += (r - mean_r) * (e - mean_e).transpose();
        }
        cov /= n as f64;
        let svd = cov.svd(true, true);
        let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
        let s = svd.singular_values;
        let mut order = [0, 1, 2];
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        if s[order[1]] <= 1e-12 * s[order[0]].max(f64::MIN_POSITIVE) {
            return Err(ChainError::DegenerateAlignment);
        }
        let mut d = Matrix3::identity();
        if (u.determinant() * v_t.determinant()) < 0.0 {
            d[(order[2], order[2])] = -1.0;
        }
        let r = u * d * v_t;
        let trace = (0..3).map(|i| s[i] * d[(i, i)]).sum::<f64>();
        let rotation = rotation_from_matrix(&r).map_err(|_| ChainError::DegenerateAlignment)?;
        (trace / spread_e, rotation)
    };
    let translation = mean_r - rotation * mean_e * scale;
    let mut a = Alignment { scale, rotation, translation, errors: Vec::new() };
    a.errors = est.iter().zip(reference).map(|(e, r)| (a.apply(e) - r).norm()).collect();
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Unit;

    fn rel(from: usize, to: usize, r: (f64, f64, f64), t: Vec3) -> RelativePose {
        RelativePose::new(from, to, Rotation3::from_euler_angles(r.0, r.1, r.2), Unit::new_normalize(t)).unwrap()
    }

    #[test]
    fn two_cameras_base_case() {
        let r = rel(0, 1, (0.1, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        let out = compose_chain(&ChainInput { topology: Topology::Path, relposes: vec![r], ratios: vec![] }).unwrap();
        assert_eq!(out.poses[0], GlobalPose::identity());
        assert_relative_eq!(out.poses[1].translation(), r.direction.into_inner(), epsilon = 1e-15);
        assert_eq!(out.poses[1].rotation, r.rotation);
    }

    #[test]
    fn three_cameras_ratio_two() {
        let relposes = vec![
            rel(0, 1, (0.02, -0.1, 0.0), Vec3::new(-1.0, 0.1, 0.0)),
            rel(1, 2, (0.0, 0.05, 0.1), Vec3::new(-1.0, 0.0, 0.2)),
        ];
        let out = compose_chain(&ChainInput { topology: Topology::Path, relposes, ratios: vec![Some(2.0)] }).unwrap();
        let c = out.centers();
        assert_relative_eq!((c[2] - c[1]).norm() / (c[1] - c[0]).norm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_and_missing_ratios() {
        let relposes = vec![
            rel(0, 1, (0.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)),
            rel(1, 2, (0.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.1)),
        ];
        let mut inp = ChainInput { topology: Topology::Path, relposes, ratios: vec![Some(-1.0)] };
        assert!(matches!(compose_chain(&inp), Err(ChainError::NegativeScale { triplet: 0, .. })));
        inp.ratios = vec![None];
        assert_eq!(compose_chain(&inp), Err(ChainError::BrokenChain { at: 0 }));
        inp.relposes[1].from = 5;
        inp.ratios = vec![Some(1.0)];
        assert_eq!(compose_chain(&inp), Err(ChainError::BrokenChain { at: 1 }));
    }

    #[test]
    fn alignment_identity_and_scale() {
        let gt = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0), Vec3::new(0.0, 1.0, 3.0)];
        let a = align_similarity(&gt, &gt).unwrap();
        assert_relative_eq!(a.scale, 1.0, epsilon = 1e-12);
        assert!(a.max_error() < 1e-12);
        let scaled: Vec<Vec3> = gt.iter().map(|p| p / 5.0).collect();
        let a = align_similarity(&scaled, &gt).unwrap();
        assert_relative_eq!(a.scale, 5.0, epsilon = 1e-12);
        assert!(a.max_error() < 1e-12);
    }

    #[test]
    fn alignment_rejects_collinear() {
        let est = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert_eq!(align_similarity(&est, &est), Err(ChainError::DegenerateAlignment));
        let two = vec![Vec3::zeros(), Vec3::x()];
        let gt = vec![Vec3::new(1.0, 1.0, 1.0), Vec3::new(1.0, 1.0, -2.0)];
        let a = align_similarity(&two, &gt).unwrap();
        assert!(a.max_error() < 1e-12);
        let flipped = vec![Vec3::x(), Vec3::zeros()];
        assert!(align_similarity(&flipped, &two).unwrap().max_error() < 1e-12);
    }
}
