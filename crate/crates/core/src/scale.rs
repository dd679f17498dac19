//! Scale ratio of two bifocal calibrations sharing a middle camera.
//!
//! For a triplet of successive cameras 1-2-3 with known relative poses
//! `(R₁₂, t̂₁₂)` and `(R₂₃, t̂₂₃)`, every function here returns a candidate for
//! `λ₂₃ / λ₁₂`, the ratio of the baselines `‖C₃ − C₂‖ / ‖C₂ − C₁‖`. A
//! candidate comes either from a single pair of lines assumed coplanar (one
//! seen in views 1-2, the other in views 2-3) or from a single point or line
//! tracked over the three views.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    triangulate_line, triangulate_point_anchored, undirected_angle_deg, GeometryError, GlobalPose,
    HomoLine2, HomoPoint2, Intrinsics, RelativePose, Segment2, Vec2, Vec3,
};
use crate::poly::quadratic_roots;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneracyReason {
    /// A 3D direction could not be recovered (back-projected planes parallel).
    UndefinedDirection,
    /// The two lines are too close to parallel to span a plane.
    ParallelLines,
    /// A viewing ray from camera 2 lies in the plane back-projected from the other view.
    RayInViewPlane,
    /// A viewing ray from camera 2 grazes the hypothesized plane.
    RayParallelToPlane,
    /// A baseline lies in the plane back-projected from the other view.
    BaselineInViewPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ScaleError {
    #[error("degenerate configuration: {0:?}")]
    DegenerateConfiguration(DegeneracyReason),
    #[error("angle minimizer has no finite minimizer")]
    DegenerateMinimizer,
    #[error("forward and reverse ratios disagree in sign")]
    InconsistentSign,
    #[error("cameras do not form a chain triplet")]
    NotATriplet,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Angular thresholds guarding the ratio formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    /// Factors closer than this to vanishing (as an angle) are rejected.
    pub degeneracy_floor_deg: f64,
    /// Minimum angle between the 3D directions of a coplanar pair.
    pub parallel_floor_deg: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self { degeneracy_floor_deg: 1.0, parallel_floor_deg: 15.0 }
    }
}

/// Relative poses of three successive cameras, with exact inverses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletFrame {
    pub rel12: RelativePose,
    pub rel21: RelativePose,
    pub rel23: RelativePose,
    pub rel32: RelativePose,
}

impl TripletFrame {
    pub fn new(rel12: RelativePose, rel23: RelativePose) -> Result<Self, ScaleError> {
        if rel12.to != rel23.from || rel12.from == rel23.to {
            return Err(ScaleError::NotATriplet);
        }
        Ok(Self { rel21: rel12.inverse(), rel32: rel23.inverse(), rel12, rel23 })
    }

    pub fn cameras(&self) -> [usize; 3] {
        [self.rel12.from, self.rel12.to, self.rel23.to]
    }

    /// Poses with camera 1 at the origin, `λ₁₂ = 1` and `λ₂₃ = lambda`.
    pub fn poses(&self, lambda: f64) -> [GlobalPose; 3] {
        chain_poses(&self.rel12, &self.rel23, lambda)
    }

    /// Rotations only, camera 1 at identity.
    pub fn rotations(&self) -> [Rotation3<f64>; 3] {
        let r2 = self.rel12.rotation;
        [Rotation3::identity(), r2, self.rel23.rotation * r2]
    }
}

/// Poses of cameras a, b, c with a at the origin, `λ_ab = 1`, `λ_bc = lambda`.
fn chain_poses(ab: &RelativePose, bc: &RelativePose, lambda: f64) -> [GlobalPose; 3] {
    let pa = GlobalPose::identity();
    let rb = ab.rotation;
    let pb = GlobalPose::from_translation(rb, ab.direction.into_inner());
    let rc = bc.rotation * rb;
    let cc = pb.center - rc.inverse() * (bc.direction.into_inner() * lambda);
    [pa, pb, GlobalPose::from_center(rc, cc)]
}

/// A line match between cameras (1, 2) or (2, 3) of a triplet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMatch2V {
    pub first: Segment2,
    pub second: Segment2,
    /// Segment indices in the two images.
    pub ids: [usize; 2],
}

/// Hypothesis that `la` (views 1-2) and `lb` (views 2-3) lie in one 3D plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoplanarPairHypothesis {
    pub la: LineMatch2V,
    pub lb: LineMatch2V,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineTriplet {
    pub segments: [Segment2; 3],
    pub ids: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTriplet {
    pub pixels: [Vec2; 3],
    pub points: [HomoPoint2; 3],
    pub ids: [usize; 3],
}

impl PointTriplet {
    pub fn new(pixels: [Vec2; 3], intrinsics: &[Intrinsics; 3], ids: [usize; 3]) -> Self {
        let points = [0, 1, 2].map(|i| intrinsics[i].normalize(&pixels[i]));
        Self { pixels, points, ids }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    CoplanarPair,
    TrifocalPoint,
    TrifocalLine,
}

/// Which candidate produced a hypothesis: its family and index in that family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: FeatureKind,
    pub index: usize,
}

/// A candidate ratio. Coplanar pairs yield `λ₂₃/λ₂₁`, trifocal features the
/// symmetrized `τ`; both equal `λ₂₃/λ₁₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleHypothesis {
    pub ratio: f64,
    pub provenance: Provenance,
}

impl ScaleHypothesis {
    /// Negative ratios place camera 3 on the wrong side; they are kept as
    /// hypotheses but cannot be chained.
    pub fn is_negative(&self) -> bool {
        self.ratio < 0.0
    }
}

fn check_factor(x: f64, nx: f64, ny: f64, floor_deg: f64, why: DegeneracyReason) -> Result<(), ScaleError> {
    let c = x.abs() / (nx * ny);
    if !(c >= floor_deg.to_radians().sin()) {
        return Err(ScaleError::DegenerateConfiguration(why));
    }
    Ok(())
}

/// Ratio `λ₂₃/λ₂₁` from one coplanar line pair.
///
/// The sample points on the camera-2 observations are the feet of the
/// perpendiculars from the principal point, so the result depends on the
/// supporting lines only, never on segment endpoints.
pub fn coplanar_scale_ratio(
    h: &CoplanarPairHypothesis,
    tf: &TripletFrame,
    cfg: &ScaleConfig,
) -> Result<f64, ScaleError> {
    use DegeneracyReason::*;
    let [r1, r2, r3] = tf.rotations();
    let la1 = h.la.first.line.as_vector();
    let la2 = h.la.second.line.as_vector();
    let lb2 = h.lb.first.line.as_vector();
    let lb3 = h.lb.second.line.as_vector();

    let da = (r1.inverse() * la1).cross(&(r2.inverse() * la2));
    let db = (r2.inverse() * lb2).cross(&(r3.inverse() * lb3));
    let floor = crate::geometry::PARALLEL_FLOOR_DEG.to_radians().sin();
    if da.norm() < floor || db.norm() < floor {
        return Err(ScaleError::DegenerateConfiguration(UndefinedDirection));
    }
    if undirected_angle_deg(&da, &db) < cfg.parallel_floor_deg {
        return Err(ScaleError::DegenerateConfiguration(ParallelLines));
    }
    let n = da.cross(&db).normalize();

    let pa2 = *h.la.second.line.foot_from_origin().as_vector();
    let pb2 = *h.lb.first.line.foot_from_origin().as_vector();
    let ray_a = r2.inverse() * pa2;
    let ray_b = r2.inverse() * pb2;
    let pa_in1 = tf.rel21.rotation * pa2;
    let pb_in3 = tf.rel23.rotation * pb2;
    let t21 = tf.rel21.direction.into_inner();
    let t23 = tf.rel23.direction.into_inner();

    let num1 = lb3.dot(&pb_in3);
    let num2 = n.dot(&ray_a);
    let num3 = la1.dot(&t21);
    let den1 = la1.dot(&pa_in1);
    let den2 = n.dot(&ray_b);
    let den3 = lb3.dot(&t23);

    let f = cfg.degeneracy_floor_deg;
    check_factor(den1, 1.0, pa_in1.norm(), f, RayInViewPlane)?;
    check_factor(num1, 1.0, pb_in3.norm(), f, RayInViewPlane)?;
    check_factor(den2, 1.0, ray_b.norm(), f, RayParallelToPlane)?;
    check_factor(num2, 1.0, ray_a.norm(), f, RayParallelToPlane)?;
    check_factor(den3, 1.0, 1.0, f, BaselineInViewPlane)?;
    check_factor(num3, 1.0, 1.0, f, BaselineInViewPlane)?;

    Ok((num1 * num2 * num3) / (den1 * den2 * den3))
}

/// `‖u × (v + λw)‖ / (‖u‖ ‖v + λw‖)`, the sine of the angle between `u` and `v + λw`.
pub fn angle_objective(u: &Vec3, v: &Vec3, w: &Vec3, lambda: f64) -> f64 {
    let x = v + w * lambda;
    u.cross(&x).norm() / (u.norm() * x.norm())
}

/// The real `λ` minimizing [`angle_objective`].
///
/// The derivative of the squared cosine has a cubic numerator whose leading
/// term cancels; the remaining quadratic is solved and the objective compared
/// at its real roots. When none of them beats the limit at `λ → ±∞` there is
/// no finite minimizer.
pub fn quadratic_angle_minimizer(u: &Vec3, v: &Vec3, w: &Vec3, floor_deg: f64) -> Result<f64, ScaleError> {
    let (nu, nw) = (u.norm(), w.norm());
    if !(nu > 1e-12 && nw > 1e-12) {
        return Err(ScaleError::DegenerateMinimizer);
    }
    let limit = u.cross(w).norm() / (nu * nw);
    if !(limit >= floor_deg.to_radians().sin()) {
        return Err(ScaleError::DegenerateMinimizer);
    }
    let a = u.dot(v);
    let b = u.dot(w);
    let vv = v.dot(v);
    let vw = v.dot(w);
    let ww = w.dot(w);
    // d/dλ of (a + bλ)² / ‖v + λw‖² vanishes where (a + bλ)(c0 + c1 λ) = 0
    let c0 = b * vv - a * vw;
    let c1 = b * vw - a * ww;
    let roots = quadratic_roots(b * c1, a * c1 + b * c0, a * c0);

    let mut best: Option<(f64, f64)> = None;
    for r in roots {
        let f = angle_objective(u, v, w, r);
        if !f.is_finite() {
            continue;
        }
        if best.map_or(true, |(_, bf)| f < bf) {
            best = Some((r, f));
        }
    }
    match best {
        Some((r, f)) if f < limit => Ok(r),
        _ => Err(ScaleError::DegenerateMinimizer),
    }
}

/// Forward and reverse estimates of a trifocal ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricRatio {
    /// `τ₁₂₃ = λ₂₃/λ₁₂`, reconstructing from views 1-2 and fitting view 3.
    pub forward: f64,
    /// `τ₃₂₁ = λ₂₁/λ₃₂`, reconstructing from views 3-2 and fitting view 1.
    pub reverse: f64,
}

impl SymmetricRatio {
    /// `(τ₁₂₃ + 1/τ₃₂₁) / 2`.
    pub fn tau(&self) -> Result<f64, ScaleError> {
        if self.forward == 0.0 || self.reverse == 0.0 {
            return Err(ScaleError::DegenerateMinimizer);
        }
        let inv = 1.0 / self.reverse;
        if self.forward.signum() != inv.signum() {
            return Err(ScaleError::InconsistentSign);
        }
        Ok(0.5 * (self.forward + inv))
    }
}

fn point_ratio_one_way(
    pa: &HomoPoint2,
    pb: &HomoPoint2,
    pc: &HomoPoint2,
    ab: &RelativePose,
    bc: &RelativePose,
    floor_deg: f64,
) -> Result<f64, ScaleError> {
    let [pose_a, pose_b, pose_c] = chain_poses(ab, bc, 0.0);
    let p = triangulate_point_anchored(pb, pa, &pose_b, &pose_a)?;
    let v = pose_c.rotation * (p - pose_b.center);
    let w = bc.direction.into_inner();
    quadratic_angle_minimizer(pc.as_vector(), &v, &w, floor_deg)
}

fn line_ratio_one_way(
    la: &HomoLine2,
    lb: &HomoLine2,
    lc: &HomoLine2,
    ab: &RelativePose,
    bc: &RelativePose,
    floor_deg: f64,
) -> Result<f64, ScaleError> {
    let [pose_a, pose_b, pose_c] = chain_poses(ab, bc, 0.0);
    let line = triangulate_line(la, lb, &pose_a, &pose_b)?;
    let d = line.direction.into_inner();
    let rc = pose_c.rotation;
    // unit direction from C_b towards C_c, world frame
    let e = -(rc.inverse() * bc.direction.into_inner());
    if d.cross(&e).norm() < floor_deg.to_radians().sin() {
        return Err(ScaleError::DegenerateMinimizer);
    }
    let v = rc * d.cross(&(line.point - pose_b.center));
    let w = -(rc * d.cross(&e));
    quadratic_angle_minimizer(lc.as_vector(), &v, &w, floor_deg)
}

pub fn trifocal_point_ratios(pt: &PointTriplet, tf: &TripletFrame, cfg: &ScaleConfig) -> Result<SymmetricRatio, ScaleError> {
    let [p1, p2, p3] = &pt.points;
    let f = cfg.degeneracy_floor_deg;
    Ok(SymmetricRatio {
        forward: point_ratio_one_way(p1, p2, p3, &tf.rel12, &tf.rel23, f)?,
        reverse: point_ratio_one_way(p3, p2, p1, &tf.rel32, &tf.rel21, f)?,
    })
}

pub fn trifocal_point_ratio(pt: &PointTriplet, tf: &TripletFrame, cfg: &ScaleConfig) -> Result<f64, ScaleError> {
    trifocal_point_ratios(pt, tf, cfg)?.tau()
}

pub fn trifocal_line_ratios(lt: &LineTriplet, tf: &TripletFrame, cfg: &ScaleConfig) -> Result<SymmetricRatio, ScaleError> {
    let [l1, l2, l3] = lt.segments.map(|s| s.line);
    let f = cfg.degeneracy_floor_deg;
    Ok(SymmetricRatio {
        forward: line_ratio_one_way(&l1, &l2, &l3, &tf.rel12, &tf.rel23, f)?,
        reverse: line_ratio_one_way(&l3, &l2, &l1, &tf.rel32, &tf.rel21, f)?,
    })
}

pub fn trifocal_line_ratio(lt: &LineTriplet, tf: &TripletFrame, cfg: &ScaleConfig) -> Result<f64, ScaleError> {
    trifocal_line_ratios(lt, tf, cfg)?.tau()
}
