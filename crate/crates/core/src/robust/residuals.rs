//! Pixel residuals of the three families for a given `λ = λ₂₃/λ₁₂`.
//!
//! All residuals use the triplet-local poses of [`TripletFrame::poses`]
//! (camera 1 at the origin, unit first baseline).

use crate::geometry::{
    closest_points_between_lines, project_line, project_point, triangulate_line, triangulate_point_anchored,
    GlobalPose, Intrinsics,
};
use crate::robust::candidates::CandidateSet;
use crate::scale::{CoplanarPairHypothesis, LineTriplet, PointTriplet, ScaleError, TripletFrame};

/// Distance in camera 2 between the reprojections of the closest points of
/// `L_a` (views 1-2) and `L_b` (views 2-3). `+∞` when either closest point
/// lies behind camera 2.
pub fn coplanar_residual(h: &CoplanarPairHypothesis, lambda: f64, tf: &TripletFrame, k2: &Intrinsics) -> Result<f64, ScaleError> {
    let [p1, p2, p3] = tf.poses(lambda);
    let la = triangulate_line(&h.la.first.line, &h.la.second.line, &p1, &p2)?;
    let lb = triangulate_line(&h.lb.first.line, &h.lb.second.line, &p2, &p3)?;
    let (pab, pba) = closest_points_between_lines(&la, &lb)?;
    match (project_point(&pab, &p2), project_point(&pba, &p2)) {
        (Ok(a), Ok(b)) => Ok((k2.denormalize(&a) - k2.denormalize(&b)).norm()),
        _ => Ok(f64::INFINITY),
    }
}

/// A symmetrized residual: forward (reconstruct from 1-2, measure in 3) and
/// reverse (reconstruct from 2-3, measure in 1), in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricResidual {
    pub forward: f64,
    pub reverse: f64,
}

impl SymmetricResidual {
    /// Mean of both directions; `+∞` unless both are finite.
    pub fn value(&self) -> f64 {
        if self.forward.is_finite() && self.reverse.is_finite() {
            0.5 * (self.forward + self.reverse)
        } else {
            f64::INFINITY
        }
    }
}

fn point_one_way(anchor: &GlobalPose, other: &GlobalPose, target: &GlobalPose, pt: &PointTriplet, [ia, io, it]: [usize; 3], k: &Intrinsics) -> f64 {
    let Ok(p) = triangulate_point_anchored(&pt.points[ia], &pt.points[io], anchor, other) else {
        return f64::INFINITY;
    };
    match project_point(&p, target) {
        Ok(q) => (k.denormalize(&q) - pt.pixels[it]).norm(),
        Err(_) => f64::INFINITY,
    }
}

pub fn trifocal_point_residual(pt: &PointTriplet, lambda: f64, tf: &TripletFrame, k1: &Intrinsics, k3: &Intrinsics) -> SymmetricResidual {
    let [p1, p2, p3] = tf.poses(lambda);
    SymmetricResidual {
        forward: point_one_way(&p2, &p1, &p3, pt, [1, 0, 2], k3),
        reverse: point_one_way(&p2, &p3, &p1, pt, [1, 2, 0], k1),
    }
}

fn line_one_way(lt: &LineTriplet, poses: [&GlobalPose; 3], [ia, ib, it]: [usize; 3], k: &Intrinsics) -> f64 {
    let Ok(line) = triangulate_line(&lt.segments[ia].line, &lt.segments[ib].line, poses[ia], poses[ib]) else {
        return f64::INFINITY;
    };
    let Ok(l) = project_line(&line, poses[it]) else {
        return f64::INFINITY;
    };
    let seg = &lt.segments[it];
    0.5 * (k.pixel_distance_to_line(&l, &seg.a) + k.pixel_distance_to_line(&l, &seg.b))
}

/// Mean distance of the observed segment endpoints to the reprojected
/// infinite line, symmetrized over the swap of cameras 1 and 3.
pub fn trifocal_line_residual(lt: &LineTriplet, lambda: f64, tf: &TripletFrame, k1: &Intrinsics, k3: &Intrinsics) -> SymmetricResidual {
    let [p1, p2, p3] = tf.poses(lambda);
    let poses = [&p1, &p2, &p3];
    SymmetricResidual {
        forward: line_one_way(lt, poses, [0, 1, 2], k3),
        reverse: line_one_way(lt, poses, [1, 2, 0], k1),
    }
}

/// All residuals of a candidate set at one `λ`. Degenerate evaluations are `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualProfile {
    pub lambda: f64,
    pub coplanar_pairs: Vec<f64>,
    /// Per camera-2 line: smallest distance over its candidate partners.
    pub coplanar_lines: Vec<f64>,
    pub points: Vec<f64>,
    pub lines: Vec<f64>,
}

pub fn compute_profile(c: &CandidateSet, lambda: f64, tf: &TripletFrame) -> ResidualProfile {
    let [k1, k2, k3] = &c.intrinsics;
    let coplanar_pairs: Vec<f64> = c
        .coplanar
        .iter()
        .map(|h| coplanar_residual(h, lambda, tf, k2).unwrap_or(f64::INFINITY))
        .map(|d| if d.is_nan() { f64::INFINITY } else { d })
        .collect();
    let mut coplanar_lines = vec![f64::INFINITY; c.coplanar_lines.len()];
    for (d, &(a, b)) in coplanar_pairs.iter().zip(&c.coplanar_slots) {
        coplanar_lines[a] = coplanar_lines[a].min(*d);
        coplanar_lines[b] = coplanar_lines[b].min(*d);
    }
    let clean = |d: f64| if d.is_nan() { f64::INFINITY } else { d };
    ResidualProfile {
        lambda,
        coplanar_pairs,
        coplanar_lines,
        points: c.tri_points.iter().map(|p| clean(trifocal_point_residual(p, lambda, tf, k1, k3).value())).collect(),
        lines: c.tri_lines.iter().map(|l| clean(trifocal_line_residual(l, lambda, tf, k1, k3).value())).collect(),
    }
}
