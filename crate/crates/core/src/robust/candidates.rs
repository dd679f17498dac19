use std::collections::BTreeSet;

use crate::geometry::{undirected_angle_deg, Intrinsics, Segment2, Vec2, Vec3};
use crate::scale::{CoplanarPairHypothesis, LineMatch2V, LineTriplet, PointTriplet, TripletFrame};

/// Observations of one camera triplet, indexed per image.
#[derive(Debug, Clone)]
pub struct TripletFeatures {
    pub intrinsics: [Intrinsics; 3],
    pub segments: [Vec<Segment2>; 3],
    pub points: [Vec<Vec2>; 3],
    /// Segment index pairs matched in views (1, 2) and (2, 3).
    pub line_matches: [Vec<(usize, usize)>; 2],
    /// Point index pairs matched in views (1, 2) and (2, 3).
    pub point_matches: [Vec<(usize, usize)>; 2],
}

/// Everything scored for one triplet.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub intrinsics: [Intrinsics; 3],
    pub coplanar: Vec<CoplanarPairHypothesis>,
    pub tri_points: Vec<PointTriplet>,
    pub tri_lines: Vec<LineTriplet>,
    /// Camera-2 lines with a match in view 1 or 3.
    pub n_se2: usize,
    pub n_pt: usize,
    pub n_se: usize,
    /// Neighborhood size used to build the coplanar pairs.
    pub neighbors: usize,
    /// Camera-2 segment index of each line taking part in a coplanar pair.
    pub coplanar_lines: Vec<usize>,
    /// For each coplanar pair, the slots of its two lines in `coplanar_lines`.
    pub coplanar_slots: Vec<(usize, usize)>,
}

impl CandidateSet {
    /// A copy keeping only the given families; counts follow the kept lists.
    pub fn restricted(&self, coplanar: bool, points: bool, lines: bool) -> CandidateSet {
        let mut c = self.clone();
        if !coplanar {
            c.coplanar.clear();
            c.coplanar_lines.clear();
            c.coplanar_slots.clear();
            c.n_se2 = 0;
        }
        if !points {
            c.tri_points.clear();
            c.n_pt = 0;
        }
        if !lines {
            c.tri_lines.clear();
            c.n_se = 0;
        }
        c
    }

    pub fn is_empty(&self) -> bool {
        self.coplanar.is_empty() && self.tri_points.is_empty() && self.tri_lines.is_empty()
    }
}

/// 3D direction of a line match from rotations alone; `None` when the two
/// back-projected planes are parallel.
fn match_direction(l_first: &Vec3, l_second: &Vec3, r_first: &nalgebra::Rotation3<f64>, r_second: &nalgebra::Rotation3<f64>) -> Option<Vec3> {
    let d = (r_first.inverse() * l_first).cross(&(r_second.inverse() * l_second));
    let floor = crate::geometry::PARALLEL_FLOOR_DEG.to_radians().sin();
    (d.norm() >= floor).then_some(d)
}

/// The `n` entries of `others` nearest to `seg` in image 2, skipping the same
/// camera-2 segment. Ties break on index.
fn nearest(seg: usize, others: &[(usize, usize)], segs2: &[Segment2], n: usize, key: impl Fn(&(usize, usize)) -> usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = others
        .iter()
        .enumerate()
        .filter(|(_, m)| key(m) != seg)
        .map(|(j, m)| (segs2[seg].endpoint_distance(&segs2[key(m)]), j))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, j)| j).collect()
}

/// Builds the candidate sets of one triplet.
///
/// Every camera-2 segment matched towards one side is paired with its
/// `neighbors` closest segments (minimum endpoint distance, image 2) matched
/// towards the other side; pairs whose 3D directions are closer than
/// `parallel_floor_deg` are dropped. Trifocal features are all tracks
/// through camera 2.
pub fn build_candidates(f: &TripletFeatures, tf: &TripletFrame, neighbors: usize, parallel_floor_deg: f64) -> CandidateSet {
    let [r1, r2, r3] = tf.rotations();
    let m12 = &f.line_matches[0];
    let m23 = &f.line_matches[1];
    let segs = &f.segments;

    let n_se2 = m12.iter().map(|m| m.1).chain(m23.iter().map(|m| m.0)).collect::<BTreeSet<_>>().len();

    let dir12: Vec<Option<Vec3>> = m12
        .iter()
        .map(|&(s1, s2)| match_direction(segs[0][s1].line.as_vector(), segs[1][s2].line.as_vector(), &r1, &r2))
        .collect();
    let dir23: Vec<Option<Vec3>> = m23
        .iter()
        .map(|&(s2, s3)| match_direction(segs[1][s2].line.as_vector(), segs[2][s3].line.as_vector(), &r2, &r3))
        .collect();

    let mut pairs = BTreeSet::new();
    for (i, m) in m12.iter().enumerate() {
        for j in nearest(m.1, m23, &segs[1], neighbors, |x| x.0) {
            pairs.insert((i, j));
        }
    }
    for (j, m) in m23.iter().enumerate() {
        for i in nearest(m.0, m12, &segs[1], neighbors, |x| x.1) {
            pairs.insert((i, j));
        }
    }

    let mut coplanar = Vec::new();
    let mut pair_lines = Vec::new();
    for (i, j) in pairs {
        let (Some(da), Some(db)) = (dir12[i], dir23[j]) else { continue };
        if undirected_angle_deg(&da, &db) < parallel_floor_deg {
            continue;
        }
        let (s1, s2a) = m12[i];
        let (s2b, s3) = m23[j];
        coplanar.push(CoplanarPairHypothesis {
            la: LineMatch2V { first: segs[0][s1], second: segs[1][s2a], ids: [s1, s2a] },
            lb: LineMatch2V { first: segs[1][s2b], second: segs[2][s3], ids: [s2b, s3] },
        });
        pair_lines.push((s2a, s2b));
    }
    let coplanar_lines: Vec<usize> = pair_lines
        .iter()
        .flat_map(|&(a, b)| [a, b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let slot = |s: usize| coplanar_lines.binary_search(&s).expect("line registered");
    let coplanar_slots = pair_lines.iter().map(|&(a, b)| (slot(a), slot(b))).collect();

    let mut tri_lines = Vec::new();
    for &(s1, s2) in m12 {
        for &(t2, s3) in m23 {
            if s2 == t2 {
                tri_lines.push(LineTriplet { segments: [segs[0][s1], segs[1][s2], segs[2][s3]], ids: [s1, s2, s3] });
            }
        }
    }
    let mut tri_points = Vec::new();
    for &(p1, p2) in &f.point_matches[0] {
        for &(q2, p3) in &f.point_matches[1] {
            if p2 == q2 {
                let px = [f.points[0][p1], f.points[1][p2], f.points[2][p3]];
                tri_points.push(PointTriplet::new(px, &f.intrinsics, [p1, p2, p3]));
            }
        }
    }

    CandidateSet {
        intrinsics: f.intrinsics,
        n_pt: tri_points.len(),
        n_se: tri_lines.len(),
        coplanar,
        tri_points,
        tri_lines,
        n_se2,
        neighbors,
        coplanar_lines,
        coplanar_slots,
    }
}
