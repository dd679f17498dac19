#![allow(dead_code)]

pub mod bifocal;
pub mod oracle;

use std::collections::BTreeMap;

use chainsfm::ba::{CoplanarPair, LineObservation, PointObservation};
use chainsfm::scale::{CoplanarPairHypothesis, LineMatch2V, LineTriplet, PointTriplet};
use chainsfm::synth::GroundTruth;
use chainsfm::{generate, BaProblem, Dataset, GlobalPose, Line3, SceneSpec, Vec2, Vec3};
use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_vector(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n < 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation(rng: &mut ChaCha8Rng, max_deg: f64) -> Rotation3<f64> {
    let axis = Unit::new_normalize(unit_vector(rng));
    Rotation3::from_axis_angle(&axis, rng.random_range(-max_deg..=max_deg).to_radians())
}

/// A refinement problem over the true structure of a synthetic scene, with
/// the scene's (possibly noisy) observations. Coplanar pairs join every two
/// lines of one plane that share an image.
pub struct TruthProblem {
    pub problem: BaProblem,
    pub dataset: Dataset,
    pub truth: GroundTruth,
    /// Cameras seeing both lines, for each coplanar pair.
    pub shared_views: Vec<usize>,
}

pub fn truth_problem(spec: &SceneSpec, with_lines: bool, with_coplanar: bool) -> TruthProblem {
    truth_problem_with_floor(spec, with_lines, with_coplanar, 0.0, 0.0)
}

/// Widest angle between the back-projected planes of a line's observations.
fn plane_spread_deg(gt: &GroundTruth, k: &chainsfm::Intrinsics, segs: &[(usize, Vec2, Vec2)]) -> f64 {
    let normals: Vec<Vec3> = segs
        .iter()
        .filter_map(|(cam, a, b)| {
            let l = chainsfm::HomoLine2::through(&k.normalize(a), &k.normalize(b))?;
            Some(gt.poses[*cam].plane_normal(&l).normalize())
        })
        .collect();
    let mut widest = 0.0f64;
    for (i, n) in normals.iter().enumerate() {
        for m in &normals[i + 1..] {
            widest = widest.max(n.cross(m).norm().min(1.0).asin().to_degrees());
        }
    }
    widest
}

/// As [`truth_problem`], but lines whose back-projected planes all meet
/// within `line_floor_deg` of parallel are left out, as the pipeline does.
pub fn truth_problem_with_floor(spec: &SceneSpec, with_lines: bool, with_coplanar: bool, line_floor_deg: f64, pair_floor_deg: f64) -> TruthProblem {
    let (d, gt) = generate(spec).unwrap();
    let mut point_obs = Vec::new();
    let mut point_ids = BTreeMap::new();
    for (&cam, owners) in &gt.point_owner {
        for (i, &p) in owners.iter().enumerate() {
            let n = point_ids.len();
            let id = *point_ids.entry(p).or_insert(n);
            point_obs.push(PointObservation { camera: cam, point: id, pixel: d.points[&cam][i] });
        }
    }
    let mut points = vec![Vec3::zeros(); point_ids.len()];
    for (&p, &id) in &point_ids {
        points[id] = gt.points[p].position;
    }

    let mut line_obs = Vec::new();
    let mut line_ids = BTreeMap::new();
    let mut seen: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    if with_lines {
        let mut segs: BTreeMap<usize, Vec<(usize, Vec2, Vec2)>> = BTreeMap::new();
        for (&cam, owners) in &gt.segment_owner {
            for (i, &l) in owners.iter().enumerate() {
                let s = &d.segments[&cam][i];
                segs.entry(l).or_default().push((cam, s.a, s.b));
            }
        }
        for (&cam, owners) in &gt.segment_owner {
            for (i, &l) in owners.iter().enumerate() {
                if line_floor_deg > 0.0 && plane_spread_deg(&gt, &spec.intrinsics, &segs[&l]) < line_floor_deg {
                    continue;
                }
                let n = line_ids.len();
                let id = *line_ids.entry(l).or_insert(n);
                let s = &d.segments[&cam][i];
                line_obs.push(LineObservation { camera: cam, line: id, a: s.a, b: s.b });
                seen.entry(id).or_default().push(cam);
            }
        }
    }
    let mut lines = vec![Line3::new(Unit::new_normalize(Vec3::x()), Vec3::zeros()); line_ids.len()];
    let mut owner_of = vec![0; line_ids.len()];
    for (&l, &id) in &line_ids {
        lines[id] = Line3::through(&gt.lines[l].start, &gt.lines[l].end).unwrap();
        owner_of[id] = l;
    }
    let mut coplanar = Vec::new();
    let mut shared_views = Vec::new();
    if with_coplanar {
        for a in 0..lines.len() {
            for b in a + 1..lines.len() {
                let (ta, tb) = (&gt.lines[owner_of[a]], &gt.lines[owner_of[b]]);
                if ta.plane.is_none() || ta.plane != tb.plane {
                    continue;
                }
                let sin = lines[a].direction.cross(&lines[b].direction).norm();
                if sin < pair_floor_deg.to_radians().sin() {
                    continue;
                }
                let shared = seen[&a].iter().filter(|c| seen[&b].contains(c)).count();
                coplanar.push(CoplanarPair { first: a, second: b });
                shared_views.push(shared);
            }
        }
    }
    let ks = vec![spec.intrinsics; gt.poses.len()];
    let problem = BaProblem::new(ks, gt.poses.clone(), points, lines, point_obs, line_obs, coplanar).unwrap();
    TruthProblem { problem, dataset: d, truth: gt, shared_views }
}

/// Rotates every camera but the first by `deg` about a random axis and moves
/// its center by `rel` of the first baseline in a random direction, keeping
/// the first baseline length.
pub fn perturb_poses(p: &BaProblem, rng: &mut ChaCha8Rng, deg: f64, rel: f64) -> BaProblem {
    let mut out = p.clone();
    let base = (p.poses[1].center - p.poses[0].center).norm();
    for i in 1..out.poses.len() {
        let pose = out.poses[i];
        let mut c = pose.center + unit_vector(rng) * rel * base;
        if i == 1 {
            let c0 = out.poses[0].center;
            c = c0 + (c - c0).normalize() * base;
        }
        let turn = Rotation3::from_axis_angle(&Unit::new_normalize(unit_vector(rng)), deg.to_radians());
        out.poses[i] = GlobalPose::from_center(turn * pose.rotation, c);
    }
    out
}

pub fn mean_center_error(poses: &[GlobalPose], truth: &[GlobalPose]) -> f64 {
    let e: Vec<Vec3> = poses.iter().map(|p| p.center).collect();
    let t: Vec<Vec3> = truth.iter().map(|p| p.center).collect();
    chainsfm::align_similarity(&e, &t).unwrap().mean_error()
}

/// Three cameras looking down +z with a random chain of baselines.
pub struct RandomTriplet {
    pub poses: [GlobalPose; 3],
    pub k: chainsfm::Intrinsics,
    pub frame: chainsfm::TripletFrame,
    pub ratio: f64,
}

pub fn random_triplet(rng: &mut ChaCha8Rng) -> RandomTriplet {
    let k = chainsfm::Intrinsics::new(700.0, 700.0, 512.0, 384.0, 1024.0, 768.0).unwrap();
    let wobble = |rng: &mut ChaCha8Rng| Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let c1 = Vec3::zeros();
    let c2 = c1 + (Vec3::x() + wobble(rng)) * rng.random_range(0.5..1.5);
    let c3 = c2 + (Vec3::x() + wobble(rng)) * rng.random_range(0.5..1.5);
    let poses = [c1, c2, c3].map(|c| GlobalPose::from_center(random_rotation(rng, 5.0), c));
    let rel = |a: usize, b: usize| chainsfm::RelativePose::between(a, b, &poses[a], &poses[b]).unwrap();
    let frame = chainsfm::TripletFrame::new(rel(0, 1), rel(1, 2)).unwrap();
    let ratio = (c3 - c2).norm() / (c2 - c1).norm();
    RandomTriplet { poses, k, frame, ratio }
}

impl RandomTriplet {
    /// A point in front of all three cameras, inside every image.
    pub fn visible_point(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let mid = (self.poses[0].center + self.poses[2].center) / 2.0;
            let p = mid + Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(4.0..8.0));
            if self.poses.iter().all(|c| self.pixel(c, &p).is_some_and(|x| self.k.inside(&x))) {
                return p;
            }
        }
    }

    pub fn pixel(&self, pose: &GlobalPose, p: &Vec3) -> Option<chainsfm::Vec2> {
        chainsfm::geometry::project_point(p, pose).ok().map(|h| self.k.denormalize(&h))
    }

    pub fn segment(&self, cam: usize, a: &Vec3, b: &Vec3, id: usize) -> Option<chainsfm::Segment2> {
        let (pa, pb) = (self.pixel(&self.poses[cam], a)?, self.pixel(&self.poses[cam], b)?);
        chainsfm::Segment2::new(pa, pb, &self.k, id).ok()
    }

    /// Two lines of one random plane, the first seen in views 1-2 and the
    /// second in views 2-3. `None` when a segment leaves an image.
    pub fn coplanar_pair(&self, g: &mut ChaCha8Rng) -> Option<CoplanarPairHypothesis> {
        let o = self.visible_point(g);
        let n = unit_vector(g);
        let e1 = n.cross(&Vec3::new(0.3, 1.0, 0.2)).normalize();
        let e2 = n.cross(&e1);
        let mut ends = || {
            let a = o + e1 * g.random_range(-1.0..1.0) + e2 * g.random_range(-1.0..1.0);
            let b = o + e1 * g.random_range(-1.0..1.0) + e2 * g.random_range(-1.0..1.0);
            (a, b)
        };
        let (a1, a2) = ends();
        let (b1, b2) = ends();
        let la = LineMatch2V { first: self.segment(0, &a1, &a2, 0)?, second: self.segment(1, &a1, &a2, 1)?, ids: [0, 0] };
        let lb = LineMatch2V { first: self.segment(1, &b1, &b2, 1)?, second: self.segment(2, &b1, &b2, 2)?, ids: [1, 1] };
        Some(CoplanarPairHypothesis { la, lb })
    }

    pub fn line_triplet(&self, g: &mut ChaCha8Rng) -> Option<LineTriplet> {
        let (a, b) = (self.visible_point(g), self.visible_point(g));
        let segments = [self.segment(0, &a, &b, 0)?, self.segment(1, &a, &b, 1)?, self.segment(2, &a, &b, 2)?];
        Some(LineTriplet { segments, ids: [0; 3] })
    }

    pub fn point_triplet(&self, g: &mut ChaCha8Rng) -> PointTriplet {
        let p = self.visible_point(g);
        let px = [0, 1, 2].map(|i| self.pixel(&self.poses[i], &p).unwrap());
        PointTriplet::new(px, &[self.k; 3], [0; 3])
    }
}

/// Largest row-wise deviation of a block Jacobian from central differences,
/// relative to `max(row amax, 1)`.
pub fn jacobian_error(p: &BaProblem, block: usize, stage: chainsfm::Stage) -> f64 {
    let n = p.parameter_count(stage);
    let (globals, _, j) = p.block_jacobian(p.blocks()[block], stage);
    let at = |q: &BaProblem| {
        let r = q.residuals();
        [r[2 * block], r[2 * block + 1]]
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (c, &gi) in globals.iter().enumerate() {
        let mut step = vec![0.0; n];
        step[gi] = h;
        let plus = at(&p.retract(&step, stage));
        step[gi] = -h;
        let minus = at(&p.retract(&step, stage));
        for r in 0..2 {
            let fd = (plus[r] - minus[r]) / (2.0 * h);
            worst = worst.max((j[(r, c)] - fd).abs() / j.row(r).amax().max(1.0));
        }
    }
    worst
}
