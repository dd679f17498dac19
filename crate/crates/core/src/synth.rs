//! Seeded synthetic scenes with exact ground truth.
//!
//! Each interior camera `b` of a triplet `a-b-c` gets its own structure in
//! front of it: planes carrying lines seen only in `a-b` or only in `b-c`,
//! points and free lines tracked over `a-b-c`, and clutter lines seen by one
//! pair. Everything is drawn from a per-triplet random stream, so a feature
//! family can be dropped on some triplets without changing the others.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Unit};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::Topology;
use crate::geometry::{GlobalPose, HomoLine2, Intrinsics, RelativePose, Segment2, Vec2, Vec3};
use crate::io::dataset::{Dataset, MatchList};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("infeasible scene: {0}")]
    InfeasibleSpec(String),
}

fn infeasible(msg: impl Into<String>) -> SynthError {
    SynthError::InfeasibleSpec(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Cameras along a gently curving path, all looking the same way.
    #[default]
    Path,
    /// Cameras on a circle looking outwards; the chain is a cycle.
    Ring,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    #[default]
    Full,
    RemoveTrifocalPoints,
    RemoveTrifocalLines,
    /// Only lines seen by two consecutive cameras remain.
    BifocalOnly,
}

impl OverlapMode {
    fn drops_points(self) -> bool {
        matches!(self, OverlapMode::RemoveTrifocalPoints | OverlapMode::BifocalOnly)
    }

    fn drops_lines(self) -> bool {
        matches!(self, OverlapMode::RemoveTrifocalLines | OverlapMode::BifocalOnly)
    }
}

/// Scene description, readable from TOML. Lengths are in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    pub cameras: usize,
    pub layout: Layout,
    /// Mean distance between consecutive cameras.
    pub baseline: f64,
    /// Relative spread of consecutive baselines.
    pub baseline_jitter: f64,
    /// Maximum random tilt of each camera, degrees.
    pub tilt_deg: f64,
    pub intrinsics: Intrinsics,
    /// Depth of the generated structure in front of the middle camera.
    pub depth_range: [f64; 2],
    pub planes_per_triplet: usize,
    /// Lines per plane, alternately seen by the first and the second pair.
    pub lines_per_plane: usize,
    pub plane_radius: f64,
    /// Maximum tilt of a plane away from facing the middle camera, degrees.
    pub plane_tilt_deg: f64,
    /// Lines of the second pair are pushed off their plane by up to this
    /// distance.
    pub flatness_tolerance: f64,
    pub points_per_triplet: usize,
    pub trifocal_lines_per_triplet: usize,
    pub clutter_lines_per_pair: usize,
    pub min_segment_px: f64,
    /// Standard deviation of the pixel noise on points and segment endpoints.
    pub noise_px: f64,
    /// Fraction of matches of each camera pair replaced by wrong ones.
    pub outlier_fraction: f64,
    /// Maximum angular error, degrees, applied to each relative rotation and
    /// translation direction handed to the estimator.
    pub relpose_noise_deg: f64,
    pub guarantee_coplanar: bool,
    pub overlap: OverlapMode,
    /// Triplets the overlap mode applies to; empty means all.
    pub affected_triplets: Vec<usize>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            cameras: 8,
            layout: Layout::Path,
            baseline: 1.0,
            baseline_jitter: 0.3,
            tilt_deg: 4.0,
            intrinsics: Intrinsics { fx: 700.0, fy: 700.0, cx: 512.0, cy: 384.0, width: 1024.0, height: 768.0 },
            depth_range: [4.0, 9.0],
            planes_per_triplet: 2,
            lines_per_plane: 4,
            plane_radius: 1.2,
            plane_tilt_deg: 50.0,
            flatness_tolerance: 0.0,
            points_per_triplet: 6,
            trifocal_lines_per_triplet: 4,
            clutter_lines_per_pair: 3,
            min_segment_px: 30.0,
            noise_px: 0.0,
            outlier_fraction: 0.0,
            relpose_noise_deg: 0.0,
            guarantee_coplanar: true,
            overlap: OverlapMode::Full,
            affected_triplets: Vec::new(),
        }
    }
}

impl SceneSpec {
    pub fn topology(&self) -> Topology {
        match self.layout {
            Layout::Path => Topology::Path,
            Layout::Ring => Topology::Cycle,
        }
    }

    /// Triplets needed to compose the chain.
    pub fn triplet_count(&self) -> usize {
        match self.layout {
            Layout::Path => self.cameras.saturating_sub(2),
            Layout::Ring => self.cameras.saturating_sub(1),
        }
    }

    fn triplet_cameras(&self, t: usize) -> [usize; 3] {
        let n = self.cameras;
        [t % n, (t + 1) % n, (t + 2) % n]
    }

    fn overlap_for(&self, t: usize) -> OverlapMode {
        if self.affected_triplets.is_empty() || self.affected_triplets.contains(&t) {
            self.overlap
        } else {
            OverlapMode::Full
        }
    }

    fn check(&self) -> Result<(), SynthError> {
        let min_cams = if self.layout == Layout::Ring { 3 } else { 2 };
        if self.cameras < min_cams {
            return Err(infeasible(format!("need at least {min_cams} cameras")));
        }
        self.intrinsics.validate().map_err(|_| infeasible("invalid intrinsics"))?;
        let [near, far] = self.depth_range;
        if !(near > 0.0 && far >= near) {
            return Err(infeasible("structure must lie in front of the cameras"));
        }
        if !(self.baseline > 0.0) || !(0.0..0.9).contains(&self.baseline_jitter) {
            return Err(infeasible("invalid baseline"));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) || !(self.noise_px >= 0.0) || !(self.relpose_noise_deg >= 0.0) {
            return Err(infeasible("invalid noise model"));
        }
        if self.affected_triplets.iter().any(|&t| t >= self.triplet_count()) {
            return Err(infeasible("affected triplet out of range"));
        }
        Ok(())
    }
}

/// Drops trifocal families on every triplet.
pub fn mutate_overlap(spec: &SceneSpec, mode: OverlapMode) -> Result<SceneSpec, SynthError> {
    mutate_overlap_on(spec, mode, &[])
}

/// Drops trifocal families on the given triplets (all when empty). Their
/// points and lines are kept but seen by one camera pair only.
pub fn mutate_overlap_on(spec: &SceneSpec, mode: OverlapMode, triplets: &[usize]) -> Result<SceneSpec, SynthError> {
    let mut s = spec.clone();
    s.overlap = mode;
    s.affected_triplets = triplets.to_vec();
    s.check()?;
    if mode != OverlapMode::Full && s.triplet_count() == 0 {
        return Err(infeasible("no triplet to modify"));
    }
    if mode == OverlapMode::BifocalOnly && (s.planes_per_triplet == 0 || s.lines_per_plane < 2) {
        return Err(infeasible("bifocal-only scenes need coplanar line pairs"));
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineKind {
    Planar,
    Trifocal,
    Clutter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePlane {
    pub point: Vec3,
    pub normal: Vec3,
    pub triplet: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueLine {
    pub start: Vec3,
    pub end: Vec3,
    pub kind: LineKind,
    pub plane: Option<usize>,
    pub triplet: usize,
    /// Cameras that observe the line.
    pub window: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruePoint {
    pub position: Vec3,
    pub triplet: usize,
    pub window: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub poses: Vec<GlobalPose>,
    /// `‖C_c − C_b‖ / ‖C_b − C_a‖` for every triplet.
    pub ratios: Vec<f64>,
    pub planes: Vec<TruePlane>,
    pub lines: Vec<TrueLine>,
    pub points: Vec<TruePoint>,
    /// Line id of each segment, per camera.
    pub segment_owner: BTreeMap<usize, Vec<usize>>,
    /// Point id of each image point, per camera.
    pub point_owner: BTreeMap<usize, Vec<usize>>,
    /// Per camera pair, whether each match was corrupted.
    pub line_outliers: BTreeMap<(usize, usize), Vec<bool>>,
    pub point_outliers: BTreeMap<(usize, usize), Vec<bool>>,
}

impl GroundTruth {
    pub fn centers(&self) -> Vec<Vec3> {
        self.poses.iter().map(|p| p.center).collect()
    }

    pub fn line_match_correct(&self, (ci, si): (usize, usize), (cj, sj): (usize, usize)) -> bool {
        self.segment_owner[&ci][si] == self.segment_owner[&cj][sj]
    }

    pub fn point_match_correct(&self, (ci, pi): (usize, usize), (cj, pj): (usize, usize)) -> bool {
        self.point_owner[&ci][pi] == self.point_owner[&cj][pj]
    }

    /// Whether a candidate pair of matches `(s1, s2)` in `a-b` and `(t2, t3)`
    /// in `b-c` is two correctly matched lines of one plane.
    pub fn coplanar_pair_true(&self, [a, b, c]: [usize; 3], [s1, s2]: [usize; 2], [t2, t3]: [usize; 2]) -> bool {
        if !self.line_match_correct((a, s1), (b, s2)) || !self.line_match_correct((b, t2), (c, t3)) {
            return false;
        }
        let la = &self.lines[self.segment_owner[&a][s1]];
        let lb = &self.lines[self.segment_owner[&b][t2]];
        la.plane.is_some() && la.plane == lb.plane
    }

    pub fn point_track_true(&self, [a, b, c]: [usize; 3], [p1, p2, p3]: [usize; 3]) -> bool {
        self.point_match_correct((a, p1), (b, p2)) && self.point_match_correct((b, p2), (c, p3))
    }

    pub fn line_track_true(&self, [a, b, c]: [usize; 3], [s1, s2, s3]: [usize; 3]) -> bool {
        self.line_match_correct((a, s1), (b, s2)) && self.line_match_correct((b, s2), (c, s3))
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const LAYOUT_STREAM: u64 = 0;
const TRIPLET_STREAM: u64 = 1 << 20;
const NOISE_STREAM: u64 = 2 << 20;
const OUTLIER_STREAM: u64 = 3 << 20;
const RELPOSE_STREAM: u64 = 4 << 20;

fn small_rotation(rng: &mut ChaCha8Rng, max_deg: f64) -> Rotation3<f64> {
    if max_deg <= 0.0 {
        return Rotation3::identity();
    }
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.random_range(-max_deg..=max_deg).to_radians();
    Rotation3::from_axis_angle(&Unit::new_normalize(Vec3::from(axis)), angle)
}

fn camera_poses(spec: &SceneSpec) -> Vec<GlobalPose> {
    let mut rng = stream(spec.seed, LAYOUT_STREAM);
    let n = spec.cameras;
    let jitter = |rng: &mut ChaCha8Rng| 1.0 + spec.baseline_jitter * rng.random_range(-1.0..=1.0);
    match spec.layout {
        Layout::Path => {
            let mut x = 0.0;
            (0..n)
                .map(|j| {
                    if j > 0 {
                        x += spec.baseline * jitter(&mut rng);
                    }
                    let wiggle = 0.15 * spec.baseline;
                    let c = Vec3::new(
                        x,
                        wiggle * (1.3 * j as f64).sin() + rng.random_range(-0.05..0.05) * spec.baseline,
                        wiggle * (0.7 * j as f64).cos() + rng.random_range(-0.05..0.05) * spec.baseline,
                    );
                    GlobalPose::from_center(small_rotation(&mut rng, spec.tilt_deg), c)
                })
                .collect()
        }
        Layout::Ring => {
            let step = 2.0 * std::f64::consts::PI / n as f64;
            let radius = spec.baseline / (2.0 * (step / 2.0).sin());
            (0..n)
                .map(|j| {
                    let theta = step * (j as f64 + 0.25 * spec.baseline_jitter * rng.random_range(-1.0..=1.0));
                    let z = Vec3::new(theta.cos(), 0.0, theta.sin());
                    let y = Vec3::y();
                    let x = y.cross(&z);
                    let facing = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_rows(&[
                        x.transpose(),
                        y.transpose(),
                        z.transpose(),
                    ]));
                    GlobalPose::from_center(small_rotation(&mut rng, spec.tilt_deg) * facing, z * radius)
                })
                .collect()
        }
    }
}

fn project(pose: &GlobalPose, k: &Intrinsics, p: &Vec3) -> Option<Vec2> {
    let q = pose.to_camera(p);
    (q.z > 1e-6).then(|| Vec2::new(k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy))
}

const MARGIN_PX: f64 = 1.0;

/// Clips a 2D segment to the image rectangle shrunk by the margin.
fn clip(a: Vec2, b: Vec2, k: &Intrinsics) -> Option<(Vec2, Vec2)> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let bounds = [
        (-d.x, a.x - MARGIN_PX),
        (d.x, k.width - MARGIN_PX - a.x),
        (-d.y, a.y - MARGIN_PX),
        (d.y, k.height - MARGIN_PX - a.y),
    ];
    for (p, q) in bounds {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then(|| (a + d * t0, a + d * t1))
}

struct Scene<'a> {
    spec: &'a SceneSpec,
    poses: Vec<GlobalPose>,
}

impl Scene<'_> {
    fn view_segment(&self, cam: usize, p: &Vec3, q: &Vec3) -> Option<(Vec2, Vec2)> {
        let k = &self.spec.intrinsics;
        let pose = &self.poses[cam];
        let (a, b) = (project(pose, k, p)?, project(pose, k, q)?);
        let (a, b) = clip(a, b, k)?;
        ((a - b).norm() >= self.spec.min_segment_px).then_some((a, b))
    }

    fn sees_segment(&self, window: &[usize], p: &Vec3, q: &Vec3) -> bool {
        window.iter().all(|&c| self.view_segment(c, p, q).is_some())
    }

    fn sees_point(&self, window: &[usize], p: &Vec3) -> bool {
        let k = &self.spec.intrinsics;
        window.iter().all(|&c| project(&self.poses[c], k, p).is_some_and(|x| {
            x.x >= MARGIN_PX && x.y >= MARGIN_PX && x.x <= k.width - MARGIN_PX && x.y <= k.height - MARGIN_PX
        }))
    }

    /// A random world point in front of camera `cam`, inside the central
    /// `fraction` of its image.
    fn point_in_front(&self, rng: &mut ChaCha8Rng, cam: usize, fraction: f64) -> Vec3 {
        let k = &self.spec.intrinsics;
        let u = k.cx + rng.random_range(-0.5..0.5) * fraction * k.width;
        let v = k.cy + rng.random_range(-0.5..0.5) * fraction * k.height;
        let [near, far] = self.spec.depth_range;
        let depth = rng.random_range(near..=far);
        let ray = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0) * depth;
        let pose = &self.poses[cam];
        pose.rotation.inverse() * ray + pose.center
    }

    /// Unit direction whose angle to every baseline of the triplet, and to
    /// the viewing direction of the middle camera towards `at`, is at least
    /// 20°, so the line triangulates well from any pair.
    fn line_direction(&self, rng: &mut ChaCha8Rng, cams: [usize; 3], at: &Vec3, within: Option<(&Vec3, &Vec3)>) -> Option<Vec3> {
        let c = |i: usize| self.poses[cams[i]].center;
        let avoid = [c(1) - c(0), c(2) - c(1), at - c(1)];
        let floor = 20f64.to_radians().sin();
        for _ in 0..50 {
            let d = match within {
                Some((e1, e2)) => {
                    let phi: f64 = rng.random_range(0.0..std::f64::consts::PI);
                    e1 * phi.cos() + e2 * phi.sin()
                }
                None => Vec3::from(UnitSphere.sample(rng)),
            };
            if avoid.iter().all(|v| d.cross(v).norm() >= floor * v.norm()) {
                return Some(d);
            }
        }
        None
    }
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    (e1, n.cross(&e1))
}

struct TripletStructure {
    planes: Vec<TruePlane>,
    lines: Vec<TrueLine>,
    points: Vec<TruePoint>,
}

const ATTEMPTS: usize = 200;

fn generate_triplet(scene: &Scene, t: usize) -> Result<TripletStructure, SynthError> {
    let spec = scene.spec;
    let mut rng = stream(spec.seed, TRIPLET_STREAM + t as u64);
    let cams = spec.triplet_cameras(t);
    let [a, b, c] = cams;
    let mode = spec.overlap_for(t);
    let mut out = TripletStructure { planes: Vec::new(), lines: Vec::new(), points: Vec::new() };

    for _ in 0..spec.planes_per_triplet {
        for _ in 0..ATTEMPTS {
            let center = scene.point_in_front(&mut rng, b, 0.5);
            let toward = (scene.poses[b].center - center).normalize();
            let normal = small_rotation(&mut rng, spec.plane_tilt_deg) * toward;
            let (e1, e2) = tangent_basis(&normal);
            let mut lines = Vec::new();
            for l in 0..spec.lines_per_plane {
                let window = if l % 2 == 0 { vec![a, b] } else { vec![b, c] };
                for _ in 0..50 {
                    let r = spec.plane_radius * rng.random_range(0.0..0.6);
                    let phi = rng.random_range(0.0..std::f64::consts::TAU);
                    let mid = center + (e1 * phi.cos() + e2 * phi.sin()) * r;
                    let Some(d) = scene.line_direction(&mut rng, cams, &mid, Some((&e1, &e2))) else { continue };
                    let half = 0.5 * spec.plane_radius * rng.random_range(0.5..1.0);
                    let offset = if l % 2 == 1 && spec.flatness_tolerance > 0.0 {
                        normal * rng.random_range(-spec.flatness_tolerance..=spec.flatness_tolerance)
                    } else {
                        Vec3::zeros()
                    };
                    let (p, q) = (mid - d * half + offset, mid + d * half + offset);
                    if scene.sees_segment(&window, &p, &q) {
                        lines.push((l % 2, p, q, window));
                        break;
                    }
                }
            }
            let has = |side| lines.iter().any(|l| l.0 == side);
            if has(0) && has(1) {
                let plane = out.planes.len();
                out.planes.push(TruePlane { point: center, normal, triplet: t });
                for (_, start, end, window) in lines {
                    out.lines.push(TrueLine { start, end, kind: LineKind::Planar, plane: Some(plane), triplet: t, window });
                }
                break;
            }
        }
    }
    if spec.guarantee_coplanar && spec.planes_per_triplet > 0 && spec.lines_per_plane >= 2 && out.planes.is_empty() {
        return Err(infeasible(format!("no coplanar line pair visible in triplet {t}")));
    }

    for i in 0..spec.points_per_triplet {
        let window = match (mode.drops_points(), i % 2) {
            (false, _) => vec![a, b, c],
            (true, 0) => vec![a, b],
            (true, _) => vec![b, c],
        };
        for _ in 0..ATTEMPTS {
            let p = scene.point_in_front(&mut rng, b, 0.8);
            if scene.sees_point(&[a, b, c], &p) {
                out.points.push(TruePoint { position: p, triplet: t, window });
                break;
            }
        }
    }

    let free_line = |rng: &mut ChaCha8Rng, window: &[usize]| -> Option<(Vec3, Vec3)> {
        for _ in 0..ATTEMPTS {
            let mid = scene.point_in_front(rng, b, 0.7);
            let Some(d) = scene.line_direction(rng, cams, &mid, None) else { continue };
            let half = rng.random_range(0.25..0.75);
            let (p, q) = (mid - d * half, mid + d * half);
            if scene.sees_segment(window, &p, &q) {
                return Some((p, q));
            }
        }
        None
    };
    for i in 0..spec.trifocal_lines_per_triplet {
        let window = match (mode.drops_lines(), i % 2) {
            (false, _) => vec![a, b, c],
            (true, 0) => vec![a, b],
            (true, _) => vec![b, c],
        };
        if let Some((start, end)) = free_line(&mut rng, &[a, b, c]) {
            out.lines.push(TrueLine { start, end, kind: LineKind::Trifocal, plane: None, triplet: t, window });
        }
    }
    for i in 0..spec.clutter_lines_per_pair * 2 {
        let window = if i % 2 == 0 { vec![a, b] } else { vec![b, c] };
        if let Some((start, end)) = free_line(&mut rng, &window) {
            out.lines.push(TrueLine { start, end, kind: LineKind::Clutter, plane: None, triplet: t, window });
        }
    }
    Ok(out)
}

fn epipolar_distance_px(from: &GlobalPose, to: &GlobalPose, k: &Intrinsics, px_from: &Vec2, px_to: &Vec2) -> f64 {
    let Ok(rel) = RelativePose::between(0, 1, from, to) else { return f64::INFINITY };
    let x = k.normalize(px_from);
    let e = rel.direction.into_inner().cross(&(rel.rotation * x.as_vector()));
    HomoLine2::from_vector(&e).map_or(f64::INFINITY, |l| k.pixel_distance_to_line(&l, px_to))
}

/// Generates the dataset files and the ground truth of a scene.
pub fn generate(spec: &SceneSpec) -> Result<(Dataset, GroundTruth), SynthError> {
    spec.check()?;
    let scene = Scene { spec, poses: camera_poses(spec) };
    let n = spec.cameras;
    let k = spec.intrinsics;

    let mut planes = Vec::new();
    let mut lines = Vec::new();
    let mut points = Vec::new();
    for t in 0..spec.triplet_count() {
        let s = generate_triplet(&scene, t)?;
        let base = planes.len();
        planes.extend(s.planes);
        lines.extend(s.lines.into_iter().map(|mut l| {
            l.plane = l.plane.map(|p| p + base);
            l
        }));
        points.extend(s.points);
    }

    let mut segments: BTreeMap<usize, Vec<Segment2>> = BTreeMap::new();
    let mut image_points: BTreeMap<usize, Vec<Vec2>> = BTreeMap::new();
    let mut segment_owner: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut point_owner: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut line_slot: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); lines.len()];
    let mut point_slot: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); points.len()];
    for cam in 0..n {
        let mut rng = stream(spec.seed, NOISE_STREAM + cam as u64);
        let noise = Normal::new(0.0, spec.noise_px.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let jitter = |rng: &mut ChaCha8Rng| {
            if spec.noise_px > 0.0 {
                Vec2::new(noise.sample(rng), noise.sample(rng))
            } else {
                Vec2::zeros()
            }
        };
        let segs = segments.entry(cam).or_default();
        let owners = segment_owner.entry(cam).or_default();
        for (id, l) in lines.iter().enumerate().filter(|(_, l)| l.window.contains(&cam)) {
            let (pa, pb) = scene.view_segment(cam, &l.start, &l.end).expect("visibility checked");
            let (pa, pb) = (pa + jitter(&mut rng), pb + jitter(&mut rng));
            let s = Segment2::new(pa, pb, &k, cam).map_err(|e| infeasible(e.to_string()))?;
            line_slot[id].insert(cam, segs.len());
            segs.push(s);
            owners.push(id);
        }
        let pts = image_points.entry(cam).or_default();
        let owners = point_owner.entry(cam).or_default();
        for (id, p) in points.iter().enumerate().filter(|(_, p)| p.window.contains(&cam)) {
            let x = project(&scene.poses[cam], &k, &p.position).expect("visibility checked");
            point_slot[id].insert(cam, pts.len());
            pts.push(x + jitter(&mut rng));
            owners.push(id);
        }
    }

    let dataset_pairs: Vec<(usize, usize)> = {
        let mut p: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        if spec.layout == Layout::Ring {
            p.push((n - 1, 0));
        }
        p
    };
    let mut line_matches = BTreeMap::new();
    let mut point_matches = BTreeMap::new();
    let mut line_outliers = BTreeMap::new();
    let mut point_outliers = BTreeMap::new();
    for (pi, &(i, j)) in dataset_pairs.iter().enumerate() {
        let mut rng = stream(spec.seed, OUTLIER_STREAM + pi as u64);
        let mut lm: MatchList = line_slot.iter().filter_map(|s| Some((*s.get(&i)?, *s.get(&j)?))).collect();
        let mut pm: MatchList = point_slot.iter().filter_map(|s| Some((*s.get(&i)?, *s.get(&j)?))).collect();

        let segs_j = &segments[&j];
        let lo = corrupt(&mut rng, &mut lm, spec.outlier_fraction, segs_j.len(), |(_, sj), cand| {
            let truth = &segs_j[sj];
            let other = &segs_j[cand];
            k.pixel_distance_to_line(&truth.line, &other.a).max(k.pixel_distance_to_line(&truth.line, &other.b)) > 1.0
        });
        let pts_i = &image_points[&i];
        let pts_j = &image_points[&j];
        let po = corrupt(&mut rng, &mut pm, spec.outlier_fraction, pts_j.len(), |(si, sj), cand| {
            (pts_j[cand] - pts_j[sj]).norm() > 1.0
                && epipolar_distance_px(&scene.poses[i], &scene.poses[j], &k, &pts_i[si], &pts_j[cand]) > 1.0
        });
        line_matches.insert((i, j), lm);
        point_matches.insert((i, j), pm);
        line_outliers.insert((i, j), lo);
        point_outliers.insert((i, j), po);
    }

    let relposes = dataset_pairs
        .iter()
        .enumerate()
        .map(|(pi, &(i, j))| {
            let r = RelativePose::between(i, j, &scene.poses[i], &scene.poses[j])?;
            if spec.relpose_noise_deg <= 0.0 {
                return Ok(r);
            }
            let mut rng = stream(spec.seed, RELPOSE_STREAM + pi as u64);
            let rotation = small_rotation(&mut rng, spec.relpose_noise_deg) * r.rotation;
            let direction = Unit::new_normalize(small_rotation(&mut rng, spec.relpose_noise_deg) * r.direction.into_inner());
            RelativePose::new(i, j, rotation, direction)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| infeasible(e.to_string()))?;
    let ratios = (0..spec.triplet_count())
        .map(|t| {
            let [a, b, c] = spec.triplet_cameras(t);
            let p = &scene.poses;
            (p[c].center - p[b].center).norm() / (p[b].center - p[a].center).norm()
        })
        .collect();

    let dataset = Dataset {
        intrinsics: (0..n).map(|i| (i, k)).collect(),
        order: (0..n).collect(),
        topology: spec.topology(),
        relposes,
        segments,
        points: image_points,
        line_matches,
        point_matches,
        ground_truth: Some(scene.poses.iter().copied().enumerate().collect()),
    };
    let truth = GroundTruth {
        poses: scene.poses,
        ratios,
        planes,
        lines,
        points,
        segment_owner,
        point_owner,
        line_outliers,
        point_outliers,
    };
    Ok((dataset, truth))
}

/// Replaces the second index of a fraction of the matches with a random
/// other feature accepted by `far_enough`. Returns the outlier labels.
fn corrupt(
    rng: &mut ChaCha8Rng,
    matches: &mut MatchList,
    fraction: f64,
    count_j: usize,
    far_enough: impl Fn((usize, usize), usize) -> bool,
) -> Vec<bool> {
    let mut labels = vec![false; matches.len()];
    let wanted = (fraction * matches.len() as f64).round() as usize;
    if wanted == 0 || count_j < 2 {
        return labels;
    }
    let mut order: Vec<usize> = (0..matches.len()).collect();
    order.shuffle(rng);
    for &m in order.iter().take(wanted) {
        for _ in 0..100 {
            let cand = rng.random_range(0..count_j);
            if cand != matches[m].1 && far_enough(matches[m], cand) {
                matches[m].1 = cand;
                labels[m] = true;
                break;
            }
        }
    }
    labels
}
