//! End-to-end calibration: per-triplet selection, chain composition,
//! triangulation of the selected inliers and two-stage refinement.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::Unit;
use rayon::prelude::*;

use crate::ba::{BaProblem, Block, CoplanarPair, LineObservation, PointObservation};
use crate::chain::{align_similarity, compose_chain, ChainInput, ChainOutput};
use crate::geometry::{
    closest_points_between_lines, triangulate_line, triangulate_point, GlobalPose, Intrinsics, Line3, Vec2, Vec3,
};
use crate::io::config::Config;
use crate::io::dataset::{poses_to_string, Dataset, DatasetError};
use crate::io::ply::{export_ply, Structure};
use crate::io::report::{
    BaReport, CenterErrors, ChainReport, Evaluation, FamilyCounts, RunReport, StageReport, Status, TripletReport,
};
use crate::robust::{build_candidates, generate_hypotheses, select, CandidateSet, SelectionResult};

/// Outcome of one triplet, kept for structure assembly.
#[derive(Debug, Clone)]
pub struct TripletRun {
    pub cameras: [usize; 3],
    pub candidates: Option<CandidateSet>,
    pub selection: Option<SelectionResult>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: RunReport,
    pub triplets: Vec<TripletRun>,
    /// Refined (or composed, when refinement is off) poses by camera id.
    pub poses: Option<Vec<(usize, GlobalPose)>>,
    pub structure: Structure,
}

impl PipelineOutput {
    pub fn calibrated(&self) -> bool {
        self.report.status == Status::Calibrated
    }
}

/// Estimates the scale of one triplet.
pub fn run_triplet(d: &Dataset, cams: [usize; 3], cfg: &Config) -> Result<(CandidateSet, SelectionResult), String> {
    let tf = d.triplet_frame(cams).map_err(|e| e.to_string())?;
    let f = d.triplet_features(cams).map_err(|e| e.to_string())?;
    let c = build_candidates(&f, &tf, cfg.robust.neighbors, cfg.robust.parallel_floor_deg);
    let hs = generate_hypotheses(&c, &tf, &cfg.scale_config());
    let s = select(&c, &hs.hypotheses, &tf, &cfg.robust).map_err(|e| e.to_string())?;
    Ok((c, s))
}

/// Union-find over observation keys.
struct Tracks {
    parent: Vec<usize>,
    keys: Vec<(usize, usize)>,
    index: BTreeMap<(usize, usize), usize>,
}

impl Tracks {
    fn new() -> Self {
        Self { parent: Vec::new(), keys: Vec::new(), index: BTreeMap::new() }
    }

    fn id(&mut self, key: (usize, usize)) -> usize {
        if let Some(&i) = self.index.get(&key) {
            return i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.keys.push(key);
        self.index.insert(key, i);
        i
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, keys: &[(usize, usize)]) {
        let ids: Vec<usize> = keys.iter().map(|&k| self.id(k)).collect();
        for w in ids.windows(2) {
            let (a, b) = (self.find(w[0]), self.find(w[1]));
            if a != b {
                let (lo, hi) = (a.min(b), a.max(b));
                self.parent[hi] = lo;
            }
        }
    }

    /// Tracks as sorted observation lists, keyed by their smallest member,
    /// skipping tracks that see one camera twice.
    fn groups(&mut self) -> Vec<Vec<(usize, usize)>> {
        let mut g: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            g.entry(r).or_default().push(self.keys[i]);
        }
        g.into_values()
            .filter_map(|mut v| {
                v.sort_unstable();
                let consistent = v.windows(2).all(|w| w[0].0 != w[1].0);
                (consistent && v.len() >= 2).then_some(v)
            })
            .collect()
    }
}

/// Pair of observations with the widest baseline.
fn widest_pair(obs: &[(usize, usize)], centers: &BTreeMap<usize, Vec3>) -> ((usize, usize), (usize, usize)) {
    let mut best = (obs[0], obs[1], -1.0);
    for (i, a) in obs.iter().enumerate() {
        for b in &obs[i + 1..] {
            let d = (centers[&a.0] - centers[&b.0]).norm();
            if d > best.2 {
                best = (*a, *b, d);
            }
        }
    }
    (best.0, best.1)
}

/// Sine of the widest angle between any two plane normals.
fn plane_spread_sin(normals: &[Vec3]) -> f64 {
    let mut widest = 0.0f64;
    for (i, n) in normals.iter().enumerate() {
        for m in &normals[i + 1..] {
            widest = widest.max(n.cross(m).norm());
        }
    }
    widest
}

/// Extent of a 3D line covered by its observed segments.
fn line_extent(l: &Line3, obs: &[LineObservation], poses: &[GlobalPose], ks: &[Intrinsics]) -> [Vec3; 2] {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for o in obs {
        let pose = &poses[o.camera];
        for px in [o.a, o.b] {
            let ray = pose.ray(&ks[o.camera].normalize(&px));
            let Some(dir) = Unit::try_new(ray, 1e-12) else { continue };
            let r = Line3::new(dir, pose.center);
            if let Ok((p, _)) = closest_points_between_lines(l, &r) {
                let s = l.parameter_of(&p);
                lo = lo.min(s);
                hi = hi.max(s);
            }
        }
    }
    if lo > hi {
        (lo, hi) = (-0.5, 0.5);
    }
    [l.at(lo), l.at(hi)]
}

/// Rectangle in the plane of two lines covering both segments.
fn plane_patch(a: &[Vec3; 2], b: &[Vec3; 2]) -> Option<[Vec3; 4]> {
    let u = (a[1] - a[0]).try_normalize(1e-12)?;
    let n = u.cross(&(b[1] - b[0])).try_normalize(1e-12)?;
    let v = n.cross(&u);
    let o = (a[0] + a[1] + b[0] + b[1]) / 4.0;
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in a.iter().chain(b) {
        let (x, y) = ((p - o).dot(&u), (p - o).dot(&v));
        umin = umin.min(x);
        umax = umax.max(x);
        vmin = vmin.min(y);
        vmax = vmax.max(y);
    }
    let at = |x: f64, y: f64| o + u * x + v * y;
    Some([at(umin, vmin), at(umax, vmin), at(umax, vmax), at(umin, vmax)])
}

/// Triangulates the inliers of every triplet into a refinement problem.
/// Camera indices in the problem are chain positions. Coplanar inliers become
/// constraints only when their initial residual is within the robust
/// threshold in every image that sees both lines. Line tracks whose
/// back-projected planes are all within `ba.line_floor_deg` of parallel are
/// dropped along with any pair that uses them.
pub fn build_problem(
    d: &Dataset,
    chain: &ChainOutput,
    runs: &[TripletRun],
    cfg: &Config,
) -> Result<BaProblem, crate::ba::BaError> {
    let gate_px = cfg.robust.threshold_px;
    let line_floor = cfg.ba.line_floor_deg.to_radians().sin();
    let position: BTreeMap<usize, usize> = d.order.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let centers: BTreeMap<usize, Vec3> = d.order.iter().zip(&chain.poses).map(|(id, p)| (*id, p.center)).collect();
    let mut line_tracks = Tracks::new();
    let mut point_tracks = Tracks::new();
    let mut pairs = Vec::new();
    for run in runs {
        let (Some(c), Some(s)) = (&run.candidates, &run.selection) else { continue };
        let [a, b, cc] = run.cameras;
        for &i in &s.inliers.coplanar {
            let h = &c.coplanar[i];
            let la = [(a, h.la.ids[0]), (b, h.la.ids[1])];
            let lb = [(b, h.lb.ids[0]), (cc, h.lb.ids[1])];
            line_tracks.union(&la);
            line_tracks.union(&lb);
            pairs.push((la[0], lb[0]));
        }
        for &i in &s.inliers.lines {
            let ids = c.tri_lines[i].ids;
            line_tracks.union(&[(a, ids[0]), (b, ids[1]), (cc, ids[2])]);
        }
        for &i in &s.inliers.points {
            let ids = c.tri_points[i].ids;
            point_tracks.union(&[(a, ids[0]), (b, ids[1]), (cc, ids[2])]);
        }
    }

    let ks: Vec<Intrinsics> = d.order.iter().map(|id| d.intrinsics[id]).collect();
    let pose_of = |id: usize| chain.poses[position[&id]];

    let mut lines = Vec::new();
    let mut line_obs = Vec::new();
    let mut line_of_key = BTreeMap::new();
    for track in line_tracks.groups() {
        let normals: Vec<Vec3> =
            track.iter().map(|&(cam, s)| pose_of(cam).plane_normal(&d.segments[&cam][s].line).normalize()).collect();
        if plane_spread_sin(&normals) < line_floor {
            continue;
        }
        let (p, q) = widest_pair(&track, &centers);
        let (sp, sq) = (&d.segments[&p.0][p.1], &d.segments[&q.0][q.1]);
        let Ok(l) = triangulate_line(&sp.line, &sq.line, &pose_of(p.0), &pose_of(q.0)) else { continue };
        let id = lines.len();
        lines.push(l);
        for &(cam, s) in &track {
            let seg = &d.segments[&cam][s];
            line_obs.push(LineObservation { camera: position[&cam], line: id, a: seg.a, b: seg.b });
            line_of_key.insert((cam, s), id);
        }
    }
    let mut points = Vec::new();
    let mut point_obs = Vec::new();
    for track in point_tracks.groups() {
        let (p, q) = widest_pair(&track, &centers);
        let px = |k: (usize, usize)| -> Vec2 { d.points[&k.0][k.1] };
        let (xp, xq) = (d.intrinsics[&p.0].normalize(&px(p)), d.intrinsics[&q.0].normalize(&px(q)));
        let Ok(x) = triangulate_point(&xp, &xq, &pose_of(p.0), &pose_of(q.0)) else { continue };
        let id = points.len();
        points.push(x);
        for &k in &track {
            point_obs.push(PointObservation { camera: position[&k.0], point: id, pixel: px(k) });
        }
    }
    let mut coplanar: Vec<CoplanarPair> = pairs
        .iter()
        .filter_map(|(ka, kb)| {
            let (a, b) = (*line_of_key.get(ka)?, *line_of_key.get(kb)?);
            (a != b).then_some(CoplanarPair { first: a.min(b), second: a.max(b) })
        })
        .collect();
    coplanar.sort_unstable_by_key(|c| (c.first, c.second));
    coplanar.dedup();
    let p = BaProblem::new(ks.clone(), chain.poses.clone(), points.clone(), lines.clone(), point_obs.clone(), line_obs.clone(), coplanar.clone())?;
    let r = p.residuals();
    let first_term = 2 * (p.point_obs.len() + p.line_obs.len());
    let mut worst = vec![0.0f64; coplanar.len()];
    for (k, b) in p.blocks().iter().enumerate().skip(p.point_obs.len() + p.line_obs.len()) {
        if let Block::Coplanar { pair, .. } = *b {
            let i = first_term + 2 * (k - p.point_obs.len() - p.line_obs.len());
            worst[pair] = worst[pair].max(r[i].hypot(r[i + 1]));
        }
    }
    if worst.iter().all(|w| *w <= gate_px) {
        return Ok(p);
    }
    let kept = coplanar.into_iter().zip(worst).filter(|(_, w)| *w <= gate_px).map(|(c, _)| c).collect();
    BaProblem::new(ks, chain.poses.clone(), points, lines, point_obs, line_obs, kept)
}

/// Points, bounded lines and coplanar plane patches of a problem.
pub fn structure_of(p: &BaProblem) -> Structure {
    let mut obs_by_line: Vec<Vec<LineObservation>> = vec![Vec::new(); p.lines.len()];
    for o in &p.line_obs {
        obs_by_line[o.line].push(*o);
    }
    let lines: Vec<[Vec3; 2]> =
        p.lines.iter().zip(&obs_by_line).map(|(l, o)| line_extent(l, o, &p.poses, &p.intrinsics)).collect();
    let planes = p.coplanar.iter().filter_map(|c| plane_patch(&lines[c.first], &lines[c.second])).collect();
    Structure { points: p.points.clone(), lines, planes }
}

fn center_errors(est: &[GlobalPose], truth: &[GlobalPose]) -> Option<CenterErrors> {
    let e: Vec<Vec3> = est.iter().map(|p| p.center).collect();
    let t: Vec<Vec3> = truth.iter().map(|p| p.center).collect();
    let a = align_similarity(&e, &t).ok()?;
    Some(CenterErrors { mean: a.mean_error(), max: a.max_error() })
}

fn point_rms(p: &BaProblem) -> Option<f64> {
    if p.point_obs.is_empty() {
        return None;
    }
    let r = p.residuals();
    let n = 2 * p.point_obs.len();
    Some((r[..n].iter().map(|x| x * x).sum::<f64>() / p.point_obs.len() as f64).sqrt())
}

pub fn run_pipeline(d: &Dataset, cfg: &Config) -> PipelineOutput {
    let mut report = RunReport::new(cfg.robust.method);
    let truth = d.ground_truth_in_order();
    let true_ratio = |cams: [usize; 3]| -> Option<f64> {
        let gt = d.ground_truth.as_ref()?;
        let c = |i: usize| gt.get(&cams[i]).map(|p| p.center);
        Some((c(2)? - c(1)?).norm() / (c(1)? - c(0)?).norm())
    };

    let t0 = Instant::now();
    let triplets = d.triplets();
    let results: Vec<Result<(CandidateSet, SelectionResult), String>> =
        triplets.par_iter().map(|&cams| run_triplet(d, cams, cfg)).collect();
    report.timings.insert("selection".into(), t0.elapsed().as_secs_f64());

    let mut runs = Vec::new();
    for (i, (cams, r)) in triplets.iter().zip(results).enumerate() {
        let mut tr = TripletReport {
            index: i,
            cameras: *cams,
            lines_in_middle: 0,
            candidates: FamilyCounts::default(),
            hypotheses: 0,
            rejected_hypotheses: 0,
            lambda: None,
            log10_nfa: f64::INFINITY,
            meaningful: false,
            selected_from: None,
            inliers: FamilyCounts::default(),
            true_lambda: true_ratio(*cams),
            error: None,
        };
        let run = match r {
            Ok((c, s)) => {
                tr.lines_in_middle = c.n_se2;
                tr.candidates = FamilyCounts { coplanar: c.coplanar.len(), points: c.tri_points.len(), lines: c.tri_lines.len() };
                tr.hypotheses = s.hypotheses;
                tr.lambda = Some(s.lambda);
                tr.log10_nfa = s.log10_nfa;
                tr.meaningful = s.meaningful();
                tr.selected_from = Some(s.provenance.kind);
                tr.inliers =
                    FamilyCounts { coplanar: s.inliers.coplanar.len(), points: s.inliers.points.len(), lines: s.inliers.lines.len() };
                TripletRun { cameras: *cams, candidates: Some(c), selection: Some(s) }
            }
            Err(e) => {
                tr.error = Some(e.clone());
                report.errors.push(format!("triplet {i} {cams:?}: {e}"));
                TripletRun { cameras: *cams, candidates: None, selection: None }
            }
        };
        report.triplets.push(tr);
        runs.push(run);
    }
    if let Ok(hs) = count_hypotheses(d, &triplets, cfg) {
        for (tr, (n, rej)) in report.triplets.iter_mut().zip(hs) {
            tr.hypotheses = n;
            tr.rejected_hypotheses = rej;
        }
    }

    let relposes: Result<Vec<_>, DatasetError> = d.pairs().iter().map(|&(i, j)| d.relpose(i, j)).collect();
    let chain = relposes.map_err(|e| e.to_string()).and_then(|relposes| {
        let inp = ChainInput {
            topology: d.topology,
            relposes,
            ratios: runs.iter().map(|r| r.selection.as_ref().map(|s| s.lambda)).collect(),
        };
        compose_chain(&inp).map_err(|e| e.to_string())
    });
    let chain = match chain {
        Ok(c) => c,
        Err(e) => {
            report.errors.push(format!("chain: {e}"));
            return PipelineOutput { report, triplets: runs, poses: None, structure: Structure::default() };
        }
    };
    report.chain = Some(ChainReport {
        topology: d.topology,
        cameras: chain.poses.len(),
        baselines: chain.baselines.clone(),
        closure_gap: chain.closure_gap,
    });
    let mut evaluation = truth.as_ref().and_then(|t| {
        let before = center_errors(&chain.poses, t)?;
        let rel: Vec<f64> = report
            .triplets
            .iter()
            .filter_map(|t| Some((t.lambda? / t.true_lambda? - 1.0).abs()))
            .collect();
        let mean_ratio_error = rel.iter().sum::<f64>() / rel.len().max(1) as f64;
        Some(Evaluation { before_ba: before, after_ba: None, mean_ratio_error })
    });

    let t1 = Instant::now();
    let mut poses = chain.poses.clone();
    let mut structure = Structure::default();
    let mut ok = true;
    match build_problem(d, &chain, &runs, cfg) {
        Ok(mut problem) => {
            let mut ba = BaReport {
                points: problem.points.len(),
                lines: problem.lines.len(),
                coplanar_pairs: problem.coplanar.len(),
                residuals: problem.residual_count(),
                stages: Vec::new(),
                point_rms_px: None,
            };
            if cfg.ba.enabled {
                match problem.solve_schedule(&cfg.ba.solver) {
                    Ok(stages) => ba.stages = stages.iter().map(StageReport::from).collect(),
                    Err(e) => {
                        report.errors.push(format!("bundle adjustment: {e}"));
                        ok = false;
                    }
                }
            }
            ba.point_rms_px = point_rms(&problem);
            poses = problem.poses.clone();
            structure = structure_of(&problem);
            if let (Some(ev), Some(t)) = (evaluation.as_mut(), truth.as_ref()) {
                if cfg.ba.enabled {
                    ev.after_ba = center_errors(&poses, t);
                }
            }
            report.ba = Some(ba);
        }
        Err(e) => {
            if cfg.ba.enabled {
                report.errors.push(format!("bundle adjustment: {e}"));
                ok = false;
            }
        }
    }
    report.timings.insert("refinement".into(), t1.elapsed().as_secs_f64());
    report.evaluation = evaluation;
    if ok && report.errors.is_empty() {
        report.status = Status::Calibrated;
    }
    let poses = Some(d.order.iter().copied().zip(poses).collect());
    PipelineOutput { report, triplets: runs, poses, structure }
}

/// Hypothesis totals per triplet, including rejected candidates.
fn count_hypotheses(d: &Dataset, triplets: &[[usize; 3]], cfg: &Config) -> Result<Vec<(usize, usize)>, DatasetError> {
    triplets
        .iter()
        .map(|&cams| {
            let tf = d.triplet_frame(cams)?;
            let f = d.triplet_features(cams)?;
            let c = build_candidates(&f, &tf, cfg.robust.neighbors, cfg.robust.parallel_floor_deg);
            let hs = generate_hypotheses(&c, &tf, &cfg.scale_config());
            Ok((hs.hypotheses.len(), hs.rejected.len()))
        })
        .collect()
}

/// Writes `poses.txt`, `structure.ply` and `report.json` into `dir`.
pub fn write_outputs(out: &PipelineOutput, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(p) = &out.poses {
        let poses = p.iter().map(|(id, pose)| (*id, *pose)).collect();
        std::fs::write(dir.join("poses.txt"), poses_to_string("poses", &poses))?;
    }
    export_ply(&out.structure, &dir.join("structure.ply"))?;
    std::fs::write(dir.join("report.json"), out.report.to_json())
}
