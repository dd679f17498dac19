//! Joint refinement of poses, points and lines, with coplanarity terms
//! between line pairs.
//!
//! Every residual is a pair of pixel values: the reprojection error of a
//! point, the distances of the two endpoints of an observed segment to the
//! reprojected line, or the difference between the reprojections of the two
//! closest points of a coplanar line pair in one image that sees both lines.
//!
//! The first camera is fixed and the distance between the first two camera
//! centers is frozen, which removes the seven similarity degrees of freedom.
//! Rotations are updated on the left by the exponential of a tangent vector;
//! lines are stored as a unit direction and their point closest to the
//! origin, updated in the two-dimensional complements of the direction.

pub mod dual;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GlobalPose, Intrinsics, Line3, Vec2, Vec3};
use dual::{add, cross, dot, mat_vec, normalize, scale, sub, v3, Dual, Scalar, M3, V3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BaError {
    #[error("problem has no observations or no free parameters")]
    EmptyProblem,
    #[error("observation {index} references a missing {what}")]
    InvalidReference { what: &'static str, index: usize },
    #[error("the rotations-fixed stage must run before the full stage")]
    StageOrder,
    #[error("non-finite residual at iteration {iteration}")]
    DivergedNaN { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    RotationsFixed,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaConfig {
    pub max_iters: usize,
    /// Run the rotations-fixed stage before the full one.
    pub stage1: bool,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub ftol: f64,
    /// Gradient max-norm below which the solve ends.
    pub gtol: f64,
    /// Relative step length below which the solve ends.
    pub xtol: f64,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self { max_iters: 200, stage1: true, ftol: 1e-10, gtol: 1e-12, xtol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointObservation {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineObservation {
    pub camera: usize,
    pub line: usize,
    pub a: Vec2,
    pub b: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoplanarPair {
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Progress {
    Fresh,
    RotationsFixedDone,
}

/// One residual pair and the parameters it depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Point(usize),
    Line(usize),
    Coplanar { pair: usize, camera: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaProblem {
    pub intrinsics: Vec<Intrinsics>,
    pub poses: Vec<GlobalPose>,
    pub points: Vec<Vec3>,
    pub lines: Vec<Line3>,
    pub point_obs: Vec<PointObservation>,
    pub line_obs: Vec<LineObservation>,
    pub coplanar: Vec<CoplanarPair>,
    coplanar_terms: Vec<(usize, usize)>,
    baseline: f64,
    progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    CostTolerance,
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub stage: Stage,
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    /// Cost before the first step, then after every accepted step.
    pub costs: Vec<f64>,
    pub termination: Termination,
}

impl SolveReport {
    pub fn initial_cost(&self) -> f64 {
        self.costs[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.costs.last().expect("trace starts with the initial cost")
    }
}

/// Line through `point` along `direction`, re-expressed with its point
/// closest to the origin.
pub fn canonical_line(l: &Line3) -> Line3 {
    let d = l.direction.into_inner();
    Line3::new(l.direction, l.point - d * d.dot(&l.point))
}

fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    (e1, n.cross(&e1))
}

fn skew<S: Scalar>(w: V3<S>) -> M3<S> {
    let z = S::cst(0.0);
    [[z, -w[2], w[1]], [w[2], z, -w[0]], [-w[1], w[0], z]]
}

fn mat_mul<S: Scalar>(a: &M3<S>, b: &M3<S>) -> M3<S> {
    let mut m = [[S::cst(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    m
}

fn project<S: Scalar>(r: &M3<S>, c: V3<S>, x: V3<S>, k: &Intrinsics) -> [S; 2] {
    let y = mat_vec(r, sub(x, c));
    [S::cst(k.fx) * y[0] / y[2] + S::cst(k.cx), S::cst(k.fy) * y[1] / y[2] + S::cst(k.cy)]
}

fn line_distances<S: Scalar>(r: &M3<S>, c: V3<S>, q: V3<S>, d: V3<S>, k: &Intrinsics, a: &Vec2, b: &Vec2) -> [S; 2] {
    let l = cross(mat_vec(r, sub(q, c)), mat_vec(r, d));
    let l0 = l[0] / S::cst(k.fx);
    let l1 = l[1] / S::cst(k.fy);
    let l2 = l[2] - l0 * S::cst(k.cx) - l1 * S::cst(k.cy);
    let n = (l0 * l0 + l1 * l1).sqrt();
    let at = |p: &Vec2| (l0 * S::cst(p.x) + l1 * S::cst(p.y) + l2) / n;
    [at(a), at(b)]
}

fn closest_points<S: Scalar>(qa: V3<S>, da: V3<S>, qb: V3<S>, db: V3<S>) -> (V3<S>, V3<S>) {
    let w = sub(qa, qb);
    let (a, b, c) = (dot(da, da), dot(da, db), dot(db, db));
    let (d, e) = (dot(da, w), dot(db, w));
    let den = a * c - b * b;
    let s = (b * e - c * d) / den;
    let t = (a * e - b * d) / den;
    (add(qa, scale(da, s)), add(qb, scale(db, t)))
}

/// Global parameter index of every local component, or `None` when fixed.
#[derive(Debug, Clone)]
/// Parameter indices: cameras and lines first, then points, which the
/// solver eliminates.
struct Layout {
    camera: Vec<[Option<usize>; 6]>,
    point: Vec<usize>,
    line: Vec<usize>,
    /// Number of camera and line parameters.
    reduced: usize,
    len: usize,
}

impl Layout {
    fn new(p: &BaProblem, stage: Stage) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let s = next;
            next += n;
            s
        };
        let camera = (0..p.poses.len())
            .map(|i| {
                let mut slots = [None; 6];
                if i == 0 {
                    return slots;
                }
                if stage == Stage::Full {
                    let s = take(3);
                    for (j, slot) in slots.iter_mut().take(3).enumerate() {
                        *slot = Some(s + j);
                    }
                }
                let dims = if i == 1 { 2 } else { 3 };
                let s = take(dims);
                for j in 0..dims {
                    slots[3 + j] = Some(s + j);
                }
                slots
            })
            .collect();
        let line = p.lines.iter().map(|_| take(4)).collect();
        let point = p.points.iter().map(|_| take(3)).collect();
        Layout { camera, point, line, reduced: next - 3 * p.points.len(), len: next }
    }
}

const BLOCK_VARS: usize = 14;
type D = Dual<BLOCK_VARS>;

/// Seeds the components of one block: free components become variables in
/// order, fixed ones constant zero.
struct Seeder {
    globals: Vec<usize>,
}

impl Seeder {
    fn take(&mut self, slots: &[Option<usize>]) -> Vec<D> {
        slots
            .iter()
            .map(|s| match s {
                Some(g) => {
                    self.globals.push(*g);
                    D::variable(0.0, self.globals.len() - 1)
                }
                None => D::constant(0.0),
            })
            .collect()
    }
}

struct BlockEval {
    globals: Vec<usize>,
    residual: [f64; 2],
    jacobian: [[f64; BLOCK_VARS]; 2],
}

/// One point's diagonal block of `JᵀJ` and its coupling to camera and line
/// parameters.
#[derive(Debug, Clone, Default)]
struct PointBlock {
    diagonal: Matrix3<f64>,
    coupling: Vec<(usize, Vector3<f64>)>,
}

impl PointBlock {
    fn add_coupling(&mut self, global: usize, k: usize, v: f64) {
        match self.coupling.iter_mut().find(|(g, _)| *g == global) {
            Some((_, row)) => row[k] += v,
            None => {
                let mut row = Vector3::zeros();
                row[k] = v;
                self.coupling.push((global, row));
            }
        }
    }
}

/// Normal equations with the point parameters kept block-diagonal.
struct Normal {
    reduced: DMatrix<f64>,
    points: Vec<PointBlock>,
    gradient: DVector<f64>,
}

impl Normal {
    fn max_diagonal(&self) -> f64 {
        let reduced = self.reduced.diagonal().iter().copied().fold(0.0, f64::max);
        let points = self.points.iter().flat_map(|p| [p.diagonal[(0, 0)], p.diagonal[(1, 1)], p.diagonal[(2, 2)]]).fold(0.0, f64::max);
        reduced.max(points).max(f64::MIN_POSITIVE)
    }

    /// Solves `(H + μ diag H) δ = −g` by eliminating the points. `None` when
    /// a damped block is not positive definite.
    fn damped_step(&self, mu: f64) -> Option<DVector<f64>> {
        let m = self.reduced.nrows();
        let floor = 1e-12 * self.max_diagonal();
        let mut s = self.reduced.clone();
        for i in 0..m {
            s[(i, i)] += mu * self.reduced[(i, i)].max(floor);
        }
        let mut rhs = -self.gradient.rows(0, m).into_owned();
        let mut inverses = Vec::with_capacity(self.points.len());
        for (p, blk) in self.points.iter().enumerate() {
            let mut c = blk.diagonal;
            for k in 0..3 {
                c[(k, k)] += mu * blk.diagonal[(k, k)].max(floor);
            }
            let c_inv = c.cholesky()?.inverse();
            let gp = self.gradient.fixed_rows::<3>(m + 3 * p).into_owned();
            let w = c_inv * gp;
            for (i, bi) in &blk.coupling {
                rhs[*i] += bi.dot(&w);
                let bi_c = c_inv * bi;
                for (j, bj) in &blk.coupling {
                    s[(*i, *j)] -= bi_c.dot(bj);
                }
            }
            inverses.push(c_inv);
        }
        let mut step = DVector::zeros(self.gradient.len());
        if m > 0 {
            step.rows_mut(0, m).copy_from(&s.cholesky()?.solve(&rhs));
        }
        for (p, (blk, c_inv)) in self.points.iter().zip(&inverses).enumerate() {
            let mut r = -self.gradient.fixed_rows::<3>(m + 3 * p).into_owned();
            for (i, bi) in &blk.coupling {
                r -= bi * step[*i];
            }
            step.fixed_rows_mut::<3>(m + 3 * p).copy_from(&(c_inv * r));
        }
        Some(step)
    }

    /// `δᵀ H δ`.
    fn quadratic(&self, step: &DVector<f64>) -> f64 {
        let m = self.reduced.nrows();
        let a = step.rows(0, m);
        let mut q = a.dot(&(&self.reduced * a));
        for (p, blk) in self.points.iter().enumerate() {
            let d = step.fixed_rows::<3>(m + 3 * p);
            q += d.dot(&(blk.diagonal * d));
            for (i, bi) in &blk.coupling {
                q += 2.0 * step[*i] * bi.dot(&d);
            }
        }
        q
    }
}

impl BaProblem {
    pub fn new(
        intrinsics: Vec<Intrinsics>,
        poses: Vec<GlobalPose>,
        points: Vec<Vec3>,
        lines: Vec<Line3>,
        point_obs: Vec<PointObservation>,
        line_obs: Vec<LineObservation>,
        coplanar: Vec<CoplanarPair>,
    ) -> Result<Self, BaError> {
        if intrinsics.len() != poses.len() {
            return Err(BaError::InvalidReference { what: "camera intrinsics", index: intrinsics.len().min(poses.len()) });
        }
        for (i, o) in point_obs.iter().enumerate() {
            if o.camera >= poses.len() || o.point >= points.len() {
                return Err(BaError::InvalidReference { what: "camera or point", index: i });
            }
        }
        for (i, o) in line_obs.iter().enumerate() {
            if o.camera >= poses.len() || o.line >= lines.len() {
                return Err(BaError::InvalidReference { what: "camera or line", index: i });
            }
        }
        for (i, c) in coplanar.iter().enumerate() {
            if c.first >= lines.len() || c.second >= lines.len() || c.first == c.second {
                return Err(BaError::InvalidReference { what: "line pair", index: i });
            }
        }
        if poses.len() < 2 || (point_obs.is_empty() && line_obs.is_empty()) {
            return Err(BaError::EmptyProblem);
        }
        let mut seen: Vec<Vec<usize>> = vec![Vec::new(); lines.len()];
        for o in &line_obs {
            seen[o.line].push(o.camera);
        }
        for s in &mut seen {
            s.sort_unstable();
            s.dedup();
        }
        let mut coplanar_terms = Vec::new();
        for (i, c) in coplanar.iter().enumerate() {
            for cam in &seen[c.first] {
                if seen[c.second].binary_search(cam).is_ok() {
                    coplanar_terms.push((i, *cam));
                }
            }
        }
        let baseline = (poses[1].center - poses[0].center).norm();
        if !(baseline > 0.0) {
            return Err(BaError::EmptyProblem);
        }
        Ok(Self {
            intrinsics,
            poses,
            points,
            lines: lines.iter().map(canonical_line).collect(),
            point_obs,
            line_obs,
            coplanar,
            coplanar_terms,
            baseline,
            progress: Progress::Fresh,
        })
    }

    /// Residual blocks in evaluation order.
    pub fn blocks(&self) -> Vec<Block> {
        let mut b: Vec<Block> = (0..self.point_obs.len()).map(Block::Point).collect();
        b.extend((0..self.line_obs.len()).map(Block::Line));
        b.extend(self.coplanar_terms.iter().map(|&(pair, camera)| Block::Coplanar { pair, camera }));
        b
    }

    pub fn coplanar_term_count(&self) -> usize {
        self.coplanar_terms.len()
    }

    pub fn residual_count(&self) -> usize {
        2 * (self.point_obs.len() + self.line_obs.len() + self.coplanar_terms.len())
    }

    pub fn parameter_count(&self, stage: Stage) -> usize {
        Layout::new(self, stage).len
    }

    /// Marks the rotations-fixed stage as done without running it.
    pub fn skip_rotations_fixed(&mut self) {
        self.progress = Progress::RotationsFixedDone;
    }

    fn camera<S: Scalar>(&self, i: usize, d: &[S]) -> (M3<S>, V3<S>) {
        let r0 = self.poses[i].rotation.matrix();
        let r0: M3<S> = [0, 1, 2].map(|a| [0, 1, 2].map(|b| S::cst(r0[(a, b)])));
        let w = skew([d[0], d[1], d[2]]);
        let w2 = mat_mul(&w, &w);
        let mut a = [[S::cst(0.0); 3]; 3];
        for x in 0..3 {
            for y in 0..3 {
                let id = if x == y { 1.0 } else { 0.0 };
                a[x][y] = S::cst(id) + w[x][y] + S::cst(0.5) * w2[x][y];
            }
        }
        let r = mat_mul(&a, &r0);
        let c = match i {
            0 => v3(&self.poses[0].center),
            1 => {
                let c0 = self.poses[0].center;
                let b = (self.poses[1].center - c0).normalize();
                let (e1, e2) = tangent_basis(&b);
                let dir = add(v3(&b), add(scale(v3(&e1), d[3]), scale(v3(&e2), d[4])));
                add(v3(&c0), scale(normalize(dir), S::cst(self.baseline)))
            }
            _ => add(v3(&self.poses[i].center), [d[3], d[4], d[5]]),
        };
        (r, c)
    }

    fn line<S: Scalar>(&self, i: usize, d: &[S]) -> (V3<S>, V3<S>) {
        let l = &self.lines[i];
        let dir = l.direction.into_inner();
        let (e1, e2) = tangent_basis(&dir);
        let direction = normalize(add(v3(&dir), add(scale(v3(&e1), d[0]), scale(v3(&e2), d[1]))));
        let point = add(v3(&l.point), add(scale(v3(&e1), d[2]), scale(v3(&e2), d[3])));
        (point, direction)
    }

    fn point<S: Scalar>(&self, i: usize, d: &[S]) -> V3<S> {
        add(v3(&self.points[i]), [d[0], d[1], d[2]])
    }

    /// Residual of one block for local tangent components `d` (camera,
    /// then entities, as in [`Block`]).
    fn block_residual<S: Scalar>(&self, b: Block, cam_d: &[S], ent_d: &[S]) -> [S; 2] {
        match b {
            Block::Point(o) => {
                let obs = &self.point_obs[o];
                let (r, c) = self.camera(obs.camera, cam_d);
                let p = project(&r, c, self.point(obs.point, ent_d), &self.intrinsics[obs.camera]);
                [p[0] - S::cst(obs.pixel.x), p[1] - S::cst(obs.pixel.y)]
            }
            Block::Line(o) => {
                let obs = &self.line_obs[o];
                let (r, c) = self.camera(obs.camera, cam_d);
                let (q, d) = self.line(obs.line, ent_d);
                line_distances(&r, c, q, d, &self.intrinsics[obs.camera], &obs.a, &obs.b)
            }
            Block::Coplanar { pair, camera } => {
                let cp = self.coplanar[pair];
                let (r, c) = self.camera(camera, cam_d);
                let (qa, da) = self.line(cp.first, &ent_d[..4]);
                let (qb, db) = self.line(cp.second, &ent_d[4..8]);
                let (pa, pb) = closest_points(qa, da, qb, db);
                let k = &self.intrinsics[camera];
                let (xa, xb) = (project(&r, c, pa, k), project(&r, c, pb, k));
                [xa[0] - xb[0], xa[1] - xb[1]]
            }
        }
    }

    fn block_camera(&self, b: Block) -> usize {
        match b {
            Block::Point(o) => self.point_obs[o].camera,
            Block::Line(o) => self.line_obs[o].camera,
            Block::Coplanar { camera, .. } => camera,
        }
    }

    fn block_entity_slots(&self, b: Block, layout: &Layout) -> Vec<Option<usize>> {
        let range = |s: usize, n: usize| (s..s + n).map(Some).collect::<Vec<_>>();
        match b {
            Block::Point(o) => range(layout.point[self.point_obs[o].point], 3),
            Block::Line(o) => range(layout.line[self.line_obs[o].line], 4),
            Block::Coplanar { pair, .. } => {
                let cp = self.coplanar[pair];
                let mut v = range(layout.line[cp.first], 4);
                v.extend(range(layout.line[cp.second], 4));
                v
            }
        }
    }

    fn eval_block(&self, b: Block, layout: &Layout) -> BlockEval {
        let mut seeder = Seeder { globals: Vec::with_capacity(BLOCK_VARS) };
        let cam = seeder.take(&layout.camera[self.block_camera(b)]);
        let ent = seeder.take(&self.block_entity_slots(b, layout));
        let r = self.block_residual(b, &cam, &ent);
        BlockEval { globals: seeder.globals, residual: [r[0].v, r[1].v], jacobian: [r[0].d, r[1].d] }
    }

    /// All residuals at the current state, in block order.
    pub fn residuals(&self) -> Vec<f64> {
        self.blocks()
            .par_iter()
            .map(|&b| {
                let (c, e) = ([0.0; 6], [0.0; 8]);
                self.block_residual::<f64>(b, &c, &e)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    }

    /// Sum of squared residuals.
    pub fn cost(&self) -> f64 {
        self.residuals().iter().map(|r| r * r).sum()
    }

    /// Residuals of one block and their derivatives with respect to the
    /// block's free parameters, listed by global index.
    pub fn block_jacobian(&self, b: Block, stage: Stage) -> (Vec<usize>, [f64; 2], DMatrix<f64>) {
        let layout = Layout::new(self, stage);
        let e = self.eval_block(b, &layout);
        let n = e.globals.len();
        let j = DMatrix::from_fn(2, n, |r, c| e.jacobian[r][c]);
        (e.globals, e.residual, j)
    }

    /// Applies a tangent step given in the layout of `stage`.
    pub fn retract(&self, step: &[f64], stage: Stage) -> BaProblem {
        let layout = Layout::new(self, stage);
        let mut out = self.clone();
        let get = |s: &Option<usize>| s.map_or(0.0, |g| step[g]);
        for (i, slots) in layout.camera.iter().enumerate() {
            let w = Vec3::new(get(&slots[0]), get(&slots[1]), get(&slots[2]));
            let pose = &mut out.poses[i];
            pose.rotation = Rotation3::new(w) * pose.rotation;
            match i {
                0 => {}
                1 => {
                    let c0 = self.poses[0].center;
                    let b = (self.poses[1].center - c0).normalize();
                    let (e1, e2) = tangent_basis(&b);
                    let dir = (b + e1 * get(&slots[3]) + e2 * get(&slots[4])).normalize();
                    pose.center = c0 + dir * self.baseline;
                }
                _ => pose.center += Vec3::new(get(&slots[3]), get(&slots[4]), get(&slots[5])),
            }
        }
        for (i, &s) in layout.point.iter().enumerate() {
            out.points[i] += Vec3::new(step[s], step[s + 1], step[s + 2]);
        }
        for (i, &s) in layout.line.iter().enumerate() {
            let l = &self.lines[i];
            let dir = l.direction.into_inner();
            let (e1, e2) = tangent_basis(&dir);
            let d = Unit::new_normalize(dir + e1 * step[s] + e2 * step[s + 1]);
            let q = l.point + e1 * step[s + 2] + e2 * step[s + 3];
            out.lines[i] = canonical_line(&Line3::new(d, q));
        }
        out
    }

    /// The same problem after `x ↦ s R x + t` applied to every camera and
    /// every structure element.
    pub fn transformed(&self, s: f64, r: &Rotation3<f64>, t: &Vec3) -> BaProblem {
        let mut out = self.clone();
        for p in &mut out.poses {
            *p = GlobalPose::from_center(p.rotation * r.inverse(), r * p.center * s + t);
        }
        for x in &mut out.points {
            *x = r * *x * s + t;
        }
        for l in &mut out.lines {
            *l = canonical_line(&Line3::new(Unit::new_unchecked(r * l.direction.into_inner()), r * l.point * s + t));
        }
        out.baseline *= s;
        out
    }

    fn parameter_norm(&self) -> f64 {
        let c: f64 = self.poses.iter().map(|p| p.center.norm_squared()).sum();
        let x: f64 = self.points.iter().map(|p| p.norm_squared()).sum();
        let l: f64 = self.lines.iter().map(|l| l.point.norm_squared() + 1.0).sum();
        (c + x + l).sqrt()
    }

    /// Normal equations `JᵀJ` split into camera/line and point parts,
    /// gradient `Jᵀr` and cost at the current state.
    fn linearize(&self, layout: &Layout) -> (Normal, f64) {
        let evals: Vec<BlockEval> = self.blocks().par_iter().map(|&b| self.eval_block(b, layout)).collect();
        let m = layout.reduced;
        let mut n = Normal {
            reduced: DMatrix::zeros(m, m),
            points: vec![PointBlock::default(); self.points.len()],
            gradient: DVector::zeros(layout.len),
        };
        let point_of = |g: usize| (g >= m).then(|| (g - m) / 3);
        let mut cost = 0.0;
        for e in &evals {
            for row in 0..2 {
                let r = e.residual[row];
                cost += r * r;
                let jr = &e.jacobian[row];
                for (a, &ga) in e.globals.iter().enumerate() {
                    n.gradient[ga] += jr[a] * r;
                    for (b, &gb) in e.globals.iter().enumerate() {
                        let v = jr[a] * jr[b];
                        match (point_of(ga), point_of(gb)) {
                            (None, None) => n.reduced[(ga, gb)] += v,
                            (Some(p), Some(_)) => n.points[p].diagonal[((ga - m) % 3, (gb - m) % 3)] += v,
                            (None, Some(p)) => n.points[p].add_coupling(ga, (gb - m) % 3, v),
                            (Some(_), None) => {}
                        }
                    }
                }
            }
        }
        (n, cost)
    }

    /// Levenberg-Marquardt on one stage. The state only changes on accepted
    /// steps, so an error leaves the last valid state in place.
    pub fn solve(&mut self, stage: Stage, cfg: &BaConfig) -> Result<SolveReport, BaError> {
        if stage == Stage::Full && self.progress == Progress::Fresh {
            return Err(BaError::StageOrder);
        }
        let layout = Layout::new(self, stage);
        if layout.len == 0 || self.blocks().is_empty() {
            return Err(BaError::EmptyProblem);
        }
        let (mut normal, linearized) = self.linearize(&layout);
        // acceptance and the trace use `cost()` only; the linearization sums
        // the same residuals along another path and can differ by roundoff
        let mut cost = self.cost();
        if !linearized.is_finite() || !cost.is_finite() {
            return Err(BaError::DivergedNaN { iteration: 0 });
        }
        let mut costs = vec![cost];
        let mut mu = 1e-4;
        let mut nu = 2.0;
        let mut iterations = 0;
        let termination = loop {
            if normal.gradient.amax() < cfg.gtol {
                break Termination::GradientTolerance;
            }
            if iterations >= cfg.max_iters {
                break Termination::MaxIterations;
            }
            iterations += 1;

            let Some(step) = normal.damped_step(mu) else {
                mu *= nu;
                nu *= 2.0;
                continue;
            };
            if step.norm() <= cfg.xtol * (self.parameter_norm() + cfg.xtol) {
                break Termination::StepTolerance;
            }
            let trial = self.retract(step.as_slice(), stage);
            let trial_cost = trial.cost();
            if !trial_cost.is_finite() {
                return Err(BaError::DivergedNaN { iteration: iterations });
            }
            if trial_cost < cost {
                let predicted = -(2.0 * step.dot(&normal.gradient) + normal.quadratic(&step));
                let rho = (cost - trial_cost) / predicted.max(f64::MIN_POSITIVE);
                mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let decrease = cost - trial_cost;
                let previous = cost;
                self.poses = trial.poses;
                self.points = trial.points;
                self.lines = trial.lines;
                let linearized;
                (normal, linearized) = self.linearize(&layout);
                if !linearized.is_finite() {
                    return Err(BaError::DivergedNaN { iteration: iterations });
                }
                cost = trial_cost;
                costs.push(cost);
                if decrease <= cfg.ftol * previous {
                    break Termination::CostTolerance;
                }
            } else {
                mu *= nu;
                nu *= 2.0;
            }
        };
        if stage == Stage::RotationsFixed {
            self.progress = Progress::RotationsFixedDone;
        }
        Ok(SolveReport { stage, iterations, costs, termination })
    }

    /// Runs the configured schedule: rotations fixed (unless disabled), then full.
    pub fn solve_schedule(&mut self, cfg: &BaConfig) -> Result<Vec<SolveReport>, BaError> {
        let mut out = Vec::new();
        if cfg.stage1 {
            out.push(self.solve(Stage::RotationsFixed, cfg)?);
        } else {
            self.skip_rotations_fixed();
        }
        out.push(self.solve(Stage::Full, cfg)?);
        Ok(out)
    }
}
