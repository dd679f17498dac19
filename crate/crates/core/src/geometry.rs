//! Calibrated two-view geometry: normalized observations, triangulation of
//! points and lines, closest points between 3D lines and reprojection.
//!
//! Every image quantity in this module lives in normalized coordinates
//! (`K = I`). [`Intrinsics`] converts to and from pixels.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type UnitDir3 = Unit<Vector3<f64>>;

/// Rays, planes and lines closer than this to parallel are degenerate.
pub const PARALLEL_FLOOR_DEG: f64 = 0.1;

const COINCIDENT_PX: f64 = 1e-9;
const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("segment endpoints coincide")]
    CoincidentEndpoints,
    #[error("viewing rays are parallel")]
    ParallelRays,
    #[error("triangulated point lies behind a camera")]
    NegativeDepth,
    #[error("back-projected planes are parallel")]
    ParallelPlanes,
    #[error("lines are parallel")]
    ParallelLines,
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("camera center lies on the line")]
    CenterOnLine,
    #[error("invalid intrinsics")]
    InvalidIntrinsics,
    #[error("matrix is not a rotation")]
    NotARotation,
    #[error("relative pose must relate two distinct cameras")]
    SameCamera,
    #[error("segment endpoint is {0:.3} px away from its supporting line")]
    EndpointOffLine(f64),
}

/// Pinhole intrinsics plus image size, all in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if finite && self.fx > 0.0 && self.fy > 0.0 && self.width > 0.0 && self.height > 0.0 {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics)
        }
    }

    /// Image area in px².
    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Image diagonal in px.
    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }

    pub fn normalize(&self, px: &Vec2) -> HomoPoint2 {
        HomoPoint2(Vec3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0))
    }

    pub fn denormalize(&self, p: &HomoPoint2) -> Vec2 {
        let q = p.dehomogenized();
        Vec2::new(q.x * self.fx + self.cx, q.y * self.fy + self.cy)
    }

    /// The line in pixel coordinates, `K⁻ᵀ l`, scaled so that `(a, b)` is a unit
    /// normal; dotting it with `(x, y, 1)` gives a signed pixel distance.
    pub fn line_to_pixels(&self, l: &HomoLine2) -> Vec3 {
        let v = l.as_vector();
        let a = v.x / self.fx;
        let b = v.y / self.fy;
        let c = v.z - self.cx * a - self.cy * b;
        let s = a.hypot(b);
        Vec3::new(a / s, b / s, c / s)
    }

    /// Unsigned pixel distance between a pixel and a normalized line.
    pub fn pixel_distance_to_line(&self, l: &HomoLine2, px: &Vec2) -> f64 {
        let lp = self.line_to_pixels(l);
        (lp.x * px.x + lp.y * px.y + lp.z).abs()
    }

    pub fn inside(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width && px.y <= self.height
    }
}

/// Homogeneous normalized image point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomoPoint2(Vec3);

impl HomoPoint2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self(Vec3::new(x, y, 1.0))
    }

    /// Dehomogenizes an arbitrary 3-vector; `None` at infinity.
    pub fn from_homogeneous(v: &Vec3) -> Option<Self> {
        if v.z == 0.0 || !v.iter().all(|c| c.is_finite()) {
            return None;
        }
        Some(Self(v / v.z))
    }

    pub fn as_vector(&self) -> &Vec3 {
        &self.0
    }

    pub fn dehomogenized(&self) -> Vec2 {
        Vec2::new(self.0.x / self.0.z, self.0.y / self.0.z)
    }
}

/// Homogeneous normalized image line, unit norm, first nonzero entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomoLine2(Vec3);

impl HomoLine2 {
    /// Normalizes and canonicalizes; `None` for the zero vector.
    pub fn from_vector(v: &Vec3) -> Option<Self> {
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let mut l = v / n;
        let first = l.iter().copied().find(|c| *c != 0.0).unwrap_or(0.0);
        if first < 0.0 {
            l = -l;
        }
        Some(Self(l))
    }

    pub fn through(p: &HomoPoint2, q: &HomoPoint2) -> Option<Self> {
        Self::from_vector(&p.0.cross(&q.0))
    }

    pub fn as_vector(&self) -> &Vec3 {
        &self.0
    }

    /// Point of the line closest to the image origin (the principal point).
    pub fn foot_from_origin(&self) -> HomoPoint2 {
        let l = &self.0;
        let s = l.x * l.x + l.y * l.y;
        HomoPoint2(Vec3::new(-l.x * l.z / s, -l.y * l.z / s, 1.0))
    }

    pub fn incidence(&self, p: &HomoPoint2) -> f64 {
        self.0.dot(&p.0)
    }
}

/// A detected segment: pixel endpoints plus the normalized supporting line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub a: Vec2,
    pub b: Vec2,
    pub line: HomoLine2,
    pub image: usize,
}

impl Segment2 {
    /// Builds the segment and fits its supporting line through both endpoints.
    pub fn new(a: Vec2, b: Vec2, k: &Intrinsics, image: usize) -> Result<Self, GeometryError> {
        let line = line_from_segment(&a, &b, k)?;
        Ok(Self { a, b, line, image })
    }

    /// Uses a given supporting line; both endpoints must lie within 0.5 px of it.
    pub fn with_line(
        a: Vec2,
        b: Vec2,
        line: HomoLine2,
        k: &Intrinsics,
        image: usize,
    ) -> Result<Self, GeometryError> {
        if (a - b).norm() < COINCIDENT_PX {
            return Err(GeometryError::CoincidentEndpoints);
        }
        let off = k.pixel_distance_to_line(&line, &a).max(k.pixel_distance_to_line(&line, &b));
        if !(off <= 0.5) {
            return Err(GeometryError::EndpointOffLine(off));
        }
        Ok(Self { a, b, line, image })
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }

    pub fn length(&self) -> f64 {
        (self.a - self.b).norm()
    }

    /// Minimum distance between the endpoints of two segments, in pixels.
    pub fn endpoint_distance(&self, other: &Segment2) -> f64 {
        [(self.a, other.a), (self.a, other.b), (self.b, other.a), (self.b, other.b)]
            .iter()
            .map(|(p, q)| (p - q).norm())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Infinite 3D line as a unit direction and a point on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line3 {
    pub direction: UnitDir3,
    pub point: Vec3,
}

impl Line3 {
    pub fn new(direction: UnitDir3, point: Vec3) -> Self {
        Self { direction, point }
    }

    pub fn through(p: &Vec3, q: &Vec3) -> Option<Self> {
        let d = q - p;
        if d.norm() == 0.0 {
            return None;
        }
        Some(Self { direction: Unit::new_normalize(d), point: *p })
    }

    pub fn at(&self, s: f64) -> Vec3 {
        self.point + self.direction.into_inner() * s
    }

    /// Parameter of the orthogonal projection of `p` on the line.
    pub fn parameter_of(&self, p: &Vec3) -> f64 {
        self.direction.dot(&(p - self.point))
    }

    pub fn distance_to(&self, p: &Vec3) -> f64 {
        self.direction.cross(&(p - self.point)).norm()
    }
}

/// Relative motion between two cameras: `x_to = R x_from + λ t̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub from: usize,
    pub to: usize,
    pub rotation: Rotation3<f64>,
    pub direction: UnitDir3,
}

impl RelativePose {
    pub fn new(
        from: usize,
        to: usize,
        rotation: Rotation3<f64>,
        direction: UnitDir3,
    ) -> Result<Self, GeometryError> {
        if from == to {
            return Err(GeometryError::SameCamera);
        }
        Ok(Self { from, to, rotation, direction })
    }

    /// The exact inverse motion `(Rᵀ, −Rᵀ t̂)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.inverse();
        Self {
            from: self.to,
            to: self.from,
            rotation: rt,
            direction: Unit::new_unchecked(-(rt * self.direction.into_inner())),
        }
    }

    /// Relative motion between two global poses; the translation scale is dropped.
    pub fn between(from: usize, to: usize, a: &GlobalPose, b: &GlobalPose) -> Result<Self, GeometryError> {
        let r = b.rotation * a.rotation.inverse();
        let t = b.rotation * (a.center - b.center);
        if t.norm() == 0.0 {
            return Err(GeometryError::ParallelRays);
        }
        Self::new(from, to, r, Unit::new_normalize(t))
    }
}

/// World-to-camera pose `x_cam = R X + t`, camera center `C = −Rᵀ t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalPose {
    pub rotation: Rotation3<f64>,
    pub center: Vec3,
}

impl GlobalPose {
    pub fn identity() -> Self {
        Self { rotation: Rotation3::identity(), center: Vec3::zeros() }
    }

    pub fn from_center(rotation: Rotation3<f64>, center: Vec3) -> Self {
        Self { rotation, center }
    }

    pub fn from_translation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self { center: -(rotation.inverse() * translation), rotation }
    }

    pub fn translation(&self) -> Vec3 {
        -(self.rotation * self.center)
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation * (p - self.center)
    }

    /// Depth of a world point along the optical axis.
    pub fn depth(&self, p: &Vec3) -> f64 {
        self.to_camera(p).z
    }

    /// World-frame direction of the viewing ray through `p`.
    pub fn ray(&self, p: &HomoPoint2) -> Vec3 {
        self.rotation.inverse() * p.as_vector()
    }

    /// World-frame normal of the plane back-projected from `l`.
    pub fn plane_normal(&self, l: &HomoLine2) -> Vec3 {
        self.rotation.inverse() * l.as_vector()
    }
}

/// Validates a 3×3 matrix as a proper rotation within 1e-9.
pub fn rotation_from_matrix(m: &Matrix3<f64>) -> Result<Rotation3<f64>, GeometryError> {
    rotation_from_matrix_tol(m, ROTATION_TOL)
}

pub(crate) fn rotation_from_matrix_tol(
    m: &Matrix3<f64>,
    tol: f64,
) -> Result<Rotation3<f64>, GeometryError> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NotARotation);
    }
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    if ortho > tol || (m.determinant() - 1.0).abs() > tol {
        return Err(GeometryError::NotARotation);
    }
    Ok(Rotation3::from_matrix_unchecked(*m))
}

fn sin_floor(deg: f64) -> f64 {
    deg.to_radians().sin()
}

fn sin_between(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm() * b.norm();
    if na == 0.0 {
        0.0
    } else {
        a.cross(b).norm() / na
    }
}

pub fn normalize_point(px: &Vec2, k: &Intrinsics) -> HomoPoint2 {
    k.normalize(px)
}

pub fn line_from_segment(a: &Vec2, b: &Vec2, k: &Intrinsics) -> Result<HomoLine2, GeometryError> {
    if (a - b).norm() < COINCIDENT_PX {
        return Err(GeometryError::CoincidentEndpoints);
    }
    HomoLine2::through(&k.normalize(a), &k.normalize(b)).ok_or(GeometryError::CoincidentEndpoints)
}

/// Ray parameters `(s, t)` of the common perpendicular of `c1 + s r1` and `c2 + t r2`.
fn ray_parameters(c1: &Vec3, r1: &Vec3, c2: &Vec3, r2: &Vec3) -> Result<(f64, f64), GeometryError> {
    if sin_between(r1, r2) < sin_floor(PARALLEL_FLOOR_DEG) {
        return Err(GeometryError::ParallelRays);
    }
    let w = c1 - c2;
    let a = r1.dot(r1);
    let b = r1.dot(r2);
    let c = r2.dot(r2);
    let d = r1.dot(&w);
    let e = r2.dot(&w);
    let den = a * c - b * b;
    Ok(((b * e - c * d) / den, (a * e - b * d) / den))
}

/// Midpoint of the common perpendicular of the two viewing rays.
pub fn triangulate_point(
    p1: &HomoPoint2,
    p2: &HomoPoint2,
    pose1: &GlobalPose,
    pose2: &GlobalPose,
) -> Result<Vec3, GeometryError> {
    let r1 = pose1.ray(p1);
    let r2 = pose2.ray(p2);
    let (s, t) = ray_parameters(&pose1.center, &r1, &pose2.center, &r2)?;
    let p = (pose1.center + r1 * s + pose2.center + r2 * t) * 0.5;
    if pose1.depth(&p) <= 0.0 || pose2.depth(&p) <= 0.0 {
        return Err(GeometryError::NegativeDepth);
    }
    Ok(p)
}

/// Point of the `anchor` viewing ray closest to the `other` viewing ray.
///
/// Used where one camera is the reference of a construction (the middle camera
/// of a triplet), so that errors in the other view move the point only along
/// the anchor ray.
pub fn triangulate_point_anchored(
    p_anchor: &HomoPoint2,
    p_other: &HomoPoint2,
    anchor: &GlobalPose,
    other: &GlobalPose,
) -> Result<Vec3, GeometryError> {
    let r1 = anchor.ray(p_anchor);
    let r2 = other.ray(p_other);
    let (s, t) = ray_parameters(&anchor.center, &r1, &other.center, &r2)?;
    if s <= 0.0 || t <= 0.0 {
        return Err(GeometryError::NegativeDepth);
    }
    Ok(anchor.center + r1 * s)
}

/// Intersection of the two planes back-projected from `l1` and `l2`. The
/// returned point is the point of the line closest to the world origin.
pub fn triangulate_line(
    l1: &HomoLine2,
    l2: &HomoLine2,
    pose1: &GlobalPose,
    pose2: &GlobalPose,
) -> Result<Line3, GeometryError> {
    let n1 = pose1.plane_normal(l1);
    let n2 = pose2.plane_normal(l2);
    if sin_between(&n1, &n2) < sin_floor(PARALLEL_FLOOR_DEG) {
        return Err(GeometryError::ParallelPlanes);
    }
    let d = n1.cross(&n2).normalize();
    let m = Matrix3::from_rows(&[n1.transpose(), n2.transpose(), d.transpose()]);
    let rhs = Vec3::new(n1.dot(&pose1.center), n2.dot(&pose2.center), 0.0);
    let point = m.lu().solve(&rhs).ok_or(GeometryError::ParallelPlanes)?;
    Ok(Line3 { direction: Unit::new_unchecked(d), point })
}

/// Closest points `(P_ab ∈ La, P_ba ∈ Lb)` of two non-parallel lines.
pub fn closest_points_between_lines(la: &Line3, lb: &Line3) -> Result<(Vec3, Vec3), GeometryError> {
    let da = la.direction.into_inner();
    let db = lb.direction.into_inner();
    if sin_between(&da, &db) < sin_floor(PARALLEL_FLOOR_DEG) {
        return Err(GeometryError::ParallelLines);
    }
    let (s, t) = ray_parameters(&la.point, &da, &lb.point, &db)?;
    Ok((la.point + da * s, lb.point + db * t))
}

pub fn project_point(p: &Vec3, pose: &GlobalPose) -> Result<HomoPoint2, GeometryError> {
    let x = pose.to_camera(p);
    if !(x.z > 0.0) {
        return Err(GeometryError::BehindCamera);
    }
    Ok(HomoPoint2(x / x.z))
}

pub fn project_line(l: &Line3, pose: &GlobalPose) -> Result<HomoLine2, GeometryError> {
    let rel = l.point - pose.center;
    let n = l.direction.cross(&rel);
    if n.norm() <= 1e-12 * rel.norm().max(1.0) {
        return Err(GeometryError::CenterOnLine);
    }
    HomoLine2::from_vector(&(pose.rotation * n)).ok_or(GeometryError::CenterOnLine)
}

/// Angle in degrees between two undirected 3D directions, in `[0, 90]`.
pub fn undirected_angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    let c = (a.dot(b).abs() / (a.norm() * b.norm())).min(1.0);
    c.acos().to_degrees()
}
