//! Rigid transforms, the pinhole camera, plane algebra and the horizon line.
//!
//! Conventions: distances in meters; pixel coordinates have their origin at the
//! top-left pixel center with `+v` pointing down. A [`Pose`] used for projection
//! maps world points into the camera frame (`X_cam = R * X_world + t`); poses
//! stored in a trajectory map camera to world.

use nalgebra::{DMatrix, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3, Vector6};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance enforced on stored rotations.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate plane: normal vector is zero")]
    DegeneratePlane,
    #[error("degenerate plane fit: {0}")]
    DegenerateFit(&'static str),
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("matrix is not a rotation (orthonormality error {0:e})")]
    NotARotation(f64),
}

/// Rigid transform with an optional timestamp in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub timestamp: Option<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            timestamp: None,
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with `det = +1`.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let err = orthonormality_error(&rotation);
        if err > ROTATION_TOL || (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotARotation(err));
        }
        Ok(Self {
            rotation,
            translation,
            timestamp: None,
        })
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vec3) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
            timestamp: None,
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self::from_rotation(q.to_rotation_matrix(), translation)
    }

    pub fn with_timestamp(mut self, timestamp: Option<f64>) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first. The timestamp of `self` is kept.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
            timestamp: self.timestamp,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            timestamp: self.timestamp,
        }
    }

    /// Left-multiplies by the increment `(ω, v)`: `R ← exp(ω)·R`, `t ← exp(ω)·t + v`.
    pub fn left_update(&self, xi: &Vector6<f64>) -> Pose {
        let omega = Vec3::new(xi[0], xi[1], xi[2]);
        let v = Vec3::new(xi[3], xi[4], xi[5]);
        let dr = *Rotation3::new(omega).matrix();
        Pose {
            rotation: dr * self.rotation,
            translation: dr * self.translation + v,
            timestamp: self.timestamp,
        }
    }

    /// Geodesic angle between the two rotations, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }
}

/// Max-abs entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Closest rotation matrix in the Frobenius sense.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Plane `a·x + b·y + c·z + d = 0` with a unit normal in canonical sign.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Plane {
    /// Normalizes raw coefficients and applies the canonical sign: the
    /// largest-magnitude normal component is positive (first axis wins ties).
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self, GeometryError> {
        let norm = (a * a + b * b + c * c).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(GeometryError::DegeneratePlane);
        }
        let n = [a / norm, b / norm, c / norm];
        let mut lead = 0;
        for i in 1..3 {
            if n[i].abs() > n[lead].abs() {
                lead = i;
            }
        }
        let s = if n[lead] < 0.0 { -1.0 } else { 1.0 };
        Ok(Self {
            a: s * n[0],
            b: s * n[1],
            c: s * n[2],
            d: s * d / norm,
        })
    }

    pub fn from_normal_point(normal: &Vec3, point: &Vec3) -> Result<Self, GeometryError> {
        Self::new(normal.x, normal.y, normal.z, -normal.dot(point))
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::new(self.a, self.b, self.c)
    }

    pub fn coefficients(&self) -> [f64; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.a * p.x + self.b * p.y + self.c * p.z + self.d
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.signed_distance(p).abs()
    }

    /// Unit normal oriented from the origin towards the plane.
    ///
    /// For a plane fitted in camera coordinates this is the "down" direction
    /// expected by [`horizon_line`].
    pub fn normal_towards_plane(&self) -> Vec3 {
        if self.d > 0.0 {
            -self.normal()
        } else {
            self.normal()
        }
    }

    /// Angle between the two (unsigned) normals, in radians.
    pub fn normal_angle(&self, other: &Plane) -> f64 {
        self.normal().dot(&other.normal()).abs().min(1.0).acos()
    }
}

/// `|a·x + b·y + c·z + d| / √(a² + b² + c²)` on raw, possibly unnormalized coefficients.
pub fn point_plane_distance(p: &Vec3, coeffs: [f64; 4]) -> Result<f64, GeometryError> {
    let [a, b, c, d] = coeffs;
    let norm = (a * a + b * b + c * c).sqrt();
    if !(norm > 0.0) {
        return Err(GeometryError::DegeneratePlane);
    }
    Ok((a * p.x + b * p.y + c * p.z + d).abs() / norm)
}

/// Total-least-squares plane through the centroid of `points`.
///
/// The normal is the right singular vector of the smallest singular value of
/// the centered `n × 3` point matrix.
pub fn fit_plane_svd(points: &[Vec3]) -> Result<Plane, GeometryError> {
    if points.len() < 3 {
        return Err(GeometryError::DegenerateFit("fewer than 3 points"));
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let centered = DMatrix::from_fn(points.len(), 3, |i, j| points[i][j] - centroid[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(GeometryError::DegenerateFit("svd did not converge"))?;
    let sv = &svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let (largest, middle) = (sv[order[0]], sv[order[1]]);
    if !(largest > 0.0) || middle <= 1e-10 * largest {
        return Err(GeometryError::DegenerateFit(
            "points are collinear or coincident",
        ));
    }
    let row = v_t.row(order[2]);
    let normal = Vec3::new(row[0], row[1], row[2]);
    Plane::from_normal_point(&normal, &centroid)
}

/// Pinhole intrinsics plus image size.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64)
        {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point.
    pub fn project_camera(&self, x_cam: &Vec3) -> Result<Vec2, GeometryError> {
        if !(x_cam.z > 0.0) {
            return Err(GeometryError::BehindCamera(x_cam.z));
        }
        Ok(Vec2::new(
            self.fx * x_cam.x / x_cam.z + self.cx,
            self.fy * x_cam.y / x_cam.z + self.cy,
        ))
    }

    /// Camera-frame point at `depth` along the ray through `pixel`.
    pub fn back_project(&self, pixel: &Vec2, depth: f64) -> Vec3 {
        Vec3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Whether a pixel lies inside `[0, width) × [0, height)`.
    pub fn contains(&self, pixel: &Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// `u = fx·x/z + cx`, `v = fy·y/z + cy` with `X_cam = R·X_world + t`.
pub fn project(k: &CameraIntrinsics, pose: &Pose, x_world: &Vec3) -> Result<Vec2, GeometryError> {
    k.project_camera(&pose.transform_point(x_world))
}

/// Image line `a·u + b·v + c = 0` with `a² + b² = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HorizonLine {
    pub fn signed(&self, u: f64, v: f64) -> f64 {
        self.a * u + self.b * v + self.c
    }

    /// Perpendicular pixel distance from `(u, v)` to the line.
    pub fn distance(&self, u: f64, v: f64) -> f64 {
        self.signed(u, v).abs()
    }

    /// Rays through sky-side pixels point against the plane normal.
    pub fn is_sky_side(&self, u: f64, v: f64) -> bool {
        self.signed(u, v) < 0.0
    }
}

/// Image of the line at infinity of a plane with camera-frame normal `n`.
///
/// `l = K⁻ᵀ·n`. Pixels whose rays satisfy `n·r < 0` are on the sky side, so `n`
/// should point from the camera towards the ground (see
/// [`Plane::normal_towards_plane`]). Returns `Ok(None)` when the plane is
/// fronto-parallel and has no finite horizon.
pub fn horizon_line(
    k: &CameraIntrinsics,
    plane_normal_cam: &Vec3,
) -> Result<Option<HorizonLine>, GeometryError> {
    let n = plane_normal_cam;
    if !(n.norm() > 0.0) {
        return Err(GeometryError::DegeneratePlane);
    }
    let la = n.x / k.fx;
    let lb = n.y / k.fy;
    let lc = n.z - k.cx * n.x / k.fx - k.cy * n.y / k.fy;
    let h = la.hypot(lb);
    if h <= 1e-12 * (la * la + lb * lb + lc * lc).sqrt() {
        return Ok(None);
    }
    Ok(Some(HorizonLine {
        a: la / h,
        b: lb / h,
        c: lc / h,
    }))
}

/// `x ↦ S·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Applies the transform to a camera-to-world pose.
    ///
    /// Rotation is left-composed; the scale only acts on the position.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * pose.rotation,
            translation: self.apply(&pose.translation),
            timestamp: pose.timestamp,
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }
}
