//! Camera model, angle-axis rotations and the point/line residual kernels.
//!
//! Poses map map-frame points into the camera frame: `x_cam = R(r) p + t`,
//! with the camera looking down `+z`, `x` to the right and `y` down.
//!
//! The residual kernels are written once, generically over [`DualNum`], so
//! the same code yields values (`f64`), exact gradients (`DualSVec64<6>`) and
//! exact Hessians (`Dual2SVec64<6>`) with respect to the pose parameters.

use nalgebra::{Matrix3, Vector3};
use num_dual::DualNum;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Squared angle below which the Rodrigues coefficients switch to their
/// Taylor series (angle < 1e-2 rad).
const SERIES_CUTOFF_SQ: f64 = 1e-4;

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// A 1382x512 wide-angle camera used by the synthetic benchmark.
    pub fn wide_1382x512() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 691.0, cy: 256.0, width: 1382.0, height: 512.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.width, self.height]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config(format!("invalid focal lengths in {self:?}")));
        }
        if !(self.cx > 0.0 && self.cx < self.width && self.cy > 0.0 && self.cy < self.height) {
            return Err(Error::Config(format!("principal point outside image in {self:?}")));
        }
        Ok(())
    }

    /// Closed bounds check: `0 <= u <= width`, `0 <= v <= height`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= self.width && v >= 0.0 && v <= self.height
    }

    /// Projects a camera-frame point. Returns `None` behind the camera.
    pub fn project(&self, x: &Vec3) -> Option<(f64, f64)> {
        if x.z <= 0.0 {
            return None;
        }
        Some((self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy))
    }

    /// `K^-1 [u, v, 1]^T`, a point on the normalized image plane `z = 1`.
    pub fn lift(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

/// Unit vector from the camera center toward an image point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing(Vec3);

impl Bearing {
    /// Normalizes `v`; it must be finite, nonzero and point in front of the camera.
    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::Domain(format!("cannot normalize bearing {v:?}")));
        }
        if v.z <= 0.0 {
            return Err(Error::Domain(format!("bearing {v:?} is not in front of the camera")));
        }
        Ok(Self(v / n))
    }

    /// Keeps an already unit-length `v` bit for bit, otherwise normalizes.
    pub fn from_unit(v: Vec3) -> Result<Self> {
        let b = Self::new(v)?;
        if (v.norm() - 1.0).abs() < 1e-12 {
            return Ok(Self(v));
        }
        Ok(b)
    }

    pub fn as_vector(&self) -> &Vec3 {
        &self.0
    }

    pub fn into_vector(self) -> Vec3 {
        self.0
    }
}

pub fn pixel_to_bearing(u: f64, v: f64, k: &CameraIntrinsics) -> Result<Bearing> {
    if !(u.is_finite() && v.is_finite()) || !k.contains(u, v) {
        return Err(Error::Domain(format!("pixel ({u}, {v}) outside the image")));
    }
    Bearing::new(k.lift(u, v))
}

/// Rigid transform from the map frame into the camera frame.
///
/// The angle-axis vector is the stored representation; the matrix is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Vec3::zeros(), translation: Vec3::zeros() }
    }

    pub fn from_matrix(rotation: &Mat3, translation: Vec3) -> Result<Self> {
        Ok(Self { rotation: rotation_log(rotation)?, translation })
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        rotation_exp(&self.rotation)
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation_matrix() * p + self.translation
    }

    /// Camera center in the map frame, `-R^T t`.
    pub fn camera_center(&self) -> Vec3 {
        -(self.rotation_matrix().transpose() * self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation_matrix().transpose();
        Self { rotation: -self.rotation, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Self {
        let r = self.rotation_matrix();
        let rotation = r * other.rotation_matrix();
        Self {
            rotation: rotation_log_unchecked(&rotation),
            translation: r * other.translation + self.translation,
        }
    }

    pub fn to_params(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn from_params(x: &[f64]) -> Self {
        Self {
            rotation: Vec3::new(x[0], x[1], x[2]),
            translation: Vec3::new(x[3], x[4], x[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite())
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues coefficients `(sin θ / θ, (1 - cos θ) / θ²)` from `θ²`.
fn rodrigues_coefficients<D: DualNum<Primitive = f64> + Copy>(theta_sq: D) -> (D, D) {
    if theta_sq.re() < SERIES_CUTOFF_SQ {
        let t2 = theta_sq;
        let t4 = t2 * t2;
        let t6 = t4 * t2;
        let t8 = t4 * t4;
        let a = -t2 / 6.0 + t4 / 120.0 - t6 / 5040.0 + t8 / 362_880.0 + 1.0;
        let b = -t2 / 24.0 + t4 / 720.0 - t6 / 40_320.0 + t8 / 3_628_800.0 + 0.5;
        (a, b)
    } else {
        let theta = theta_sq.sqrt();
        let (s, c) = theta.sin_cos();
        (s / theta, (-c + 1.0) / theta_sq)
    }
}

pub fn rotation_exp(r: &Vec3) -> Mat3 {
    let (a, b) = rodrigues_coefficients(r.norm_squared());
    let k = skew(r);
    Mat3::identity() + k * a + k * k * b
}

/// Rotates `p` by `exp([r]x)` without forming the matrix.
pub fn rotate<D: DualNum<Primitive = f64> + Copy>(r: &[D; 3], p: &[D; 3]) -> [D; 3] {
    let theta_sq = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    let (a, b) = rodrigues_coefficients(theta_sq);
    let rxp = cross(r, p);
    let rxrxp = cross(r, &rxp);
    [
        p[0] + rxp[0] * a + rxrxp[0] * b,
        p[1] + rxp[1] * a + rxrxp[1] * b,
        p[2] + rxp[2] * a + rxrxp[2] * b,
    ]
}

fn cross<D: DualNum<Primitive = f64> + Copy>(a: &[D; 3], b: &[D; 3]) -> [D; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn lift<D: DualNum<Primitive = f64> + Copy>(v: &Vec3) -> [D; 3] {
    [D::from(v.x), D::from(v.y), D::from(v.z)]
}

/// Maps a rotation matrix to its angle-axis vector with angle in `[0, π]`.
pub fn rotation_log(r: &Mat3) -> Result<Vec3> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("non-finite rotation matrix".into()));
    }
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "matrix is not a rotation (orthogonality error {ortho:.3e})"
        )));
    }
    Ok(rotation_log_unchecked(r))
}

pub(crate) fn rotation_log_unchecked(r: &Mat3) -> Vec3 {
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = w.norm();
    let theta = sin.atan2(cos);
    if theta < 1e-4 {
        // θ / sin θ ≈ 1 + θ²/6
        return w * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return w * (theta / sin);
    }
    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part R + R^T = 2 cos θ I + 2 (1 - cos θ) a a^T.
    let s = (r + r.transpose()) * 0.5 - Mat3::identity() * cos;
    let s = s / (1.0 - cos);
    let (mut best, mut best_val) = (0, s[(0, 0)]);
    for i in 1..3 {
        if s[(i, i)] > best_val {
            best = i;
            best_val = s[(i, i)];
        }
    }
    let mut axis = s.column(best).into_owned() / best_val.max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Geodesic angle of a rotation matrix, robust near 0 and π.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    w.norm().atan2(cos)
}

fn transformed(p: &Vec3, pose: &Pose) -> Result<Vec3> {
    let x = pose.transform(p);
    if !(x.norm() > 1e-12) {
        return Err(Error::DegenerateGeometry(
            "transformed point coincides with the camera center".into(),
        ));
    }
    Ok(x)
}

/// Angle between the bearing and the transformed map point, in `[0, π]`.
///
/// Evaluated as `atan2(|f × x|, f · x)`; identical to the clamped arccos of
/// the normalized dot product but accurate at incidence.
pub fn angular_error(f: &Bearing, p: &Vec3, pose: &Pose) -> Result<f64> {
    let x = transformed(p, pose)?;
    Ok(angle_between(f.as_vector(), &x))
}

pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b)).clamp(0.0, std::f64::consts::PI)
}

/// `1 - f^T x / |x|` for `x = R p + t`. Range `[0, 2]`.
pub fn point_residual(f: &Bearing, p: &Vec3, pose: &Pose) -> Result<f64> {
    transformed(p, pose)?;
    Ok(point_cost(f.as_vector(), p, &lift(&pose.rotation), &lift(&pose.translation)))
}

/// Unit normal of the plane through the camera center spanned by `f` and `v2d`.
pub fn plane_normal(f: &Vec3, v2d: &Vec3) -> Result<Vec3> {
    let n = f.cross(v2d);
    let norm = n.norm();
    if !(norm > 1e-9) {
        return Err(Error::DegenerateGeometry("bearing and line direction are parallel".into()));
    }
    Ok(n / norm)
}

/// `1 - |n × d|` where `n` is the back-projected plane normal and `d` the
/// normalized transformed point `R (p + v3d) + t`. Range `[0, 1]`.
pub fn line_residual(f: &Bearing, v2d: &Vec3, p: &Vec3, v3d: &Vec3, pose: &Pose) -> Result<f64> {
    let n = plane_normal(f.as_vector(), v2d)?;
    let q = p + v3d;
    transformed(&q, pose)?;
    Ok(line_cost(&n, &q, &lift(&pose.rotation), &lift(&pose.translation)))
}

/// Point kernel, evaluated as `½ |f - x/|x||²` which equals `1 - f^T x/|x|`
/// for unit `f` without cancellation near zero.
pub fn point_cost<D: DualNum<Primitive = f64> + Copy>(
    f: &Vec3,
    p: &Vec3,
    r: &[D; 3],
    t: &[D; 3],
) -> D {
    let x = rotate(r, &lift(p));
    let x = [x[0] + t[0], x[1] + t[1], x[2] + t[2]];
    let inv = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().recip();
    let d0 = -(x[0] * inv) + f.x;
    let d1 = -(x[1] * inv) + f.y;
    let d2 = -(x[2] * inv) + f.z;
    (d0 * d0 + d1 * d1 + d2 * d2) * 0.5
}

/// Line kernel for the map point `q = p + v3d` against the plane normal `n`,
/// evaluated as `c² / (1 + sqrt(1 - c²))` with `c = n · x/|x|`.
pub fn line_cost<D: DualNum<Primitive = f64> + Copy>(
    n: &Vec3,
    q: &Vec3,
    r: &[D; 3],
    t: &[D; 3],
) -> D {
    let x = rotate(r, &lift(q));
    let x = [x[0] + t[0], x[1] + t[1], x[2] + t[2]];
    let inv = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().recip();
    let c = (x[0] * n.x + x[1] * n.y + x[2] * n.z) * inv;
    let c2 = c * c;
    let rem = -c2 + 1.0;
    let root = if rem.re() > 0.0 { rem.sqrt() } else { D::from(0.0) };
    c2 / (root + 1.0)
}

/// Signed plane-incidence angle `asin(n · x/|x|)` of a transformed map point.
pub fn plane_angle(n: &Vec3, q: &Vec3, pose: &Pose) -> Option<f64> {
    let x = pose.transform(q);
    let norm = x.norm();
    if !(norm > 1e-12) {
        return None;
    }
    Some((n.dot(&x) / norm).clamp(-1.0, 1.0).asin())
}
