//! Rotations, rigid camera poses and the pinhole projection model.
//!
//! World convention: right-handed, Y-up, gravity along -Y. Cameras follow the
//! usual vision convention (x right, y down, z forward).

use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

/// Orthonormality tolerance accepted by [`matrix_to_axis_angle`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("matrix is not a rotation (orthonormality residual {0:.3e})")]
    NotARotation(f64),
    #[error("point is behind the camera (depth {0:.3e})")]
    BehindCamera(f64),
    #[error("intrinsics must have positive focal lengths (fx={fx}, fy={fy})")]
    InvalidIntrinsics { fx: f64, fy: f64 },
}

/// Rotation vector: unit axis scaled by the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    pub fn to_matrix(&self) -> RotationMatrix {
        axis_angle_to_matrix(self)
    }
}

/// A 3x3 special orthogonal matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps `m` after checking it is a rotation to [`ORTHONORMAL_TOL`].
    pub fn try_new(m: Matrix3<f64>) -> Result<Self, GeomError> {
        let residual = orthonormality_residual(&m);
        if residual > ORTHONORMAL_TOL || m.determinant() < 0.0 {
            return Err(GeomError::NotARotation(residual));
        }
        Ok(Self(m))
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Yaw about the world up axis.
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        Self(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.0)
    }

    /// Re-orthonormalizes through the polar decomposition.
    pub fn renormalized(&self) -> Self {
        Self(nearest_rotation(&self.0))
    }
}

impl std::ops::Mul for RotationMatrix {
    type Output = RotationMatrix;

    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// World-to-camera rigid transform: `x_cam = r * x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub r: RotationMatrix,
    pub t: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            r: RotationMatrix::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn new(r: RotationMatrix, t: Vector3<f64>) -> Self {
        Self { r, t }
    }

    /// Builds the pose of a camera centered at `center` whose camera-to-world
    /// rotation is `cam_to_world`.
    pub fn from_center(cam_to_world: RotationMatrix, center: Vector3<f64>) -> Self {
        let r = cam_to_world.transpose();
        Self {
            t: -(r.0 * center),
            r,
        }
    }

    pub fn transform(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.r.0 * p_world + self.t
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.0.transpose() * self.t)
    }

    pub fn inverse(&self) -> CameraPose {
        let rt = self.r.transpose();
        CameraPose {
            t: -(rt.0 * self.t),
            r: rt,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &CameraPose) -> CameraPose {
        CameraPose {
            r: self.r * other.r,
            t: self.r.0 * other.t + self.t,
        }
    }
}

/// Pinhole intrinsics (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub ox: f64,
    pub oy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, ox: f64, oy: f64) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeomError::InvalidIntrinsics { fx, fy });
        }
        Ok(Self { fx, fy, ox, oy })
    }

    /// Fallback used when the focal length is unknown: `f = max(w, h)` and the
    /// principal point at the image center.
    pub fn from_image_size(width: u32, height: u32) -> Self {
        let f = width.max(height) as f64;
        Self {
            fx: f,
            fy: f,
            ox: width as f64 / 2.0,
            oy: height as f64 / 2.0,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.ox, 0.0, self.fy, self.oy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.ox / self.fx,
            0.0,
            1.0 / self.fy,
            -self.oy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Normalized image-plane coordinates `(x, y, 1)` of a pixel.
    pub fn unproject(&self, px: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.ox) / self.fx, (px.y - self.oy) / self.fy, 1.0)
    }

    pub fn project_camera_point(&self, p_cam: &Vector3<f64>) -> Result<Vector2<f64>, GeomError> {
        if p_cam.z <= 1e-9 {
            return Err(GeomError::BehindCamera(p_cam.z));
        }
        Ok(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.ox,
            self.fy * p_cam.y / p_cam.z + self.oy,
        ))
    }
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn axis_angle_to_matrix(a: &AxisAngle) -> RotationMatrix {
    let theta = a.0.norm();
    if theta < 1e-12 {
        // second-order expansion keeps the result orthonormal to rounding
        let k = skew(&a.0);
        return RotationMatrix(Matrix3::identity() + k + 0.5 * k * k);
    }
    let axis = a.0 / theta;
    let k = skew(&axis);
    let (s, c) = theta.sin_cos();
    RotationMatrix(Matrix3::identity() + s * k + (1.0 - c) * (k * k))
}

/// Exponential map on rotation vectors, matrix form.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    axis_angle_to_matrix(&AxisAngle(*w)).0
}

/// Logarithm of a rotation matrix. The angle is in `[0, pi]`; at exactly `pi`
/// the axis sign is chosen so its largest-magnitude component is positive.
pub fn matrix_to_axis_angle(r: &RotationMatrix) -> Result<AxisAngle, GeomError> {
    let m = &r.0;
    let residual = orthonormality_residual(m);
    if residual > ORTHONORMAL_TOL || m.determinant() < 0.0 {
        return Err(GeomError::NotARotation(residual));
    }
    Ok(AxisAngle(log_so3(m)))
}

/// Logarithm without the orthonormality check.
pub fn log_so3(m: &Matrix3<f64>) -> Vector3<f64> {
    let v = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    let sin_theta = v.norm();
    let cos_theta = 0.5 * (m.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-8 {
        return v;
    }
    if theta < 2.5 {
        return v * (theta / sin_theta);
    }

    // Near pi the antisymmetric part vanishes; read the axis off the symmetric part.
    let sym = 0.5 * (m + m.transpose());
    let outer = (sym - Matrix3::identity() * cos_theta) / (1.0 - cos_theta);
    let diag = Vector3::new(outer[(0, 0)], outer[(1, 1)], outer[(2, 2)]);
    let k = diag.imax();
    let mut axis = Vector3::new(outer[(k, 0)], outer[(k, 1)], outer[(k, 2)]);
    axis /= axis.norm();
    if v.norm() > 1e-12 {
        if axis.dot(&v) < 0.0 {
            axis = -axis;
        }
    } else {
        let j = axis.iamax();
        if axis[j] < 0.0 {
            axis = -axis;
        }
    }
    axis * theta
}

/// Rotation angle in `[0, pi]`, well conditioned across the whole range.
pub fn rotation_angle(m: &Matrix3<f64>) -> f64 {
    let v = 0.5 * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]);
    v.norm().atan2(0.5 * (m.trace() - 1.0))
}

/// Geodesic distance `|angle(r1^T r2)|` in radians.
pub fn geodesic_distance(r1: &RotationMatrix, r2: &RotationMatrix) -> f64 {
    rotation_angle(&(r1.0.transpose() * r2.0))
}

/// Pixel projection of a world point.
pub fn project(k: &Intrinsics, g: &CameraPose, p_world: &Vector3<f64>) -> Result<Vector2<f64>, GeomError> {
    k.project_camera_point(&g.transform(p_world))
}

/// Yaw angle of the pure Y-axis rotation closest (geodesically) to `r`.
pub fn yaw_angle(r: &RotationMatrix) -> f64 {
    let m = &r.0;
    // trace(Ry(psi)^T m) = cos(psi) (m00 + m22) + sin(psi) (m02 - m20) + m11
    (m[(0, 2)] - m[(2, 0)]).atan2(m[(0, 0)] + m[(2, 2)])
}

/// Pure yaw rotation `(0, psi, 0)` closest to `r`.
pub fn yaw_component(r: &RotationMatrix) -> AxisAngle {
    AxisAngle::new(0.0, yaw_angle(r), 0.0)
}

/// Closest rotation in Frobenius norm (polar factor).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

fn orthonormality_residual(m: &Matrix3<f64>) -> f64 {
    let r = (m.transpose() * m - Matrix3::identity()).norm();
    r.max((m.determinant() - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn random_rotation(rng: &mut ChaCha8Rng) -> RotationMatrix {
        // uniform via random unit quaternion
        let q: [f64; 4] = std::array::from_fn(|_| rng.random::<f64>() * 2.0 - 1.0);
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        RotationMatrix(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    #[test]
    fn zero_vector_is_identity() {
        assert_eq!(axis_angle_to_matrix(&AxisAngle::zero()).0, Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_y() {
        let m = axis_angle_to_matrix(&AxisAngle::new(0.0, FRAC_PI_2, 0.0));
        let expected = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        assert!((m.0 - expected).norm() < 1e-15);
        let back = matrix_to_axis_angle(&m).unwrap();
        assert!((back.0 - Vector3::new(0.0, FRAC_PI_2, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn identity_maps_to_zero() {
        let a = matrix_to_axis_angle(&RotationMatrix::identity()).unwrap();
        assert_eq!(a.0, Vector3::zeros());
    }

    #[test]
    fn small_rotation_round_trip() {
        let a = AxisAngle::new(0.3, -0.2, 0.1);
        let back = matrix_to_axis_angle(&axis_angle_to_matrix(&a)).unwrap();
        assert!((back.0 - a.0).norm() < 1e-9);
    }

    #[test]
    fn random_rotations_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let r = random_rotation(&mut rng);
            if r.angle() > PI - 1e-6 {
                continue;
            }
            let a = matrix_to_axis_angle(&r).unwrap();
            let back = axis_angle_to_matrix(&a);
            assert!((back.0 - r.0).norm() < 1e-9, "{:?}", r);
        }
    }

    #[test]
    fn near_pi_round_trip() {
        let axis = Vector3::new(0.2, -0.9, 0.4).normalize();
        for eps in [1e-3, 1e-5, 1e-6 + 1e-9] {
            let a = AxisAngle(axis * (PI - eps));
            let back = axis_angle_to_matrix(&matrix_to_axis_angle(&a.to_matrix()).unwrap());
            assert!((back.0 - a.to_matrix().0).norm() < 1e-9);
        }
    }

    #[test]
    fn exact_pi_uses_positive_major_component() {
        let r = axis_angle_to_matrix(&AxisAngle(Vector3::new(0.0, -PI, 0.0)));
        let a = matrix_to_axis_angle(&r).unwrap();
        assert!((a.0 - Vector3::new(0.0, PI, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(matrix_to_axis_angle(&RotationMatrix(m)), Err(GeomError::NotARotation(_))));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matrix_to_axis_angle(&RotationMatrix(reflection)).is_err());
    }

    #[test]
    fn projection_examples() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        let g = CameraPose::identity();
        assert_eq!(project(&k, &g, &Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::new(50.0, 50.0));
        assert_eq!(project(&k, &g, &Vector3::new(1.0, 0.0, 2.0)).unwrap(), Vector2::new(100.0, 50.0));
        assert!(matches!(
            project(&k, &g, &Vector3::new(1.0, 1.0, 0.0)),
            Err(GeomError::BehindCamera(_))
        ));
    }

    #[test]
    fn projection_invariant_under_pose_round_trip() {
        let k = Intrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let g = CameraPose::new(
                random_rotation(&mut rng),
                Vector3::new(rng.random(), rng.random(), rng.random()),
            );
            let p_cam = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, 2.0 + rng.random::<f64>());
            let p_world = g.inverse().transform(&p_cam);
            let round = g.inverse().transform(&g.transform(&p_world));
            let a = project(&k, &g, &p_world).unwrap();
            let b = project(&k, &g, &round).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn yaw_examples() {
        let r = RotationMatrix::about_y(PI / 6.0);
        assert!((yaw_component(&r).0 - Vector3::new(0.0, PI / 6.0, 0.0)).norm() < 1e-15);
        assert_eq!(yaw_component(&RotationMatrix::identity()).0, Vector3::zeros());
    }

    #[test]
    fn yaw_of_pure_yaw_is_exact() {
        for i in -179..180 {
            let psi = i as f64 * PI / 180.0;
            assert!((yaw_angle(&RotationMatrix::about_y(psi)) - psi).abs() < 1e-12);
        }
    }

    #[test]
    fn yaw_with_pitch_matches_grid_search() {
        let r = RotationMatrix::about_y(40f64.to_radians()) * RotationMatrix::about_x(5f64.to_radians());
        // brute-force oracle over a 0.01 degree grid
        let mut best = (f64::MAX, 0.0);
        let mut deg = -180.0;
        while deg < 180.0 {
            let d = geodesic_distance(&RotationMatrix::about_y(f64::to_radians(deg)), &r);
            if d < best.0 {
                best = (d, deg);
            }
            deg += 0.01;
        }
        let psi = yaw_angle(&r).to_degrees();
        assert!((psi - 40.0).abs() < 0.5);
        assert!((psi - best.1).abs() < 0.011);
    }

    #[test]
    fn geodesic_is_a_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let (a, b, c) = (random_rotation(&mut rng), random_rotation(&mut rng), random_rotation(&mut rng));
            let ab = geodesic_distance(&a, &b);
            assert!((ab - geodesic_distance(&b, &a)).abs() < 1e-9);
            assert!(geodesic_distance(&a, &c) <= ab + geodesic_distance(&b, &c) + 1e-9);
        }
    }
}
