//! Rigid-body algebra: poses, quaternion slerp, intra-scan pose interpolation
//! and least-squares rigid alignment.
//!
//! Rotations are unit quaternions. Tangent-space perturbations are applied on
//! the right (`R <- R * exp(delta)`), and the SO(3) Jacobians below follow that
//! convention.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix3x4, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Real};

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: UnitQuaternion<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a possibly non-normalized quaternion.
    pub fn from_quaternion(q: Quaternion<T>, translation: Vector3<T>) -> Self {
        Self::new(UnitQuaternion::from_quaternion(q), translation)
    }

    pub fn from_translation(translation: Vector3<T>) -> Self {
        Self::new(UnitQuaternion::identity(), translation)
    }

    /// Rotation of `angle` radians about the z axis, then translation.
    pub fn from_yaw(yaw: T, translation: Vector3<T>) -> Self {
        Self::new(
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
            translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        Self {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.rotation * p + self.translation
    }

    /// Rotation angle of the pose in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> T {
        quaternion_angle(&self.rotation)
    }

    /// Angle in radians of the relative rotation between two poses.
    pub fn angle_to(&self, other: &Self) -> T {
        quaternion_angle(&(self.rotation.inverse() * other.rotation))
    }

    pub fn rotation_matrix(&self) -> Matrix3<T> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_matrix3x4(&self) -> Matrix3x4<T> {
        let r = self.rotation_matrix();
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Builds a pose from a 3x4 `[R | t]`; the rotation block is
    /// re-orthonormalized.
    pub fn from_matrix3x4(m: &Matrix3x4<T>) -> Self {
        let r: Matrix3<T> = m.fixed_view::<3, 3>(0, 0).into_owned();
        let rotation =
            UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix(&r));
        Self::new(rotation, m.fixed_view::<3, 1>(0, 3).into_owned())
    }

    /// Heading (rotation about z) extracted from the rotated x axis.
    pub fn yaw(&self) -> T {
        let x = self.rotation * Vector3::x();
        x.y.atan2(x.x)
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        let q = self.rotation.quaternion();
        Pose::from_quaternion(
            Quaternion::new(cast(q.w), cast(q.i), cast(q.j), cast(q.k)),
            self.translation.map(cast),
        )
    }
}

impl<T: Real> Mul for Pose<T> {
    type Output = Pose<T>;

    fn mul(self, rhs: Self) -> Self::Output {
        self.compose(&rhs)
    }
}

impl<'a, T: Real> Mul<&'a Pose<T>> for &'a Pose<T> {
    type Output = Pose<T>;

    fn mul(self, rhs: &'a Pose<T>) -> Self::Output {
        self.compose(rhs)
    }
}

#[inline]
pub(crate) fn cast<T: Real, U: Real>(v: T) -> U {
    lit(crate::scalar::to_f64(v))
}

fn renormalize<T: Real>(q: UnitQuaternion<T>) -> UnitQuaternion<T> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Rotation angle of a unit quaternion in `[0, pi]`.
pub fn quaternion_angle<T: Real>(q: &UnitQuaternion<T>) -> T {
    let v = q.imag().norm();
    let w = q.w.abs();
    lit::<T>(2.0) * v.atan2(w)
}

/// Spherical linear interpolation along the shorter arc.
///
/// `alpha` is clamped to `[0, 1]`; the end points are returned exactly.
pub fn slerp<T: Real>(r_b: &UnitQuaternion<T>, r_e: &UnitQuaternion<T>, alpha: T) -> UnitQuaternion<T> {
    let alpha = clamp_unit(alpha);
    if alpha <= T::zero() {
        return *r_b;
    }
    if alpha >= T::one() {
        return *r_e;
    }
    let qb = r_b.as_ref().coords;
    let mut qe = r_e.as_ref().coords;
    if qb.dot(&qe) < T::zero() {
        qe = -qe;
    }
    // Half of the geodesic angle between the two, computed without acos so
    // that tiny angles keep full precision.
    let theta = lit::<T>(2.0) * (qe - qb).norm().atan2((qe + qb).norm());
    let sin_theta = theta.sin();
    let (wb, we) = if sin_theta.abs() < lit(1e-12) {
        (T::one() - alpha, alpha)
    } else {
        (
            ((T::one() - alpha) * theta).sin() / sin_theta,
            (alpha * theta).sin() / sin_theta,
        )
    };
    let coords = qb * wb + qe * we;
    UnitQuaternion::new_normalize(Quaternion::from(coords))
}

#[inline]
pub(crate) fn clamp_unit<T: Real>(alpha: T) -> T {
    if alpha < T::zero() {
        T::zero()
    } else if alpha > T::one() {
        T::one()
    } else {
        alpha
    }
}

/// Per-scan trajectory: the sensor pose at the first and last firing of the
/// scan. Poses in between are interpolated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryFrame<T: Real> {
    pub begin: Pose<T>,
    pub end: Pose<T>,
    pub scan_index: usize,
}

impl<T: Real> TrajectoryFrame<T> {
    pub fn new(begin: Pose<T>, end: Pose<T>, scan_index: usize) -> Self {
        Self {
            begin,
            end,
            scan_index,
        }
    }

    /// A frame with both poses equal.
    pub fn rigid(pose: Pose<T>, scan_index: usize) -> Self {
        Self::new(pose, pose, scan_index)
    }

    pub fn interpolate(&self, alpha: T) -> Pose<T> {
        interpolate_pose(self, alpha)
    }

    /// Pose at `alpha = 0.5`, the conventional per-scan pose.
    pub fn mid_pose(&self) -> Pose<T> {
        interpolate_pose(self, lit(0.5))
    }

    /// Applies `correction` on the left of both poses.
    pub fn left_multiplied(&self, correction: &Pose<T>) -> Self {
        Self::new(
            correction.compose(&self.begin),
            correction.compose(&self.end),
            self.scan_index,
        )
    }

    pub fn cast<U: Real>(&self) -> TrajectoryFrame<U> {
        TrajectoryFrame::new(self.begin.cast(), self.end.cast(), self.scan_index)
    }
}

/// An interpolated pose tagged with its normalized timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolatedPose<T: Real> {
    pub alpha: T,
    pub pose: Pose<T>,
}

impl<T: Real> InterpolatedPose<T> {
    pub fn new(frame: &TrajectoryFrame<T>, alpha: T) -> Self {
        let alpha = clamp_unit(alpha);
        Self {
            alpha,
            pose: interpolate_pose(frame, alpha),
        }
    }
}

/// Sensor pose at normalized time `alpha`: slerp on the rotation, linear on
/// the translation.
pub fn interpolate_pose<T: Real>(frame: &TrajectoryFrame<T>, alpha: T) -> Pose<T> {
    let alpha = clamp_unit(alpha);
    if alpha <= T::zero() {
        return frame.begin;
    }
    if alpha >= T::one() {
        return frame.end;
    }
    Pose {
        rotation: slerp(&frame.begin.rotation, &frame.end.rotation, alpha),
        translation: frame.begin.translation * (T::one() - alpha) + frame.end.translation * alpha,
    }
}

#[inline]
pub fn transform_point<T: Real>(pose: &Pose<T>, p: &Vector3<T>) -> Vector3<T> {
    pose.transform_point(p)
}

/// Least-squares rigid transform mapping `source` onto `target`
/// (`target_i ≈ R source_i + t`), without scale. Only proper rotations are
/// returned.
pub fn fit_rigid_transform<T: Real>(source: &[Vector3<T>], target: &[Vector3<T>]) -> Result<Pose<T>> {
    if source.len() != target.len() {
        return Err(Error::DegenerateInput(format!(
            "point sets differ in size ({} vs {})",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "{} point pairs, at least 3 are needed",
            source.len()
        )));
    }
    let n = from_usize::<T>(source.len());
    let source_mean = source.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let target_mean = target.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;

    let mut cross = Matrix3::<T>::zeros();
    for (s, t) in source.iter().zip(target) {
        cross += (s - source_mean) * (t - target_mean).transpose();
    }

    let svd = cross.svd(true, true);
    let mut singular: Vec<T> = svd.singular_values.iter().copied().collect();
    singular.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let tolerance = T::default_epsilon().sqrt();
    if singular[0] <= T::zero() || singular[1] <= tolerance * singular[0] {
        return Err(Error::DegenerateInput(
            "cross-covariance is rank deficient (points collinear or coincident)".into(),
        ));
    }
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v_t").transpose();
    let mut correction = Matrix3::<T>::identity();
    if (v * u.transpose()).determinant() < T::zero() {
        correction[(2, 2)] = -T::one();
    }
    let r = v * correction * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(r));
    let rotation = renormalize(rotation);
    let translation = target_mean - rotation * source_mean;
    Ok(Pose::new(rotation, translation))
}

/// SO(3) exponential map of a rotation vector.
pub fn so3_exp<T: Real>(v: &Vector3<T>) -> UnitQuaternion<T> {
    let theta = v.norm();
    let half = theta * lit(0.5);
    let (w, scale) = if theta < lit(1e-8) {
        // sin(x/2)/x ≈ 1/2 - x²/48
        (T::one() - theta * theta / lit(8.0), lit::<T>(0.5) - theta * theta / lit(48.0))
    } else {
        (half.cos(), half.sin() / theta)
    };
    UnitQuaternion::new_normalize(Quaternion::new(w, v.x * scale, v.y * scale, v.z * scale))
}

/// SO(3) logarithm: rotation vector with norm in `[0, pi]`.
pub fn so3_log<T: Real>(q: &UnitQuaternion<T>) -> Vector3<T> {
    let mut w = q.w;
    let mut imag = q.imag();
    if w < T::zero() {
        w = -w;
        imag = -imag;
    }
    let s = imag.norm();
    if s < lit(1e-10) {
        // 2 atan(s/w)/s ≈ 2/w (1 - s²/(3w²))
        return imag * (lit::<T>(2.0) / w) * (T::one() - s * s / (lit::<T>(3.0) * w * w));
    }
    let theta = lit::<T>(2.0) * s.atan2(w);
    imag * (theta / s)
}

/// Cross-product matrix `[v]x`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Right Jacobian of SO(3): `exp(phi + d) ≈ exp(phi) exp(Jr(phi) d)`.
pub fn so3_right_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let (a, b) = if theta2 < lit(1e-10) {
        (
            lit::<T>(0.5) - theta2 / lit(24.0),
            lit::<T>(1.0 / 6.0) - theta2 / lit(120.0),
        )
    } else {
        let theta = theta2.sqrt();
        (
            (T::one() - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Inverse of [`so3_right_jacobian`]: `log(exp(phi) exp(d)) ≈ phi + Jr⁻¹(phi) d`.
pub fn so3_right_jacobian_inv<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let c = if theta2 < lit(1e-10) {
        lit::<T>(1.0 / 12.0) + theta2 / lit(720.0)
    } else {
        let theta = theta2.sqrt();
        T::one() / theta2 - (T::one() + theta.cos()) / (lit::<T>(2.0) * theta * theta.sin())
    };
    Matrix3::identity() + k * lit::<T>(0.5) + k * k * c
}

/// Left Jacobian of SO(3), `Jl(phi) = Jr(-phi)`.
pub fn so3_left_jacobian<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    so3_right_jacobian(&-phi)
}

/// Inverse left Jacobian: `log(exp(d) exp(phi)) ≈ phi + Jl⁻¹(phi) d`.
pub fn so3_left_jacobian_inv<T: Real>(phi: &Vector3<T>) -> Matrix3<T> {
    so3_right_jacobian_inv(&-phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rot_x(deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::x_axis(), deg.to_radians())
    }

    fn rot_z(deg: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_axis_angle(&Vector3::z_axis(), deg.to_radians())
    }

    fn angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
        quaternion_angle(&(a.inverse() * b))
    }

    #[test]
    fn slerp_of_equal_quaternions_is_identity_case() {
        let q = UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1);
        assert!(angle_between(&slerp(&q, &q, 0.5), &q) < 1e-12);
    }

    #[test]
    fn slerp_halfway_to_quarter_turn() {
        let r = slerp(&UnitQuaternion::identity(), &rot_z(90.0), 0.5);
        assert!(angle_between(&r, &rot_z(45.0)) < 1e-9);
    }

    #[test]
    fn slerp_coaxial_matches_axis_angle_interpolation() {
        // Coaxial rotations interpolate linearly in the angle.
        let (a, b, alpha) = (10.0, 170.0, 0.25);
        let oracle = rot_x(a + alpha * (b - a));
        let r = slerp(&rot_x(a), &rot_x(b), alpha);
        assert!(angle_between(&r, &oracle) < 1e-9);
        assert!(angle_between(&r, &rot_x(50.0)) < 1e-9);
    }

    #[test]
    fn slerp_takes_shorter_arc() {
        let a = rot_z(10.0);
        let b = UnitQuaternion::new_unchecked(-rot_z(30.0).into_inner());
        let r = slerp(&a, &b, 0.5);
        assert!(angle_between(&r, &rot_z(20.0)) < 1e-9);
    }

    #[test]
    fn interpolate_pose_boundaries_and_translation() {
        let frame = TrajectoryFrame::new(
            Pose::new(rot_z(5.0), Vector3::zeros()),
            Pose::new(rot_z(25.0), Vector3::new(2.0, 0.0, 0.0)),
            0,
        );
        assert_eq!(interpolate_pose(&frame, 0.0), frame.begin);
        assert_eq!(interpolate_pose(&frame, 1.0), frame.end);
        let p = interpolate_pose(&frame, 0.25);
        assert_relative_eq!(p.translation, Vector3::new(0.5, 0.0, 0.0), epsilon = 1e-12);
        assert!(angle_between(&p.rotation, &rot_z(10.0)) < 1e-9);
        let tagged = InterpolatedPose::new(&frame, 1.7);
        assert_eq!(tagged.alpha, 1.0);
        assert_eq!(tagged.pose, frame.end);
    }

    #[test]
    fn transform_point_examples() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&Pose::identity(), &p), p);
        let pose = Pose::new(rot_z(90.0), Vector3::zeros());
        assert_relative_eq!(
            transform_point(&pose, &Vector3::x()),
            Vector3::y(),
            epsilon = 1e-12
        );
        let pose = Pose::new(UnitQuaternion::from_euler_angles(0.1, 0.7, -2.0), Vector3::new(3.0, -1.0, 4.0));
        let q = transform_point(&pose.inverse(), &p);
        assert_relative_eq!(transform_point(&pose, &q), p, epsilon = 1e-12);
    }

    #[test]
    fn fit_rigid_transform_identity_and_errors() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        let pose = fit_rigid_transform(&pts, &pts).unwrap();
        assert!(pose.rotation_angle() < 1e-9);
        assert!(pose.translation.norm() < 1e-9);

        assert!(matches!(
            fit_rigid_transform(&pts[..2], &pts[..2]),
            Err(Error::DegenerateInput(_))
        ));
        let line: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            fit_rigid_transform(&line, &line),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn fit_rigid_transform_recovers_known_transform() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let truth = Pose::new(
                so3_exp(&Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )),
                Vector3::new(
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                    rng.random_range(-50.0..50.0),
                ),
            );
            let source: Vec<_> = (0..30)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                        rng.random_range(-10.0..10.0),
                    )
                })
                .collect();
            let target: Vec<_> = source.iter().map(|p| truth.transform_point(p)).collect();
            let fit = fit_rigid_transform(&source, &target).unwrap();
            assert!(fit.angle_to(&truth) < 1e-7);
            assert!((fit.translation - truth.translation).norm() < 1e-7);
            for (s, t) in source.iter().zip(&target) {
                assert!((fit.transform_point(s) - t).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn fit_rigid_transform_never_returns_reflection() {
        // Mirrored target: the best proper rotation still has det = +1.
        let source = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let target: Vec<_> = source.iter().map(|p| Vector3::new(p.x, p.y, -p.z)).collect();
        let fit = fit_rigid_transform(&source, &target).unwrap();
        assert_relative_eq!(fit.rotation_matrix().determinant(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn exp_log_and_jacobians() {
        let phi = Vector3::new(0.3, -1.2, 0.8);
        assert_relative_eq!(so3_log(&so3_exp(&phi)), phi, epsilon = 1e-12);
        let tiny = Vector3::new(1e-11, -2e-11, 3e-12);
        assert_relative_eq!(so3_log(&so3_exp(&tiny)), tiny, epsilon = 1e-20);

        let jr = so3_right_jacobian(&phi);
        assert_relative_eq!(jr * so3_right_jacobian_inv(&phi), Matrix3::identity(), epsilon = 1e-12);
        let jl = so3_left_jacobian(&phi);
        assert_relative_eq!(jl * so3_left_jacobian_inv(&phi), Matrix3::identity(), epsilon = 1e-12);

        // exp(phi + d) ≈ exp(phi) exp(Jr d)
        let d = Vector3::new(1e-6, 2e-6, -1e-6);
        let lhs = so3_exp(&(phi + d));
        let rhs = so3_exp(&phi) * so3_exp(&(jr * d));
        assert!(angle_between(&lhs, &rhs) < 1e-11);
    }

    #[test]
    fn f32_pose_roundtrip() {
        let pose = Pose::<f32>::new(
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let p = Vector3::new(0.5f32, -0.25, 2.0);
        let back = pose.inverse().transform_point(&pose.transform_point(&p));
        assert!((back - p).norm() < 1e-5);
        assert!((pose.rotation.norm() - 1.0).abs() < 1e-6);
    }

    fn arb_quat() -> impl Strategy<Value = UnitQuaternion<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-zero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
            .prop_map(|(w, x, y, z)| UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    fn arb_pose() -> impl Strategy<Value = Pose<f64>> {
        (arb_quat(), -100.0..100.0f64, -100.0..100.0f64, -100.0..100.0f64)
            .prop_map(|(q, x, y, z)| Pose::new(q, Vector3::new(x, y, z)))
    }

    proptest! {
        #[test]
        fn pose_inverse_composes_to_identity(p in arb_pose()) {
            let id = p.compose(&p.inverse());
            prop_assert!(id.rotation_angle() < 1e-9);
            prop_assert!(id.translation.norm() < 1e-9);
            prop_assert!((p.rotation.norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn pose_composition_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!(left.angle_to(&right) < 1e-9);
            prop_assert!((left.translation - right.translation).norm() < 1e-9);
        }

        #[test]
        fn slerp_is_unit_and_boundary_exact(a in arb_quat(), b in arb_quat(), alpha in 0.0..1.0f64) {
            let r = slerp(&a, &b, alpha);
            prop_assert!((r.norm() - 1.0).abs() < 1e-9);
            prop_assert_eq!(slerp(&a, &b, 0.0), a);
            prop_assert_eq!(slerp(&a, &b, 1.0), b);
        }

        #[test]
        fn interpolation_is_continuous(a in arb_pose(), b in arb_pose(), alpha in 0.0..0.999f64) {
            let frame = TrajectoryFrame::new(a, b, 0);
            let p0 = interpolate_pose(&frame, alpha);
            let p1 = interpolate_pose(&frame, alpha + 1e-6);
            prop_assert!(p0.angle_to(&p1) < 1e-4);
            prop_assert!((p0.translation - p1.translation).norm() < 1e-3);
        }

        #[test]
        fn slerp_angle_is_proportional(a in arb_quat(), b in arb_quat(), alpha in 0.0..1.0f64) {
            let total = angle_between(&a, &b);
            prop_assume!(total < PI - 1e-3);
            let r = slerp(&a, &b, alpha);
            prop_assert!((angle_between(&a, &r) - alpha * total).abs() < 1e-8);
        }
    }
}
