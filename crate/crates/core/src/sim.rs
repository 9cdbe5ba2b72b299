//! Rigid-body attitude kinematics and dynamics.
//!
//! The attitude is kept as a full rotation matrix `R` (body relative to the
//! reference frame) together with the body-frame angular velocity `ω`:
//!
//! ```text
//! Ṙ = R·hat(ω)
//! I·ω̇ = −ω × (I·ω) + τ + d
//! ```
//!
//! Integration is classical fixed-step RK4 on the pair `(R, ω)` followed by a
//! polar projection of `R` back onto SO(3).

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Euler pitch closer than this to ±π/2 raises the gimbal proximity flag.
pub const GIMBAL_MARGIN: f64 = 1e-3;

const GEOMETRY_EPS: f64 = 1e-6;

/// Skew-symmetric cross-product matrix: `hat(a)·b = a × b`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A proper orthonormal 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Nearest rotation to `m` in the Frobenius sense (polar factor of `m`).
    pub fn project(m: Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("3x3 SVD always yields U");
        let v_t = svd.v_t.expect("3x3 SVD always yields Vᵀ");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the axis belonging to the smallest singular value.
            let k = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(2);
            let mut u = u;
            u.column_mut(k).neg_mut();
            r = u * v_t;
        }
        RotationMatrix(r)
    }

    /// `R = Rz(ψ)·Ry(θ)·Rx(φ)`.
    pub fn from_euler_zyx(phi: f64, theta: f64, psi: f64) -> Self {
        let (sf, cf) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = psi.sin_cos();
        RotationMatrix(Matrix3::new(
            cp * ct,
            cp * st * sf - sp * cf,
            cp * st * cf + sp * sf,
            sp * ct,
            sp * st * sf + cp * cf,
            sp * st * cf - cp * sf,
            -st,
            ct * sf,
            ct * cf,
        ))
    }

    /// Rotation by `angle` about the unit vector `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let k = hat(&axis.normalize());
        RotationMatrix(Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_defect(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// Symmetric positive-definite inertia tensor, kg·m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InertiaTensor {
    matrix: Matrix3<f64>,
    inverse: Matrix3<f64>,
}

impl InertiaTensor {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        if (matrix - matrix.transpose()).abs().max() > 1e-12 {
            return Err(Error::InvalidInertia);
        }
        let eig = matrix.symmetric_eigenvalues();
        if !eig.iter().all(|&l| l.is_finite() && l > 0.0) {
            return Err(Error::InvalidInertia);
        }
        let inverse = matrix.try_inverse().ok_or(Error::InvalidInertia)?;
        Ok(InertiaTensor { matrix, inverse })
    }

    pub fn diagonal(ixx: f64, iyy: f64, izz: f64) -> Result<Self> {
        Self::new(Matrix3::from_diagonal(&Vector3::new(ixx, iyy, izz)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &Matrix3<f64> {
        &self.inverse
    }
}

/// Attitude of the body relative to the reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeState {
    pub rotation: RotationMatrix,
    /// Body-frame angular velocity `[p, q, r]`, rad/s.
    pub omega: Vector3<f64>,
    /// Seconds.
    pub time: f64,
}

impl AttitudeState {
    pub fn at_rest(time: f64) -> Self {
        AttitudeState {
            rotation: RotationMatrix::identity(),
            omega: Vector3::zeros(),
            time,
        }
    }

    /// Rotational kinetic energy `½ωᵀIω`.
    pub fn kinetic_energy(&self, inertia: &InertiaTensor) -> f64 {
        0.5 * self.omega.dot(&(inertia.matrix() * self.omega))
    }

    /// Angular momentum expressed in the reference frame, `R·I·ω`.
    pub fn reference_momentum(&self, inertia: &InertiaTensor) -> Vector3<f64> {
        self.rotation.matrix() * (inertia.matrix() * self.omega)
    }
}

/// Relative attitude error used by the controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeError {
    /// `(φ, θ, ψ)` Z-Y-X Euler angles, radians.
    pub euler: Vector3<f64>,
    /// rad/s
    pub rate_error: Vector3<f64>,
    /// Pitch is within [`GIMBAL_MARGIN`] of ±π/2; the angles are unreliable there.
    pub gimbal_proximity: bool,
}

/// Inertial positions and velocities of the two spacecraft.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormationGeometry {
    pub r1: Vector3<f64>,
    pub r2: Vector3<f64>,
    pub v1: Vector3<f64>,
    pub v2: Vector3<f64>,
}

/// Right-handed orthonormal basis of the line-of-sight reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceBasis {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
}

impl ReferenceBasis {
    /// Matrix with columns `e1, e2, e3` (reference-to-inertial).
    pub fn to_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.e1, self.e2, self.e3])
    }
}

impl FormationGeometry {
    pub fn separation(&self) -> f64 {
        (self.r1 - self.r2).norm()
    }

    /// `e1` along the line of sight from the second to the first spacecraft,
    /// `e3` opposite the component of `r2` orthogonal to `e1`, `e2 = e3 × e1`.
    pub fn reference_basis(&self) -> Result<ReferenceBasis> {
        let los = self.r1 - self.r2;
        let sep = los.norm();
        if sep < GEOMETRY_EPS {
            return Err(Error::DegenerateGeometry("spacecraft positions coincide"));
        }
        let e1 = los / sep;
        let radial = self.r2 - e1 * self.r2.dot(&e1);
        let n = radial.norm();
        if n < GEOMETRY_EPS {
            return Err(Error::DegenerateGeometry(
                "radius vector parallel to line of sight",
            ));
        }
        let e3 = -radial / n;
        let e2 = e3.cross(&e1);
        Ok(ReferenceBasis { e1, e2, e3 })
    }
}

/// Time derivative of `(R, ω)` under control torque `tau` and disturbance `d`.
pub fn dynamics_derivative(
    state: &AttitudeState,
    inertia: &InertiaTensor,
    tau: &Vector3<f64>,
    d: &Vector3<f64>,
) -> (Matrix3<f64>, Vector3<f64>) {
    let w = state.omega;
    let r_dot = state.rotation.matrix() * hat(&w);
    let h = inertia.matrix() * w;
    let w_dot = inertia.inverse() * (-w.cross(&h) + tau + d);
    (r_dot, w_dot)
}

fn derivative(
    r: &Matrix3<f64>,
    w: &Vector3<f64>,
    inertia: &InertiaTensor,
    torque: &Vector3<f64>,
) -> (Matrix3<f64>, Vector3<f64>) {
    let h = inertia.matrix() * w;
    (r * hat(w), inertia.inverse() * (torque - w.cross(&h)))
}

/// One classical RK4 step with `tau` and `d` held constant over `dt`.
pub fn step_rk4(
    state: &AttitudeState,
    inertia: &InertiaTensor,
    tau: &Vector3<f64>,
    d: &Vector3<f64>,
    dt: f64,
) -> AttitudeState {
    debug_assert!(dt > 0.0);
    let torque = tau + d;
    let r0 = *state.rotation.matrix();
    let w0 = state.omega;

    let (k1r, k1w) = derivative(&r0, &w0, inertia, &torque);
    let (k2r, k2w) = derivative(
        &(r0 + k1r * (dt / 2.0)),
        &(w0 + k1w * (dt / 2.0)),
        inertia,
        &torque,
    );
    let (k3r, k3w) = derivative(
        &(r0 + k2r * (dt / 2.0)),
        &(w0 + k2w * (dt / 2.0)),
        inertia,
        &torque,
    );
    let (k4r, k4w) = derivative(&(r0 + k3r * dt), &(w0 + k3w * dt), inertia, &torque);

    let r = r0 + (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (dt / 6.0);
    let w = w0 + (k1w + k2w * 2.0 + k3w * 2.0 + k4w) * (dt / 6.0);
    AttitudeState {
        rotation: RotationMatrix::project(r),
        omega: w,
        time: state.time + dt,
    }
}

fn wrap_half_open(angle: f64) -> f64 {
    // atan2 may return exactly -π; the convention is (−π, π].
    if angle <= -PI {
        angle + 2.0 * PI
    } else {
        angle
    }
}

/// Z-Y-X Euler angles of `R = Rz(ψ)·Ry(θ)·Rx(φ)`, returned as `(φ, θ, ψ)`.
pub fn euler_zyx(rotation: &RotationMatrix) -> Vector3<f64> {
    let m = rotation.matrix();
    let theta = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    let phi = wrap_half_open(m[(2, 1)].atan2(m[(2, 2)]));
    let psi = wrap_half_open(m[(1, 0)].atan2(m[(0, 0)]));
    Vector3::new(phi, theta, psi)
}

/// Relative attitude error of a state already expressed against the
/// reference frame. The reference rate feed-forward is neglected.
pub fn attitude_error(state: &AttitudeState) -> AttitudeError {
    let euler = euler_zyx(&state.rotation);
    AttitudeError {
        euler,
        rate_error: state.omega,
        gimbal_proximity: euler.y.abs() > FRAC_PI_2 - GIMBAL_MARGIN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spherical() -> InertiaTensor {
        InertiaTensor::diagonal(1.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn basis_along_x_axis() {
        let geom = FormationGeometry {
            r1: Vector3::new(1.0, 0.0, 0.0),
            r2: Vector3::new(0.0, 0.0, -7e6),
            v1: Vector3::zeros(),
            v2: Vector3::zeros(),
        };
        // r1 - r2 = (1, 0, 7e6): normalization only
        let b = geom.reference_basis().unwrap();
        let los = Vector3::new(1.0, 0.0, 7e6);
        assert_relative_eq!(b.e1, los / los.norm(), epsilon = 1e-15);

        let geom = FormationGeometry {
            r1: Vector3::new(7e6, 0.0, 1.0),
            r2: Vector3::new(0.0, 0.0, 1.0),
            ..geom
        };
        assert_eq!(geom.reference_basis().unwrap().e1, Vector3::x());
    }

    #[test]
    fn basis_rejects_radius_along_line_of_sight() {
        let geom = FormationGeometry {
            r1: Vector3::new(7e6 + 2e5, 0.0, 0.0),
            r2: Vector3::new(7e6, 0.0, 0.0),
            v1: Vector3::zeros(),
            v2: Vector3::zeros(),
        };
        assert!(matches!(
            geom.reference_basis(),
            Err(Error::DegenerateGeometry(_))
        ));
        let same = FormationGeometry {
            r1: geom.r2,
            ..geom
        };
        assert!(matches!(
            same.reference_basis(),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn basis_is_right_handed_orthonormal() {
        let geom = FormationGeometry {
            r1: Vector3::new(7e6, 2e5, 0.0),
            r2: Vector3::new(7e6, 0.0, 0.0),
            v1: Vector3::zeros(),
            v2: Vector3::zeros(),
        };
        let b = geom.reference_basis().unwrap();
        for (u, v) in [(b.e1, b.e2), (b.e1, b.e3), (b.e2, b.e3)] {
            assert!(u.dot(&v).abs() < 1e-12);
        }
        for e in [b.e1, b.e2, b.e3] {
            assert!((e.norm() - 1.0).abs() < 1e-12);
        }
        // e2 = e3 × e1 component by component
        let e2 = Vector3::new(
            b.e3.y * b.e1.z - b.e3.z * b.e1.y,
            b.e3.z * b.e1.x - b.e3.x * b.e1.z,
            b.e3.x * b.e1.y - b.e3.y * b.e1.x,
        );
        assert_relative_eq!(b.e2, e2, epsilon = 1e-15);
        assert_relative_eq!(b.e1.cross(&b.e2), b.e3, epsilon = 1e-12);
        assert_eq!(b.e3, Vector3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn equilibrium_has_zero_derivative() {
        let s = AttitudeState::at_rest(0.0);
        let (rd, wd) = dynamics_derivative(
            &s,
            &InertiaTensor::diagonal(120.0, 100.0, 90.0).unwrap(),
            &Vector3::zeros(),
            &Vector3::zeros(),
        );
        assert_eq!(rd, Matrix3::zeros());
        assert_eq!(wd, Vector3::zeros());
    }

    #[test]
    fn spherical_body_spin_is_torque_free() {
        let s = AttitudeState {
            omega: Vector3::new(0.0, 0.0, 1.0),
            ..AttitudeState::at_rest(0.0)
        };
        let (_, wd) = dynamics_derivative(&s, &spherical(), &Vector3::zeros(), &Vector3::zeros());
        assert_eq!(wd, Vector3::zeros());
    }

    #[test]
    fn derivative_matches_hand_evaluation() {
        let inertia = InertiaTensor::diagonal(2.0, 1.0, 1.0).unwrap();
        let s = AttitudeState {
            omega: Vector3::new(0.1, 0.2, 0.0),
            ..AttitudeState::at_rest(0.0)
        };
        let (_, wd) = dynamics_derivative(
            &s,
            &inertia,
            &Vector3::new(0.0, 0.0, 0.01),
            &Vector3::new(0.0, 0.0, -0.005),
        );
        // Iω = (0.2, 0.2, 0); ω × Iω = (0.2·0 − 0·0.2, 0·0.2 − 0.1·0, 0.1·0.2 − 0.2·0.2) = (0, 0, −0.02)
        // rhs = (0, 0, 0.02 + 0.01 − 0.005) = (0, 0, 0.025); I⁻¹ rhs = (0, 0, 0.025)
        assert_relative_eq!(wd, Vector3::new(0.0, 0.0, 0.025), epsilon = 1e-15);
    }

    #[test]
    fn rk4_equilibrium_only_advances_time() {
        let s = AttitudeState::at_rest(3.0);
        let inertia = InertiaTensor::diagonal(120.0, 100.0, 90.0).unwrap();
        let n = step_rk4(&s, &inertia, &Vector3::zeros(), &Vector3::zeros(), 0.1);
        assert_eq!(n.rotation, s.rotation);
        assert_eq!(n.omega, s.omega);
        assert!((n.time - 3.1).abs() < 1e-15);
    }

    #[test]
    fn rk4_single_axis_spin_matches_closed_form() {
        let inertia = spherical();
        let mut s = AttitudeState {
            omega: Vector3::new(0.0, 0.0, 0.1),
            ..AttitudeState::at_rest(0.0)
        };
        for _ in 0..100 {
            s = step_rk4(&s, &inertia, &Vector3::zeros(), &Vector3::zeros(), 0.1);
            assert!((s.omega.norm() - 0.1).abs() < 1e-12);
            assert!(s.rotation.orthonormality_defect() < 1e-9);
        }
        let exact = RotationMatrix::from_axis_angle(&Vector3::z(), 1.0);
        assert!((s.rotation.angle() - 1.0).abs() < 1e-8);
        assert!((s.rotation.matrix() - exact.matrix()).norm() < 1e-8);
    }

    #[test]
    fn projection_repairs_perturbed_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let r = RotationMatrix::from_euler_zyx(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            let noise = Matrix3::from_fn(|_, _| rng.random_range(-1e-3..1e-3));
            let p = RotationMatrix::project(r.matrix() + noise);
            assert!(p.orthonormality_defect() < 1e-12);
            assert!((p.determinant() - 1.0).abs() < 1e-12);
            assert!((p.matrix() - r.matrix()).norm() < 1e-2);
        }
    }

    #[test]
    fn euler_of_identity_and_single_axis() {
        let e = attitude_error(&AttitudeState::at_rest(0.0));
        assert_eq!(e.euler, Vector3::zeros());
        assert!(!e.gimbal_proximity);

        let s = AttitudeState {
            rotation: RotationMatrix::from_axis_angle(&Vector3::z(), 0.2),
            ..AttitudeState::at_rest(0.0)
        };
        let e = attitude_error(&s);
        assert!((e.euler.z - 0.2).abs() < 1e-12);
        assert!(e.euler.x.abs() < 1e-12 && e.euler.y.abs() < 1e-12);
    }

    #[test]
    fn euler_round_trip_small_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let angles = Vector3::from_fn(|_, _| rng.random_range(-0.1..0.1));
            let r = RotationMatrix::from_euler_zyx(angles.x, angles.y, angles.z);
            let back = euler_zyx(&r);
            let r2 = RotationMatrix::from_euler_zyx(back.x, back.y, back.z);
            assert!((r.matrix() - r2.matrix()).norm() < 1e-10);
            assert!((back - angles).norm() < 1e-12);
        }
    }

    #[test]
    fn gimbal_flag_near_vertical_pitch() {
        let s = AttitudeState {
            rotation: RotationMatrix::from_euler_zyx(0.0, FRAC_PI_2 - 1e-4, 0.0),
            ..AttitudeState::at_rest(0.0)
        };
        assert!(attitude_error(&s).gimbal_proximity);
    }

    #[test]
    fn inertia_validation() {
        assert!(InertiaTensor::diagonal(1.0, -1.0, 1.0).is_err());
        let mut m = Matrix3::identity();
        m[(0, 1)] = 0.5;
        assert!(InertiaTensor::new(m).is_err());
    }
}
