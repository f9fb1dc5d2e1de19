//! Rigid-body algebra: state, quaternion kinematics, generalized inertia, and
//! contact wrench bases.
//!
//! Conventions used throughout the crate: quaternions are scalar-first
//! `(w, x, y, z)`, angular velocity is spatial (world frame), and the
//! generalized velocity stacks `[v; w]`. The quaternion rate for a spatial
//! angular velocity is `q_dot = 0.5 * (0, w) * q` (left multiplication).

use nalgebra::{Matrix3, Matrix6, Quaternion, UnitQuaternion, Vector3, Vector6};
use thiserror::Error;

/// Unit-norm tolerance accepted on quaternions entering kinematic maps.
pub const QUAT_UNIT_TOL: f64 = 1e-9;

/// A 7x6 kinematic map matrix (rows: position then quaternion `w,x,y,z`).
pub type KinematicMap = nalgebra::SMatrix<f64, 7, 6>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("quaternion norm {norm} deviates from 1 beyond tolerance {tol}")]
    NonUnitQuaternion { norm: f64, tol: f64 },
    #[error("body inertia matrix is not symmetric positive definite")]
    NonSpdInertia,
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
}

/// Pose and generalized velocity of the manipulated body.
///
/// `angular_velocity` is expressed in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidState {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    pub linear_velocity: Vector3<f64>,
    pub angular_velocity: Vector3<f64>,
}

impl RigidState {
    pub fn new(
        position: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        linear_velocity: Vector3<f64>,
        angular_velocity: Vector3<f64>,
    ) -> Self {
        Self {
            position,
            orientation,
            linear_velocity,
            angular_velocity,
        }
    }

    /// Generalized velocity `[v; w]`.
    pub fn generalized_velocity(&self) -> Vector6<f64> {
        stack_velocity(&self.linear_velocity, &self.angular_velocity)
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|x| x.is_finite())
            && self.orientation.coords.iter().all(|x| x.is_finite())
            && self.linear_velocity.iter().all(|x| x.is_finite())
            && self.angular_velocity.iter().all(|x| x.is_finite())
    }
}

/// Right-handed orthonormal contact frame `(n, t, o)` with `o = n x t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactFrame {
    pub normal: Vector3<f64>,
    pub tangent: Vector3<f64>,
    pub bitangent: Vector3<f64>,
}

impl ContactFrame {
    /// Builds the frame from a unit normal, choosing the tangent
    /// deterministically: world x projected onto the tangent plane, falling
    /// back to world y when the normal is (anti)parallel to x.
    pub fn from_normal(normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        let mut t = Vector3::x() - n * n.x;
        if t.norm() < 1e-6 {
            t = Vector3::y() - n * n.y;
        }
        let t = t.normalize();
        let o = n.cross(&t);
        Self {
            normal: n,
            tangent: t,
            bitangent: o,
        }
    }

    /// Maximum deviation from orthonormality; zero for an exact frame.
    pub fn orthonormality_defect(&self) -> f64 {
        let dots = [
            self.normal.dot(&self.tangent),
            self.normal.dot(&self.bitangent),
            self.tangent.dot(&self.bitangent),
        ];
        let norms = [
            self.normal.norm() - 1.0,
            self.tangent.norm() - 1.0,
            self.bitangent.norm() - 1.0,
        ];
        dots.iter()
            .chain(norms.iter())
            .fold(0.0_f64, |a, b| a.max(b.abs()))
    }
}

/// Unit wrenches mapping contact force/moment magnitudes to generalized
/// force space. Top block: force direction; bottom block: moment arm.
/// The drilling wrench has a zero force block and the contact normal as its
/// moment block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchBasis {
    pub normal: Vector6<f64>,
    pub tangent: Vector6<f64>,
    pub bitangent: Vector6<f64>,
    pub drilling: Vector6<f64>,
}

/// Kinematic map `G(q)` with `q_dot = G nu`.
///
/// The top 3x3 block is the identity on linear velocity; the quaternion rows
/// encode `q_dot = 0.5 * (0, w) * q` for the spatial angular velocity `w`.
pub fn quat_kinematic_map(orientation: &UnitQuaternion<f64>) -> Result<KinematicMap, MathError> {
    let norm = orientation.coords.norm();
    if (norm - 1.0).abs() > QUAT_UNIT_TOL {
        return Err(MathError::NonUnitQuaternion {
            norm,
            tol: QUAT_UNIT_TOL,
        });
    }
    let q = orientation.quaternion();
    let (qw, qx, qy, qz) = (q.w, q.i, q.j, q.k);
    let mut g = KinematicMap::zeros();
    g[(0, 0)] = 1.0;
    g[(1, 1)] = 1.0;
    g[(2, 2)] = 1.0;
    // d(qw)/dt = -0.5 * qv . w
    g[(3, 3)] = -0.5 * qx;
    g[(3, 4)] = -0.5 * qy;
    g[(3, 5)] = -0.5 * qz;
    // d(qv)/dt = 0.5 * (qw I - [qv]x) w
    g[(4, 3)] = 0.5 * qw;
    g[(4, 4)] = 0.5 * qz;
    g[(4, 5)] = -0.5 * qy;
    g[(5, 3)] = -0.5 * qz;
    g[(5, 4)] = 0.5 * qw;
    g[(5, 5)] = 0.5 * qx;
    g[(6, 3)] = 0.5 * qy;
    g[(6, 4)] = -0.5 * qx;
    g[(6, 5)] = 0.5 * qw;
    Ok(g)
}

/// Generalized inertia `M = blockdiag(m I, R I_body R^T)` at the given
/// orientation. `body_inertia` must be symmetric positive definite.
pub fn world_inertia(
    orientation: &UnitQuaternion<f64>,
    mass: f64,
    body_inertia: &Matrix3<f64>,
) -> Result<Matrix6<f64>, MathError> {
    if !(mass > 0.0) {
        return Err(MathError::NonSpdInertia);
    }
    let sym_defect = (body_inertia - body_inertia.transpose()).abs().max();
    if sym_defect > 1e-9 * body_inertia.abs().max().max(1.0) {
        return Err(MathError::NonSpdInertia);
    }
    if body_inertia.clone_owned().cholesky().is_none() {
        return Err(MathError::NonSpdInertia);
    }
    let r = orientation.to_rotation_matrix();
    let i_world = r.matrix() * body_inertia * r.matrix().transpose();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * mass));
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&i_world);
    Ok(m)
}

/// Coriolis/centripetal generalized force `[0; -w x (I_world w)]`.
pub fn coriolis_wrench(inertia: &Matrix6<f64>, velocity: &Vector6<f64>) -> Vector6<f64> {
    let i_world: Matrix3<f64> = inertia.fixed_view::<3, 3>(3, 3).into();
    let w = angular_part(velocity);
    let torque = -w.cross(&(i_world * w));
    let mut out = Vector6::zeros();
    out.fixed_view_mut::<3, 1>(3, 0).copy_from(&torque);
    out
}

/// Wrench basis at the ECP `a1` for a body whose center of mass sits at
/// `cm_position`; `r = a1 - cm`.
pub fn wrench_basis(
    frame: &ContactFrame,
    ecp: &Vector3<f64>,
    cm_position: &Vector3<f64>,
) -> WrenchBasis {
    let r = ecp - cm_position;
    let stack = |dir: &Vector3<f64>| -> Vector6<f64> {
        let mut w = Vector6::zeros();
        w.fixed_view_mut::<3, 1>(0, 0).copy_from(dir);
        w.fixed_view_mut::<3, 1>(3, 0).copy_from(&r.cross(dir));
        w
    };
    let mut drilling = Vector6::zeros();
    drilling
        .fixed_view_mut::<3, 1>(3, 0)
        .copy_from(&frame.normal);
    WrenchBasis {
        normal: stack(&frame.normal),
        tangent: stack(&frame.tangent),
        bitangent: stack(&frame.bitangent),
        drilling,
    }
}

/// Stacks `[v; w]` into a generalized velocity.
pub fn stack_velocity(linear: &Vector3<f64>, angular: &Vector3<f64>) -> Vector6<f64> {
    let mut nu = Vector6::zeros();
    nu.fixed_view_mut::<3, 1>(0, 0).copy_from(linear);
    nu.fixed_view_mut::<3, 1>(3, 0).copy_from(angular);
    nu
}

pub fn linear_part(nu: &Vector6<f64>) -> Vector3<f64> {
    nu.fixed_view::<3, 1>(0, 0).into()
}

pub fn angular_part(nu: &Vector6<f64>) -> Vector3<f64> {
    nu.fixed_view::<3, 1>(3, 0).into()
}

/// Euler-advances a pose by one step of length `h` at generalized velocity
/// `nu`, renormalizing the quaternion. Returns the new pose and the norm
/// drift absorbed by renormalization.
pub fn advance_pose(
    position: &Vector3<f64>,
    orientation: &UnitQuaternion<f64>,
    nu: &Vector6<f64>,
    h: f64,
) -> (Vector3<f64>, UnitQuaternion<f64>, f64) {
    let v = linear_part(nu);
    let w = angular_part(nu);
    let new_pos = position + h * v;
    let q = orientation.quaternion();
    let omega_q = Quaternion::new(0.0, w.x, w.y, w.z);
    let raw = q + (omega_q * q) * (0.5 * h);
    let drift = (raw.norm() - 1.0).abs();
    (new_pos, UnitQuaternion::new_normalize(raw), drift)
}
