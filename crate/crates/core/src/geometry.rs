//! Convex bodies as intersections of differentiable convex inequalities
//! `f_i(x) <= 0` expressed in the owning body's frame, plus the built-in
//! hulls used by the scenario catalog and closest-point seeding.
//!
//! Quadratic forms are used for the curved kinds (`|x-c|^2 - r^2` for the
//! sphere, squared axis distance minus `r^2` for the cylinder) so gradients
//! stay smooth everywhere except the cylinder axis, where a gradient query is
//! an error.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("gradient undefined: query point lies on the cylinder axis")]
    GradientUndefined,
    #[error("gradient of the active support constraint vanished at the contact point")]
    ZeroGradient,
    #[error("body `{0}` has no constraints")]
    EmptyBody(String),
    #[error("non-finite query point")]
    NonFiniteQuery,
}

/// Rigid placement of a body's frame in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn to_body(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.orientation
            .inverse_transform_vector(&(x_world - self.position))
    }

    pub fn to_world(&self, x_body: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.transform_vector(x_body) + self.position
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// One differentiable convex inequality `f(x) <= 0` in the body frame.
#[derive(Debug, Clone, PartialEq)]
pub enum ConvexConstraint {
    /// `f(x) = normal . x - offset`, `normal` unit length.
    Halfspace { normal: Vector3<f64>, offset: f64 },
    /// `f(x) = |x - center|^2 - radius^2`.
    Sphere { center: Vector3<f64>, radius: f64 },
    /// `f(x) = |perp(x)|^2 - radius^2` with `perp` the component of
    /// `x - axis_point` orthogonal to the unit direction `axis_dir`.
    Cylinder {
        axis_point: Vector3<f64>,
        axis_dir: Vector3<f64>,
        radius: f64,
    },
}

impl ConvexConstraint {
    /// Constraint value in the body frame. Total and infallible.
    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        match self {
            Self::Halfspace { normal, offset } => normal.dot(x) - offset,
            Self::Sphere { center, radius } => (x - center).norm_squared() - radius * radius,
            Self::Cylinder {
                axis_point,
                axis_dir,
                radius,
            } => {
                let d = x - axis_point;
                let perp = d - axis_dir * d.dot(axis_dir);
                perp.norm_squared() - radius * radius
            }
        }
    }

    /// Body-frame gradient of the quadratic form. Total: on the cylinder
    /// axis it is the zero vector, which is correct wherever the term is
    /// weighted by a vanishing multiplier.
    pub fn gradient_raw(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::Halfspace { normal, .. } => *normal,
            Self::Sphere { center, .. } => 2.0 * (x - center),
            Self::Cylinder {
                axis_point,
                axis_dir,
                ..
            } => {
                let d = x - axis_point;
                2.0 * (d - axis_dir * d.dot(axis_dir))
            }
        }
    }

    /// Body-frame gradient. Errors on a cylinder-axis query, where the
    /// gradient carries no direction information.
    pub fn gradient(&self, x: &Vector3<f64>) -> Result<Vector3<f64>, GeometryError> {
        if let Self::Cylinder {
            axis_point,
            axis_dir,
            radius,
        } = self
        {
            let d = x - axis_point;
            let perp = d - axis_dir * d.dot(axis_dir);
            if perp.norm() <= 1e-12 * radius.max(1.0) {
                return Err(GeometryError::GradientUndefined);
            }
        }
        Ok(self.gradient_raw(x))
    }

    /// Body-frame Hessian (constant per kind away from the cylinder axis).
    pub fn hessian(&self, _x: &Vector3<f64>) -> Matrix3<f64> {
        match self {
            Self::Halfspace { .. } => Matrix3::zeros(),
            Self::Sphere { .. } => Matrix3::identity() * 2.0,
            Self::Cylinder { axis_dir, .. } => {
                (Matrix3::identity() - axis_dir * axis_dir.transpose()) * 2.0
            }
        }
    }

    /// Euclidean projection of `x` onto `{f <= 0}` in the body frame.
    pub fn project(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::Halfspace { normal, offset } => {
                let excess = normal.dot(x) - offset;
                if excess > 0.0 {
                    x - normal * excess
                } else {
                    *x
                }
            }
            Self::Sphere { center, radius } => {
                let d = x - center;
                let n = d.norm();
                if n > *radius {
                    center + d * (radius / n)
                } else {
                    *x
                }
            }
            Self::Cylinder {
                axis_point,
                axis_dir,
                radius,
            } => {
                let d = x - axis_point;
                let along = axis_dir * d.dot(axis_dir);
                let perp = d - along;
                let n = perp.norm();
                if n > *radius {
                    axis_point + along + perp * (radius / n)
                } else {
                    *x
                }
            }
        }
    }
}

/// Evaluates a body-frame constraint at a world point under `pose`,
/// returning the value and the world-frame gradient.
pub fn evaluate_world(
    constraint: &ConvexConstraint,
    pose: &Pose,
    x_world: &Vector3<f64>,
) -> Result<(f64, Vector3<f64>), GeometryError> {
    if !x_world.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NonFiniteQuery);
    }
    let x_body = pose.to_body(x_world);
    let value = constraint.value(&x_body);
    let grad_body = constraint.gradient(&x_body)?;
    Ok((value, pose.orientation.transform_vector(&grad_body)))
}

/// World-frame Hessian of a constraint under `pose`.
pub fn hessian_world(
    constraint: &ConvexConstraint,
    pose: &Pose,
    x_world: &Vector3<f64>,
) -> Matrix3<f64> {
    let x_body = pose.to_body(x_world);
    let h = constraint.hessian(&x_body);
    let r = pose.orientation.to_rotation_matrix();
    r.matrix() * h * r.matrix().transpose()
}

/// A body as an ordered list of convex constraints plus its pose. The
/// `extreme_points` are body-frame boundary samples (polytope vertices, rim
/// circles) used by non-penetration audits.
#[derive(Debug, Clone, PartialEq)]
pub struct BodyGeometry {
    pub constraints: Vec<ConvexConstraint>,
    pub pose: Pose,
    pub descriptor: String,
    pub extreme_points: Vec<Vector3<f64>>,
}

impl BodyGeometry {
    pub fn new(constraints: Vec<ConvexConstraint>, pose: Pose, descriptor: &str) -> Self {
        Self {
            constraints,
            pose,
            descriptor: descriptor.to_string(),
            extreme_points: Vec::new(),
        }
    }

    /// Same geometry at a different pose.
    pub fn at_pose(&self, pose: Pose) -> Self {
        let mut b = self.clone();
        b.pose = pose;
        b
    }

    pub fn is_halfspace_support(&self) -> bool {
        self.constraints.len() == 1
            && matches!(self.constraints[0], ConvexConstraint::Halfspace { .. })
    }
}

/// `max_i f_i(x)` over the body's constraints in world coordinates, with the
/// lowest index attaining the max. Negative inside, zero on the boundary.
pub fn gap(body: &BodyGeometry, x_world: &Vector3<f64>) -> (f64, usize) {
    assert!(
        !body.constraints.is_empty(),
        "gap() on empty body {}",
        body.descriptor
    );
    let x_body = body.pose.to_body(x_world);
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, c) in body.constraints.iter().enumerate() {
        let v = c.value(&x_body);
        if v > best {
            best = v;
            idx = i;
        }
    }
    (best, idx)
}

fn halfspace(nx: f64, ny: f64, nz: f64, offset: f64) -> ConvexConstraint {
    ConvexConstraint::Halfspace {
        normal: Vector3::new(nx, ny, nz).normalize(),
        offset,
    }
}

/// Axis-aligned box hull centered on the body origin.
///
/// Face order: +x, -x, +y, -y, +z, -z.
pub fn builtin_box(half_extents: Vector3<f64>) -> BodyGeometry {
    builtin_box_at(half_extents, Vector3::zeros())
}

/// Axis-aligned box hull centered at `center` in the body frame, for hulls
/// that sit offset from the center of mass (a desk's contact hull hangs
/// below its CM).
pub fn builtin_box_at(half_extents: Vector3<f64>, center: Vector3<f64>) -> BodyGeometry {
    let (hx, hy, hz) = (half_extents.x, half_extents.y, half_extents.z);
    let constraints = vec![
        halfspace(1.0, 0.0, 0.0, center.x + hx),
        halfspace(-1.0, 0.0, 0.0, -center.x + hx),
        halfspace(0.0, 1.0, 0.0, center.y + hy),
        halfspace(0.0, -1.0, 0.0, -center.y + hy),
        halfspace(0.0, 0.0, 1.0, center.z + hz),
        halfspace(0.0, 0.0, -1.0, -center.z + hz),
    ];
    let mut body = BodyGeometry::new(constraints, Pose::identity(), "box");
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                body.extreme_points
                    .push(center + Vector3::new(sx * hx, sy * hy, sz * hz));
            }
        }
    }
    body
}

/// Dimensions of a T-shaped prism: a crossbar with a stem leaving the middle
/// of its back face, extruded through `thickness` along z. All lengths in
/// meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TPrismDims {
    /// Crossbar length along y.
    pub bar_length: f64,
    /// Crossbar depth along x.
    pub bar_depth: f64,
    /// Stem length along x, measured from the crossbar's back face.
    pub stem_length: f64,
    /// Stem width along y.
    pub stem_width: f64,
    /// Extrusion along z.
    pub thickness: f64,
}

impl TPrismDims {
    /// Centroid x-offset of the T cross-section from the crossbar's front
    /// face, used to center the hull on the center of mass.
    pub fn centroid_x(&self) -> f64 {
        let bar_area = self.bar_depth * self.bar_length;
        let stem_area = self.stem_length * self.stem_width;
        (bar_area * 0.5 * self.bar_depth + stem_area * (self.bar_depth + 0.5 * self.stem_length))
            / (bar_area + stem_area)
    }

    /// Hull cross-section vertices, centered on the centroid.
    pub fn hull_vertices_2d(&self) -> [(f64, f64); 6] {
        let cx = self.centroid_x();
        let x0 = -cx;
        let x1 = self.bar_depth - cx;
        let x2 = self.bar_depth + self.stem_length - cx;
        let by = 0.5 * self.bar_length;
        let sy = 0.5 * self.stem_width;
        [(x0, by), (x1, by), (x2, sy), (x2, -sy), (x1, -by), (x0, -by)]
    }
}

/// Convex hull of the T cross-section extruded along z, centered on the
/// prism's center of mass. The cross-section hull is the hexagon spanned by
/// the crossbar's four corners and the stem tip's two corners, so the body
/// carries six lateral faces plus top and bottom caps.
pub fn builtin_t_prism(dims: TPrismDims) -> BodyGeometry {
    let verts = dims.hull_vertices_2d();
    let mut constraints = Vec::with_capacity(8);
    // Lateral faces walk the hexagon; outward normal of edge (a -> b) is the
    // edge direction rotated -90 degrees for a counterclockwise polygon.
    let ccw: Vec<(f64, f64)> = {
        // hull_vertices_2d lists (x0,by) .. (x0,-by); reverse for CCW order
        let mut v: Vec<(f64, f64)> = verts.to_vec();
        v.reverse();
        v
    };
    for i in 0..ccw.len() {
        let (ax, ay) = ccw[i];
        let (bx, by) = ccw[(i + 1) % ccw.len()];
        let (ex, ey) = (bx - ax, by - ay);
        let n = Vector3::new(ey, -ex, 0.0).normalize();
        let offset = n.x * ax + n.y * ay;
        constraints.push(ConvexConstraint::Halfspace { normal: n, offset });
    }
    let hz = 0.5 * dims.thickness;
    constraints.push(halfspace(0.0, 0.0, 1.0, hz));
    constraints.push(halfspace(0.0, 0.0, -1.0, hz));
    let mut body = BodyGeometry::new(constraints, Pose::identity(), "t_prism");
    for (x, y) in verts {
        body.extreme_points.push(Vector3::new(x, y, -hz));
        body.extreme_points.push(Vector3::new(x, y, hz));
    }
    body
}

/// Finite-cylinder hull of a dumbbell: the circumscribing cylinder of the two
/// end pieces, axis along body x. Constraint order: cylinder, +x cap, -x cap.
pub fn builtin_dumbbell_hull(length: f64, radius: f64) -> BodyGeometry {
    let constraints = vec![
        ConvexConstraint::Cylinder {
            axis_point: Vector3::zeros(),
            axis_dir: Vector3::x(),
            radius,
        },
        halfspace(1.0, 0.0, 0.0, 0.5 * length),
        halfspace(-1.0, 0.0, 0.0, 0.5 * length),
    ];
    let mut body = BodyGeometry::new(constraints, Pose::identity(), "dumbbell_hull");
    // The extreme points of a finite cylinder are its two rim circles.
    let samples = 24;
    for end in [-0.5 * length, 0.5 * length] {
        for k in 0..samples {
            let theta = 2.0 * std::f64::consts::PI * (k as f64) / (samples as f64);
            body.extreme_points
                .push(Vector3::new(end, radius * theta.cos(), radius * theta.sin()));
        }
    }
    body
}

/// Result of closest-point seeding; the pair is a warm start, not a
/// certified optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedPoints {
    pub on_body: Vector3<f64>,
    pub on_support: Vector3<f64>,
    pub converged: bool,
}

/// Euclidean projection onto the body's constraint intersection via
/// Dykstra's algorithm (exact for a single constraint, convergent for
/// intersections).
pub fn project_onto_body(body: &BodyGeometry, x_world: &Vector3<f64>) -> Vector3<f64> {
    let mut x = body.pose.to_body(x_world);
    if body.constraints.len() == 1 {
        return body.pose.to_world(&body.constraints[0].project(&x));
    }
    let n = body.constraints.len();
    let mut corrections = vec![Vector3::zeros(); n];
    for _ in 0..64 {
        let before = x;
        for (i, c) in body.constraints.iter().enumerate() {
            let y = x + corrections[i];
            let p = c.project(&y);
            corrections[i] = y - p;
            x = p;
        }
        if (x - before).norm() < 1e-14 {
            break;
        }
    }
    body.pose.to_world(&x)
}

/// Alternating-projection estimate of a closest pair between two convex
/// bodies, used to warm-start the per-step solve.
pub fn seed_closest_points(
    body: &BodyGeometry,
    support: &BodyGeometry,
    max_iter: usize,
    tol: f64,
) -> SeedPoints {
    let mut a1 = body.pose.position;
    let mut a2 = support.pose.position;
    let mut converged = false;
    for _ in 0..max_iter {
        let next_a2 = project_onto_body(support, &a1);
        let next_a1 = project_onto_body(body, &next_a2);
        let movement = (next_a1 - a1).norm() + (next_a2 - a2).norm();
        a1 = next_a1;
        a2 = next_a2;
        if movement < tol {
            converged = true;
            break;
        }
    }
    let feas_body = gap(body, &a1).0;
    let feas_support = gap(support, &a2).0;
    if feas_body > tol || feas_support > tol {
        converged = false;
    }
    SeedPoints {
        on_body: a1,
        on_support: a2,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn central_diff_gradient(
        c: &ConvexConstraint,
        pose: &Pose,
        x: &Vector3<f64>,
    ) -> Vector3<f64> {
        let h = 1e-6;
        let mut g = Vector3::zeros();
        for i in 0..3 {
            let mut xp = *x;
            let mut xm = *x;
            xp[i] += h;
            xm[i] -= h;
            let fp = c.value(&pose.to_body(&xp));
            let fm = c.value(&pose.to_body(&xm));
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn halfspace_identity_pose() {
        let c = halfspace(0.0, 0.0, 1.0, 0.0);
        let (v, g) = evaluate_world(&c, &Pose::identity(), &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(v, 1.0);
        assert_abs_diff_eq!((g - Vector3::z()).norm(), 0.0);
    }

    #[test]
    fn sphere_value_and_gradient() {
        let c = ConvexConstraint::Sphere {
            center: Vector3::zeros(),
            radius: 1.0,
        };
        let (v, g) = evaluate_world(&c, &Pose::identity(), &Vector3::new(2.0, 0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(v, 3.0);
        assert_abs_diff_eq!((g - Vector3::new(4.0, 0.0, 0.0)).norm(), 0.0);
    }

    #[test]
    fn rotated_halfspace_matches_finite_differences() {
        let c = halfspace(0.0, 0.0, 1.0, 0.0);
        let pose = Pose::new(
            Vector3::zeros(),
            UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::FRAC_PI_2),
        );
        let x = Vector3::new(0.0, 1.0, 0.0);
        let (v, g) = evaluate_world(&c, &pose, &x).unwrap();
        // body z maps to world -y under a +90 degree rotation about x; the
        // body-frame point is (0,0,-1)... value = -1? Check against FD.
        let fd = central_diff_gradient(&c, &pose, &x);
        assert_relative_eq!((g - fd).norm(), 0.0, epsilon = 1e-6);
        assert_relative_eq!(v, c.value(&pose.to_body(&x)), epsilon = 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let kinds = [
            halfspace(1.0, 2.0, -0.5, 0.3),
            ConvexConstraint::Sphere {
                center: Vector3::new(0.1, -0.2, 0.3),
                radius: 0.7,
            },
            ConvexConstraint::Cylinder {
                axis_point: Vector3::new(0.05, 0.0, -0.1),
                axis_dir: Vector3::new(1.0, 0.2, 0.1).normalize(),
                radius: 0.4,
            },
        ];
        for c in &kinds {
            for _ in 0..1000 {
                let x = Vector3::new(
                    4.0 * rng.random::<f64>() - 2.0,
                    4.0 * rng.random::<f64>() - 2.0,
                    4.0 * rng.random::<f64>() - 2.0,
                );
                let pose = Pose::identity();
                let g = match evaluate_world(c, &pose, &x) {
                    Ok((_, g)) => g,
                    Err(GeometryError::GradientUndefined) => continue,
                    Err(e) => panic!("{e}"),
                };
                let fd = central_diff_gradient(c, &pose, &x);
                let denom = g.norm().max(1.0);
                assert!(
                    (g - fd).norm() / denom <= 1e-5,
                    "kind {c:?} point {x:?}: grad {g:?} vs fd {fd:?}"
                );
            }
        }
    }

    #[test]
    fn cylinder_axis_gradient_is_an_error() {
        let c = ConvexConstraint::Cylinder {
            axis_point: Vector3::zeros(),
            axis_dir: Vector3::x(),
            radius: 0.5,
        };
        let got = evaluate_world(&c, &Pose::identity(), &Vector3::new(0.3, 0.0, 0.0));
        assert!(matches!(got, Err(GeometryError::GradientUndefined)));
    }

    #[test]
    fn gap_box_center_and_faces() {
        let b = builtin_box(Vector3::new(0.5, 0.5, 0.5));
        let (v, i) = gap(&b, &Vector3::zeros());
        assert_abs_diff_eq!(v, -0.5);
        assert_eq!(i, 0, "tie broken to lowest index");
        let (v, i) = gap(&b, &Vector3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(v, 0.5);
        assert_eq!(i, 0, "+x face");
        // corner-equidistant interior point: all six faces tie
        let (_, i) = gap(&b, &Vector3::new(0.0, 0.0, 0.0));
        assert_eq!(i, 0);
    }

    #[test]
    fn box_builtin_shape() {
        let desk = builtin_box(Vector3::new(0.25, 0.25, 0.225));
        assert_eq!(desk.constraints.len(), 6);
        assert!(gap(&desk, &Vector3::zeros()).0 < 0.0);
        assert_eq!(desk.extreme_points.len(), 8);
    }

    #[test]
    fn t_prism_extreme_points_on_hull() {
        let dims = TPrismDims {
            bar_length: 0.3,
            bar_depth: 0.1,
            stem_length: 0.2,
            stem_width: 0.1,
            thickness: 0.05,
        };
        let t = builtin_t_prism(dims);
        assert_eq!(t.constraints.len(), 8);
        for v in &t.extreme_points {
            let (g, _) = gap(&t, v);
            assert!(g.abs() <= 1e-12, "vertex {v:?} gap {g}");
        }
        // centroid strictly inside
        assert!(gap(&t, &Vector3::zeros()).0 < 0.0);
        // all constraints are halfspaces (hull is a polytope)
        assert!(t
            .constraints
            .iter()
            .all(|c| matches!(c, ConvexConstraint::Halfspace { .. })));
        // enumerate the raw T vertices (both rectangles) and check hull
        // membership: every T extreme point has gap <= 1e-12
        let cx = dims.centroid_x();
        let raw = [
            (0.0 - cx, 0.15),
            (0.0 - cx, -0.15),
            (0.1 - cx, 0.15),
            (0.1 - cx, -0.15),
            (0.1 - cx, 0.05),
            (0.1 - cx, -0.05),
            (0.3 - cx, 0.05),
            (0.3 - cx, -0.05),
        ];
        for (x, y) in raw {
            for z in [-0.025, 0.025] {
                let (g, _) = gap(&t, &Vector3::new(x, y, z));
                assert!(g <= 1e-12, "T vertex ({x},{y},{z}) outside hull: {g}");
            }
        }
    }

    #[test]
    fn polytope_vertices_lie_on_three_active_constraints() {
        let bodies = [
            builtin_box(Vector3::new(0.25, 0.25, 0.225)),
            builtin_t_prism(TPrismDims {
                bar_length: 0.3,
                bar_depth: 0.1,
                stem_length: 0.2,
                stem_width: 0.1,
                thickness: 0.05,
            }),
        ];
        for b in &bodies {
            for v in &b.extreme_points {
                let (g, _) = gap(b, v);
                assert!(g.abs() <= 1e-12);
                let active = b
                    .constraints
                    .iter()
                    .filter(|c| c.value(v).abs() <= 1e-12)
                    .count();
                assert!(active >= 3, "vertex {v:?} has only {active} active faces");
            }
        }
    }

    #[test]
    fn dumbbell_hull_rim_and_axis() {
        let (length, radius) = (0.3, 0.1);
        let d = builtin_dumbbell_hull(length, radius);
        assert_eq!(d.constraints.len(), 3);
        for theta in [0.0, 1.0, 2.5] {
            let p = Vector3::new(
                0.15,
                radius * f64::cos(theta),
                radius * f64::sin(theta),
            );
            let (g, _) = gap(&d, &p);
            assert!(g.abs() <= 1e-12, "rim point gap {g}");
        }
        // the cylinder term at the axis midpoint evaluates to -R^2
        assert_abs_diff_eq!(d.constraints[0].value(&Vector3::zeros()), -radius * radius);
    }

    #[test]
    fn gap_sign_agrees_with_rejection_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let bodies = [
            builtin_box(Vector3::new(0.3, 0.2, 0.1)),
            builtin_dumbbell_hull(0.3, 0.1),
        ];
        for b in &bodies {
            for _ in 0..2000 {
                let x = Vector3::new(
                    0.8 * rng.random::<f64>() - 0.4,
                    0.8 * rng.random::<f64>() - 0.4,
                    0.8 * rng.random::<f64>() - 0.4,
                );
                let inside_by_constraints = b.constraints.iter().all(|c| c.value(&x) <= 0.0);
                let (g, _) = gap(b, &x);
                assert_eq!(g <= 0.0, inside_by_constraints);
            }
        }
    }

    #[test]
    fn seed_sphere_above_plane() {
        let mut sphere = BodyGeometry::new(
            vec![ConvexConstraint::Sphere {
                center: Vector3::zeros(),
                radius: 1.0,
            }],
            Pose::new(Vector3::new(0.0, 0.0, 0.0), UnitQuaternion::identity()),
            "sphere",
        );
        sphere.pose.position = Vector3::new(0.0, 0.0, 0.0);
        // support occupies z <= -2
        let plane = BodyGeometry::new(vec![halfspace(0.0, 0.0, 1.0, -2.0)], Pose::identity(), "g");
        let seed = seed_closest_points(&sphere, &plane, 200, 1e-10);
        assert!(seed.converged);
        assert_abs_diff_eq!(
            (seed.on_body - Vector3::new(0.0, 0.0, -1.0)).norm(),
            0.0,
            epsilon = 1e-6
        );
        assert_abs_diff_eq!(
            (seed.on_support - Vector3::new(0.0, 0.0, -2.0)).norm(),
            0.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn seed_touching_box_on_plane() {
        let mut bx = builtin_box(Vector3::new(0.1, 0.1, 0.1));
        bx.pose.position = Vector3::new(0.0, 0.0, 0.1);
        let plane = BodyGeometry::new(vec![halfspace(0.0, 0.0, 1.0, 0.0)], Pose::identity(), "g");
        let seed = seed_closest_points(&bx, &plane, 200, 1e-9);
        assert!((seed.on_body - seed.on_support).norm() <= 1e-9);
    }

    #[test]
    fn seed_separated_boxes_face_to_face() {
        let mut a = builtin_box(Vector3::new(0.1, 0.1, 0.1));
        a.pose.position = Vector3::new(0.0, 0.0, 0.5);
        let mut b = builtin_box(Vector3::new(0.2, 0.2, 0.1));
        b.pose.position = Vector3::new(0.05, -0.02, 0.0);
        let seed = seed_closest_points(&a, &b, 500, 1e-10);
        assert!(seed.converged);
        // brute-force grid over the facing faces as the oracle distance
        let mut best = f64::INFINITY;
        let n = 60;
        for i in 0..=n {
            for j in 0..=n {
                let fx = -0.1 + 0.2 * (i as f64) / (n as f64);
                let fy = -0.1 + 0.2 * (j as f64) / (n as f64);
                let pa = Vector3::new(fx, fy, 0.4);
                let pb = project_onto_body(&b, &pa);
                best = best.min((pa - pb).norm());
            }
        }
        let d = (seed.on_body - seed.on_support).norm();
        assert_relative_eq!(d, best, epsilon = 1e-6);
        // separation parallel to the face normal (z)
        let sep = seed.on_body - seed.on_support;
        assert!(sep.x.abs() <= 1e-6 && sep.y.abs() <= 1e-6);
    }
}
