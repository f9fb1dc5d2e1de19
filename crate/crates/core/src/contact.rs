//! Contact constraint residuals: the modified KKT system that couples the two
//! equivalent contact points (the pair `a1` on the body hull, `a2` on the
//! support), the constraint multipliers, and the normal impulse.
//!
//! At a solution, the equality rows place `a1 - a2` along the body's normal
//! cone direction and oppose it against the support's normal cone, while the
//! complementarity pairs pin the points to active constraint surfaces and tie
//! the normal impulse to the separation of `a2` from the body hull. Separated
//! bodies get the closest boundary pair with zero impulse; touching bodies get
//! `a1 = a2` on both boundaries.

use crate::geometry::{BodyGeometry, ConvexConstraint, GeometryError, Pose};
use crate::math::ContactFrame;
use nalgebra::{Vector3, Vector6};

/// Contact-block unknowns for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactUnknowns {
    /// ECP on the body hull (world frame).
    pub ecp_body: Vector3<f64>,
    /// ECP on the support (world frame).
    pub ecp_support: Vector3<f64>,
    /// Multipliers for the body's constraints (length m, componentwise >= 0
    /// at an accepted solution).
    pub body_multipliers: Vec<f64>,
    /// Multipliers for the support's constraints.
    pub support_multipliers: Vec<f64>,
    /// Index of the designated active body constraint `k`; its multiplier
    /// scales the whole normal-cone direction and is excluded from the sum.
    pub active_index: usize,
}

/// Contact part of a converged step: ECP pair, impulses, and the slip-rate
/// multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSolution {
    pub unknowns: ContactUnknowns,
    pub normal_impulse: f64,
    pub tangent_impulse: f64,
    pub bitangent_impulse: f64,
    pub drill_impulse: f64,
    pub slip_rate: f64,
    pub frame: ContactFrame,
}

impl ContactSolution {
    pub fn impulse_wrench_terms(&self) -> [(f64, &'static str); 4] {
        [
            (self.normal_impulse, "normal"),
            (self.tangent_impulse, "tangent"),
            (self.bitangent_impulse, "bitangent"),
            (self.drill_impulse, "drill"),
        ]
    }
}

fn world_gradient_raw(
    constraint: &ConvexConstraint,
    pose: &Pose,
    x_world: &Vector3<f64>,
) -> Vector3<f64> {
    let x_body = pose.to_body(x_world);
    pose.orientation
        .transform_vector(&constraint.gradient_raw(&x_body))
}

fn world_gradient_strict(
    constraint: &ConvexConstraint,
    pose: &Pose,
    x_world: &Vector3<f64>,
) -> Result<Vector3<f64>, GeometryError> {
    let x_body = pose.to_body(x_world);
    Ok(pose
        .orientation
        .transform_vector(&constraint.gradient(&x_body)?))
}

/// Normal-cone direction at `a1`:
/// `grad f_k(a1) + sum_{i != k} l_i grad f_i(a1)` in world coordinates.
///
/// The designated constraint `k` enters with unit weight and must have a
/// well-defined gradient; the remaining terms use the raw quadratic gradients
/// (which vanish only where the multiplier is forced to zero anyway).
pub fn grad_cone_direction(
    body: &BodyGeometry,
    ecp_body: &Vector3<f64>,
    body_multipliers: &[f64],
    active_index: usize,
) -> Result<Vector3<f64>, GeometryError> {
    assert!(active_index < body.constraints.len(), "active index in range");
    let mut dir = world_gradient_strict(&body.constraints[active_index], &body.pose, ecp_body)?;
    for (i, c) in body.constraints.iter().enumerate() {
        if i == active_index {
            continue;
        }
        dir += body_multipliers[i] * world_gradient_raw(c, &body.pose, ecp_body);
    }
    Ok(dir)
}

/// The six contact equality rows.
///
/// Rows 0..3: `a1 - a2 + l_k * gradC(a1)`.
/// Rows 3..6: `gradC(a1) + sum_j l_j grad g_j(a2)`.
pub fn contact_equality_residuals(
    unknowns: &ContactUnknowns,
    body: &BodyGeometry,
    support: &BodyGeometry,
) -> Result<Vector6<f64>, GeometryError> {
    let grad_c = grad_cone_direction(
        body,
        &unknowns.ecp_body,
        &unknowns.body_multipliers,
        unknowns.active_index,
    )?;
    let l_k = unknowns.body_multipliers[unknowns.active_index];
    let top = unknowns.ecp_body - unknowns.ecp_support + l_k * grad_c;
    let mut bottom = grad_c;
    for (j, g) in support.constraints.iter().enumerate() {
        bottom += unknowns.support_multipliers[j]
            * world_gradient_raw(g, &support.pose, &unknowns.ecp_support);
    }
    let mut out = Vector6::zeros();
    out.fixed_view_mut::<3, 1>(0, 0).copy_from(&top);
    out.fixed_view_mut::<3, 1>(3, 0).copy_from(&bottom);
    Ok(out)
}

/// Complementarity value pairs `(v, w)` expected to satisfy
/// `v >= 0, w >= 0, v * w = 0` at a solution:
/// `(l_i, -f_i(a1))` for each body constraint, `(l_j, -g_j(a2))` for each
/// support constraint, and `(p_n, max_i f_i(a2))` coupling the normal impulse
/// to the separation of the support point from the body hull.
pub fn contact_complementarity_pairs(
    unknowns: &ContactUnknowns,
    normal_impulse: f64,
    body: &BodyGeometry,
    support: &BodyGeometry,
) -> Vec<(f64, f64)> {
    let a1_body = body.pose.to_body(&unknowns.ecp_body);
    let a2_support = support.pose.to_body(&unknowns.ecp_support);
    let mut pairs = Vec::with_capacity(body.constraints.len() + support.constraints.len() + 1);
    for (i, c) in body.constraints.iter().enumerate() {
        pairs.push((unknowns.body_multipliers[i], -c.value(&a1_body)));
    }
    for (j, g) in support.constraints.iter().enumerate() {
        pairs.push((unknowns.support_multipliers[j], -g.value(&a2_support)));
    }
    let a2_in_body = body.pose.to_body(&unknowns.ecp_support);
    let psi = body
        .constraints
        .iter()
        .map(|c| c.value(&a2_in_body))
        .fold(f64::NEG_INFINITY, f64::max);
    pairs.push((normal_impulse, psi));
    pairs
}

/// Contact frame at a support boundary point: the normal is the unit gradient
/// of the support's most-active constraint, which points out of the support
/// (toward the body) for sublevel-set descriptions.
pub fn contact_frame_at(
    support: &BodyGeometry,
    ecp_support: &Vector3<f64>,
) -> Result<ContactFrame, GeometryError> {
    let x_body = support.pose.to_body(ecp_support);
    let (mut active, mut best) = (0usize, f64::NEG_INFINITY);
    for (j, g) in support.constraints.iter().enumerate() {
        let v = g.value(&x_body);
        if v > best {
            best = v;
            active = j;
        }
    }
    let grad = world_gradient_strict(&support.constraints[active], &support.pose, ecp_support)?;
    if grad.norm() <= 1e-12 {
        return Err(GeometryError::ZeroGradient);
    }
    Ok(ContactFrame::from_normal(grad))
}

/// Designated active constraint for the next solve: the index of the largest
/// `f_i` at the previous ECP (ties to the lowest index).
pub fn select_active_index(body: &BodyGeometry, prev_ecp_body: &Vector3<f64>) -> usize {
    let x_body = body.pose.to_body(prev_ecp_body);
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, c) in body.constraints.iter().enumerate() {
        let v = c.value(&x_body);
        if v > best {
            best = v;
            idx = i;
        }
    }
    idx
}

/// Active-index selection refined for contact points, where every active
/// constraint ties at zero and the raw argmax decays to float noise. Among
/// the near-maximal constraints, picks the one whose outward gradient best
/// aligns with `toward` (the direction from the body into the support).
/// The designated constraint must be able to *lead* the normal-cone
/// combination; at polytope edges and vertices only the support-facing face
/// can do that.
pub fn select_active_index_toward(
    body: &BodyGeometry,
    prev_ecp_body: &Vector3<f64>,
    toward: &Vector3<f64>,
) -> usize {
    let x_body = body.pose.to_body(prev_ecp_body);
    let values: Vec<f64> = body.constraints.iter().map(|c| c.value(&x_body)).collect();
    let max_v = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0_f64.max(max_v.abs());
    let mut best = (f64::NEG_INFINITY, usize::MAX);
    for (i, c) in body.constraints.iter().enumerate() {
        if values[i] < max_v - 1e-7 * scale {
            continue;
        }
        let g = body
            .pose
            .orientation
            .transform_vector(&c.gradient_raw(&x_body));
        let n = g.norm();
        if n <= 1e-12 {
            continue;
        }
        let alignment = g.dot(toward) / n;
        if alignment > best.0 + 1e-12 {
            best = (alignment, i);
        }
    }
    if best.1 == usize::MAX {
        select_active_index(body, prev_ecp_body)
    } else {
        best.1
    }
}

/// Hull-phantom audit: when the hull touches the support but the true
/// (possibly non-convex) body does not, some inequality of the true body is
/// positive at `a2`. Returns the worst violation, positive when the bodies
/// are actually separate. Not needed for plane supports.
pub fn hull_phantom_violation(
    true_body: &[ConvexConstraint],
    body_pose: &Pose,
    ecp_support: &Vector3<f64>,
) -> f64 {
    let x_body = body_pose.to_body(ecp_support);
    true_body
        .iter()
        .map(|c| c.value(&x_body))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{builtin_box, seed_closest_points, BodyGeometry, ConvexConstraint};
    use approx::assert_abs_diff_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ground() -> BodyGeometry {
        BodyGeometry::new(
            vec![ConvexConstraint::Halfspace {
                normal: Vector3::z(),
                offset: 0.0,
            }],
            Pose::identity(),
            "ground",
        )
    }

    #[test]
    fn cone_direction_single_halfspace() {
        let body = BodyGeometry::new(
            vec![ConvexConstraint::Halfspace {
                normal: Vector3::new(0.0, 0.0, -1.0),
                offset: 0.1,
            }],
            Pose::identity(),
            "slab",
        );
        let dir =
            grad_cone_direction(&body, &Vector3::new(0.3, 0.2, -0.1), &[7.0], 0).unwrap();
        assert_abs_diff_eq!((dir - Vector3::new(0.0, 0.0, -1.0)).norm(), 0.0);
    }

    #[test]
    fn cone_direction_box_edge_sums_face_normals() {
        let body = builtin_box(Vector3::new(0.5, 0.5, 0.5));
        // edge between +x (index 0) and +y (index 2) faces
        let edge_point = Vector3::new(0.5, 0.5, 0.0);
        let mut l = vec![0.0; 6];
        l[2] = 1.0;
        let dir = grad_cone_direction(&body, &edge_point, &l, 0).unwrap();
        assert_abs_diff_eq!((dir - Vector3::new(1.0, 1.0, 0.0)).norm(), 0.0);
    }

    /// Projected-gradient nonnegative least squares, used as an oracle for
    /// normal-cone membership.
    fn nnls_residual(columns: &[Vector3<f64>], target: &Vector3<f64>) -> f64 {
        let n = columns.len();
        let mut beta = vec![0.0_f64; n];
        let step = 0.05;
        for _ in 0..20000 {
            let mut r = -target;
            for (i, c) in columns.iter().enumerate() {
                r += beta[i] * c;
            }
            for (i, c) in columns.iter().enumerate() {
                beta[i] = (beta[i] - step * c.dot(&r)).max(0.0);
            }
        }
        let mut r = -target;
        for (i, c) in columns.iter().enumerate() {
            r += beta[i] * c;
        }
        r.norm()
    }

    #[test]
    fn cone_direction_lies_in_normal_cone() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let body = builtin_box(Vector3::new(0.4, 0.3, 0.2));
        for _ in 0..50 {
            // random boundary point: project a random outside point
            let x = Vector3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let p = crate::geometry::project_onto_body(&body, &(x * 3.0));
            let active: Vec<usize> = body
                .constraints
                .iter()
                .enumerate()
                .filter(|(_, c)| c.value(&p).abs() <= 1e-9)
                .map(|(i, _)| i)
                .collect();
            if active.is_empty() {
                continue;
            }
            let k = active[0];
            let mut l = vec![0.0; 6];
            for &i in active.iter().skip(1) {
                l[i] = rng.random::<f64>();
            }
            let dir = grad_cone_direction(&body, &p, &l, k).unwrap();
            let cols: Vec<Vector3<f64>> = active
                .iter()
                .map(|&i| body.constraints[i].gradient_raw(&p))
                .collect();
            assert!(
                nnls_residual(&cols, &dir) <= 1e-6,
                "direction {dir:?} outside cone at {p:?} (active {active:?})"
            );
        }
    }

    #[test]
    fn touching_box_residuals_vanish() {
        let mut body = builtin_box(Vector3::new(0.1, 0.1, 0.1));
        body.pose.position = Vector3::new(0.0, 0.0, 0.1);
        let support = ground();
        let touch = Vector3::new(0.03, -0.02, 0.0);
        let unknowns = ContactUnknowns {
            ecp_body: touch,
            ecp_support: touch,
            body_multipliers: vec![0.0; 6],
            support_multipliers: vec![1.0],
            active_index: 5, // -z face
        };
        let r = contact_equality_residuals(&unknowns, &body, &support).unwrap();
        assert!(r.norm() <= 1e-12, "residual {r:?}");
    }

    #[test]
    fn separated_sphere_closed_form() {
        let sphere = BodyGeometry::new(
            vec![ConvexConstraint::Sphere {
                center: Vector3::zeros(),
                radius: 1.0,
            }],
            Pose::new(Vector3::new(0.0, 0.0, 3.0), UnitQuaternion::identity()),
            "sphere",
        );
        let support = ground();
        // analytic closest pair and multipliers: grad f = 2(a1-c) = (0,0,-2),
        // a1 - a2 = (0,0,2) = -l_k * (0,0,-2) -> l_k = 1;
        // row 2: (0,0,-2) + l_g (0,0,1) = 0 -> l_g = 2
        let unknowns = ContactUnknowns {
            ecp_body: Vector3::new(0.0, 0.0, 2.0),
            ecp_support: Vector3::zeros(),
            body_multipliers: vec![1.0],
            support_multipliers: vec![2.0],
            active_index: 0,
        };
        let r = contact_equality_residuals(&unknowns, &sphere, &support).unwrap();
        assert!(r.norm() <= 1e-12, "residual {r:?}");

        // perturbing a1 along the plane grows the residual at least linearly
        let base = r.norm();
        for delta in [1e-3, 1e-2] {
            let mut u = unknowns.clone();
            u.ecp_body.x += delta;
            let rp = contact_equality_residuals(&u, &sphere, &support).unwrap();
            assert!(
                rp.norm() - base >= 0.5 * delta,
                "perturbation {delta} residual {}",
                rp.norm()
            );
        }
    }

    #[test]
    fn complementarity_pairs_separated_and_resting() {
        let mut body = builtin_box(Vector3::new(0.1, 0.1, 0.1));
        body.pose.position = Vector3::new(0.0, 0.0, 0.5);
        let support = ground();
        let seed = seed_closest_points(&body, &support, 100, 1e-10);
        let unknowns = ContactUnknowns {
            ecp_body: seed.on_body,
            ecp_support: seed.on_support,
            body_multipliers: vec![0.0; 6],
            support_multipliers: vec![0.0],
            active_index: 5,
        };
        let pairs = contact_complementarity_pairs(&unknowns, 0.0, &body, &support);
        assert_eq!(pairs.len(), 8);
        let (pn, psi) = pairs[7];
        assert_abs_diff_eq!(pn, 0.0);
        assert!(psi > 0.3, "separated gap {psi}");

        // resting: a2 on the hull boundary, so the gap closes and p_n may be
        // positive
        body.pose.position = Vector3::new(0.0, 0.0, 0.1);
        let touch = Vector3::new(0.0, 0.0, 0.0);
        let unknowns = ContactUnknowns {
            ecp_body: touch,
            ecp_support: touch,
            body_multipliers: vec![0.0; 6],
            support_multipliers: vec![1.0],
            active_index: 5,
        };
        let pairs = contact_complementarity_pairs(&unknowns, 0.98, &body, &support);
        let (pn, psi) = pairs[7];
        assert!(pn > 0.0);
        assert_abs_diff_eq!(psi, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn frame_for_plane_support() {
        let support = ground();
        let f = contact_frame_at(&support, &Vector3::new(0.4, -0.2, 0.0)).unwrap();
        assert_abs_diff_eq!((f.normal - Vector3::z()).norm(), 0.0);
        assert_abs_diff_eq!((f.tangent - Vector3::x()).norm(), 0.0);
        assert_abs_diff_eq!((f.bitangent - Vector3::y()).norm(), 0.0);
    }

    #[test]
    fn frame_for_tilted_halfspace() {
        let n = Vector3::new(0.2, -0.1, 1.0).normalize();
        let support = BodyGeometry::new(
            vec![ConvexConstraint::Halfspace {
                normal: n,
                offset: 0.0,
            }],
            Pose::identity(),
            "ramp",
        );
        let f = contact_frame_at(&support, &Vector3::zeros()).unwrap();
        assert_abs_diff_eq!((f.normal - n).norm(), 0.0, epsilon = 1e-12);
        assert!(f.orthonormality_defect() <= 1e-12);
    }

    #[test]
    fn frame_orthonormal_on_random_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let n = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            )
            .normalize();
            let support = BodyGeometry::new(
                vec![ConvexConstraint::Halfspace {
                    normal: n,
                    offset: 0.0,
                }],
                Pose::identity(),
                "s",
            );
            let f = contact_frame_at(&support, &Vector3::zeros()).unwrap();
            assert!(f.orthonormality_defect() <= 1e-12);
        }
    }

    #[test]
    fn active_index_face_and_edge() {
        let mut body = builtin_box(Vector3::new(0.1, 0.1, 0.1));
        body.pose.position = Vector3::new(0.0, 0.0, 0.1);
        // point on the bottom face
        assert_eq!(select_active_index(&body, &Vector3::new(0.02, 0.01, 0.0)), 5);
        // point on the edge between +x (0) and -z (5): tie goes to index 0
        assert_eq!(select_active_index(&body, &Vector3::new(0.1, 0.0, 0.0)), 0);
    }

    #[test]
    fn phantom_violation_detects_separation() {
        // true body: small sphere strictly inside a larger hull
        let true_body = vec![ConvexConstraint::Sphere {
            center: Vector3::zeros(),
            radius: 0.05,
        }];
        let pose = Pose::new(Vector3::new(0.0, 0.0, 0.1), UnitQuaternion::identity());
        // hull touches the plane at z=0 but the true body stays 0.05 away
        let v = hull_phantom_violation(&true_body, &pose, &Vector3::zeros());
        assert!(v > 0.0, "violation {v}");
        // a point actually on the true body is not flagged
        let v2 = hull_phantom_violation(&true_body, &pose, &Vector3::new(0.0, 0.0, 0.05));
        assert!(v2 <= 1e-12);
    }
}
