//! Per-step problem assembly and the time-stepping loop.
//!
//! Each step solves for `z_u = [nu_next; a1; a2; p_t; p_o; p_r]` and
//! `z_v = [l_body; l_support; p_n; sigma]`. The equality block stacks six
//! dynamics rows (inertia frozen at the start-of-step state, wrenches at the
//! unknown ECP and end-of-step contact frame), six contact rows, and three
//! friction rows. Body constraint values and gradients inside the contact
//! rows are evaluated at the body's *end-of-step* pose, reconstructed from
//! the unknown velocity through the kinematic map, which is what makes the
//! scheme geometrically implicit: non-penetration holds at the committed
//! pose, not at a pre-step linearization.

use crate::contact::{
    contact_frame_at, hull_phantom_violation, select_active_index_toward, ContactSolution,
    ContactUnknowns,
};
use crate::friction::{ellipsoid_slack, friction_equalities, TangentialImpulses};
use crate::geometry::{gap, seed_closest_points, BodyGeometry, Pose};
use crate::math::{
    advance_pose, coriolis_wrench, stack_velocity, wrench_basis, ContactFrame, MathError,
    RigidState, WrenchBasis,
};
use crate::mncp::{self, AnalyticBlocks, MixedProblem, SolverError, SolverParams, SolverReport};
use crate::scenarios::Scenario;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use std::sync::Arc;
use thiserror::Error;

/// Non-penetration tolerance on the support-side ECP (`max_i f_i(a2)`),
/// enforced as a postcondition on every accepted step.
pub const PENETRATION_TOL: f64 = 1e-8;

/// Non-penetration tolerance on sampled hull extreme points against the
/// support.
pub const EXTREME_POINT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum StepError {
    #[error("solver failed after retry: {failure}\n  z = {z:?}\n  equality residual = {equality:?}\n  complementarity residual = {comp:?}")]
    Solver {
        failure: String,
        z: Vec<f64>,
        equality: Vec<f64>,
        comp: Vec<f64>,
        report: Box<SolverReport>,
    },
    #[error("integrity violation: penetration {depth:.3e} beyond tolerance")]
    Penetration { depth: f64 },
    #[error("integrity violation: hull-phantom contact (true-body violation {violation:.3e} with positive normal impulse)")]
    PhantomContact { violation: f64 },
    /// The converged iterate is a spurious root: the designated constraint
    /// `k` is not active at the ECP, which voids the non-penetration
    /// guarantee of the contact constraints.
    #[error("integrity violation: designated constraint inactive at the ECP (f_k(a1) = {value:.3e})")]
    InactiveDesignated { value: f64 },
    #[error(transparent)]
    Math(#[from] MathError),
    #[error(transparent)]
    Mncp(#[from] SolverError),
}

impl StepError {
    fn is_physicality_reject(&self) -> bool {
        matches!(
            self,
            StepError::Penetration { .. } | StepError::InactiveDesignated { .. }
        )
    }
}

#[derive(Debug, Error)]
#[error("step {step} (t = {time:.4}) failed: {source}")]
pub struct RunError {
    pub step: usize,
    pub time: f64,
    pub source: StepError,
    /// Records accepted before the failure.
    pub partial: Vec<TrajectoryRecord>,
}

/// Index bookkeeping for the per-step unknown vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepLayout {
    /// Number of body hull constraints.
    pub m: usize,
    /// Number of support constraints.
    pub ng: usize,
}

impl StepLayout {
    pub fn n_u(&self) -> usize {
        15
    }
    pub fn n_v(&self) -> usize {
        self.m + self.ng + 2
    }
    pub fn dim(&self) -> usize {
        self.n_u() + self.n_v()
    }
    pub fn col_nu(&self) -> usize {
        0
    }
    pub fn col_a1(&self) -> usize {
        6
    }
    pub fn col_a2(&self) -> usize {
        9
    }
    pub fn col_pt(&self) -> usize {
        12
    }
    pub fn col_po(&self) -> usize {
        13
    }
    pub fn col_pr(&self) -> usize {
        14
    }
    pub fn col_lf(&self, i: usize) -> usize {
        15 + i
    }
    pub fn col_lg(&self, j: usize) -> usize {
        15 + self.m + j
    }
    pub fn col_pn(&self) -> usize {
        15 + self.m + self.ng
    }
    pub fn col_sigma(&self) -> usize {
        15 + self.m + self.ng + 1
    }
}

/// Parsed view of one iterate.
#[derive(Debug, Clone)]
struct ZView {
    nu: Vector6<f64>,
    a1: Vector3<f64>,
    a2: Vector3<f64>,
    p_t: f64,
    p_o: f64,
    p_r: f64,
    l_f: Vec<f64>,
    l_g: Vec<f64>,
    p_n: f64,
    sigma: f64,
}

impl ZView {
    fn parse(layout: &StepLayout, zu: &DVector<f64>, zv: &DVector<f64>) -> Self {
        Self {
            nu: Vector6::from_column_slice(&zu.as_slice()[0..6]),
            a1: Vector3::from_column_slice(&zu.as_slice()[6..9]),
            a2: Vector3::from_column_slice(&zu.as_slice()[9..12]),
            p_t: zu[12],
            p_o: zu[13],
            p_r: zu[14],
            l_f: zv.as_slice()[0..layout.m].to_vec(),
            l_g: zv.as_slice()[layout.m..layout.m + layout.ng].to_vec(),
            p_n: zv[layout.m + layout.ng],
            sigma: zv[layout.m + layout.ng + 1],
        }
    }

    fn impulses(&self) -> TangentialImpulses {
        TangentialImpulses {
            tangent: self.p_t,
            bitangent: self.p_o,
            drill: self.p_r,
        }
    }
}

/// Fixed data for one step's solve.
pub struct StepContext {
    pub layout: StepLayout,
    pub h: f64,
    pub t: f64,
    pub mass: f64,
    pub gravity: f64,
    pub active_index: usize,
    pub inertia_u: Matrix6<f64>,
    pub nu_u: Vector6<f64>,
    pub pos_u: Vector3<f64>,
    pub quat_u: UnitQuaternion<f64>,
    pub p_app: Vector6<f64>,
    pub p_vp: Vector6<f64>,
    /// Body hull (constraints only; pose field unused during the solve).
    pub body: BodyGeometry,
    /// Support at its fixed pose.
    pub support: BodyGeometry,
    pub friction: crate::friction::FrictionParams,
    support_is_plane: bool,
}

impl StepContext {
    fn pose_next(&self, nu: &Vector6<f64>) -> Pose {
        let (p, q, _) = advance_pose(&self.pos_u, &self.quat_u, nu, self.h);
        Pose::new(p, q)
    }

    fn frame_at(&self, a2: &Vector3<f64>) -> Result<ContactFrame, crate::geometry::GeometryError> {
        contact_frame_at(&self.support, a2)
    }

    fn basis(&self, frame: &ContactFrame, a1: &Vector3<f64>, nu: &Vector6<f64>) -> WrenchBasis {
        let pos_next = self.pos_u + self.h * crate::math::linear_part(nu);
        wrench_basis(frame, a1, &pos_next)
    }

    /// World-frame value and raw gradient of body constraint `i` at `x`
    /// under the pose implied by `nu`.
    fn body_eval(&self, pose: &Pose, i: usize, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let xb = pose.to_body(x);
        let c = &self.body.constraints[i];
        (
            c.value(&xb),
            pose.orientation.transform_vector(&c.gradient_raw(&xb)),
        )
    }

    fn body_hessian(&self, pose: &Pose, i: usize, x: &Vector3<f64>) -> Matrix3<f64> {
        crate::geometry::hessian_world(&self.body.constraints[i], pose, x)
    }

    fn support_eval(&self, j: usize, x: &Vector3<f64>) -> (f64, Vector3<f64>) {
        let pose = &self.support.pose;
        let xb = pose.to_body(x);
        let c = &self.support.constraints[j];
        (
            c.value(&xb),
            pose.orientation.transform_vector(&c.gradient_raw(&xb)),
        )
    }

    /// Normal-cone direction at `a1` under `pose`:
    /// `grad f_k + sum_{i != k} l_i grad f_i`.
    fn cone_direction(&self, pose: &Pose, a1: &Vector3<f64>, l_f: &[f64]) -> Vector3<f64> {
        let mut dir = self.body_eval(pose, self.active_index, a1).1;
        for i in 0..self.layout.m {
            if i == self.active_index {
                continue;
            }
            dir += l_f[i] * self.body_eval(pose, i, a1).1;
        }
        dir
    }

    fn equality_residual(&self, zu: &DVector<f64>, zv: &DVector<f64>) -> DVector<f64> {
        let v = ZView::parse(&self.layout, zu, zv);
        let mut out = DVector::from_element(self.layout.n_u(), f64::NAN);
        let Ok(frame) = self.frame_at(&v.a2) else {
            return out;
        };
        let basis = self.basis(&frame, &v.a1, &v.nu);
        let pose_next = self.pose_next(&v.nu);

        // dynamics rows
        let dyn_rows = self.inertia_u * (self.nu_u - v.nu)
            + basis.normal * v.p_n
            + basis.tangent * v.p_t
            + basis.bitangent * v.p_o
            + basis.drilling * v.p_r
            + self.p_app
            + self.p_vp;
        for i in 0..6 {
            out[i] = dyn_rows[i];
        }

        // contact rows
        let grad_c = self.cone_direction(&pose_next, &v.a1, &v.l_f);
        let l_k = v.l_f[self.active_index];
        let top = v.a1 - v.a2 + l_k * grad_c;
        let mut bottom = grad_c;
        for j in 0..self.layout.ng {
            bottom += v.l_g[j] * self.support_eval(j, &v.a2).1;
        }
        for i in 0..3 {
            out[6 + i] = top[i];
            out[9 + i] = bottom[i];
        }

        // friction rows
        let fr = friction_equalities(
            &v.impulses(),
            v.p_n,
            v.sigma,
            &v.nu,
            &basis,
            &self.friction,
        );
        for i in 0..3 {
            out[12 + i] = fr[i];
        }
        out
    }

    fn comp_residual(&self, zu: &DVector<f64>, zv: &DVector<f64>) -> DVector<f64> {
        let v = ZView::parse(&self.layout, zu, zv);
        let pose_next = self.pose_next(&v.nu);
        let mut out = DVector::zeros(self.layout.n_v());
        for i in 0..self.layout.m {
            out[i] = -self.body_eval(&pose_next, i, &v.a1).0;
        }
        for j in 0..self.layout.ng {
            out[self.layout.m + j] = -self.support_eval(j, &v.a2).0;
        }
        out[self.layout.m + self.layout.ng] = self.psi(&pose_next, &v.a2).0;
        out[self.layout.m + self.layout.ng + 1] =
            ellipsoid_slack(&v.impulses(), v.p_n, &self.friction);
        out
    }

    /// Separation of the support-side ECP from the body hull:
    /// `max_i f_i(a2)` with the lowest attaining index.
    fn psi(&self, pose: &Pose, a2: &Vector3<f64>) -> (f64, usize) {
        let mut best = f64::NEG_INFINITY;
        let mut idx = 0;
        for i in 0..self.layout.m {
            let (val, _) = self.body_eval(pose, i, a2);
            if val > best {
                best = val;
                idx = i;
            }
        }
        (best, idx)
    }

    /// Analytic raw Jacobian. Pose-chain entries (body constraint rows
    /// against the velocity columns) and, for curved supports, frame-chain
    /// entries are delegated to finite differences.
    fn analytic_jacobian(&self, z: &DVector<f64>) -> AnalyticBlocks {
        let lay = &self.layout;
        let n = lay.dim();
        let (n_u, m, ng) = (lay.n_u(), lay.m, lay.ng);
        let zu = DVector::from_column_slice(&z.as_slice()[..n_u]);
        let zv = DVector::from_column_slice(&z.as_slice()[n_u..]);
        let v = ZView::parse(lay, &zu, &zv);
        let mut j = DMatrix::zeros(n, n);
        let mut fd_entries: Vec<(usize, usize)> = Vec::new();

        let frame = match self.frame_at(&v.a2) {
            Ok(f) => f,
            Err(_) => {
                // degenerate frame: let finite differences surface the NaNs
                let all: Vec<(usize, usize)> =
                    (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
                return AnalyticBlocks {
                    jacobian: j,
                    fd_entries: all,
                };
            }
        };
        let basis = self.basis(&frame, &v.a1, &v.nu);
        let pose_next = self.pose_next(&v.nu);
        let omega = crate::math::angular_part(&v.nu);
        let fp = &self.friction;

        let cross = |a: &Vector3<f64>| -> Matrix3<f64> {
            Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
        };

        // ---- dynamics rows 0..6 ----
        for r in 0..6 {
            for c in 0..6 {
                j[(r, c)] = -self.inertia_u[(r, c)];
            }
        }
        // moment-block coupling through r(v) and a1
        let p_weighted = cross(&frame.normal) * v.p_n
            + cross(&frame.tangent) * v.p_t
            + cross(&frame.bitangent) * v.p_o;
        for r in 0..3 {
            for c in 0..3 {
                j[(3 + r, c)] += self.h * p_weighted[(r, c)];
                j[(3 + r, lay.col_a1() + c)] = -p_weighted[(r, c)];
            }
        }
        for r in 0..6 {
            j[(r, lay.col_pt())] = basis.tangent[r];
            j[(r, lay.col_po())] = basis.bitangent[r];
            j[(r, lay.col_pr())] = basis.drilling[r];
            j[(r, lay.col_pn())] = basis.normal[r];
        }

        // ---- contact rows 6..12 ----
        let l_k = v.l_f[self.active_index];
        let grad_c = self.cone_direction(&pose_next, &v.a1, &v.l_f);
        let mut h_cone = self.body_hessian(&pose_next, self.active_index, &v.a1);
        for i in 0..m {
            if i != self.active_index {
                h_cone += v.l_f[i] * self.body_hessian(&pose_next, i, &v.a1);
            }
        }
        for r in 0..3 {
            // row block A: a1 - a2 + l_k grad_c
            j[(6 + r, lay.col_a1() + r)] += 1.0;
            j[(6 + r, lay.col_a2() + r)] = -1.0;
            for c in 0..3 {
                j[(6 + r, lay.col_a1() + c)] += l_k * h_cone[(r, c)];
            }
            j[(6 + r, lay.col_lf(self.active_index))] = grad_c[r];
            // row block B: grad_c + sum l_g grad g
            for c in 0..3 {
                j[(9 + r, lay.col_a1() + c)] = h_cone[(r, c)];
            }
        }
        for i in 0..m {
            if i == self.active_index {
                continue;
            }
            let gi = self.body_eval(&pose_next, i, &v.a1).1;
            for r in 0..3 {
                j[(6 + r, lay.col_lf(i))] = l_k * gi[r];
                j[(9 + r, lay.col_lf(i))] = gi[r];
            }
        }
        for jg in 0..ng {
            let (_, grad_g) = self.support_eval(jg, &v.a2);
            let hess_g =
                crate::geometry::hessian_world(&self.support.constraints[jg], &self.support.pose, &v.a2);
            for r in 0..3 {
                j[(9 + r, lay.col_lg(jg))] = grad_g[r];
                for c in 0..3 {
                    j[(9 + r, lay.col_a2() + c)] += v.l_g[jg] * hess_g[(r, c)];
                }
            }
        }

        // ---- friction rows 12..15 ----
        let r_arm = v.a1 - (self.pos_u + self.h * crate::math::linear_part(&v.nu));
        let rows = [
            (12usize, frame.tangent, fp.e_t, v.p_t, lay.col_pt()),
            (13, frame.bitangent, fp.e_o, v.p_o, lay.col_po()),
        ];
        for (row, dir, e, p_c, col_p) in rows {
            let coef = e * e * fp.mu;
            let slip = basis_dot(&dir, &r_arm, &v.nu);
            let dxo = dir.cross(&omega);
            for c in 0..3 {
                // d/dv: dir - h (dir x omega); d/domega: r x dir
                j[(row, c)] = coef * v.p_n * (dir[c] - self.h * dxo[c]);
                j[(row, 3 + c)] = coef * v.p_n * r_arm.cross(&dir)[c];
                j[(row, lay.col_a1() + c)] = coef * v.p_n * dxo[c];
            }
            j[(row, col_p)] = v.sigma;
            j[(row, lay.col_pn())] = coef * slip;
            j[(row, lay.col_sigma())] = p_c;
        }
        // drilling row: e_r^2 mu p_n (n . omega) + p_r sigma
        let coef_r = fp.e_r * fp.e_r * fp.mu;
        for c in 0..3 {
            j[(14, 3 + c)] = coef_r * v.p_n * frame.normal[c];
        }
        j[(14, lay.col_pr())] = v.sigma;
        j[(14, lay.col_pn())] = coef_r * frame.normal.dot(&omega);
        j[(14, lay.col_sigma())] = v.p_r;

        // ---- complementarity rows ----
        for i in 0..m {
            let gi = self.body_eval(&pose_next, i, &v.a1).1;
            for c in 0..3 {
                j[(n_u + i, lay.col_a1() + c)] = -gi[c];
            }
        }
        for jg in 0..ng {
            let (_, gg) = self.support_eval(jg, &v.a2);
            for c in 0..3 {
                j[(n_u + m + jg, lay.col_a2() + c)] = -gg[c];
            }
        }
        let (_, psi_idx) = self.psi(&pose_next, &v.a2);
        let g_psi = self.body_eval(&pose_next, psi_idx, &v.a2).1;
        for c in 0..3 {
            j[(n_u + m + ng, lay.col_a2() + c)] = g_psi[c];
        }
        let zeta_row = n_u + m + ng + 1;
        j[(zeta_row, lay.col_pn())] = 2.0 * fp.mu * fp.mu * v.p_n;
        j[(zeta_row, lay.col_pt())] = -2.0 * v.p_t / (fp.e_t * fp.e_t);
        j[(zeta_row, lay.col_po())] = -2.0 * v.p_o / (fp.e_o * fp.e_o);
        j[(zeta_row, lay.col_pr())] = -2.0 * v.p_r / (fp.e_r * fp.e_r);

        // ---- finite-difference delegation: pose chain through nu ----
        for r in 6..12 {
            for c in 0..6 {
                fd_entries.push((r, c));
            }
        }
        for i in 0..m {
            for c in 0..6 {
                fd_entries.push((n_u + i, c));
            }
        }
        for c in 0..6 {
            fd_entries.push((n_u + m + ng, c));
        }
        if !self.support_is_plane {
            // frame depends on a2 for curved supports
            for r in (0..6).chain(12..15) {
                for c in lay.col_a2()..lay.col_a2() + 3 {
                    fd_entries.push((r, c));
                }
            }
        }
        AnalyticBlocks {
            jacobian: j,
            fd_entries,
        }
    }
}

fn basis_dot(dir: &Vector3<f64>, r_arm: &Vector3<f64>, nu: &Vector6<f64>) -> f64 {
    let v = crate::math::linear_part(nu);
    let w = crate::math::angular_part(nu);
    dir.dot(&v) + r_arm.cross(dir).dot(&w)
}

/// Builds the per-step mixed problem at state `state` and time `t` with the
/// designated active constraint `active_index`.
pub fn assemble(
    state: &RigidState,
    scenario: &Scenario,
    active_index: usize,
    t: f64,
) -> Result<(MixedProblem, Arc<StepContext>), StepError> {
    let h = scenario.h;
    let inertia_u = crate::math::world_inertia(
        &state.orientation,
        scenario.mass,
        &scenario.body_inertia(),
    )?;
    let nu_u = state.generalized_velocity();
    let p_vp = h * coriolis_wrench(&inertia_u, &nu_u);
    let applied = scenario.applied.evaluate(t);
    if applied.iter().any(|x| !x.is_finite()) {
        return Err(StepError::Solver {
            failure: format!("applied wrench schedule undefined at t = {t}"),
            z: vec![],
            equality: vec![],
            comp: vec![],
            report: Box::new(empty_report()),
        });
    }
    let gravity_wrench = stack_velocity(
        &Vector3::new(0.0, 0.0, -scenario.mass * scenario.gravity),
        &Vector3::zeros(),
    );
    let p_app = h * (applied + gravity_wrench);

    let mut body = scenario.body_geometry();
    body.extreme_points.clear();
    let support = scenario.support_geometry();
    let support_is_plane = support.is_halfspace_support();
    let layout = StepLayout {
        m: body.constraints.len(),
        ng: support.constraints.len(),
    };
    let ctx = Arc::new(StepContext {
        layout,
        h,
        t,
        mass: scenario.mass,
        gravity: scenario.gravity,
        active_index,
        inertia_u,
        nu_u,
        pos_u: state.position,
        quat_u: state.orientation,
        p_app,
        p_vp,
        body,
        support,
        friction: scenario.friction,
        support_is_plane,
    });
    let c_eq = Arc::clone(&ctx);
    let c_comp = Arc::clone(&ctx);
    let c_jac = Arc::clone(&ctx);
    // a positive normal impulse must certify f_k(a1) = 0 (the designated
    // constraint is the surface the ECP lies on); the coupling forces the
    // k-th pair onto its active branch during the polish whenever p_n > 0
    let problem = MixedProblem {
        n_u: layout.n_u(),
        n_v: layout.n_v(),
        equality: Box::new(move |zu, zv| c_eq.equality_residual(zu, zv)),
        complementarity: Box::new(move |zu, zv| c_comp.comp_residual(zu, zv)),
        analytic_jacobian: Some(Box::new(move |z| c_jac.analytic_jacobian(z))),
        pair_primal: None,
        polish_couplings: vec![(active_index, layout.m + layout.ng)],
    };
    Ok((problem, ctx))
}

fn empty_report() -> SolverReport {
    SolverReport {
        converged: false,
        stage_iterations: vec![],
        stage_merits: vec![],
        final_residual: f64::INFINITY,
        equality_residual: f64::INFINITY,
        complementarity_violation: f64::INFINITY,
        min_zv: 0.0,
        min_f: 0.0,
        backtracks: 0,
        levenberg_solves: 0,
        polish_iterations: 0,
        wall_time: std::time::Duration::ZERO,
        failure: Some("not solved".into()),
    }
}

/// Warm-start payload carried between steps.
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub prev_ecp_body: Vector3<f64>,
    pub prev_active: usize,
}

/// Outward support normal near a point; the direction from the support into
/// the body.
fn support_normal_at(support: &BodyGeometry, x: &Vector3<f64>) -> Vector3<f64> {
    match contact_frame_at(support, x) {
        Ok(f) => f.normal,
        Err(_) => Vector3::z(),
    }
}

/// Geometric warm start. Multipliers are sized from the gradient magnitudes
/// so the contact rows start near balance; for touching seeds the normal
/// impulse starts at the static-plus-impact scale `m (g h + |v_n^-|)` and
/// the friction block at the sliding-mode values implied by the slip
/// velocity, which places the iterate in the basin of the physical
/// (contact-carrying) root rather than the spurious separating one.
/// Seed payload: the start vector plus the geometric classification used to
/// infer contact modes.
struct SeedInfo {
    z: DVector<f64>,
    a1: Vector3<f64>,
    a2: Vector3<f64>,
    k: usize,
    touching: bool,
    slip: f64,
}

fn seed_z(
    layout: &StepLayout,
    scenario: &Scenario,
    state: &RigidState,
    body_now: &BodyGeometry,
    support: &BodyGeometry,
) -> SeedInfo {
    let seed = seed_closest_points(body_now, support, 200, 1e-9);
    if !seed.converged {
        log::debug!("closest-point seeding returned an approximate pair");
    }
    let mut z = DVector::zeros(layout.dim());
    let nu = state.generalized_velocity();
    for i in 0..6 {
        z[i] = nu[i];
    }
    for i in 0..3 {
        z[layout.col_a1() + i] = seed.on_body[i];
        z[layout.col_a2() + i] = seed.on_support[i];
    }
    for i in 0..layout.m {
        z[layout.col_lf(i)] = 1e-6;
    }
    for jg in 0..layout.ng {
        z[layout.col_lg(jg)] = 1e-6;
    }
    z[layout.col_sigma()] = 1e-6;

    let n_support = support_normal_at(support, &seed.on_support);
    let k = select_active_index_toward(body_now, &seed.on_body, &(-n_support));
    let grad_fk = {
        let xb = body_now.pose.to_body(&seed.on_body);
        body_now
            .pose
            .orientation
            .transform_vector(&body_now.constraints[k].gradient_raw(&xb))
    };
    let (active_g, _) = {
        let xb = support.pose.to_body(&seed.on_support);
        let mut best = (0usize, f64::NEG_INFINITY);
        for (j, c) in support.constraints.iter().enumerate() {
            let val = c.value(&xb);
            if val > best.1 {
                best = (j, val);
            }
        }
        best
    };
    let grad_g = {
        let xb = support.pose.to_body(&seed.on_support);
        support
            .pose
            .orientation
            .transform_vector(&support.constraints[active_g].gradient_raw(&xb))
    };
    let g_fk_norm = grad_fk.norm().max(1e-12);
    let g_g_norm = grad_g.norm().max(1e-12);
    z[layout.col_lg(active_g)] = g_fk_norm / g_g_norm;

    let separation = (seed.on_body - seed.on_support).norm();
    let support_gap = gap(support, &seed.on_body).0;
    // predictive classification: an approaching body whose gap closes within
    // the step is an impact and must be seeded as contact
    let n_hat = grad_g / g_g_norm;
    let approach = {
        let point_vel =
            state.linear_velocity + state.angular_velocity.cross(&(seed.on_body - state.position));
        n_hat.dot(&point_vel)
    };
    let predicted_gap = support_gap.max(0.0) + scenario.h * approach;
    let touching = separation <= 1e-4 || support_gap.abs() <= 1e-4 || predicted_gap <= 1e-4;
    log::debug!(
        "seed: sep={separation:.3e} gap={support_gap:.3e} approach={approach:.3e} predicted={predicted_gap:.3e} touching={touching}"
    );
    let mut slip = 0.0;
    if !touching {
        z[layout.col_lf(k)] = separation / g_fk_norm;
    } else {
        let n = grad_g / g_g_norm;
        let frame = ContactFrame::from_normal(n);
        let point_vel =
            state.linear_velocity + state.angular_velocity.cross(&(seed.on_body - state.position));
        let v_n = n.dot(&point_vel);
        let p_n = scenario.mass * (scenario.gravity * scenario.h + (-v_n).max(0.0));
        z[layout.col_pn()] = p_n;
        // sliding-mode friction start: at a sliding solution the rows give
        // p_c = -e_c^2 mu p_n v_c / sigma with sigma = sqrt(sum e_c^2 v_c^2)
        let fp = &scenario.friction;
        let v_t = frame.tangent.dot(&point_vel);
        let v_o = frame.bitangent.dot(&point_vel);
        let v_r = n.dot(&state.angular_velocity);
        let sigma = ((fp.e_t * v_t).powi(2) + (fp.e_o * v_o).powi(2) + (fp.e_r * v_r).powi(2))
            .sqrt();
        slip = sigma;
        if sigma > 1e-3 {
            z[layout.col_sigma()] = sigma;
            z[layout.col_pt()] = -fp.e_t * fp.e_t * fp.mu * p_n * v_t / sigma;
            z[layout.col_po()] = -fp.e_o * fp.e_o * fp.mu * p_n * v_o / sigma;
            z[layout.col_pr()] = -fp.e_r * fp.e_r * fp.mu * p_n * v_r / sigma;
        }
    }
    SeedInfo {
        z,
        a1: seed.on_body,
        a2: seed.on_support,
        k,
        touching,
        slip,
    }
}

/// Repair seed built from a converged-but-unphysical root: the ECP pair is
/// projected onto the designated constraint surface intersected with the
/// support boundary, keeping velocities, impulses, and multipliers. At
/// contact transitions this lands within a few microns of the physical root.
fn repair_seed(
    layout: &StepLayout,
    scenario: &Scenario,
    state: &RigidState,
    support: &BodyGeometry,
    active_index: usize,
    z_rejected: &DVector<f64>,
) -> DVector<f64> {
    let mut z = z_rejected.clone();
    let nu = Vector6::from_column_slice(&z.as_slice()[0..6]);
    let (pos_next, quat_next, _) = advance_pose(&state.position, &state.orientation, &nu, scenario.h);
    let pose_next = Pose::new(pos_next, quat_next);
    let body = scenario.body_geometry();
    let constraint = &body.constraints[active_index];
    let mut a1 = Vector3::from_column_slice(&z.as_slice()[layout.col_a1()..layout.col_a1() + 3]);
    for _ in 0..8 {
        // onto the designated surface f_k = 0
        let xb = pose_next.to_body(&a1);
        let f = constraint.value(&xb);
        let g = pose_next
            .orientation
            .transform_vector(&constraint.gradient_raw(&xb));
        let n2 = g.norm_squared();
        if n2 > 1e-18 {
            a1 -= g * (f / n2);
        }
        // onto the support boundary
        let xs = support.pose.to_body(&a1);
        let (mut jg, mut best) = (0usize, f64::NEG_INFINITY);
        for (j, c) in support.constraints.iter().enumerate() {
            let v = c.value(&xs);
            if v > best {
                best = v;
                jg = j;
            }
        }
        let gs = support
            .pose
            .orientation
            .transform_vector(&support.constraints[jg].gradient_raw(&xs));
        let ns = gs.norm_squared();
        if ns > 1e-18 {
            a1 -= gs * (best / ns);
        }
    }
    for i in 0..3 {
        z[layout.col_a1() + i] = a1[i];
        z[layout.col_a2() + i] = a1[i];
    }
    // clear the tiny lateral multipliers so the cone rebuilds around the
    // designated face
    for i in 0..layout.m {
        if z[layout.col_lf(i)] < 0.0 {
            z[layout.col_lf(i)] = 1e-6;
        }
    }
    z
}

/// Per-step diagnostics recorded alongside the state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// `max_i f_i(a2)` at the committed pose (nonnegative separation).
    pub gap: f64,
    /// Minimum support gap over the hull's extreme points at the committed
    /// pose.
    pub min_extreme_gap: f64,
    /// With positive normal impulse: ECP on the hull boundary and on the
    /// support boundary within 1e-9.
    pub ecp_on_hull: Option<bool>,
    pub kinetic_energy: f64,
    pub quat_drift: f64,
    pub retried: bool,
    pub active_index: usize,
}

/// One accepted step of the trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub step: usize,
    /// End-of-step time.
    pub time: f64,
    pub state: RigidState,
    pub contact: ContactSolution,
    pub solver: SolverReport,
    pub diagnostics: StepDiagnostics,
}

enum Attempt {
    Accepted(Box<(RigidState, TrajectoryRecord, WarmStart)>),
    /// The solve converged but the root failed a physicality check; `z` is
    /// the rejected root.
    Unphysical { reason: String, z: DVector<f64> },
    /// The solve did not converge.
    NotConverged { reason: String },
}

#[allow(clippy::too_many_arguments)]
fn attempt_step(
    state: &RigidState,
    scenario: &Scenario,
    params: &SolverParams,
    t: f64,
    step_index: usize,
    z0: &DVector<f64>,
    active_index: usize,
    retried: bool,
) -> Result<Attempt, StepError> {
    let (problem, ctx) = assemble(state, scenario, active_index, t)?;
    let (z, report) = mncp::solve(&problem, z0, params)?;
    if !report.converged {
        let reason = report.failure.clone().unwrap_or_else(|| "unknown".into());
        return Ok(Attempt::NotConverged { reason });
    }
    match commit_step(state, scenario, t, step_index, ctx, z.clone(), report, retried) {
        Ok(accepted) => Ok(Attempt::Accepted(Box::new(accepted))),
        Err(e) if e.is_physicality_reject() => Ok(Attempt::Unphysical {
            reason: e.to_string(),
            z,
        }),
        Err(e) => Err(e),
    }
}

/// Advances one step. `warm` carries the previous solution; `None` seeds
/// from alternating projections.
///
/// Retry ladder when the warm-started solve fails or lands on an unphysical
/// root: a converged-but-rejected root with contact impulse is repaired
/// (ECP projected back to the designated surface) and re-solved over the
/// tight smoothing stages; otherwise the step restarts from the geometric
/// seed with finite-difference Jacobians; as a last resort the contact mode
/// is frozen from the seed geometry and the resulting smooth system solved
/// directly, which cannot wander into a spurious basin.
pub fn step(
    state: &RigidState,
    scenario: &Scenario,
    params: &SolverParams,
    t: f64,
    step_index: usize,
    warm: Option<&WarmStart>,
) -> Result<(RigidState, TrajectoryRecord, WarmStart), StepError> {
    let body_now = scenario
        .body_geometry()
        .at_pose(Pose::new(state.position, state.orientation));
    let support = scenario.support_geometry();
    let layout = StepLayout {
        m: body_now.constraints.len(),
        ng: support.constraints.len(),
    };

    let (z0, k0) = match warm {
        Some(w) => {
            let n = support_normal_at(&support, &w.prev_ecp_body);
            let k = select_active_index_toward(&body_now, &w.prev_ecp_body, &(-n));
            let mut z = w.z.clone();
            if k != w.prev_active {
                // the multiplier roles are keyed to the designated index;
                // rebuild them when it changes
                log::debug!(
                    "step {step_index}: designated constraint switched {} -> {k}",
                    w.prev_active
                );
                for i in 0..layout.m {
                    z[layout.col_lf(i)] = 1e-6;
                }
                for jg in 0..layout.ng {
                    z[layout.col_lg(jg)] = z[layout.col_lg(jg)].max(1e-6);
                }
            }
            (z, k)
        }
        None => {
            let seed = seed_z(&layout, scenario, state, &body_now, &support);
            (seed.z, seed.k)
        }
    };

    let first = attempt_step(state, scenario, params, t, step_index, &z0, k0, false)?;
    let first_reason = match first {
        Attempt::Accepted(accepted) => return Ok(*accepted),
        Attempt::Unphysical { reason, z } if z[layout.col_pn()] > 1e-5 => {
            // a contact-carrying root with a physicality defect: repair the
            // ECP and re-solve over the tight smoothing stages only
            log::warn!("step {step_index} (t = {t:.4}): {reason}; retrying from repaired root");
            let z_repair = repair_seed(&layout, scenario, state, &support, k0, &z);
            let mut repair_params = params.clone();
            let tail: Vec<f64> = repair_params
                .smoothing_schedule
                .iter()
                .copied()
                .filter(|&e| e <= 1e-8)
                .collect();
            if !tail.is_empty() {
                repair_params.smoothing_schedule = tail;
            }
            match attempt_step(
                state,
                scenario,
                &repair_params,
                t,
                step_index,
                &z_repair,
                k0,
                true,
            )? {
                Attempt::Accepted(mut accepted) => {
                    accepted.1.diagnostics.retried = true;
                    return Ok(*accepted);
                }
                Attempt::Unphysical { reason, .. } | Attempt::NotConverged { reason } => reason,
            }
        }
        Attempt::Unphysical { reason, .. } | Attempt::NotConverged { reason } => {
            // spurious impulse-free root or no convergence: restart from the
            // geometric seed with finite differences
            log::warn!("step {step_index} (t = {t:.4}): {reason}; retrying from geometric seed");
            let seed = seed_z(&layout, scenario, state, &body_now, &support);
            let mut retry_params = params.clone();
            retry_params.jacobian_mode = crate::mncp::JacobianMode::FiniteDifference;
            match attempt_step(
                state,
                scenario,
                &retry_params,
                t,
                step_index,
                &seed.z,
                seed.k,
                true,
            )? {
                Attempt::Accepted(mut accepted) => {
                    accepted.1.diagnostics.retried = true;
                    return Ok(*accepted);
                }
                Attempt::Unphysical { reason, .. } | Attempt::NotConverged { reason } => reason,
            }
        }
    };

    // last resort: freeze the contact mode from the seed geometry and solve
    // the resulting smooth system directly; try the full geometric active
    // set first, then the minimal single-surface mode (transitions often
    // shed a constraint that was active at the start of the step)
    log::warn!(
        "step {step_index} (t = {t:.4}): {first_reason}; solving with the contact mode frozen from geometry"
    );
    let seed = seed_z(&layout, scenario, state, &body_now, &support);
    let full_modes = seed_modes(&layout, &body_now, &support, &seed);
    let minimal_modes = {
        let mut m = full_modes.clone();
        for i in 0..layout.m {
            m[i] = seed.touching && i == seed.k;
        }
        m
    };
    let (problem, ctx) = assemble(state, scenario, seed.k, t)?;
    let mut solved = None;
    for modes in [&full_modes, &minimal_modes] {
        if let Some(out) = mncp::forced_mode_solve(&problem, &seed.z, modes, params) {
            solved = Some(out);
            break;
        }
    }
    match solved {
        Some((z, report)) => {
            let (next, mut record, warm_out) =
                commit_step(state, scenario, t, step_index, ctx, z, report, true)?;
            record.diagnostics.retried = true;
            Ok((next, record, warm_out))
        }
        None => {
            let (z, report) = mncp::solve(&problem, &seed.z, params)?;
            let (zu, zv) = problem.split(&z);
            let eq = (problem.equality)(&zu, &zv);
            let comp = (problem.complementarity)(&zu, &zv);
            Err(StepError::Solver {
                failure: report
                    .failure
                    .clone()
                    .unwrap_or_else(|| first_reason.clone()),
                z: z.as_slice().to_vec(),
                equality: eq.as_slice().to_vec(),
                comp: comp.as_slice().to_vec(),
                report: Box::new(report),
            })
        }
    }
}

/// Contact modes inferred from the seed geometry: active-branch for each
/// constraint the seed pair touches, contact branch for the normal pair when
/// touching, sliding branch for the friction pair when slipping.
fn seed_modes(
    layout: &StepLayout,
    body_now: &BodyGeometry,
    support: &BodyGeometry,
    seed: &SeedInfo,
) -> Vec<bool> {
    let mut modes = vec![false; layout.n_v()];
    let a1_body = body_now.pose.to_body(&seed.a1);
    for (i, c) in body_now.constraints.iter().enumerate() {
        modes[i] = seed.touching && c.value(&a1_body).abs() <= 1e-4;
    }
    let a2_support = support.pose.to_body(&seed.a2);
    for (j, c) in support.constraints.iter().enumerate() {
        modes[layout.m + j] = c.value(&a2_support).abs() <= 1e-4;
    }
    modes[layout.m + layout.ng] = seed.touching;
    modes[layout.m + layout.ng + 1] = seed.touching && seed.slip > 1e-3;
    // the designated constraint must be active whenever contact carries
    if seed.touching {
        modes[seed.k] = true;
    }
    modes
}

#[allow(clippy::too_many_arguments)]
fn commit_step(
    state: &RigidState,
    scenario: &Scenario,
    t: f64,
    step_index: usize,
    ctx: Arc<StepContext>,
    z: DVector<f64>,
    report: SolverReport,
    retried: bool,
) -> Result<(RigidState, TrajectoryRecord, WarmStart), StepError> {
    let layout = ctx.layout;
    let zu = DVector::from_column_slice(&z.as_slice()[..layout.n_u()]);
    let zv = DVector::from_column_slice(&z.as_slice()[layout.n_u()..]);
    let v = ZView::parse(&layout, &zu, &zv);

    let (pos_next, quat_next, drift) =
        advance_pose(&state.position, &state.orientation, &v.nu, scenario.h);
    let next_state = RigidState::new(
        pos_next,
        quat_next,
        crate::math::linear_part(&v.nu),
        crate::math::angular_part(&v.nu),
    );
    let pose_next = Pose::new(pos_next, quat_next);
    let body_next = scenario.body_geometry().at_pose(pose_next);
    let support = &ctx.support;

    // non-penetration postcondition at the committed pose
    let (psi, _) = gap(&body_next, &v.a2);
    if psi < -PENETRATION_TOL {
        log::debug!(
            "step {step_index}: support ECP inside hull by {psi:.3e} (p_n = {:.3e}, l_f = {:?})",
            v.p_n,
            v.l_f
        );
        return Err(StepError::Penetration { depth: psi });
    }
    let (min_extreme_gap, worst_point) = body_next
        .extreme_points
        .iter()
        .map(|p| (gap(support, &body_next.pose.to_world(p)).0, *p))
        .fold((f64::INFINITY, Vector3::zeros()), |acc, x| {
            if x.0 < acc.0 {
                x
            } else {
                acc
            }
        });
    if min_extreme_gap < -EXTREME_POINT_TOL {
        log::debug!(
            "step {step_index}: hull extreme point {worst_point:?} below support by {min_extreme_gap:.3e} \
             (p_n = {:.3e}, a1 = {:?}, l_f = {:?}, l_g = {:?}, eq_res = {:.3e}, comp_viol = {:.3e})",
            v.p_n,
            v.a1,
            v.l_f,
            v.l_g,
            report.equality_residual,
            report.complementarity_violation
        );
        return Err(StepError::Penetration {
            depth: min_extreme_gap,
        });
    }
    // the contact rows are only valid when the designated constraint is
    // active at the ECP; an inactive designation marks a spurious root
    let f_k = {
        let xb = pose_next.to_body(&v.a1);
        ctx.body.constraints[ctx.active_index].value(&xb)
    };
    if f_k < -1e-6 {
        return Err(StepError::InactiveDesignated { value: f_k });
    }
    // hull-phantom audit (only meaningful off plane supports)
    if v.p_n > 0.0 && !ctx.support_is_plane {
        if let Some(true_body) = &scenario.true_body {
            let violation = hull_phantom_violation(true_body, &pose_next, &v.a2);
            if violation > 1e-9 {
                return Err(StepError::PhantomContact { violation });
            }
        }
    }

    let ecp_on_hull = if v.p_n > 0.0 {
        let on_hull = gap(&body_next, &v.a1).0.abs() <= 1e-9;
        let on_support = gap(support, &v.a1).0.abs() <= 1e-9;
        Some(on_hull && on_support)
    } else {
        None
    };

    let inertia_next =
        crate::math::world_inertia(&quat_next, scenario.mass, &scenario.body_inertia())?;
    let kinetic_energy = 0.5 * v.nu.dot(&(inertia_next * v.nu));

    let frame = ctx
        .frame_at(&v.a2)
        .unwrap_or_else(|_| ContactFrame::from_normal(Vector3::z()));
    let contact = ContactSolution {
        unknowns: ContactUnknowns {
            ecp_body: v.a1,
            ecp_support: v.a2,
            body_multipliers: v.l_f.clone(),
            support_multipliers: v.l_g.clone(),
            active_index: ctx.active_index,
        },
        normal_impulse: v.p_n,
        tangent_impulse: v.p_t,
        bitangent_impulse: v.p_o,
        drill_impulse: v.p_r,
        slip_rate: v.sigma,
        frame,
    };
    let record = TrajectoryRecord {
        step: step_index,
        time: t + scenario.h,
        state: next_state,
        contact,
        solver: report,
        diagnostics: StepDiagnostics {
            gap: psi,
            min_extreme_gap,
            ecp_on_hull,
            kinetic_energy,
            quat_drift: drift,
            retried,
            active_index: ctx.active_index,
        },
    };
    let warm = WarmStart {
        z,
        prev_ecp_body: v.a1,
        prev_active: ctx.active_index,
    };
    Ok((next_state, record, warm))
}

/// Runs the scenario start to finish, warm-starting each step from the last.
pub fn run(scenario: &Scenario, params: &SolverParams) -> Result<Vec<TrajectoryRecord>, RunError> {
    scenario.validate().map_err(|e| RunError {
        step: 0,
        time: 0.0,
        source: StepError::Solver {
            failure: e.to_string(),
            z: vec![],
            equality: vec![],
            comp: vec![],
            report: Box::new(empty_report()),
        },
        partial: vec![],
    })?;
    let n_steps = scenario.steps();
    let mut records = Vec::with_capacity(n_steps);
    let mut state = scenario.initial;
    let mut warm: Option<WarmStart> = None;
    log::info!(
        "running `{}`: {} steps of h = {}",
        scenario.name,
        n_steps,
        scenario.h
    );
    for i in 0..n_steps {
        let t = i as f64 * scenario.h;
        match step(&state, scenario, params, t, i, warm.as_ref()) {
            Ok((next, record, w)) => {
                state = next;
                warm = Some(w);
                records.push(record);
            }
            Err(e) => {
                return Err(RunError {
                    step: i,
                    time: t,
                    source: e,
                    partial: records,
                });
            }
        }
    }
    log::info!(
        "`{}` finished: {} steps, {} retries",
        scenario.name,
        records.len(),
        records.iter().filter(|r| r.diagnostics.retried).count()
    );
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mncp::JacobianMode;
    use crate::scenarios;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn layout_dimensions_for_box_on_plane() {
        let layout = StepLayout { m: 6, ng: 1 };
        assert_eq!(layout.n_u(), 15);
        assert_eq!(layout.n_v(), 9);
    }

    #[test]
    fn resting_cube_equilibrium_z_satisfies_assembled_rows() {
        // nu = 0, p_n = m g h, a1 = a2 directly below the center of mass,
        // l_g = 1, all friction impulses zero: every row vanishes
        let s = scenarios::resting_cube();
        let (problem, ctx) = assemble(&s.initial, &s, 5, 0.0).unwrap();
        let layout = ctx.layout;
        let mut z = DVector::zeros(layout.dim());
        for i in 0..3 {
            z[layout.col_a1() + i] = 0.0;
            z[layout.col_a2() + i] = 0.0;
        }
        z[layout.col_pn()] = s.mass * s.gravity * s.h;
        z[layout.col_lg(0)] = 1.0;
        let (zu, zv) = problem.split(&z);
        let eq = (problem.equality)(&zu, &zv);
        assert!(eq.amax() <= 1e-12, "equality rows {eq:?}");
        let comp = (problem.complementarity)(&zu, &zv);
        // all pair products vanish
        for i in 0..layout.n_v() {
            let prod = zv[i] * comp[i];
            assert!(prod.abs() <= 1e-12, "pair {i} product {prod}");
        }
    }

    #[test]
    fn free_fall_assembly_admits_no_contact_branch() {
        let s = scenarios::free_fall();
        let (problem, ctx) = assemble(&s.initial, &s, 5, 0.0).unwrap();
        let layout = ctx.layout;
        // z: nu with v_z = -g h, ECPs at the analytic closest pair, zero
        // impulses, l_k sized to the separation
        let mut z = DVector::zeros(layout.dim());
        z[2] = -s.gravity * s.h;
        // body bottom face center starts at z = 0.9
        let a1 = Vector3::new(0.0, 0.0, 0.9 - s.gravity * s.h * s.h);
        for i in 0..3 {
            z[layout.col_a1() + i] = a1[i];
        }
        // l_k for the bottom face (-z normal, index 5): a1 - a2 = l_k * e_z
        z[layout.col_lf(5)] = a1.z;
        z[layout.col_lg(0)] = 1.0;
        let (zu, zv) = problem.split(&z);
        let eq = (problem.equality)(&zu, &zv);
        assert!(eq.amax() <= 1e-9, "equality rows {eq:?}");
        let comp = (problem.complementarity)(&zu, &zv);
        let psi = comp[layout.m + layout.ng];
        assert!(psi > 0.5, "separated gap {psi}");
    }

    #[test]
    fn desk_first_step_analytic_jacobian_matches_finite_differences() {
        let s = scenarios::desk_push();
        let body = s
            .body_geometry()
            .at_pose(Pose::new(s.initial.position, s.initial.orientation));
        let support = s.support_geometry();
        let layout = StepLayout { m: 6, ng: 1 };
        let seed = seed_z(&layout, &s, &s.initial, &body, &support);
        let (z0, a1) = (seed.z, seed.a1);
        let k = select_active_index(&body, &a1);
        let (problem, _) = assemble(&s.initial, &s, k, 0.0).unwrap();
        let dev = mncp::analytic_fd_deviation(&problem, &z0, &s.solver).unwrap();
        assert!(dev <= 1e-4, "analytic vs finite-difference deviation {dev}");
        // also at a generic non-seed point with nonzero impulses
        let mut z1 = z0.clone();
        z1[2] = -0.05;
        z1[5] = 0.3;
        z1[layout.col_pn()] = 1.2;
        z1[layout.col_pt()] = -0.2;
        z1[layout.col_sigma()] = 0.25;
        let dev1 = mncp::analytic_fd_deviation(&problem, &z1, &s.solver).unwrap();
        assert!(dev1 <= 1e-4, "generic-point deviation {dev1}");
    }

    #[test]
    fn resting_cube_holds_still() {
        let s = scenarios::resting_cube();
        let records = run(&s, &s.solver).unwrap();
        assert_eq!(records.len(), 200);
        let expected_pn = s.mass * s.gravity * s.h;
        for r in &records {
            let nu = r.state.generalized_velocity();
            assert!(nu.amax() <= 1e-9, "|nu| = {} at step {}", nu.amax(), r.step);
            assert_relative_eq!(
                r.contact.normal_impulse,
                expected_pn,
                max_relative = 1e-9
            );
            assert!(r.solver.converged);
            assert_abs_diff_eq!(r.state.orientation.coords.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn frictionless_slide_preserves_velocity() {
        let s = scenarios::frictionless_slide();
        let records = run(&s, &s.solver).unwrap();
        for r in &records {
            assert_relative_eq!(r.state.linear_velocity.x, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(r.state.linear_velocity.z, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn coulomb_slide_decelerates_linearly_then_stops() {
        let s = scenarios::coulomb_slide();
        let records = run(&s, &s.solver).unwrap();
        let dv = 0.22 * 9.8 * 0.01;
        let mut prev = s.initial.linear_velocity.x;
        let mut stopped = false;
        for r in &records {
            let vx = r.state.linear_velocity.x;
            if stopped || prev <= 1e-9 {
                stopped = true;
                assert!(vx.abs() <= 1e-9, "moved after stopping: {vx}");
            } else if vx > 1e-9 {
                assert_abs_diff_eq!(prev - vx, dv, epsilon = 1e-8);
            }
            prev = vx;
        }
        assert!(stopped, "block never stopped");
        // stop time ~ v0 / (mu g) = 0.139 s -> 14 sliding steps
        let sliding_steps = records
            .iter()
            .filter(|r| r.state.linear_velocity.x > 1e-9)
            .count();
        assert!(
            (13..=15).contains(&sliding_steps),
            "sliding steps {sliding_steps}"
        );
    }

    #[test]
    fn free_fall_gains_gh_per_step() {
        let s = scenarios::free_fall();
        let records = run(&s, &s.solver).unwrap();
        let mut prev_vz = 0.0;
        for r in &records {
            let vz = r.state.linear_velocity.z;
            assert_abs_diff_eq!(prev_vz - vz, 9.8 * 0.01, epsilon = 1e-9);
            assert_abs_diff_eq!(r.contact.normal_impulse, 0.0, epsilon = 1e-9);
            prev_vz = vz;
        }
    }

    #[test]
    fn fd_only_mode_reproduces_hybrid_solution() {
        let s = scenarios::resting_cube();
        let mut params_fd = s.solver.clone();
        params_fd.jacobian_mode = JacobianMode::FiniteDifference;
        let (problem, ctx) = assemble(&s.initial, &s, 5, 0.0).unwrap();
        let body = s
            .body_geometry()
            .at_pose(Pose::new(s.initial.position, s.initial.orientation));
        let z0 = seed_z(&ctx.layout, &s, &s.initial, &body, &ctx.support).z;
        let (z_fd, rep_fd) = mncp::solve(&problem, &z0, &params_fd).unwrap();
        let (z_hy, rep_hy) = mncp::solve(&problem, &z0, &s.solver).unwrap();
        assert!(rep_fd.converged && rep_hy.converged);
        assert!((z_fd - z_hy).amax() <= 1e-7);
    }
}
