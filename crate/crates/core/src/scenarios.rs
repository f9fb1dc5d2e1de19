//! Scenario catalog: body shape, inertia, support, friction, integration
//! settings, initial state, and the applied wrench schedule.
//!
//! The desk-pushing scenario carries the published parameterization. The
//! T-bar and dumbbell runs use authored force/torque schedules that reproduce
//! the intended phase structure (tilt/wobble, opposite tilt, planar
//! slide-rotate; topple then roll-and-rotate); their trajectories are
//! regression baselines of this implementation, not external ground truth.

use crate::friction::FrictionParams;
use crate::geometry::{
    builtin_dumbbell_hull, builtin_t_prism, BodyGeometry, ConvexConstraint, Pose,
    TPrismDims,
};
use crate::math::RigidState;
use crate::mncp::SolverParams;
use nalgebra::{Matrix3, UnitQuaternion, Vector3, Vector6};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario `{name}`; available: {available}")]
    Unknown { name: String, available: String },
    #[error("scenario `{name}` invalid: {reason}")]
    Invalid { name: String, reason: String },
}

/// One waveform primitive, optionally windowed to `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WaveformTerm {
    Constant { value: f64 },
    /// `amplitude * sin(2 pi frequency t + phase)`.
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePiece {
    pub term: WaveformTerm,
    pub start: Option<f64>,
    pub end: Option<f64>,
}

impl SchedulePiece {
    pub fn always(term: WaveformTerm) -> Self {
        Self {
            term,
            start: None,
            end: None,
        }
    }

    pub fn windowed(term: WaveformTerm, start: f64, end: f64) -> Self {
        Self {
            term,
            start: Some(start),
            end: Some(end),
        }
    }

    fn active(&self, t: f64) -> bool {
        self.start.is_none_or(|s| t >= s) && self.end.is_none_or(|e| t < e)
    }

    fn evaluate(&self, t: f64) -> f64 {
        if !self.active(t) {
            return 0.0;
        }
        match self.term {
            WaveformTerm::Constant { value } => value,
            WaveformTerm::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (2.0 * std::f64::consts::PI * frequency * t + phase).sin(),
        }
    }
}

/// Applied wrench as six independent piecewise waveforms
/// `(f_x, f_y, f_z, tau_x, tau_y, tau_z)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WrenchSchedule {
    pub components: [Vec<SchedulePiece>; 6],
}

impl WrenchSchedule {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn evaluate(&self, t: f64) -> Vector6<f64> {
        let mut w = Vector6::zeros();
        for (i, pieces) in self.components.iter().enumerate() {
            w[i] = pieces.iter().map(|p| p.evaluate(t)).sum();
        }
        w
    }

    pub fn is_finite_over(&self, duration: f64, samples: usize) -> bool {
        (0..=samples).all(|k| {
            let t = duration * (k as f64) / (samples as f64);
            self.evaluate(t).iter().all(|v| v.is_finite())
        })
    }
}

/// Body hull shapes with enough dimension data to derive both the geometry
/// and (for uniform density) the inertia tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum BodyShape {
    /// Box hull; `center` offsets the hull from the center of mass in the
    /// body frame (a desk's contact hull hangs below its CM).
    Box {
        half_extents: Vector3<f64>,
        center: Vector3<f64>,
    },
    TPrism(TPrismDims),
    /// Hull is the circumscribing cylinder of length `length` and radius
    /// `radius`; the bar dimensions only enter the composite inertia.
    Dumbbell {
        length: f64,
        radius: f64,
        bar_length: f64,
        bar_radius: f64,
    },
}

impl BodyShape {
    pub fn centered_box(half_extents: Vector3<f64>) -> Self {
        Self::Box {
            half_extents,
            center: Vector3::zeros(),
        }
    }

    pub fn geometry(&self) -> BodyGeometry {
        match self {
            Self::Box {
                half_extents,
                center,
            } => crate::geometry::builtin_box_at(*half_extents, *center),
            Self::TPrism(dims) => builtin_t_prism(*dims),
            Self::Dumbbell { length, radius, .. } => builtin_dumbbell_hull(*length, *radius),
        }
    }

    /// Uniform-density inertia tensor about the center of mass. For an
    /// offset box hull the plain box formula is used: the offset describes
    /// where the contact hull sits, not where the mass is.
    pub fn auto_inertia(&self, mass: f64) -> Matrix3<f64> {
        match self {
            Self::Box { half_extents, .. } => box_inertia(mass, *half_extents),
            Self::TPrism(dims) => t_prism_inertia(mass, *dims),
            Self::Dumbbell {
                length,
                radius,
                bar_length,
                bar_radius,
            } => dumbbell_inertia(mass, *length, *radius, *bar_length, *bar_radius),
        }
    }
}

/// Inertia of a uniform box with the given half extents.
pub fn box_inertia(mass: f64, he: Vector3<f64>) -> Matrix3<f64> {
    let c = mass / 3.0;
    Matrix3::from_diagonal(&Vector3::new(
        c * (he.y * he.y + he.z * he.z),
        c * (he.x * he.x + he.z * he.z),
        c * (he.x * he.x + he.y * he.y),
    ))
}

fn box_inertia_full(mass: f64, he: Vector3<f64>) -> Matrix3<f64> {
    box_inertia(mass, he)
}

/// Composite inertia of the T prism: crossbar cuboid plus stem cuboid,
/// parallel-axis shifted to the shared center of mass.
pub fn t_prism_inertia(mass: f64, dims: TPrismDims) -> Matrix3<f64> {
    let bar_area = dims.bar_depth * dims.bar_length;
    let stem_area = dims.stem_length * dims.stem_width;
    let total = bar_area + stem_area;
    let m_bar = mass * bar_area / total;
    let m_stem = mass * stem_area / total;
    let cx = dims.centroid_x();
    // piece centers along x, relative to the shared center of mass
    let d_bar = 0.5 * dims.bar_depth - cx;
    let d_stem = dims.bar_depth + 0.5 * dims.stem_length - cx;
    let mut i = Matrix3::zeros();
    for (m, he, d) in [
        (
            m_bar,
            Vector3::new(0.5 * dims.bar_depth, 0.5 * dims.bar_length, 0.5 * dims.thickness),
            d_bar,
        ),
        (
            m_stem,
            Vector3::new(0.5 * dims.stem_length, 0.5 * dims.stem_width, 0.5 * dims.thickness),
            d_stem,
        ),
    ] {
        let mut piece = box_inertia_full(m, he);
        // parallel axis for an x-offset d: adds m d^2 to I_yy and I_zz
        piece[(1, 1)] += m * d * d;
        piece[(2, 2)] += m * d * d;
        i += piece;
    }
    i
}

/// Composite inertia of a dumbbell: two end cylinders of radius `radius` and
/// a connecting bar of radius `bar_radius`, all coaxial along body x, uniform
/// density totaling `mass`.
pub fn dumbbell_inertia(
    mass: f64,
    length: f64,
    radius: f64,
    bar_length: f64,
    bar_radius: f64,
) -> Matrix3<f64> {
    let end_len = 0.5 * (length - bar_length);
    let v_end = std::f64::consts::PI * radius * radius * end_len;
    let v_bar = std::f64::consts::PI * bar_radius * bar_radius * bar_length;
    let v_total = 2.0 * v_end + v_bar;
    let m_end = mass * v_end / v_total;
    let m_bar = mass * v_bar / v_total;
    let d_end = 0.5 * (bar_length + end_len);
    let cyl = |m: f64, r: f64, h: f64, d: f64| -> (f64, f64) {
        let axial = 0.5 * m * r * r;
        let perp = m * (3.0 * r * r + h * h) / 12.0 + m * d * d;
        (axial, perp)
    };
    let (a1, p1) = cyl(m_end, radius, end_len, d_end);
    let (a2, p2) = cyl(m_end, radius, end_len, -d_end);
    let (a3, p3) = cyl(m_bar, bar_radius, bar_length, 0.0);
    Matrix3::from_diagonal(&Vector3::new(a1 + a2 + a3, p1 + p2 + p3, p1 + p2 + p3))
}

/// Support shapes (kinematically fixed).
#[derive(Debug, Clone, PartialEq)]
pub enum SupportShape {
    Halfspace { normal: Vector3<f64>, offset: f64 },
    Sphere { center: Vector3<f64>, radius: f64 },
    Cylinder {
        axis_point: Vector3<f64>,
        axis_dir: Vector3<f64>,
        radius: f64,
    },
}

impl SupportShape {
    pub fn ground() -> Self {
        Self::Halfspace {
            normal: Vector3::z(),
            offset: 0.0,
        }
    }

    pub fn geometry(&self) -> BodyGeometry {
        let c = match self {
            Self::Halfspace { normal, offset } => ConvexConstraint::Halfspace {
                normal: normal.normalize(),
                offset: *offset,
            },
            Self::Sphere { center, radius } => ConvexConstraint::Sphere {
                center: *center,
                radius: *radius,
            },
            Self::Cylinder {
                axis_point,
                axis_dir,
                radius,
            } => ConvexConstraint::Cylinder {
                axis_point: *axis_point,
                axis_dir: axis_dir.normalize(),
                radius: *radius,
            },
        };
        BodyGeometry::new(vec![c], Pose::identity(), "support")
    }
}

/// Inertia specification: derived from the shape at uniform density, or given
/// explicitly.
#[derive(Debug, Clone, PartialEq)]
pub enum InertiaSpec {
    Auto,
    Explicit(Matrix3<f64>),
}

/// A complete simulation setup.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub body: BodyShape,
    pub mass: f64,
    pub inertia: InertiaSpec,
    pub support: SupportShape,
    pub friction: FrictionParams,
    pub gravity: f64,
    pub h: f64,
    pub duration: f64,
    pub solver: SolverParams,
    pub initial: RigidState,
    pub applied: WrenchSchedule,
    /// True-body inequalities for the hull-phantom audit; `None` for plane
    /// supports, where the audit is vacuous.
    pub true_body: Option<Vec<ConvexConstraint>>,
    pub metadata: BTreeMap<String, String>,
}

impl Scenario {
    pub fn body_inertia(&self) -> Matrix3<f64> {
        match &self.inertia {
            InertiaSpec::Auto => self.body.auto_inertia(self.mass),
            InertiaSpec::Explicit(m) => *m,
        }
    }

    pub fn body_geometry(&self) -> BodyGeometry {
        self.body.geometry()
    }

    pub fn support_geometry(&self) -> BodyGeometry {
        self.support.geometry()
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.h).round() as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |reason: String| ScenarioError::Invalid {
            name: self.name.clone(),
            reason,
        };
        if !(self.h > 0.0) {
            return Err(fail("h must be positive".into()));
        }
        if self.duration < self.h {
            return Err(fail("duration must be at least one step".into()));
        }
        if !(self.mass > 0.0) {
            return Err(fail("mass must be positive".into()));
        }
        if !self.initial.is_finite() {
            return Err(fail("initial state has non-finite entries".into()));
        }
        let quat_norm = self.initial.orientation.coords.norm();
        if (quat_norm - 1.0).abs() > 1e-9 {
            return Err(fail(format!("initial quaternion norm {quat_norm} != 1")));
        }
        if !self.applied.is_finite_over(self.duration, 1000) {
            return Err(fail("applied schedule is not finite over the run".into()));
        }
        // initial pose must not penetrate the support: every hull extreme
        // point keeps nonnegative support gap
        let body = self
            .body_geometry()
            .at_pose(Pose::new(self.initial.position, self.initial.orientation));
        let support = self.support_geometry();
        for p in &body.extreme_points {
            let world = body.pose.to_world(p);
            let (g, _) = crate::geometry::gap(&support, &world);
            if g < -1e-9 {
                return Err(fail(format!(
                    "initial pose penetrates the support by {g:.3e} at {world:?}"
                )));
            }
        }
        self.solver.validate().map_err(|e| fail(e))?;
        Ok(())
    }
}

fn ground_state(position: Vector3<f64>, v: Vector3<f64>, w: Vector3<f64>) -> RigidState {
    RigidState::new(position, UnitQuaternion::identity(), v, w)
}

/// Pushing a four-legged desk across a plane: box hull 0.5 x 0.5 x 0.45,
/// periodic planar pushing forces, sliding throughout.
pub fn desk_push() -> Scenario {
    let half = std::f64::consts::FRAC_PI_2;
    Scenario {
        name: "desk_push".into(),
        body: BodyShape::Box {
            half_extents: Vector3::new(0.25, 0.25, 0.225),
            center: Vector3::new(0.0, 0.0, -0.225),
        },
        mass: 15.0,
        inertia: InertiaSpec::Auto,
        support: SupportShape::ground(),
        friction: FrictionParams::with_mu(0.22).unwrap(),
        gravity: 9.8,
        h: 0.01,
        duration: 4.0,
        solver: SolverParams::default(),
        initial: ground_state(
            Vector3::new(0.0, 0.0, 0.45),
            Vector3::new(0.3, 0.2, 0.0),
            Vector3::new(0.0, 0.0, 0.5),
        ),
        applied: WrenchSchedule {
            components: [
                vec![
                    SchedulePiece::always(WaveformTerm::Sine {
                        amplitude: 22.5,
                        frequency: 1.0,
                        phase: 0.0,
                    }),
                    SchedulePiece::always(WaveformTerm::Constant { value: 22.5 }),
                ],
                vec![
                    SchedulePiece::always(WaveformTerm::Sine {
                        amplitude: 22.5,
                        frequency: 1.0,
                        phase: half,
                    }),
                    SchedulePiece::always(WaveformTerm::Constant { value: 22.5 }),
                ],
                vec![],
                vec![],
                vec![],
                vec![SchedulePiece::always(WaveformTerm::Sine {
                    amplitude: 2.1,
                    frequency: 1.0,
                    phase: half,
                })],
            ],
        },
        true_body: None,
        metadata: BTreeMap::from([
            ("desk_foot_half_extent".into(), "0.03".into()),
            (
                "note".into(),
                "feet geometry only affects the physical patch, not the hull solve".into(),
            ),
        ]),
    }
}

/// Standard T-bar dimensions used by the catalog scenario.
pub fn t_bar_dims() -> TPrismDims {
    TPrismDims {
        bar_length: 0.3,
        bar_depth: 0.1,
        stem_length: 0.2,
        stem_width: 0.1,
        thickness: 0.05,
    }
}

/// Manipulating a T-shaped bar: tilt-and-wobble twice (phases T1, T2 with
/// opposite tilt torque), then planar slide-and-rotate with surface contact
/// (phase T3). Phase boundaries at 1.5 s and 3.0 s.
pub fn t_bar() -> Scenario {
    let dims = t_bar_dims();
    let mut components: [Vec<SchedulePiece>; 6] = Default::default();
    // T1: tilt torque pulse about x strong enough to lift the bar onto a
    // bar-end edge (the surface patch resists up to m g * 0.15 = 2.94 N m),
    // then release so it drops and rocks
    components[3].push(SchedulePiece::windowed(
        WaveformTerm::Sine {
            amplitude: 3.6,
            frequency: 1.0 / 1.0,
            phase: 0.0,
        },
        0.0,
        0.5,
    ));
    // T2: the same pulse with the opposite sign
    components[3].push(SchedulePiece::windowed(
        WaveformTerm::Sine {
            amplitude: -3.6,
            frequency: 1.0 / 1.0,
            phase: 0.0,
        },
        1.5,
        2.0,
    ));
    // T3: planar pushing forces plus a spin torque, surface contact
    components[0].push(SchedulePiece::windowed(
        WaveformTerm::Sine {
            amplitude: 4.0,
            frequency: 0.5,
            phase: 0.0,
        },
        3.0,
        5.0,
    ));
    components[0].push(SchedulePiece::windowed(
        WaveformTerm::Constant { value: 4.5 },
        3.0,
        5.0,
    ));
    components[1].push(SchedulePiece::windowed(
        WaveformTerm::Constant { value: 2.5 },
        3.0,
        5.0,
    ));
    components[5].push(SchedulePiece::windowed(
        WaveformTerm::Sine {
            amplitude: 0.6,
            frequency: 0.5,
            phase: half_pi(),
        },
        3.0,
        5.0,
    ));
    Scenario {
        name: "t_bar".into(),
        body: BodyShape::TPrism(dims),
        mass: 2.0,
        inertia: InertiaSpec::Auto,
        support: SupportShape::ground(),
        friction: FrictionParams::with_mu(0.22).unwrap(),
        gravity: 9.8,
        h: 0.01,
        duration: 5.0,
        solver: SolverParams::default(),
        initial: ground_state(
            Vector3::new(0.0, 0.0, 0.5 * dims.thickness),
            Vector3::zeros(),
            Vector3::zeros(),
        ),
        applied: WrenchSchedule { components },
        true_body: None,
        metadata: BTreeMap::from([
            ("phase_T1".into(), "0.0..1.5".into()),
            ("phase_T2".into(), "1.5..3.0".into()),
            ("phase_T3".into(), "3.0..5.0".into()),
        ]),
    }
}

fn half_pi() -> f64 {
    std::f64::consts::FRAC_PI_2
}

/// Dumbbell: starts upright on one end cap, topples under a lateral force
/// pulse, then rolls and rotates on its side with line contact. The applied
/// z-force and y-torque are identically zero.
pub fn dumbbell() -> Scenario {
    let (length, radius) = (0.3, 0.1);
    let mut components: [Vec<SchedulePiece>; 6] = Default::default();
    // tip the upright dumbbell about world x: torque pulse past the
    // m g R = 2.94 N m cap-rim threshold, so it falls toward -y and lands
    // on its side line
    components[3].push(SchedulePiece::windowed(
        WaveformTerm::Sine {
            amplitude: 5.2,
            frequency: 1.0 / 0.9,
            phase: 0.0,
        },
        0.0,
        0.45,
    ));
    // once down, push sideways so friction rolls the cylinder, steer with a
    // small x-force, and spin it about the vertical
    components[0].push(SchedulePiece::windowed(
        WaveformTerm::Constant { value: 2.2 },
        0.9,
        2.1,
    ));
    components[1].push(SchedulePiece::windowed(
        WaveformTerm::Constant { value: -1.0 },
        0.9,
        2.1,
    ));
    components[5].push(SchedulePiece::windowed(
        WaveformTerm::Constant { value: 0.4 },
        0.9,
        2.1,
    ));
    // stand the hull axis (body x) upright along world z
    let upright = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -half_pi());
    Scenario {
        name: "dumbbell".into(),
        body: BodyShape::Dumbbell {
            length,
            radius,
            bar_length: 0.18,
            bar_radius: 0.05,
        },
        mass: 3.0,
        inertia: InertiaSpec::Auto,
        support: SupportShape::ground(),
        friction: FrictionParams::with_mu(0.22).unwrap(),
        gravity: 9.8,
        h: 0.01,
        duration: 2.5,
        solver: SolverParams::default(),
        initial: RigidState::new(
            Vector3::new(0.0, 0.0, 0.5 * length),
            upright,
            Vector3::zeros(),
            Vector3::zeros(),
        ),
        applied: WrenchSchedule { components },
        true_body: None,
        metadata: BTreeMap::new(),
    }
}

fn unit_cube(name: &str, mu: f64, v0: Vector3<f64>, duration: f64) -> Scenario {
    Scenario {
        name: name.into(),
        body: BodyShape::centered_box(Vector3::new(0.1, 0.1, 0.1)),
        mass: 1.0,
        inertia: InertiaSpec::Auto,
        support: SupportShape::ground(),
        friction: FrictionParams::with_mu(mu).unwrap(),
        gravity: 9.8,
        h: 0.01,
        duration,
        solver: SolverParams::default(),
        initial: ground_state(Vector3::new(0.0, 0.0, 0.1), v0, Vector3::zeros()),
        applied: WrenchSchedule::zero(),
        true_body: None,
        metadata: BTreeMap::new(),
    }
}

pub fn resting_cube() -> Scenario {
    unit_cube("resting_cube", 0.22, Vector3::zeros(), 2.0)
}

pub fn frictionless_slide() -> Scenario {
    unit_cube("frictionless_slide", 0.0, Vector3::new(1.0, 0.0, 0.0), 1.0)
}

pub fn coulomb_slide() -> Scenario {
    unit_cube("coulomb_slide", 0.22, Vector3::new(0.3, 0.0, 0.0), 0.3)
}

pub fn free_fall() -> Scenario {
    let mut s = unit_cube("free_fall", 0.22, Vector3::zeros(), 0.3);
    s.initial.position = Vector3::new(0.0, 0.0, 1.0);
    s
}

/// A tall thin box released with a small tip rate; it falls onto an edge and
/// slaps flat, exercising vertex and edge contact plus the impact path.
pub fn toppling_rod() -> Scenario {
    Scenario {
        name: "toppling_rod".into(),
        body: BodyShape::centered_box(Vector3::new(0.02, 0.02, 0.3)),
        mass: 0.5,
        inertia: InertiaSpec::Auto,
        support: SupportShape::ground(),
        friction: FrictionParams::with_mu(0.4).unwrap(),
        gravity: 9.8,
        h: 0.01,
        duration: 1.5,
        solver: SolverParams::default(),
        initial: RigidState::new(
            Vector3::new(0.0, 0.0, 0.3),
            UnitQuaternion::identity(),
            Vector3::zeros(),
            Vector3::new(0.0, 0.6, 0.0),
        ),
        applied: WrenchSchedule::zero(),
        true_body: None,
        metadata: BTreeMap::new(),
    }
}

/// Analytic unit scenarios used by the verification suites.
pub fn unit_scenarios() -> Vec<Scenario> {
    vec![
        resting_cube(),
        frictionless_slide(),
        coulomb_slide(),
        free_fall(),
        toppling_rod(),
    ]
}

/// The three catalog scenarios.
pub fn catalog() -> Vec<Scenario> {
    vec![desk_push(), t_bar(), dumbbell()]
}

pub fn scenario_names() -> Vec<&'static str> {
    vec![
        "desk_push",
        "t_bar",
        "dumbbell",
        "resting_cube",
        "frictionless_slide",
        "coulomb_slide",
        "free_fall",
        "toppling_rod",
    ]
}

pub fn by_name(name: &str) -> Result<Scenario, ScenarioError> {
    match name {
        "desk_push" => Ok(desk_push()),
        "t_bar" => Ok(t_bar()),
        "dumbbell" => Ok(dumbbell()),
        "resting_cube" => Ok(resting_cube()),
        "frictionless_slide" => Ok(frictionless_slide()),
        "coulomb_slide" => Ok(coulomb_slide()),
        "free_fall" => Ok(free_fall()),
        "toppling_rod" => Ok(toppling_rod()),
        _ => Err(ScenarioError::Unknown {
            name: name.to_string(),
            available: scenario_names().join(", "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::gap;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn desk_schedule_values() {
        let s = desk_push();
        let w0 = s.applied.evaluate(0.0);
        assert_abs_diff_eq!(w0[0], 22.5, epsilon = 1e-12);
        assert_abs_diff_eq!(w0[1], 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w0[5], 2.1, epsilon = 1e-12);
        let w_quarter = s.applied.evaluate(0.25);
        assert_abs_diff_eq!(w_quarter[0], 45.0, epsilon = 1e-12);
        match s.body {
            BodyShape::Box { half_extents, .. } => {
                assert_abs_diff_eq!(half_extents.x, 0.25);
                assert_abs_diff_eq!(half_extents.y, 0.25);
                assert_abs_diff_eq!(half_extents.z, 0.225);
            }
            _ => panic!("desk hull is a box"),
        }
    }

    #[test]
    fn t_bar_phases() {
        let s = t_bar();
        assert_eq!(s.metadata["phase_T1"], "0.0..1.5");
        assert_eq!(s.metadata["phase_T2"], "1.5..3.0");
        // tilt torque in T2 opposes T1
        let t1 = s.applied.evaluate(0.3)[3];
        let t2 = s.applied.evaluate(1.8)[3];
        assert!(t1 > 0.0 && t2 < 0.0, "T1 {t1}, T2 {t2}");
        // resting CM height on face contact
        assert_abs_diff_eq!(s.initial.position.z, 0.025);
        assert_abs_diff_eq!(s.duration, 5.0);
    }

    #[test]
    fn dumbbell_zero_components() {
        let s = dumbbell();
        for step in 0..=250 {
            let t = 0.01 * step as f64;
            let w = s.applied.evaluate(t);
            assert_eq!(w[2], 0.0, "applied f_z must be identically zero");
            assert_eq!(w[4], 0.0, "applied tau_y must be identically zero");
        }
        // hull cap rim points sit on the hull boundary
        let body = s.body_geometry();
        for theta in [0.0, 0.7, 2.9] {
            let p = Vector3::new(0.15, 0.1 * f64::cos(theta), 0.1 * f64::sin(theta));
            assert!(gap(&body, &p).0.abs() <= 1e-12);
        }
    }

    #[test]
    fn dumbbell_inertia_matches_monte_carlo() {
        let s = dumbbell();
        let i = s.body_inertia();
        // closed form first: the axial term from the three-cylinder
        // composition
        let i_axial_expected = {
            let (m_end, m_bar) = (3.0 * 6.0 / 16.5, 3.0 * 4.5 / 16.5);
            0.5 * (2.0 * m_end * 0.01 + m_bar * 0.0025)
        };
        assert_relative_eq!(i[(0, 0)], i_axial_expected, epsilon = 1e-12);
        // Monte Carlo volume integration over the true dumbbell solid
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut n_in, mut sx, mut sy) = (0u64, 0.0f64, 0.0f64);
        let samples = 2_000_000;
        let inside = |p: &Vector3<f64>| -> bool {
            let r2 = p.y * p.y + p.z * p.z;
            let in_end = p.x.abs() >= 0.09 && p.x.abs() <= 0.15 && r2 <= 0.01;
            let in_bar = p.x.abs() < 0.09 && r2 <= 0.0025;
            in_end || in_bar
        };
        for _ in 0..samples {
            let p = Vector3::new(
                0.3 * rng.random::<f64>() - 0.15,
                0.2 * rng.random::<f64>() - 0.1,
                0.2 * rng.random::<f64>() - 0.1,
            );
            if inside(&p) {
                n_in += 1;
                sx += p.y * p.y + p.z * p.z; // axial second moment
                sy += p.x * p.x + p.z * p.z; // transverse second moment
            }
        }
        let m_per_sample = 3.0 / n_in as f64;
        let mc_axial = m_per_sample * sx;
        let mc_perp = m_per_sample * sy;
        assert_relative_eq!(i[(0, 0)], mc_axial, max_relative = 0.01);
        assert_relative_eq!(i[(1, 1)], mc_perp, max_relative = 0.01);
    }

    #[test]
    fn catalog_scenarios_validate() {
        for s in catalog().into_iter().chain(unit_scenarios()) {
            s.validate().unwrap_or_else(|e| panic!("{e}"));
        }
    }

    #[test]
    fn inertias_are_spd_and_match_closed_forms() {
        let desk = desk_push();
        let i = desk.body_inertia();
        let expect = 15.0 / 3.0 * (0.25 * 0.25 + 0.225 * 0.225);
        assert_relative_eq!(i[(0, 0)], expect, epsilon = 1e-9);
        assert!(i.cholesky().is_some());
        let tb = t_bar();
        let it = tb.body_inertia();
        assert!(it.cholesky().is_some());
        // cross-check the T inertia against direct integration over the two
        // rectangles (z-axis term): I_zz = sum over pieces of
        // m_i/12 (w^2 + d^2) + m_i dx_i^2
        let dims = t_bar_dims();
        let (ba, sa) = (0.03, 0.02);
        let (mb, ms) = (2.0 * ba / 0.05, 2.0 * sa / 0.05);
        let cx = dims.centroid_x();
        let izz = mb / 12.0 * (0.1f64.powi(2) + 0.3f64.powi(2))
            + mb * (0.05 - cx).powi(2)
            + ms / 12.0 * (0.2f64.powi(2) + 0.1f64.powi(2))
            + ms * (0.2 - cx).powi(2);
        assert_relative_eq!(it[(2, 2)], izz, epsilon = 1e-9);
    }

    #[test]
    fn unknown_scenario_lists_names() {
        let err = by_name("nope").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("desk_push") && msg.contains("dumbbell"));
    }

    #[test]
    fn schedule_windows() {
        let p = SchedulePiece::windowed(WaveformTerm::Constant { value: 2.0 }, 1.0, 2.0);
        assert_eq!(p.evaluate(0.5), 0.0);
        assert_eq!(p.evaluate(1.0), 2.0);
        assert_eq!(p.evaluate(1.999), 2.0);
        assert_eq!(p.evaluate(2.0), 0.0);
    }
}
