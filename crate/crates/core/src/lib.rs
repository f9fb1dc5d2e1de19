//! Rigid-body motion prediction with patch contact resolved through an
//! equivalent contact point (ECP).
//!
//! A body described by a convex hull (an intersection of differentiable convex
//! inequalities) moves over a fixed convex support. Every time step assembles
//! one mixed nonlinear complementarity problem coupling:
//!
//! * Newton–Euler dynamics in impulse–velocity form,
//! * an ellipsoidal Coulomb friction law derived from maximum power
//!   dissipation,
//! * contact constraints that locate the ECP pair on both bodies and forbid
//!   penetration at the *end* of the step (the contact geometry is an unknown
//!   of the solve, not a pre-step collision-detection snapshot).
//!
//! Solving the system yields the next generalized velocity together with the
//! ECP and the contact impulses, so contact-mode transitions (surface, line,
//! two-point, single-point, separation) fall out of the same solve with no
//! mode enumeration.
//!
//! The crate is organized as:
//!
//! * [`math`] — quaternion kinematics, generalized inertia, wrench bases.
//! * [`geometry`] — convex inequality bodies, built-in hulls, closest-point
//!   seeding.
//! * [`contact`] — ECP constraint residuals and complementarity pairs.
//! * [`friction`] — friction-ellipsoid equality rows and slack.
//! * [`mncp`] — the smoothed Fischer–Burmeister Newton solver.
//! * [`sim`] — per-step assembly and the time-stepping loop.
//! * [`scenarios`] — catalog of ready-made scenarios.
//! * [`config`], [`trajectory`], [`plots`], [`cli`] — file formats and the
//!   command-line front end.

pub mod cli;
pub mod config;
pub mod contact;
pub mod friction;
pub mod geometry;
pub mod math;
pub mod mncp;
pub mod plots;
pub mod scenarios;
pub mod sim;
pub mod trajectory;

pub use contact::{ContactSolution, ContactUnknowns};
pub use friction::FrictionParams;
pub use geometry::{BodyGeometry, ConvexConstraint, Pose};
pub use math::{ContactFrame, RigidState, WrenchBasis};
pub use mncp::{MixedProblem, SolverParams, SolverReport};
pub use scenarios::Scenario;
pub use sim::TrajectoryRecord;
