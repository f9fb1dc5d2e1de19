//! Scenario configuration files: a strict TOML schema with explicit units
//! (SI throughout) and lossless round-tripping of every catalog scenario.
//!
//! Unknown keys are rejected. Parse errors carry the line/column reported by
//! the TOML parser; validation errors name the offending field.

use crate::friction::FrictionParams;
use crate::geometry::TPrismDims;
use crate::math::RigidState;
use crate::mncp::SolverParams;
use crate::scenarios::{
    BodyShape, InertiaSpec, Scenario, SchedulePiece, SupportShape, WaveformTerm, WrenchSchedule,
};
use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config field `{field}` invalid: {reason}")]
    Validation { field: String, reason: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("config serialization failed: {0}")]
    Serialize(String),
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    pub schema_version: u32,
    pub name: String,
    pub body: BodyConfig,
    pub support: SupportConfig,
    pub friction: FrictionConfig,
    pub integration: IntegrationConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub applied: AppliedConfig,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

/// Body block: `kind` selects the shape; only the matching dimension fields
/// may be present. Kept flat (no tagged enum) so unknown keys are rejected
/// with a location.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BodyConfig {
    /// `box`, `t_prism`, or `dumbbell`.
    pub kind: String,
    pub mass: f64,
    /// `"auto"` for uniform density, or nine row-major entries.
    pub inertia: InertiaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_extents: Option<[f64; 3]>,
    /// Box hull center offset from the center of mass (body frame).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bar_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bar_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bar_radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum InertiaConfig {
    Auto(String),
    Explicit([[f64; 3]; 3]),
}

/// Support block, flat for the same reason as [`BodyConfig`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SupportConfig {
    /// `halfspace`, `sphere`, or `cylinder`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_point: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_dir: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FrictionConfig {
    pub mu: f64,
    pub e_t: f64,
    pub e_o: f64,
    pub e_r: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub h: f64,
    pub duration: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub solver: SolverParams,
}

fn default_gravity() -> f64 {
    9.8
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub position: [f64; 3],
    /// Scalar-first unit quaternion `(w, x, y, z)`.
    pub orientation: [f64; 4],
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct AppliedConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fx: Vec<PieceConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fy: Vec<PieceConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fz: Vec<PieceConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tx: Vec<PieceConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ty: Vec<PieceConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tz: Vec<PieceConfig>,
}

/// One waveform piece: `kind` is `constant` (with `value`) or `sine` (with
/// `amplitude`, `frequency`, optional `phase`); `start`/`end` window the
/// piece in seconds.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PieceConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
}

impl From<&SchedulePiece> for PieceConfig {
    fn from(p: &SchedulePiece) -> Self {
        let mut out = Self {
            kind: String::new(),
            value: None,
            amplitude: None,
            frequency: None,
            phase: None,
            start: p.start,
            end: p.end,
        };
        match p.term {
            WaveformTerm::Constant { value } => {
                out.kind = "constant".into();
                out.value = Some(value);
            }
            WaveformTerm::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                out.kind = "sine".into();
                out.amplitude = Some(amplitude);
                out.frequency = Some(frequency);
                out.phase = Some(phase);
            }
        }
        out
    }
}

fn piece_from_config(component: &str, p: &PieceConfig) -> Result<SchedulePiece, ConfigError> {
    let field = |name: &str| format!("applied.{component}.{name}");
    let require = |opt: Option<f64>, name: &str| {
        opt.ok_or_else(|| invalid(&field(name), format!("required for kind `{}`", p.kind)))
    };
    let forbid = |opt: Option<f64>, name: &str| -> Result<(), ConfigError> {
        if opt.is_some() {
            return Err(invalid(
                &field(name),
                format!("not allowed for kind `{}`", p.kind),
            ));
        }
        Ok(())
    };
    let term = match p.kind.as_str() {
        "constant" => {
            forbid(p.amplitude, "amplitude")?;
            forbid(p.frequency, "frequency")?;
            forbid(p.phase, "phase")?;
            WaveformTerm::Constant {
                value: require(p.value, "value")?,
            }
        }
        "sine" => {
            forbid(p.value, "value")?;
            WaveformTerm::Sine {
                amplitude: require(p.amplitude, "amplitude")?,
                frequency: require(p.frequency, "frequency")?,
                phase: p.phase.unwrap_or(0.0),
            }
        }
        other => {
            return Err(invalid(
                &field("kind"),
                format!("unknown waveform `{other}` (expected constant | sine)"),
            ))
        }
    };
    Ok(SchedulePiece {
        term,
        start: p.start,
        end: p.end,
    })
}

/// Parses and fully validates a configuration document into a [`Scenario`].
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let doc: ConfigDocument =
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    scenario_from_document(&doc)
}

/// Converts a validated document into a scenario.
pub fn scenario_from_document(doc: &ConfigDocument) -> Result<Scenario, ConfigError> {
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::SchemaVersion(doc.schema_version));
    }
    if doc.name.is_empty() {
        return Err(invalid("name", "must be non-empty"));
    }
    if !(doc.body.mass > 0.0) {
        return Err(invalid("body.mass", "must be positive"));
    }
    if !(doc.integration.h > 0.0) {
        return Err(invalid("integration.h", "must be positive"));
    }
    if doc.integration.duration < doc.integration.h {
        return Err(invalid(
            "integration.duration",
            "must be at least one step",
        ));
    }
    if !(doc.integration.gravity >= 0.0) {
        return Err(invalid("integration.gravity", "must be nonnegative"));
    }
    doc.integration
        .solver
        .validate()
        .map_err(|e| invalid("integration.solver", e))?;
    let friction = FrictionParams::new(
        doc.friction.mu,
        doc.friction.e_t,
        doc.friction.e_o,
        doc.friction.e_r,
    )
    .map_err(|e| invalid("friction", e.to_string()))?;

    let b = &doc.body;
    let need = |opt: Option<f64>, name: &str| {
        opt.ok_or_else(|| invalid(&format!("body.{name}"), format!("required for kind `{}`", b.kind)))
    };
    let positive = |v: f64, name: &str| -> Result<f64, ConfigError> {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(invalid(&format!("body.{name}"), "must be positive"))
        }
    };
    let body = match b.kind.as_str() {
        "box" => {
            let he = b
                .half_extents
                .ok_or_else(|| invalid("body.half_extents", "required for kind `box`"))?;
            if he.iter().any(|&v| !(v > 0.0)) {
                return Err(invalid("body.half_extents", "must be positive"));
            }
            BodyShape::Box {
                half_extents: Vector3::from_column_slice(&he),
                center: Vector3::from_column_slice(&b.center.unwrap_or([0.0; 3])),
            }
        }
        "t_prism" => {
            let dims = TPrismDims {
                bar_length: positive(need(b.bar_length, "bar_length")?, "bar_length")?,
                bar_depth: positive(need(b.bar_depth, "bar_depth")?, "bar_depth")?,
                stem_length: positive(need(b.stem_length, "stem_length")?, "stem_length")?,
                stem_width: positive(need(b.stem_width, "stem_width")?, "stem_width")?,
                thickness: positive(need(b.thickness, "thickness")?, "thickness")?,
            };
            if dims.stem_width > dims.bar_length {
                return Err(invalid("body.stem_width", "must not exceed bar_length"));
            }
            BodyShape::TPrism(dims)
        }
        "dumbbell" => {
            let length = positive(need(b.length, "length")?, "length")?;
            let bar_length = positive(need(b.bar_length, "bar_length")?, "bar_length")?;
            if bar_length >= length {
                return Err(invalid("body.bar_length", "must be shorter than length"));
            }
            BodyShape::Dumbbell {
                length,
                radius: positive(need(b.radius, "radius")?, "radius")?,
                bar_length,
                bar_radius: positive(need(b.bar_radius, "bar_radius")?, "bar_radius")?,
            }
        }
        other => {
            return Err(invalid(
                "body.kind",
                format!("unknown shape `{other}` (expected box | t_prism | dumbbell)"),
            ))
        }
    };

    let inertia = match &doc.body.inertia {
        InertiaConfig::Auto(s) if s == "auto" => InertiaSpec::Auto,
        InertiaConfig::Auto(s) => {
            return Err(invalid(
                "body.inertia",
                format!("expected \"auto\" or a 3x3 matrix, got \"{s}\""),
            ))
        }
        InertiaConfig::Explicit(rows) => {
            let m = Matrix3::from_fn(|r, c| rows[r][c]);
            if m.clone_owned().cholesky().is_none() {
                return Err(invalid(
                    "body.inertia",
                    "must be symmetric positive definite",
                ));
            }
            InertiaSpec::Explicit(m)
        }
    };

    let sup = &doc.support;
    let support = match sup.kind.as_str() {
        "halfspace" => {
            let n = Vector3::from_column_slice(
                &sup.normal
                    .ok_or_else(|| invalid("support.normal", "required for kind `halfspace`"))?,
            );
            if n.norm() <= 1e-12 {
                return Err(invalid("support.normal", "must be nonzero"));
            }
            SupportShape::Halfspace {
                normal: n.normalize(),
                offset: sup
                    .offset
                    .ok_or_else(|| invalid("support.offset", "required for kind `halfspace`"))?,
            }
        }
        "sphere" => {
            let radius = sup
                .radius
                .ok_or_else(|| invalid("support.radius", "required for kind `sphere`"))?;
            if !(radius > 0.0) {
                return Err(invalid("support.radius", "must be positive"));
            }
            SupportShape::Sphere {
                center: Vector3::from_column_slice(
                    &sup.center
                        .ok_or_else(|| invalid("support.center", "required for kind `sphere`"))?,
                ),
                radius,
            }
        }
        "cylinder" => {
            let d = Vector3::from_column_slice(&sup.axis_dir.ok_or_else(|| {
                invalid("support.axis_dir", "required for kind `cylinder`")
            })?);
            if d.norm() <= 1e-12 {
                return Err(invalid("support.axis_dir", "must be nonzero"));
            }
            let radius = sup
                .radius
                .ok_or_else(|| invalid("support.radius", "required for kind `cylinder`"))?;
            if !(radius > 0.0) {
                return Err(invalid("support.radius", "must be positive"));
            }
            SupportShape::Cylinder {
                axis_point: Vector3::from_column_slice(&sup.axis_point.ok_or_else(|| {
                    invalid("support.axis_point", "required for kind `cylinder`")
                })?),
                axis_dir: d.normalize(),
                radius,
            }
        }
        other => {
            return Err(invalid(
                "support.kind",
                format!("unknown support `{other}` (expected halfspace | sphere | cylinder)"),
            ))
        }
    };

    let q = doc.initial.orientation;
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    if (quat.norm() - 1.0).abs() > 1e-6 {
        return Err(invalid(
            "initial.orientation",
            format!("quaternion norm {} deviates from 1", quat.norm()),
        ));
    }
    let initial = RigidState::new(
        Vector3::from_column_slice(&doc.initial.position),
        UnitQuaternion::new_normalize(quat),
        Vector3::from_column_slice(&doc.initial.linear_velocity),
        Vector3::from_column_slice(&doc.initial.angular_velocity),
    );

    let comp = |name: &str, v: &Vec<PieceConfig>| -> Result<Vec<SchedulePiece>, ConfigError> {
        v.iter().map(|p| piece_from_config(name, p)).collect()
    };
    let applied = WrenchSchedule {
        components: [
            comp("fx", &doc.applied.fx)?,
            comp("fy", &doc.applied.fy)?,
            comp("fz", &doc.applied.fz)?,
            comp("tx", &doc.applied.tx)?,
            comp("ty", &doc.applied.ty)?,
            comp("tz", &doc.applied.tz)?,
        ],
    };

    let scenario = Scenario {
        name: doc.name.clone(),
        body,
        mass: doc.body.mass,
        inertia,
        support,
        friction,
        gravity: doc.integration.gravity,
        h: doc.integration.h,
        duration: doc.integration.duration,
        solver: doc.integration.solver.clone(),
        initial,
        applied,
        true_body: None,
        metadata: doc.metadata.clone(),
    };
    scenario
        .validate()
        .map_err(|e| invalid("scenario", e.to_string()))?;
    Ok(scenario)
}

/// Serializes a scenario to the config document format.
pub fn document_from_scenario(s: &Scenario) -> ConfigDocument {
    let mut body = BodyConfig {
        kind: String::new(),
        mass: s.mass,
        inertia: match &s.inertia {
            InertiaSpec::Auto => InertiaConfig::Auto("auto".into()),
            InertiaSpec::Explicit(m) => InertiaConfig::Explicit([
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ]),
        },
        half_extents: None,
        center: None,
        bar_length: None,
        bar_depth: None,
        stem_length: None,
        stem_width: None,
        thickness: None,
        length: None,
        radius: None,
        bar_radius: None,
    };
    match &s.body {
        BodyShape::Box {
            half_extents,
            center,
        } => {
            body.kind = "box".into();
            body.half_extents = Some([half_extents.x, half_extents.y, half_extents.z]);
            if center.norm() > 0.0 {
                body.center = Some([center.x, center.y, center.z]);
            }
        }
        BodyShape::TPrism(d) => {
            body.kind = "t_prism".into();
            body.bar_length = Some(d.bar_length);
            body.bar_depth = Some(d.bar_depth);
            body.stem_length = Some(d.stem_length);
            body.stem_width = Some(d.stem_width);
            body.thickness = Some(d.thickness);
        }
        BodyShape::Dumbbell {
            length,
            radius,
            bar_length,
            bar_radius,
        } => {
            body.kind = "dumbbell".into();
            body.length = Some(*length);
            body.radius = Some(*radius);
            body.bar_length = Some(*bar_length);
            body.bar_radius = Some(*bar_radius);
        }
    }
    let mut support = SupportConfig {
        kind: String::new(),
        normal: None,
        offset: None,
        center: None,
        axis_point: None,
        axis_dir: None,
        radius: None,
    };
    match &s.support {
        SupportShape::Halfspace { normal, offset } => {
            support.kind = "halfspace".into();
            support.normal = Some([normal.x, normal.y, normal.z]);
            support.offset = Some(*offset);
        }
        SupportShape::Sphere { center, radius } => {
            support.kind = "sphere".into();
            support.center = Some([center.x, center.y, center.z]);
            support.radius = Some(*radius);
        }
        SupportShape::Cylinder {
            axis_point,
            axis_dir,
            radius,
        } => {
            support.kind = "cylinder".into();
            support.axis_point = Some([axis_point.x, axis_point.y, axis_point.z]);
            support.axis_dir = Some([axis_dir.x, axis_dir.y, axis_dir.z]);
            support.radius = Some(*radius);
        }
    }
    let q = s.initial.orientation.quaternion();
    let pieces = |c: &Vec<SchedulePiece>| c.iter().map(PieceConfig::from).collect();
    ConfigDocument {
        schema_version: SCHEMA_VERSION,
        name: s.name.clone(),
        body,
        support,
        friction: FrictionConfig {
            mu: s.friction.mu,
            e_t: s.friction.e_t,
            e_o: s.friction.e_o,
            e_r: s.friction.e_r,
        },
        integration: IntegrationConfig {
            h: s.h,
            duration: s.duration,
            gravity: s.gravity,
            solver: s.solver.clone(),
        },
        initial: InitialConfig {
            position: [s.initial.position.x, s.initial.position.y, s.initial.position.z],
            orientation: [q.w, q.i, q.j, q.k],
            linear_velocity: [
                s.initial.linear_velocity.x,
                s.initial.linear_velocity.y,
                s.initial.linear_velocity.z,
            ],
            angular_velocity: [
                s.initial.angular_velocity.x,
                s.initial.angular_velocity.y,
                s.initial.angular_velocity.z,
            ],
        },
        applied: AppliedConfig {
            fx: pieces(&s.applied.components[0]),
            fy: pieces(&s.applied.components[1]),
            fz: pieces(&s.applied.components[2]),
            tx: pieces(&s.applied.components[3]),
            ty: pieces(&s.applied.components[4]),
            tz: pieces(&s.applied.components[5]),
        },
        metadata: s.metadata.clone(),
    }
}

/// Serializes a scenario as TOML text.
pub fn serialize_config(s: &Scenario) -> Result<String, ConfigError> {
    toml::to_string_pretty(&document_from_scenario(s))
        .map_err(|e| ConfigError::Serialize(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;

    #[test]
    fn catalog_round_trips_losslessly() {
        for s in scenarios::catalog().into_iter().chain(scenarios::unit_scenarios()) {
            let text = serialize_config(&s).unwrap();
            let back = parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", s.name));
            assert_eq!(s, back, "round trip changed `{}`", s.name);
        }
    }

    #[test]
    fn missing_mass_names_the_field() {
        let mut text = serialize_config(&scenarios::resting_cube()).unwrap();
        text = text.replace("mass = 1.0\n", "");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn negative_h_is_rejected() {
        let s = scenarios::resting_cube();
        let text = serialize_config(&s).unwrap().replace("h = 0.01", "h = -0.01");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("integration.h"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let s = scenarios::resting_cube();
        let text = serialize_config(&s).unwrap() + "\nunknown_key = 3\n";
        let err = parse_config(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown_key") || msg.contains("unknown field"), "{msg}");
        assert!(msg.contains("line"), "parse errors carry a location: {msg}");
    }

    #[test]
    fn schema_version_checked() {
        let s = scenarios::resting_cube();
        let text = serialize_config(&s)
            .unwrap()
            .replace("schema_version = 1", "schema_version = 99");
        assert!(matches!(
            parse_config(&text),
            Err(ConfigError::SchemaVersion(99))
        ));
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let mut doc = document_from_scenario(&scenarios::resting_cube());
        doc.initial.orientation = [1.0, 0.5, 0.0, 0.0];
        let text = toml::to_string_pretty(&doc).unwrap();
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("initial.orientation"), "{err}");
    }
}
