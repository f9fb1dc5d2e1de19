//! Trajectory CSV output: one row per step, 17-significant-digit decimal
//! text so every floating value round-trips bit-exactly.

use crate::sim::TrajectoryRecord;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("trajectory parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub const CSV_HEADER: &str = "t,qx,qy,qz,quat_w,quat_x,quat_y,quat_z,vx,vy,vz,wx,wy,wz,a1x,a1y,a1z,a2x,a2y,a2z,pn,pt,po,pr,sigma,gap,newton_iters,converged";

fn fmt(v: f64) -> String {
    // 17 significant digits: exact f64 round trip
    format!("{v:.16e}")
}

/// One parsed CSV row; numeric mirror of the record fields that are written.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub position: [f64; 3],
    pub quaternion: [f64; 4],
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    pub ecp_body: [f64; 3],
    pub ecp_support: [f64; 3],
    pub pn: f64,
    pub pt: f64,
    pub po: f64,
    pub pr: f64,
    pub sigma: f64,
    pub gap: f64,
    pub newton_iters: usize,
    pub converged: bool,
}

pub fn record_to_row(r: &TrajectoryRecord) -> TrajectoryRow {
    let q = r.state.orientation.quaternion();
    TrajectoryRow {
        t: r.time,
        position: [r.state.position.x, r.state.position.y, r.state.position.z],
        quaternion: [q.w, q.i, q.j, q.k],
        linear_velocity: [
            r.state.linear_velocity.x,
            r.state.linear_velocity.y,
            r.state.linear_velocity.z,
        ],
        angular_velocity: [
            r.state.angular_velocity.x,
            r.state.angular_velocity.y,
            r.state.angular_velocity.z,
        ],
        ecp_body: [
            r.contact.unknowns.ecp_body.x,
            r.contact.unknowns.ecp_body.y,
            r.contact.unknowns.ecp_body.z,
        ],
        ecp_support: [
            r.contact.unknowns.ecp_support.x,
            r.contact.unknowns.ecp_support.y,
            r.contact.unknowns.ecp_support.z,
        ],
        pn: r.contact.normal_impulse,
        pt: r.contact.tangent_impulse,
        po: r.contact.bitangent_impulse,
        pr: r.contact.drill_impulse,
        sigma: r.contact.slip_rate,
        gap: r.diagnostics.gap,
        newton_iters: r.solver.total_iterations(),
        converged: r.solver.converged,
    }
}

fn row_to_line(row: &TrajectoryRow) -> String {
    let mut fields: Vec<String> = Vec::with_capacity(28);
    fields.push(fmt(row.t));
    for v in row.position {
        fields.push(fmt(v));
    }
    for v in row.quaternion {
        fields.push(fmt(v));
    }
    for v in row.linear_velocity {
        fields.push(fmt(v));
    }
    for v in row.angular_velocity {
        fields.push(fmt(v));
    }
    for v in row.ecp_body {
        fields.push(fmt(v));
    }
    for v in row.ecp_support {
        fields.push(fmt(v));
    }
    for v in [row.pn, row.pt, row.po, row.pr, row.sigma, row.gap] {
        fields.push(fmt(v));
    }
    fields.push(row.newton_iters.to_string());
    fields.push(row.converged.to_string());
    fields.join(",")
}

/// Writes the trajectory CSV: header plus one row per step.
pub fn write_trajectory(
    records: &[TrajectoryRecord],
    path: &Path,
) -> Result<(), TrajectoryError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", row_to_line(&record_to_row(r)))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a trajectory CSV produced by [`write_trajectory`].
pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, TrajectoryError> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectory(&text)
}

pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryRow>, TrajectoryError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(TrajectoryError::Parse {
                line: 1,
                reason: format!("unexpected header `{h}`"),
            })
        }
        None => {
            return Err(TrajectoryError::Parse {
                line: 1,
                reason: "empty file".into(),
            })
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 28 {
            return Err(TrajectoryError::Parse {
                line: idx + 1,
                reason: format!("expected 28 fields, got {}", fields.len()),
            });
        }
        let f = |i: usize| -> Result<f64, TrajectoryError> {
            fields[i].parse().map_err(|e| TrajectoryError::Parse {
                line: idx + 1,
                reason: format!("field {i}: {e}"),
            })
        };
        let vec3 = |i: usize| -> Result<[f64; 3], TrajectoryError> {
            Ok([f(i)?, f(i + 1)?, f(i + 2)?])
        };
        rows.push(TrajectoryRow {
            t: f(0)?,
            position: vec3(1)?,
            quaternion: [f(4)?, f(5)?, f(6)?, f(7)?],
            linear_velocity: vec3(8)?,
            angular_velocity: vec3(11)?,
            ecp_body: vec3(14)?,
            ecp_support: vec3(17)?,
            pn: f(20)?,
            pt: f(21)?,
            po: f(22)?,
            pr: f(23)?,
            sigma: f(24)?,
            gap: f(25)?,
            newton_iters: fields[26].parse().map_err(|e| TrajectoryError::Parse {
                line: idx + 1,
                reason: format!("newton_iters: {e}"),
            })?,
            converged: fields[27].parse().map_err(|e| TrajectoryError::Parse {
                line: idx + 1,
                reason: format!("converged: {e}"),
            })?,
        });
    }
    Ok(rows)
}
