//! Minimal SVG plot emission: time series for velocity, spin, height, and
//! ECP coordinates, plus a top-view scatter of the ECP against the center of
//! mass projection. Pure vector output, no external renderer.

use crate::sim::TrajectoryRecord;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("cannot plot an empty trajectory")]
    Empty,
    #[error("plot i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 3] = ["#1f6fb2", "#c0392b", "#27ae60"];

struct Series {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
    scatter: bool,
}

fn finite_or(v: f64, fallback: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        fallback
    }
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        let pad = y0.abs().max(1e-6);
        y0 -= 0.5 * pad;
        y1 = y0 + pad;
    }
    let ypad = 0.05 * (y1 - y0);
    (x0, x1, y0 - ypad, y1 + ypad)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">"
    );
    let _ = writeln!(
        out,
        "  <rect x=\"0\" y=\"0\" width=\"{W}\" height=\"{H}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        esc(title)
    );
    // axes
    let _ = writeln!(
        out,
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"#444\" stroke-width=\"1\"/>",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    let _ = writeln!(
        out,
        "  <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"#444\" stroke-width=\"1\"/>",
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    // axis ticks: min and max on each axis
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"{anchor}\">{:.3}</text>",
            sx(x),
            H - MARGIN + 16.0,
            x
        );
    }
    for y in [y0, y1] {
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>",
            MARGIN - 6.0,
            sy(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        W / 2.0,
        H - 10.0,
        esc(x_label)
    );
    let _ = writeln!(
        out,
        "  <text x=\"14\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        H / 2.0,
        H / 2.0,
        esc(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        if s.scatter {
            for &(x, y) in &s.points {
                let _ = writeln!(
                    out,
                    "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"1.6\" fill=\"{}\"/>",
                    sx(finite_or(x, x0)),
                    sy(finite_or(y, y0)),
                    s.color
                );
            }
        } else {
            let mut d = String::new();
            for (k, &(x, y)) in s.points.iter().enumerate() {
                let _ = write!(
                    d,
                    "{}{:.2},{:.2} ",
                    if k == 0 { "" } else { "" },
                    sx(finite_or(x, x0)),
                    sy(finite_or(y, y0))
                );
            }
            let _ = writeln!(
                out,
                "  <polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.4\"/>",
                d.trim_end(),
                s.color
            );
        }
        // legend
        let _ = writeln!(
            out,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{}\">{}</text>",
            W - MARGIN - 120.0,
            MARGIN + 14.0 * (i as f64 + 1.0),
            s.color,
            esc(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn write_svg(path: &PathBuf, content: &str) -> Result<(), PlotError> {
    std::fs::write(path, content)?;
    Ok(())
}

/// Emits the five standard plots with the given path prefix, returning the
/// files written:
/// `<prefix>_vx.svg`, `_wz.svg`, `_qz.svg`, `_ecp.svg`, `_ecp_topview.svg`.
pub fn emit_plots(
    records: &[TrajectoryRecord],
    path_prefix: &Path,
) -> Result<Vec<PathBuf>, PlotError> {
    if records.is_empty() {
        return Err(PlotError::Empty);
    }
    let stem = path_prefix.to_string_lossy().to_string();
    let t: Vec<f64> = records.iter().map(|r| r.time).collect();
    let line = |label: &str, color: &'static str, ys: Vec<f64>| Series {
        label: label.to_string(),
        color,
        points: t.iter().copied().zip(ys).collect(),
        scatter: false,
    };
    let mut written = Vec::new();

    let vx = records.iter().map(|r| r.state.linear_velocity.x).collect();
    let p = PathBuf::from(format!("{stem}_vx.svg"));
    write_svg(&p, &render("linear velocity x", "t [s]", "v_x [m/s]", &[line("v_x", COLORS[0], vx)]))?;
    written.push(p);

    let wz = records.iter().map(|r| r.state.angular_velocity.z).collect();
    let p = PathBuf::from(format!("{stem}_wz.svg"));
    write_svg(&p, &render("angular velocity z", "t [s]", "w_z [rad/s]", &[line("w_z", COLORS[0], wz)]))?;
    written.push(p);

    let qz = records.iter().map(|r| r.state.position.z).collect();
    let p = PathBuf::from(format!("{stem}_qz.svg"));
    write_svg(&p, &render("center of mass height", "t [s]", "q_z [m]", &[line("q_z", COLORS[0], qz)]))?;
    written.push(p);

    let ax = records.iter().map(|r| r.contact.unknowns.ecp_body.x).collect();
    let ay = records.iter().map(|r| r.contact.unknowns.ecp_body.y).collect();
    let az = records.iter().map(|r| r.contact.unknowns.ecp_body.z).collect();
    let p = PathBuf::from(format!("{stem}_ecp.svg"));
    write_svg(
        &p,
        &render(
            "equivalent contact point coordinates",
            "t [s]",
            "a1 [m]",
            &[
                line("a1_x", COLORS[0], ax),
                line("a1_y", COLORS[1], ay),
                line("a1_z", COLORS[2], az),
            ],
        ),
    )?;
    written.push(p);

    let ecp_xy = Series {
        label: "ECP".into(),
        color: COLORS[1],
        points: records
            .iter()
            .map(|r| (r.contact.unknowns.ecp_body.x, r.contact.unknowns.ecp_body.y))
            .collect(),
        scatter: true,
    };
    let cm_xy = Series {
        label: "CM projection".into(),
        color: COLORS[0],
        points: records
            .iter()
            .map(|r| (r.state.position.x, r.state.position.y))
            .collect(),
        scatter: true,
    };
    let p = PathBuf::from(format!("{stem}_ecp_topview.svg"));
    write_svg(
        &p,
        &render("ECP vs CM projection (top view)", "x [m]", "y [m]", &[ecp_xy, cm_xy]),
    )?;
    written.push(p);

    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_produces_svg_root() {
        let s = Series {
            label: "x".into(),
            color: COLORS[0],
            points: vec![(0.0, 1.0), (1.0, 2.0)],
            scatter: false,
        };
        let svg = render("test", "t", "y", &[s]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
    }

    #[test]
    fn degenerate_ranges_do_not_divide_by_zero() {
        let s = Series {
            label: "flat".into(),
            color: COLORS[0],
            points: vec![(0.0, 5.0), (1.0, 5.0)],
            scatter: false,
        };
        let svg = render("flat", "t", "y", &[s]);
        assert!(!svg.contains("NaN"));
    }
}
