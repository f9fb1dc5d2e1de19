//! Development probe: runs a scenario and prints per-phase summaries.

use ecp_sim::scenarios;
use ecp_sim::sim;

fn main() {
    env_logger::init();
    let name = std::env::args().nth(1).unwrap_or_else(|| "desk_push".into());
    let s = scenarios::by_name(&name).expect("scenario");
    let t0 = std::time::Instant::now();
    match sim::run(&s, &s.solver) {
        Ok(records) => {
            let wall = t0.elapsed();
            let retries = records.iter().filter(|r| r.diagnostics.retried).count();
            let max_iters = records
                .iter()
                .map(|r| r.solver.total_iterations())
                .max()
                .unwrap_or(0);
            let min_gap = records
                .iter()
                .map(|r| r.diagnostics.gap)
                .fold(f64::INFINITY, f64::min);
            let min_vg = records
                .iter()
                .map(|r| r.diagnostics.min_extreme_gap)
                .fold(f64::INFINITY, f64::min);
            println!(
                "{name}: {} steps in {:.2?} ({:.2} ms/step), {retries} retries, max iters {max_iters}",
                records.len(),
                wall,
                wall.as_secs_f64() * 1e3 / records.len() as f64
            );
            println!("min psi = {min_gap:.3e}, min extreme gap = {min_vg:.3e}");
            // contact-mode summary: ECP jumps, near-plane vertex counts
            let body = s.body_geometry();
            let support = s.support_geometry();
            let mut jumps = 0;
            let mut two_point_steps = 0;
            let mut prev_a1: Option<nalgebra::Vector3<f64>> = None;
            let mut max_tilt = 0.0_f64;
            for r in &records {
                let a1 = r.contact.unknowns.ecp_body;
                if let Some(p) = prev_a1 {
                    let d = ((a1.x - p.x).powi(2) + (a1.y - p.y).powi(2)).sqrt();
                    if d > 0.01 && r.contact.normal_impulse > 0.0 {
                        jumps += 1;
                    }
                }
                prev_a1 = Some(a1);
                let posed = body.at_pose(ecp_sim::geometry::Pose::new(
                    r.state.position,
                    r.state.orientation,
                ));
                let near = posed
                    .extreme_points
                    .iter()
                    .filter(|p| {
                        ecp_sim::geometry::gap(&support, &posed.pose.to_world(p)).0.abs() <= 1e-5
                    })
                    .count();
                if near == 2 && r.contact.normal_impulse > 0.0 {
                    two_point_steps += 1;
                }
                let up = r
                    .state
                    .orientation
                    .transform_vector(&nalgebra::Vector3::z());
                max_tilt = max_tilt.max(up.z.clamp(-1.0, 1.0).acos().to_degrees());
            }
            let final_axis_elev = records
                .last()
                .map(|r| {
                    r.state
                        .orientation
                        .transform_vector(&nalgebra::Vector3::x())
                        .z
                })
                .unwrap_or(0.0);
            println!(
                "ecp jumps > 1cm: {jumps}, two-point steps: {two_point_steps}, max body-z tilt: {max_tilt:.1} deg, final axis z-component: {final_axis_elev:.3}"
            );
            let tail_range = {
                let tail = &records[records.len() * 2 / 5..];
                let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, r| {
                    (a.0.min(r.state.position.z), a.1.max(r.state.position.z))
                });
                hi - lo
            };
            println!("q_z range over last 60%: {tail_range:.3e}");
            let n = records.len();
            for i in (0..n).step_by((n / 20).max(1)) {
                let r = &records[i];
                let a1 = r.contact.unknowns.ecp_body;
                println!(
                    "t={:6.2} q=({:7.3},{:7.3},{:7.4}) v=({:6.3},{:6.3},{:6.3}) w=({:6.3},{:6.3},{:6.3}) pn={:8.5} a1=({:7.3},{:7.3},{:9.2e}) k={} it={}",
                    r.time,
                    r.state.position.x, r.state.position.y, r.state.position.z,
                    r.state.linear_velocity.x, r.state.linear_velocity.y, r.state.linear_velocity.z,
                    r.state.angular_velocity.x, r.state.angular_velocity.y, r.state.angular_velocity.z,
                    r.contact.normal_impulse,
                    a1.x, a1.y, a1.z,
                    r.diagnostics.active_index,
                    r.solver.total_iterations(),
                );
            }
        }
        Err(e) => {
            println!("FAILED at step {} (t={:.3}): {}", e.step, e.time, e.source);
            println!("partial records: {}", e.partial.len());
            for r in e.partial.iter().rev().take(8).collect::<Vec<_>>().iter().rev() {
                println!(
                    "    dip={:.3e} psi={:.3e} onhull={:?}",
                    r.diagnostics.min_extreme_gap, r.diagnostics.gap, r.diagnostics.ecp_on_hull
                );
                let a1 = r.contact.unknowns.ecp_body;
                println!(
                    "  step {:3} t={:5.2}: q_z={:.5} v=({:.4},{:.4},{:.4}) w=({:.3},{:.3},{:.3}) pn={:.4} sigma={:.3e} a1=({:.4},{:.4},{:.2e}) k={} lf={:?}",
                    r.step,
                    r.time,
                    r.state.position.z,
                    r.state.linear_velocity.x,
                    r.state.linear_velocity.y,
                    r.state.linear_velocity.z,
                    r.state.angular_velocity.x,
                    r.state.angular_velocity.y,
                    r.state.angular_velocity.z,
                    r.contact.normal_impulse,
                    r.contact.slip_rate,
                    a1.x,
                    a1.y,
                    a1.z,
                    r.diagnostics.active_index,
                    r.contact
                        .unknowns
                        .body_multipliers
                        .iter()
                        .map(|v| format!("{v:.2e}"))
                        .collect::<Vec<_>>()
                );
            }
        }
    }
}
