//! Mixed nonlinear complementarity solver.
//!
//! Finds `(z_u, z_v)` with `g(z_u, z_v) = 0` and `0 <= z_v \perp f(z_u, z_v)
//! >= 0` by reformulating each complementarity pair through the smoothed
//! Fischer-Burmeister function and driving the stacked residual to zero with
//! a damped Newton method. The smoothing parameter follows a decreasing
//! schedule; each stage runs Newton with Armijo backtracking on the merit
//! `0.5 |Phi|^2` and falls back to Levenberg-damped systems when the Jacobian
//! is singular (degenerate complementarity pairs make that a routine event,
//! not an exception).
//!
//! Jacobians come from caller-registered analytic blocks where available and
//! forward finite differences elsewhere; hybrid mode cross-checks the two on
//! the first iteration of a run.

use nalgebra::{DMatrix, DVector};
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite residual entry {index} at the evaluation point")]
    NonFiniteResidual { index: usize },
    #[error("non-finite residual while finite-difference probing column {column}")]
    FdProbe { column: usize },
    #[error("initial iterate has wrong dimension: got {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Smoothed Fischer-Burmeister function
/// `phi_eps(a, b) = a + b - sqrt(a^2 + b^2 + eps^2)`.
///
/// At `eps = 0`, `phi(a, b) = 0` iff `a >= 0`, `b >= 0`, `a b = 0`.
pub fn fb(a: f64, b: f64, eps: f64) -> f64 {
    a + b - (a * a + b * b + eps * eps).sqrt()
}

/// Partial derivatives of [`fb`] with respect to `a` and `b`.
pub fn fb_partials(a: f64, b: f64, eps: f64) -> (f64, f64) {
    let s = (a * a + b * b + eps * eps).sqrt();
    if s == 0.0 {
        // only reachable at eps = 0 and the origin; any element of the
        // generalized gradient works, pick the symmetric one
        return (1.0, 1.0);
    }
    (1.0 - a / s, 1.0 - b / s)
}

/// How Jacobians are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Registered analytic blocks, finite differences for unregistered
    /// entries.
    Analytic,
    /// Forward finite differences for everything.
    FiniteDifference,
    /// Analytic, cross-checked against finite differences on the first
    /// iteration of each solve; on mismatch the solve downgrades to finite
    /// differences and logs a warning.
    #[default]
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverParams {
    pub tol_residual: f64,
    pub max_newton_iters: usize,
    pub smoothing_schedule: Vec<f64>,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub min_step: f64,
    pub jacobian_mode: JacobianMode,
    pub fd_step: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            tol_residual: 1e-10,
            max_newton_iters: 200,
            smoothing_schedule: vec![1e-3, 1e-6, 1e-9, 1e-12],
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            min_step: 1e-12,
            jacobian_mode: JacobianMode::Hybrid,
            fd_step: 1e-7,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol_residual > 0.0) {
            return Err("tol_residual must be positive".into());
        }
        if self.max_newton_iters == 0 {
            return Err("max_newton_iters must be positive".into());
        }
        if self.smoothing_schedule.is_empty() {
            return Err("smoothing_schedule must be non-empty".into());
        }
        if !self
            .smoothing_schedule
            .windows(2)
            .all(|w| w[0] > w[1] && w[1] > 0.0)
        {
            return Err("smoothing_schedule must be strictly decreasing and positive".into());
        }
        for (v, name) in [
            (self.armijo_c, "armijo_c"),
            (self.armijo_shrink, "armijo_shrink"),
            (self.min_step, "min_step"),
            (self.fd_step, "fd_step"),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Analytic Jacobian of the *raw* residual stack `[g; f]` with respect to
/// the full unknown vector `z = [z_u; z_v]`. Entries listed in `fd_entries`
/// are not covered analytically and are filled from finite differences.
pub struct AnalyticBlocks {
    pub jacobian: DMatrix<f64>,
    pub fd_entries: Vec<(usize, usize)>,
}

type ResidualFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type AnalyticFn = dyn Fn(&DVector<f64>) -> AnalyticBlocks + Send + Sync;

/// A mixed complementarity problem: `n_u` equality rows over `g` and `n_v`
/// complementarity pairs between `z_v` and `f`.
///
/// `pair_primal` optionally replaces the first argument of each pair with a
/// linear combination `P z_v` (defaults to the identity, the plain pairing
/// `0 <= z_v perp f >= 0`). A caller can couple variables into one pair —
/// e.g. certify a constraint's activity whenever an impulse is positive —
/// without growing the system.
pub struct MixedProblem {
    pub n_u: usize,
    pub n_v: usize,
    pub equality: Box<ResidualFn>,
    pub complementarity: Box<ResidualFn>,
    pub analytic_jacobian: Option<Box<AnalyticFn>>,
    pub pair_primal: Option<DMatrix<f64>>,
    /// `(pair, zv_index)` entries forcing pair `pair` onto its `f = 0`
    /// branch during the active-set polish whenever `z_v[zv_index]` is
    /// positive.
    pub polish_couplings: Vec<(usize, usize)>,
}

impl MixedProblem {
    pub fn dim(&self) -> usize {
        self.n_u + self.n_v
    }

    pub fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_column_slice(&z.as_slice()[..self.n_u]),
            DVector::from_column_slice(&z.as_slice()[self.n_u..]),
        )
    }

    /// Raw residual stack `[g; f]` at `z`.
    pub fn raw_residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let (zu, zv) = self.split(z);
        let g = (self.equality)(&zu, &zv);
        let f = (self.complementarity)(&zu, &zv);
        let mut out = DVector::zeros(self.n_u + self.n_v);
        out.rows_mut(0, self.n_u).copy_from(&g);
        out.rows_mut(self.n_u, self.n_v).copy_from(&f);
        out
    }

    /// First argument of pair `i`: `z_v[i]`, or `(P z_v)[i]` when a pair
    /// primal matrix is registered.
    pub fn pair_a(&self, z: &DVector<f64>, i: usize) -> f64 {
        match &self.pair_primal {
            None => z[self.n_u + i],
            Some(p) => (0..self.n_v).map(|j| p[(i, j)] * z[self.n_u + j]).sum(),
        }
    }

    /// Smoothed residual stack `[g; phi_eps(z_v, f)]` at `z`.
    pub fn smoothed_residual(&self, z: &DVector<f64>, eps: f64) -> DVector<f64> {
        let raw = self.raw_residual(z);
        self.smooth_from_raw(z, &raw, eps)
    }

    /// Applies the Fischer-Burmeister smoothing to an already-computed raw
    /// residual stack.
    pub fn smooth_from_raw(&self, z: &DVector<f64>, raw: &DVector<f64>, eps: f64) -> DVector<f64> {
        let mut out = raw.clone();
        for i in 0..self.n_v {
            let a = self.pair_a(z, i);
            let b = out[self.n_u + i];
            out[self.n_u + i] = fb(a, b, eps);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverReport {
    pub converged: bool,
    /// Newton iterations spent in each smoothing stage.
    pub stage_iterations: Vec<usize>,
    /// Merit value at each accepted iterate, per stage.
    pub stage_merits: Vec<Vec<f64>>,
    /// Infinity norm of the final smoothed residual.
    pub final_residual: f64,
    /// Infinity norm of the equality block at the final iterate.
    pub equality_residual: f64,
    /// `max_i |z_v_i * f_i|` at the final iterate.
    pub complementarity_violation: f64,
    pub min_zv: f64,
    pub min_f: f64,
    pub backtracks: usize,
    pub levenberg_solves: usize,
    /// 1 when the accepted iterate came from the active-set polish.
    pub polish_iterations: usize,
    pub wall_time: Duration,
    /// Why the solve stopped short, when it did.
    pub failure: Option<String>,
}

impl SolverReport {
    pub fn total_iterations(&self) -> usize {
        self.stage_iterations.iter().sum()
    }
}

fn finite(v: &DVector<f64>) -> Option<usize> {
    v.iter().position(|x| !x.is_finite())
}

/// Forward-difference Jacobian of the raw residual stack, sequential.
pub fn fd_raw_jacobian_seq(
    problem: &MixedProblem,
    z: &DVector<f64>,
    base: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let n = problem.dim();
    let mut j = DMatrix::zeros(n, n);
    for col in 0..n {
        let c = fd_column(problem, z, base, h, col)?;
        j.set_column(col, &c);
    }
    Ok(j)
}

fn fd_column(
    problem: &MixedProblem,
    z: &DVector<f64>,
    base: &DVector<f64>,
    h: f64,
    col: usize,
) -> Result<DVector<f64>, SolverError> {
    let mut zp = z.clone();
    zp[col] += h;
    let rp = problem.raw_residual(&zp);
    if finite(&rp).is_some() {
        return Err(SolverError::FdProbe { column: col });
    }
    Ok((rp - base) / h)
}

/// Forward-difference Jacobian with columns evaluated in parallel.
#[cfg(feature = "parallel")]
pub fn fd_raw_jacobian_par(
    problem: &MixedProblem,
    z: &DVector<f64>,
    base: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let n = problem.dim();
    let cols: Vec<Result<DVector<f64>, SolverError>> = (0..n)
        .into_par_iter()
        .map(|col| fd_column(problem, z, base, h, col))
        .collect();
    let mut j = DMatrix::zeros(n, n);
    for (col, c) in cols.into_iter().enumerate() {
        j.set_column(col, &c?);
    }
    Ok(j)
}

fn fd_raw_jacobian(
    problem: &MixedProblem,
    z: &DVector<f64>,
    base: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>, SolverError> {
    #[cfg(feature = "parallel")]
    {
        fd_raw_jacobian_par(problem, z, base, h)
    }
    #[cfg(not(feature = "parallel"))]
    {
        fd_raw_jacobian_seq(problem, z, base, h)
    }
}

/// Raw-residual Jacobian per the requested mode: registered analytic blocks
/// with finite-difference fill for unregistered entries, or all finite
/// differences.
pub fn raw_jacobian(
    problem: &MixedProblem,
    z: &DVector<f64>,
    params: &SolverParams,
) -> Result<DMatrix<f64>, SolverError> {
    let base = problem.raw_residual(z);
    if let Some(i) = finite(&base) {
        return Err(SolverError::NonFiniteResidual { index: i });
    }
    let analytic = match (&problem.analytic_jacobian, params.jacobian_mode) {
        (Some(f), JacobianMode::Analytic | JacobianMode::Hybrid) => Some(f(z)),
        _ => None,
    };
    let Some(blocks) = analytic else {
        return fd_raw_jacobian(problem, z, &base, params.fd_step);
    };
    let mut j = blocks.jacobian;
    // finite-difference fill for unregistered entries, one probe per column
    let mut cols: Vec<usize> = blocks.fd_entries.iter().map(|&(_, c)| c).collect();
    cols.sort_unstable();
    cols.dedup();
    let mut fd_cols: std::collections::HashMap<usize, DVector<f64>> = Default::default();
    for col in cols {
        fd_cols.insert(col, fd_column(problem, z, &base, params.fd_step, col)?);
    }
    for &(r, c) in &blocks.fd_entries {
        j[(r, c)] = fd_cols[&c][r];
    }
    Ok(j)
}

/// Matrix-relative deviation between the registered analytic entries and a
/// full finite-difference Jacobian, `max |A - FD| / max(1, |A|_max)`.
pub fn analytic_fd_deviation(
    problem: &MixedProblem,
    z: &DVector<f64>,
    params: &SolverParams,
) -> Result<f64, SolverError> {
    let Some(af) = &problem.analytic_jacobian else {
        return Ok(0.0);
    };
    let base = problem.raw_residual(z);
    if let Some(i) = finite(&base) {
        return Err(SolverError::NonFiniteResidual { index: i });
    }
    let blocks = af(z);
    let full_fd = fd_raw_jacobian(problem, z, &base, params.fd_step)?;
    let skip: std::collections::HashSet<(usize, usize)> =
        blocks.fd_entries.iter().copied().collect();
    let scale = blocks.jacobian.amax().max(1.0);
    let mut worst = 0.0_f64;
    for r in 0..blocks.jacobian.nrows() {
        for c in 0..blocks.jacobian.ncols() {
            if skip.contains(&(r, c)) {
                continue;
            }
            worst = worst.max((blocks.jacobian[(r, c)] - full_fd[(r, c)]).abs());
        }
    }
    Ok(worst / scale)
}

/// Jacobian of the smoothed stack `[g; phi_eps(z_v, f)]` at `z`.
pub fn jacobian(
    problem: &MixedProblem,
    z: &DVector<f64>,
    eps: f64,
    params: &SolverParams,
) -> Result<DMatrix<f64>, SolverError> {
    let raw = raw_jacobian(problem, z, params)?;
    let base = problem.raw_residual(z);
    Ok(chain_smoothing(problem, z, &base, &raw, eps))
}

fn chain_smoothing(
    problem: &MixedProblem,
    z: &DVector<f64>,
    raw_residual: &DVector<f64>,
    raw_jacobian: &DMatrix<f64>,
    eps: f64,
) -> DMatrix<f64> {
    let (n_u, n_v) = (problem.n_u, problem.n_v);
    let n = n_u + n_v;
    let mut j = DMatrix::zeros(n, n);
    j.view_mut((0, 0), (n_u, n))
        .copy_from(&raw_jacobian.view((0, 0), (n_u, n)));
    for i in 0..n_v {
        let a = problem.pair_a(z, i);
        let b = raw_residual[n_u + i];
        let (da, db) = fb_partials(a, b, eps);
        for c in 0..n {
            j[(n_u + i, c)] = db * raw_jacobian[(n_u + i, c)];
        }
        match &problem.pair_primal {
            None => j[(n_u + i, n_u + i)] += da,
            Some(p) => {
                for jj in 0..n_v {
                    if p[(i, jj)] != 0.0 {
                        j[(n_u + i, n_u + jj)] += da * p[(i, jj)];
                    }
                }
            }
        }
    }
    j
}

const LEVENBERG_MAX: f64 = 1e-2;

/// Damped-Newton solve over the smoothing schedule.
///
/// Non-convergence is reported, not an error; errors are reserved for
/// non-finite residual evaluations.
pub fn solve(
    problem: &MixedProblem,
    z0: &DVector<f64>,
    params: &SolverParams,
) -> Result<(DVector<f64>, SolverReport), SolverError> {
    let start = Instant::now();
    if z0.len() != problem.dim() {
        return Err(SolverError::DimensionMismatch {
            got: z0.len(),
            expected: problem.dim(),
        });
    }
    let mut z = z0.clone();
    let mut report = SolverReport {
        converged: false,
        stage_iterations: Vec::new(),
        stage_merits: Vec::new(),
        final_residual: f64::INFINITY,
        equality_residual: f64::INFINITY,
        complementarity_violation: f64::INFINITY,
        min_zv: f64::NEG_INFINITY,
        min_f: f64::NEG_INFINITY,
        backtracks: 0,
        levenberg_solves: 0,
        polish_iterations: 0,
        wall_time: Duration::ZERO,
        failure: None,
    };
    let mut local = params.clone();
    if params.jacobian_mode == JacobianMode::Hybrid && problem.analytic_jacobian.is_some() {
        let dev = analytic_fd_deviation(problem, &z, params)?;
        if dev > 1e-4 {
            log::warn!(
                "analytic Jacobian deviates from finite differences by {dev:.2e} (matrix-relative); solving with finite differences"
            );
            local.jacobian_mode = JacobianMode::FiniteDifference;
        } else {
            log::debug!("hybrid self-check: analytic/finite-difference deviation {dev:.2e}");
        }
    }
    for &eps in &params.smoothing_schedule {
        let target = params.tol_residual.max(10.0 * eps);
        let mut iters = 0usize;
        let mut merits = Vec::new();
        loop {
            let raw_base = problem.raw_residual(&z);
            let phi = problem.smooth_from_raw(&z, &raw_base, eps);
            if let Some(i) = finite(&phi) {
                report.failure = Some(format!("non-finite residual entry {i}"));
                report.stage_iterations.push(iters);
                report.stage_merits.push(merits);
                finalize(problem, &z, eps, &mut report, start);
                return Err(SolverError::NonFiniteResidual { index: i });
            }
            let merit = 0.5 * phi.norm_squared();
            merits.push(merit);
            if phi.amax() <= target {
                break;
            }
            if iters >= params.max_newton_iters {
                report.failure = Some(format!(
                    "iteration budget exhausted at smoothing {eps:.0e} (residual {:.3e} > {target:.3e})",
                    phi.amax()
                ));
                report.stage_iterations.push(iters);
                report.stage_merits.push(merits);
                return accept(problem, z, eps, params, report, start);
            }
            // stuck at a stationary point of the merit that is not a root:
            // bail out instead of grinding through the budget
            if merits.len() > 25 {
                let old = merits[merits.len() - 26];
                if merit > 0.999 * old {
                    report.failure = Some(format!(
                        "stalled at smoothing {eps:.0e} (merit {merit:.3e} after {iters} iterations)"
                    ));
                    report.stage_iterations.push(iters);
                    report.stage_merits.push(merits);
                    return accept(problem, z, eps, params, report, start);
                }
            }
            iters += 1;
            let raw = raw_jacobian(problem, &z, &local)?;
            let j = chain_smoothing(problem, &z, &raw_base, &raw, eps);
            let backtracks_before = report.backtracks;
            let levenberg_before = report.levenberg_solves;
            match descend(problem, &z, &phi, merit, &j, eps, params, &mut report) {
                Some(z_new) => {
                    log::trace!(
                        "eps={eps:.0e} iter={iters} |phi|={:.3e} merit={merit:.3e} backtracks+={} lm+={} zv_tail=({:.4e},{:.4e})",
                        phi.amax(),
                        report.backtracks - backtracks_before,
                        report.levenberg_solves - levenberg_before,
                        z[problem.dim() - 2],
                        z[problem.dim() - 1],
                    );
                    z = z_new
                }
                None => {
                    report.failure = Some(format!(
                        "no descent direction at smoothing {eps:.0e} (Levenberg ladder exhausted)"
                    ));
                    report.stage_iterations.push(iters);
                    report.stage_merits.push(merits);
                    return accept(problem, z, eps, params, report, start);
                }
            }
        }
        report.stage_iterations.push(iters);
        report.stage_merits.push(merits);
    }
    let last_eps = *params.smoothing_schedule.last().unwrap();
    accept(problem, z, last_eps, params, report, start)
}

/// Final acceptance: polish the iterate on its active set, then run the
/// quality gate on whichever of the polished/unpolished iterates passes.
fn accept(
    problem: &MixedProblem,
    z: DVector<f64>,
    eps: f64,
    params: &SolverParams,
    mut report: SolverReport,
    start: Instant,
) -> Result<(DVector<f64>, SolverReport), SolverError> {
    let act_tol = params.tol_residual.sqrt();
    let coupling_active = |zc: &DVector<f64>| -> bool {
        // a coupled pair must sit on its active branch (f = 0) whenever the
        // coupled variable is positive; dip-family roots violate exactly this
        let (zu, zv) = problem.split(zc);
        let f = (problem.complementarity)(&zu, &zv);
        problem
            .polish_couplings
            .iter()
            .all(|&(pair, zv_i)| zv[zv_i] <= act_tol || f[pair].abs() <= act_tol)
    };
    let quality = |rep: &SolverReport, zc: &DVector<f64>| -> bool {
        rep.equality_residual <= params.tol_residual
            && rep.min_zv >= -params.tol_residual
            && rep.min_f >= -params.tol_residual
            && rep.complementarity_violation <= params.tol_residual.sqrt()
            && coupling_active(zc)
    };
    if let Some(zp) = polish_active_set(problem, &z, params, &mut report) {
        let mut rep_p = report.clone();
        finalize(problem, &zp, eps, &mut rep_p, start);
        if quality(&rep_p, &zp) {
            rep_p.converged = true;
            rep_p.failure = None;
            return Ok((zp, rep_p));
        }
        log::debug!(
            "polished iterate failed quality gate: |g|={:.2e} min_zv={:.2e} min_f={:.2e} comp={:.2e}",
            rep_p.equality_residual,
            rep_p.min_zv,
            rep_p.min_f,
            rep_p.complementarity_violation
        );
    }
    let had_failure = report.failure.is_some();
    finalize(problem, &z, eps, &mut report, start);
    report.converged = !had_failure && quality(&report, &z);
    if !report.converged && report.failure.is_none() {
        report.failure = Some(format!(
            "final quality checks failed: |g|={:.2e} min_zv={:.2e} min_f={:.2e} comp={:.2e}",
            report.equality_residual, report.min_zv, report.min_f, report.complementarity_violation
        ));
    }
    Ok((z, report))
}

/// Active-set polish: freeze each pair onto the branch suggested by the
/// current iterate (`z_v`-side zero or `f`-side zero), then Newton-solve the
/// resulting smooth square system. Smoothing paths end O(sqrt(eps)) away
/// from degenerate roots; the polish lands on them exactly or not at all.
fn polish_active_set(
    problem: &MixedProblem,
    z0: &DVector<f64>,
    params: &SolverParams,
    report: &mut SolverReport,
) -> Option<DVector<f64>> {
    let (n_u, n_v) = (problem.n_u, problem.n_v);
    let raw0 = problem.raw_residual(z0);
    if finite(&raw0).is_some() {
        return None;
    }
    let mut b_branch = vec![false; n_v];
    let degenerate_tol = params.tol_residual.sqrt();
    for i in 0..n_v {
        let a = problem.pair_a(z0, i);
        let b = raw0[n_u + i];
        // doubly-degenerate pairs take the primal branch so the multiplier
        // is pinned to zero exactly instead of floating at noise level
        let degenerate = a.abs() < degenerate_tol && b.abs() < degenerate_tol;
        b_branch[i] = b < a && !degenerate;
    }
    for &(pair, zv) in &problem.polish_couplings {
        if z0[n_u + zv] > degenerate_tol {
            b_branch[pair] = true;
        }
    }
    let z = newton_on_modes(problem, z0, &b_branch, params, 20)?;
    report.polish_iterations += 1;
    Some(z)
}

/// Newton on the smooth square system obtained by pinning each pair to a
/// fixed branch: `f_i = 0` where `b_branch[i]`, else the pair primal `= 0`.
pub fn newton_on_modes(
    problem: &MixedProblem,
    z0: &DVector<f64>,
    b_branch: &[bool],
    params: &SolverParams,
    max_iters: usize,
) -> Option<DVector<f64>> {
    let (n_u, n_v) = (problem.n_u, problem.n_v);
    let n = n_u + n_v;
    let mode_residual = |z: &DVector<f64>| -> DVector<f64> {
        let raw = problem.raw_residual(z);
        let mut out = raw.clone();
        for i in 0..n_v {
            out[n_u + i] = if b_branch[i] {
                raw[n_u + i]
            } else {
                problem.pair_a(z, i)
            };
        }
        out
    };
    // orthant guard: primal values of active-branch pairs must not dive
    // negative, which excludes mirror roots (e.g. anti-dissipative friction
    // with the slip multiplier negated)
    let guard_floor: Vec<f64> = (0..n_v)
        .map(|i| -0.1 * (1.0 + problem.pair_a(z0, i).abs()))
        .collect();
    let guarded = |z: &DVector<f64>| -> bool {
        (0..n_v).all(|i| !b_branch[i] || problem.pair_a(z, i) >= guard_floor[i])
    };
    let mut z = z0.clone();
    let mut converged = false;
    for it in 0..max_iters {
        let res = mode_residual(&z);
        if finite(&res).is_some() {
            return None;
        }
        log::trace!("mode Newton it={it} |res|={:.3e}", res.amax());
        if res.amax() <= params.tol_residual {
            converged = true;
            break;
        }
        let raw_j = raw_jacobian(problem, &z, params).ok()?;
        let mut j = raw_j.clone();
        for i in 0..n_v {
            if !b_branch[i] {
                for c in 0..n {
                    j[(n_u + i, c)] = 0.0;
                }
                match &problem.pair_primal {
                    None => j[(n_u + i, n_u + i)] = 1.0,
                    Some(p) => {
                        for jj in 0..n_v {
                            j[(n_u + i, n_u + jj)] = p[(i, jj)];
                        }
                    }
                }
            }
        }
        let neg = -&res;
        let mut delta = None;
        let mut lambda = 0.0_f64;
        loop {
            let sys = if lambda == 0.0 {
                j.clone()
            } else {
                let mut s = j.clone();
                for i in 0..n {
                    s[(i, i)] += lambda;
                }
                s
            };
            if let Some(d) = sys.lu().solve(&neg) {
                if d.iter().all(|x| x.is_finite()) && d.norm() <= 1e10 {
                    delta = Some(d);
                    break;
                }
            }
            lambda = if lambda == 0.0 { 1e-10 } else { lambda * 10.0 };
            if lambda > LEVENBERG_MAX {
                break;
            }
        }
        let Some(delta) = delta else {
            log::debug!("mode Newton: no usable direction");
            return None;
        };
        // simple backtracking on the mode residual
        let merit = 0.5 * res.norm_squared();
        let mut alpha = 1.0_f64;
        let mut stepped = false;
        while alpha >= 1e-6 {
            let z_try = &z + &delta * alpha;
            let r_try = mode_residual(&z_try);
            if finite(&r_try).is_none()
                && guarded(&z_try)
                && 0.5 * r_try.norm_squared() < merit
            {
                z = z_try;
                stepped = true;
                break;
            }
            alpha *= 0.5;
        }
        if !stepped {
            log::debug!("mode Newton: line search failed");
            return None;
        }
    }
    if !converged {
        log::debug!("mode Newton did not reach tolerance within its budget");
        return None;
    }
    Some(z)
}

/// Solves with a caller-supplied branch assignment and certifies the result
/// with the standard quality gate. Used as a last-resort re-solve when the
/// smoothed path keeps escaping into a spurious basin: the caller fixes the
/// contact mode from geometry and the Newton iteration cannot wander.
pub fn forced_mode_solve(
    problem: &MixedProblem,
    z0: &DVector<f64>,
    b_branch: &[bool],
    params: &SolverParams,
) -> Option<(DVector<f64>, SolverReport)> {
    let start = Instant::now();
    let z = newton_on_modes(problem, z0, b_branch, params, 60)?;
    let mut report = SolverReport {
        converged: false,
        stage_iterations: vec![],
        stage_merits: vec![],
        final_residual: f64::INFINITY,
        equality_residual: f64::INFINITY,
        complementarity_violation: f64::INFINITY,
        min_zv: f64::NEG_INFINITY,
        min_f: f64::NEG_INFINITY,
        backtracks: 0,
        levenberg_solves: 0,
        polish_iterations: 1,
        wall_time: Duration::ZERO,
        failure: None,
    };
    let eps = *params.smoothing_schedule.last().unwrap_or(&1e-12);
    finalize(problem, &z, eps, &mut report, start);
    let act_tol = params.tol_residual.sqrt();
    let (zu, zv) = problem.split(&z);
    let f = (problem.complementarity)(&zu, &zv);
    let couplings_ok = problem
        .polish_couplings
        .iter()
        .all(|&(pair, zv_i)| zv[zv_i] <= act_tol || f[pair].abs() <= act_tol);
    report.converged = report.equality_residual <= params.tol_residual
        && report.min_zv >= -params.tol_residual
        && report.min_f >= -params.tol_residual
        && report.complementarity_violation <= act_tol
        && couplings_ok;
    if !report.converged {
        log::debug!(
            "forced-mode solution failed the quality gate: |g|={:.2e} min_zv={:.2e} min_f={:.2e} comp={:.2e} couplings_ok={couplings_ok}",
            report.equality_residual,
            report.min_zv,
            report.min_f,
            report.complementarity_violation
        );
        return None;
    }
    Some((z, report))
}

/// One accepted Newton step: try the plain system first, then the Levenberg
/// ladder, Armijo-backtracking each candidate direction.
#[allow(clippy::too_many_arguments)]
fn descend(
    problem: &MixedProblem,
    z: &DVector<f64>,
    phi: &DVector<f64>,
    merit: f64,
    j: &DMatrix<f64>,
    eps: f64,
    params: &SolverParams,
    report: &mut SolverReport,
) -> Option<DVector<f64>> {
    let neg_phi = -phi;
    let n = j.nrows();
    let mut lambda = 0.0_f64;
    loop {
        let sys = if lambda == 0.0 {
            j.clone()
        } else {
            report.levenberg_solves += 1;
            let mut s = j.clone();
            for i in 0..n {
                s[(i, i)] += lambda;
            }
            s
        };
        if let Some(delta) = sys.lu().solve(&neg_phi) {
            let usable = delta.iter().all(|x| x.is_finite()) && delta.norm() <= 1e12;
            if usable {
                let mut alpha = 1.0_f64;
                while alpha >= params.min_step {
                    let z_try = z + &delta * alpha;
                    let phi_try = problem.smoothed_residual(&z_try, eps);
                    if finite(&phi_try).is_none() {
                        let m_try = 0.5 * phi_try.norm_squared();
                        if m_try <= merit * (1.0 - 2.0 * params.armijo_c * alpha) {
                            return Some(z_try);
                        }
                    }
                    alpha *= params.armijo_shrink;
                    report.backtracks += 1;
                }
            }
        }
        lambda = if lambda == 0.0 { 1e-10 } else { lambda * 10.0 };
        if lambda > LEVENBERG_MAX {
            return None;
        }
    }
}

fn finalize(
    problem: &MixedProblem,
    z: &DVector<f64>,
    eps: f64,
    report: &mut SolverReport,
    start: Instant,
) {
    let (zu, zv) = problem.split(z);
    let g = (problem.equality)(&zu, &zv);
    let f = (problem.complementarity)(&zu, &zv);
    report.final_residual = problem.smoothed_residual(z, eps).amax();
    report.equality_residual = if problem.n_u > 0 { g.amax() } else { 0.0 };
    report.min_zv = zv.iter().copied().fold(f64::INFINITY, f64::min);
    report.min_f = f.iter().copied().fold(f64::INFINITY, f64::min);
    report.complementarity_violation = (0..problem.n_v)
        .map(|i| (problem.pair_a(z, i) * f[i]).abs())
        .fold(0.0, f64::max);
    if problem.n_v == 0 {
        report.min_zv = 0.0;
        report.min_f = 0.0;
        report.complementarity_violation = 0.0;
    }
    report.wall_time = start.elapsed();
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn comp_only(
        n_v: usize,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> MixedProblem {
        MixedProblem {
            n_u: 0,
            n_v,
            equality: Box::new(|_, _| DVector::zeros(0)),
            complementarity: Box::new(move |_, zv| f(zv)),
            analytic_jacobian: None,
            pair_primal: None,
            polish_couplings: vec![],
        }
    }

    #[test]
    fn fb_basic_cases() {
        assert_abs_diff_eq!(fb(0.0, 5.0, 0.0), 0.0);
        assert_abs_diff_eq!(fb(3.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(fb(-1.0, 0.0, 0.0), -2.0);
    }

    #[test]
    fn fb_zero_exactly_on_complementarity_set() {
        for i in -8..=8 {
            for jj in -8..=8 {
                let a = f64::from(i) * 0.25;
                let b = f64::from(jj) * 0.25;
                let complementary = a >= 0.0 && b >= 0.0 && a * b == 0.0;
                let is_zero = fb(a, b, 0.0).abs() <= 1e-12;
                assert_eq!(is_zero, complementary, "a={a} b={b}");
            }
        }
    }

    proptest! {
        #[test]
        fn fb_sign_structure(a in -5.0_f64..5.0, b in -5.0_f64..5.0) {
            let v = fb(a, b, 0.0);
            if a > 1e-9 && b > 1e-9 {
                prop_assert!(v > 0.0);
            }
            if a < -1e-9 || b < -1e-9 {
                prop_assert!(v < 0.0);
            }
        }
    }

    #[test]
    fn fb_partial_closed_form() {
        let (da, db) = fb_partials(1.0, 1.0, 0.0);
        assert_relative_eq!(da, 1.0 - 1.0 / 2.0_f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(db, 1.0 - 1.0 / 2.0_f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn scalar_complementarity_v_minus_one() {
        let p = comp_only(1, |zv| DVector::from_vec(vec![zv[0] - 1.0]));
        let (z, rep) = solve(&p, &DVector::from_vec(vec![0.5]), &SolverParams::default()).unwrap();
        assert!(rep.converged, "{:?}", rep.failure);
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn scalar_complementarity_v_plus_one() {
        let p = comp_only(1, |zv| DVector::from_vec(vec![zv[0] + 1.0]));
        let (z, rep) = solve(&p, &DVector::from_vec(vec![0.5]), &SolverParams::default()).unwrap();
        assert!(rep.converged, "{:?}", rep.failure);
        assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn two_variable_lcp() {
        // w = Mz + q with M = [[2,1],[1,2]], q = (-1,-1); active-set
        // enumeration gives the interior solution z = (1/3, 1/3)
        let p = comp_only(2, |zv| {
            DVector::from_vec(vec![
                2.0 * zv[0] + zv[1] - 1.0,
                zv[0] + 2.0 * zv[1] - 1.0,
            ])
        });
        let (z, rep) = solve(
            &p,
            &DVector::from_vec(vec![0.0, 0.0]),
            &SolverParams::default(),
        )
        .unwrap();
        assert!(rep.converged, "{:?}", rep.failure);
        assert_relative_eq!(z[0], 1.0 / 3.0, epsilon = 1e-9);
        assert_relative_eq!(z[1], 1.0 / 3.0, epsilon = 1e-9);
        assert!(rep.complementarity_violation <= 1e-8);
        assert!(rep.min_zv >= -1e-9);
        assert!(rep.min_f >= -1e-9);
    }

    #[test]
    fn mixed_problem_with_equality_block() {
        // g(u, v) = u - 2 = 0; 0 <= v perp v - u >= 0  ->  u = 2, v = 2...
        // f = v - u: v = 2 makes f = 0, v > 0; also v = 0 needs f = -2 >= 0
        // false, so (2, 2) is the unique solution.
        let p = MixedProblem {
            n_u: 1,
            n_v: 1,
            equality: Box::new(|zu, _| DVector::from_vec(vec![zu[0] - 2.0])),
            complementarity: Box::new(|zu, zv| DVector::from_vec(vec![zv[0] - zu[0]])),
            analytic_jacobian: None,
            pair_primal: None,
            polish_couplings: vec![],
        };
        let (z, rep) = solve(
            &p,
            &DVector::from_vec(vec![0.0, 0.1]),
            &SolverParams::default(),
        )
        .unwrap();
        assert!(rep.converged, "{:?}", rep.failure);
        assert_relative_eq!(z[0], 2.0, epsilon = 1e-9);
        assert_relative_eq!(z[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn solver_is_deterministic() {
        let make = || {
            comp_only(2, |zv| {
                DVector::from_vec(vec![
                    2.0 * zv[0] + zv[1] - 1.0,
                    zv[0] + 2.0 * zv[1] - 1.0,
                ])
            })
        };
        let z0 = DVector::from_vec(vec![0.7, 0.1]);
        let (za, ra) = solve(&make(), &z0, &SolverParams::default()).unwrap();
        let (zb, rb) = solve(&make(), &z0, &SolverParams::default()).unwrap();
        assert_eq!(za.as_slice(), zb.as_slice(), "bitwise-identical solutions");
        assert_eq!(ra.stage_iterations, rb.stage_iterations);
        assert_eq!(ra.backtracks, rb.backtracks);
    }

    #[test]
    fn merit_monotone_within_stages() {
        let p = comp_only(2, |zv| {
            DVector::from_vec(vec![
                2.0 * zv[0] + zv[1] - 1.0,
                zv[0] + 2.0 * zv[1] - 1.0,
            ])
        });
        let (_, rep) = solve(
            &p,
            &DVector::from_vec(vec![3.0, -2.0]),
            &SolverParams::default(),
        )
        .unwrap();
        assert!(rep.converged);
        for merits in &rep.stage_merits {
            for w in merits.windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "merit increased: {w:?}");
            }
        }
    }

    #[test]
    fn linear_equality_jacobian_is_exact_with_analytic_blocks() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, 0.5, 2.0]);
        let a2 = a.clone();
        let p = MixedProblem {
            n_u: 2,
            n_v: 0,
            equality: Box::new(move |zu, _| &a * zu),
            complementarity: Box::new(|_, _| DVector::zeros(0)),
            analytic_jacobian: Some(Box::new(move |_| AnalyticBlocks {
                jacobian: a2.clone(),
                fd_entries: vec![],
            })),
            pair_primal: None,
            polish_couplings: vec![],
        };
        let params = SolverParams {
            jacobian_mode: JacobianMode::Analytic,
            ..Default::default()
        };
        let j = raw_jacobian(&p, &DVector::from_vec(vec![1.0, 2.0]), &params).unwrap();
        assert_eq!(j[(0, 0)], 3.0);
        assert_eq!(j[(0, 1)], -1.0);
        assert_eq!(j[(1, 0)], 0.5);
        assert_eq!(j[(1, 1)], 2.0);
    }

    #[test]
    fn fd_jacobian_approximates_linear_map() {
        let p = MixedProblem {
            n_u: 1,
            n_v: 1,
            equality: Box::new(|zu, zv| DVector::from_vec(vec![2.0 * zu[0] - zv[0]])),
            complementarity: Box::new(|zu, zv| DVector::from_vec(vec![zv[0] + 0.5 * zu[0]])),
            analytic_jacobian: None,
            pair_primal: None,
            polish_couplings: vec![],
        };
        let z = DVector::from_vec(vec![0.3, 0.4]);
        let base = p.raw_residual(&z);
        let j = fd_raw_jacobian_seq(&p, &z, &base, 1e-7).unwrap();
        assert_relative_eq!(j[(0, 0)], 2.0, epsilon = 1e-6);
        assert_relative_eq!(j[(0, 1)], -1.0, epsilon = 1e-6);
        assert_relative_eq!(j[(1, 0)], 0.5, epsilon = 1e-6);
        assert_relative_eq!(j[(1, 1)], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn nan_in_fd_probe_names_the_column() {
        // the base point evaluates fine; the forward probe of column 0
        // pushes the argument negative and produces NaN
        let p = MixedProblem {
            n_u: 0,
            n_v: 2,
            equality: Box::new(|_, _| DVector::zeros(0)),
            complementarity: Box::new(|_, zv| DVector::from_vec(vec![(-zv[0]).sqrt(), zv[1]])),
            analytic_jacobian: None,
            pair_primal: None,
            polish_couplings: vec![],
        };
        let z = DVector::from_vec(vec![0.0, 1.0]);
        let base = p.raw_residual(&z);
        let err = fd_raw_jacobian_seq(&p, &z, &base, 1e-7).unwrap_err();
        assert_eq!(err, SolverError::FdProbe { column: 0 });
    }
}
