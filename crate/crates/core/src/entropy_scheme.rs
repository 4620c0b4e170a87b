//! Implicit Euler scheme in the entropy variable.
//!
//! Each time step `tau` solves
//!
//! ```text
//! (u_k - u_{k-1})/tau = tau (lap w_k - w_k) + div(u_k (1 - rho_k) grad w_k) + u_k (1 - rho_k)
//! (m_k - m_{k-1})/tau = -lambda m_k u_k
//! ```
//!
//! with `w = ln u - ln(1 - u - m)`, equivalently `u = a(w) (1 - m)` where
//! `a(w) = 1/(1 + e^{-w})`. Because `u` is always recovered from `w` through
//! the logistic function and `m` from a contraction on `[0, 1]`, every
//! iterate satisfies `0 < u`, `0 < m`, `u + m < 1` by construction.
//!
//! The nonlinear step is solved by fixed-point iteration of the composed map
//! `(u, m) -> w -> (u, m)`: a linear elliptic problem for `w` with the
//! mobility frozen at the current iterate ([`solve_w_linear`]), followed by
//! the pointwise contraction for `m` ([`solve_m_fixed_point`]) and
//! [`u_from_w`]. The plain composition has a Lipschitz constant of order
//! `1/tau^2` in the long-wavelength modes and does not converge for practical
//! step sizes, so by default the elliptic problem is shifted by the
//! linearisation of `u(w)` around the current iterate
//! ([`solve_w_stabilised`]). The shift vanishes at the fixed point, so the
//! converged step solves the same discrete equations.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{entropy, grad_sq_pointwise, EntropyReport};
use crate::error::{Error, Result};
use crate::explicit::{snapshot_times, Snapshot};
use crate::grid::Grid;
use crate::linalg::{conjugate_gradient, CgOptions, Preconditioner, StencilMatrix};
use crate::model::{sup_diff, FieldPair, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub tau: f64,
    /// Sup-norm tolerance on successive `(u, m)` iterates.
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub inner_m_tol: f64,
    pub inner_m_max_iter: usize,
    pub linear_solver_tol: f64,
    pub linear_max_iter: usize,
    /// Initial damping of the outer iteration, in `(0, 1]`.
    pub damping: f64,
    /// Number of times a failed step may be retried with half the step size.
    pub max_tau_halvings: usize,
    /// Shift the elliptic problem by the linearisation of `u(w)`.
    pub stabilise: bool,
    /// Constant of the discrete entropy inequality used in the residual.
    pub entropy_constant: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            tau: 0.01,
            picard_tol: 1e-10,
            picard_max_iter: 200,
            inner_m_tol: 1e-12,
            inner_m_max_iter: 200,
            linear_solver_tol: 1e-11,
            linear_max_iter: 10_000,
            damping: 1.0,
            max_tau_halvings: 5,
            stabilise: true,
            entropy_constant: 1.0,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 0.5) {
            return Err(Error::Config(format!(
                "entropy.tau must lie in (0, 1/2), got {}",
                self.tau
            )));
        }
        if self.tau * params.lambda >= 1.0 {
            return Err(Error::Config(format!(
                "entropy.tau * model.lambda = {} violates the contraction condition tau * lambda < 1",
                self.tau * params.lambda
            )));
        }
        for (name, v) in [
            ("picard_tol", self.picard_tol),
            ("inner_m_tol", self.inner_m_tol),
            ("linear_solver_tol", self.linear_solver_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("entropy.{name} must be positive, got {v}")));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!(
                "entropy.damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.picard_max_iter == 0 || self.inner_m_max_iter == 0 || self.linear_max_iter == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        Ok(())
    }

    fn cg(&self) -> CgOptions {
        CgOptions {
            rel_tol: self.linear_solver_tol,
            max_iter: self.linear_max_iter,
            preconditioner: Preconditioner::Line,
        }
    }
}

/// State of the scheme at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyState {
    pub fields: FieldPair,
    pub w: Vec<f64>,
    pub time: f64,
    /// Step size that produced this state (the nominal `tau` for the initial state).
    pub tau: f64,
}

impl EntropyState {
    /// Regularised initial state.
    ///
    /// `m` is clamped to `[tau, 1 - tau]`; `u` is kept except where it would
    /// push `u + m` above one. `w` is a seed for the first step only.
    pub fn initial(fields: &FieldPair, tau: f64) -> Result<Self> {
        let m = regularize_initial_m(&fields.m, tau)?;
        let u: Vec<f64> = fields
            .u
            .iter()
            .zip(&m)
            .map(|(&u, &m)| u.max(0.0).min(1.0 - m))
            .collect();
        let delta = tau * tau;
        let w = u
            .iter()
            .zip(&m)
            .map(|(&u, &m)| {
                let ur = u.clamp(delta, 1.0 - m - delta);
                ur.ln() - (1.0 - ur - m).ln()
            })
            .collect();
        Ok(EntropyState {
            fields: FieldPair { u, m },
            w,
            time: 0.0,
            tau,
        })
    }

    /// `(min u, min m, max(u + m))` strictly inside the box.
    pub fn strictly_bounded(&self) -> bool {
        let b = self.fields.bounds();
        b.min_u > 0.0 && b.min_m > 0.0 && b.max_rho < 1.0
    }
}

/// Clamps the initial ECM to `[tau, 1 - tau]`.
pub fn regularize_initial_m(m_in: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::Config(format!(
            "regularisation needs 0 < tau < 1/2, got {tau}"
        )));
    }
    Ok(m_in.iter().map(|&m| m.min(1.0 - tau).max(tau)).collect())
}

/// Logistic function `e^w / (1 + e^w)`, evaluated without overflow.
#[inline]
pub fn logistic(w: f64) -> f64 {
    if w <= 0.0 {
        let e = w.exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + (-w).exp())
    }
}

/// `1 - logistic(w)` without cancellation.
#[inline]
fn logistic_complement(w: f64) -> f64 {
    logistic(-w)
}

#[inline]
pub fn u_from_w_scalar(w: f64, m: f64) -> f64 {
    (1.0 - m) * logistic(w)
}

/// `u = (1 - m) / (1 + e^{-w})` pointwise.
pub fn u_from_w(w: &[f64], m: &[f64]) -> Vec<f64> {
    w.iter().zip(m).map(|(&w, &m)| u_from_w_scalar(w, m)).collect()
}

/// `w = ln u - ln(1 - u - m)` pointwise; requires `u > 0` and `u + m < 1`.
pub fn entropy_variable(u: &[f64], m: &[f64]) -> Result<Vec<f64>> {
    u.iter()
        .zip(m)
        .enumerate()
        .map(|(k, (&u, &m))| {
            let void = 1.0 - u - m;
            if !(u > 0.0) || !(void > 0.0) {
                return Err(Error::Domain {
                    index: k,
                    message: format!(
                        "entropy variable needs 0 < u and u + m < 1, got u = {u}, m = {m}"
                    ),
                });
            }
            Ok(u.ln() - void.ln())
        })
        .collect()
}

/// Assembles the weighted discrete weak form of
/// `-div((tau + M) grad w) + (tau + shift) w = M - (u~ - u_prev)/tau + shift * w_ref`
/// with `M = u~ (1 - u~ - m~)`, mirrored boundaries and trapezoidal test weights.
///
/// The matrix is symmetric with nonnegative couplings; with `tau > 0` it is
/// positive definite.
pub fn assemble_w_system(
    u_tilde: &[f64],
    m_tilde: &[f64],
    u_prev: &[f64],
    tau: f64,
    grid: &Grid,
    shift: Option<(&[f64], &[f64])>,
) -> Result<(StencilMatrix, Vec<f64>)> {
    grid.check_len(u_tilde)?;
    grid.check_len(m_tilde)?;
    grid.check_len(u_prev)?;
    if let Some((s, w_ref)) = shift {
        grid.check_len(s)?;
        grid.check_len(w_ref)?;
    }
    let n = grid.len();
    let dx = grid.spacing();
    let inv = 1.0 / (2.0 * dx * dx);
    let mobility: Vec<f64> = u_tilde
        .iter()
        .zip(m_tilde)
        .map(|(&u, &m)| (u * (1.0 - u - m)).max(0.0))
        .collect();

    let mut a = StencilMatrix::zeros(grid);
    let (nx, ny) = grid.shape();
    for axis in 0..grid.dim() {
        for line in grid.lines(axis) {
            for k in 0..line.len - 1 {
                let (i0, i1) = (line.index(k), line.index(k + 1));
                // edge weight: full spacing along the axis, trapezoid weight across it
                let across = if grid.dim() == 1 {
                    1.0
                } else {
                    let (i, j) = grid.unravel(i0);
                    if axis == 0 {
                        grid.axis_weight(j)
                    } else {
                        grid.axis_weight(i)
                    }
                };
                let c = inv * dx * across * (2.0 * tau + mobility[i0] + mobility[i1]);
                a.add_edge(axis, i0, c);
            }
        }
    }
    let _ = (nx, ny);

    let mut rhs = vec![0.0; n];
    for k in 0..n {
        let wk = grid.weight(k);
        let (s, wr) = match shift {
            Some((s, w_ref)) => (s[k], w_ref[k]),
            None => (0.0, 0.0),
        };
        a.diag[k] += wk * (tau + s);
        rhs[k] = wk * (mobility[k] - (u_tilde[k] - u_prev[k]) / tau + s * wr);
    }
    Ok((a, rhs))
}

/// Solves the linear elliptic problem for `w` with mobility and data frozen at `(u~, m~)`.
pub fn solve_w_linear(
    u_tilde: &[f64],
    m_tilde: &[f64],
    u_prev: &[f64],
    tau: f64,
    grid: &Grid,
    cfg: &SchemeConfig,
) -> Result<Vec<f64>> {
    let (a, b) = assemble_w_system(u_tilde, m_tilde, u_prev, tau, grid, None)?;
    let mut w = vec![0.0; grid.len()];
    conjugate_gradient(&a, &b, &mut w, cfg.cg())?;
    Ok(w)
}

/// Like [`solve_w_linear`] but shifted by `du/dw / tau` at the current
/// iterate `(w~, m~)`, which makes the outer iteration a frozen-mobility
/// Newton method. At a fixed point `w = w~` both problems coincide.
pub fn solve_w_stabilised(
    w_tilde: &[f64],
    m_tilde: &[f64],
    u_prev: &[f64],
    tau: f64,
    grid: &Grid,
    cfg: &SchemeConfig,
) -> Result<Vec<f64>> {
    let u_tilde = u_from_w(w_tilde, m_tilde);
    let shift: Vec<f64> = w_tilde
        .iter()
        .zip(m_tilde)
        .map(|(&w, &m)| (1.0 - m) * logistic(w) * logistic_complement(w) / tau)
        .collect();
    let (a, b) = assemble_w_system(
        &u_tilde,
        m_tilde,
        u_prev,
        tau,
        grid,
        Some((&shift, w_tilde)),
    )?;
    let mut w = w_tilde.to_vec();
    conjugate_gradient(&a, &b, &mut w, cfg.cg())?;
    Ok(w)
}

/// The contraction `K(z) = m_prev / (1 + tau lambda a (1 - z))`.
#[inline]
pub fn contraction_map(z: f64, m_prev: f64, a: f64, tau_lambda: f64) -> f64 {
    m_prev / (1.0 + tau_lambda * a * (1.0 - z))
}

/// Fixed point of [`contraction_map`] at one point, iterated from `z = m_prev`.
/// Returns the fixed point and the number of iterations.
pub fn solve_m_scalar(
    m_prev: f64,
    a: f64,
    tau_lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize)> {
    let mut z = m_prev;
    for it in 1..=max_iter {
        let next = contraction_map(z, m_prev, a, tau_lambda);
        let change = (next - z).abs();
        z = next;
        if change < tol {
            return Ok((z, it));
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: (contraction_map(z, m_prev, a, tau_lambda) - z).abs(),
    })
}

/// Solves `(m - m_prev)/tau = -lambda a(w) m (1 - m)` pointwise.
pub fn solve_m_fixed_point(
    m_prev: &[f64],
    w: &[f64],
    tau: f64,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let tl = tau * lambda;
    m_prev
        .iter()
        .zip(w)
        .map(|(&mp, &w)| solve_m_scalar(mp, logistic(w), tl, tol, max_iter).map(|(m, _)| m))
        .collect()
}

/// Implicit Euler update of the ECM for known `u`: `m_prev / (1 + lambda tau u)`.
pub fn ecm_closed_form_step(m_prev: &[f64], u: &[f64], tau: f64, lambda: f64) -> Vec<f64> {
    m_prev
        .iter()
        .zip(u)
        .map(|(&m, &u)| m / (1.0 + lambda * tau * u))
        .collect()
}

/// Outcome of one converged implicit step.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub state: EntropyState,
    pub picard_iterations: usize,
    /// Last sup-norm change of the outer iteration.
    pub residual: f64,
    /// `|| m_k (1 + lambda tau u_k) - m_prev ||_inf`.
    pub closed_form_residual: f64,
}

/// One implicit Euler step of size `tau` from `prev`.
pub fn implicit_step_with_tau(
    prev: &EntropyState,
    params: &ModelParams,
    grid: &Grid,
    cfg: &SchemeConfig,
    tau: f64,
) -> Result<StepInfo> {
    prev.fields.check_grid(grid)?;
    grid.check_len(&prev.w)?;
    let lambda = params.lambda;
    let u_prev = &prev.fields.u;
    let m_prev = &prev.fields.m;

    let mut w = prev.w.clone();
    let mut m = solve_m_fixed_point(m_prev, &w, tau, lambda, cfg.inner_m_tol, cfg.inner_m_max_iter)?;
    let mut u = u_from_w(&w, &m);
    let mut theta = cfg.damping;
    let mut last = f64::INFINITY;
    let mut converged = None;

    for it in 1..=cfg.picard_max_iter {
        let w_lin = if cfg.stabilise {
            solve_w_stabilised(&w, &m, u_prev, tau, grid, cfg)?
        } else {
            solve_w_linear(&u, &m, u_prev, tau, grid, cfg)?
        };
        let w_next: Vec<f64> = w
            .iter()
            .zip(&w_lin)
            .map(|(&old, &new)| old + theta * (new - old))
            .collect();
        let m_next = solve_m_fixed_point(
            m_prev,
            &w_next,
            tau,
            lambda,
            cfg.inner_m_tol,
            cfg.inner_m_max_iter,
        )?;
        let u_next = u_from_w(&w_next, &m_next);
        let res = sup_diff(&u_next, &u).max(sup_diff(&m_next, &m)) / theta;
        w = w_next;
        m = m_next;
        u = u_next;
        if !res.is_finite() {
            return Err(Error::Convergence {
                iterations: it,
                residual: res,
            });
        }
        if res < cfg.picard_tol {
            converged = Some((it, res));
            break;
        }
        if res > last && theta > 1.0 / 64.0 {
            theta *= 0.5;
        }
        last = res;
    }
    let (iterations, residual) = converged.ok_or(Error::Convergence {
        iterations: cfg.picard_max_iter,
        residual: last,
    })?;

    let time = prev.time + tau;
    let state = EntropyState {
        fields: FieldPair { u, m },
        w,
        time,
        tau,
    };
    check_strict_bounds(&state, grid)?;

    let closed_form_residual = state
        .fields
        .m
        .iter()
        .zip(&state.fields.u)
        .zip(m_prev)
        .map(|((&m, &u), &mp)| (m * (1.0 + lambda * tau * u) - mp).abs())
        .fold(0.0, f64::max);
    if closed_form_residual >= 10.0 * cfg.picard_tol {
        return Err(Error::Convergence {
            iterations,
            residual: closed_form_residual,
        });
    }
    Ok(StepInfo {
        state,
        picard_iterations: iterations,
        residual,
        closed_form_residual,
    })
}

/// One implicit Euler step of size `cfg.tau`.
pub fn implicit_step(
    prev: &EntropyState,
    params: &ModelParams,
    grid: &Grid,
    cfg: &SchemeConfig,
) -> Result<StepInfo> {
    implicit_step_with_tau(prev, params, grid, cfg, cfg.tau)
}

fn check_strict_bounds(state: &EntropyState, grid: &Grid) -> Result<()> {
    for (k, (&u, &m)) in state.fields.u.iter().zip(&state.fields.m).enumerate() {
        if !(u > 0.0 && m > 0.0 && u + m < 1.0) {
            return Err(Error::BoxViolation {
                time: state.time,
                index: k,
                coord: grid.point(k),
                message: format!("strict bounds lost: u = {u:e}, m = {m:e}, u + m = {}", u + m),
            });
        }
    }
    Ok(())
}

/// Entropy balance of one step.
///
/// The inequality residual is
/// `(E_k - E_{k-1})/tau + tau int(|grad w|^2 + w^2) + int u (1 - rho) |grad w|^2 - C |Omega|`,
/// which the scheme keeps nonpositive for a domain-dependent constant `C`.
pub fn entropy_step_report(
    prev: &EntropyState,
    next: &EntropyState,
    tau: f64,
    grid: &Grid,
    constant: f64,
) -> EntropyReport {
    let e_prev = entropy(&prev.fields.u, &prev.fields.m, grid);
    let e_next = entropy(&next.fields.u, &next.fields.m, grid);
    let grad_w = grad_sq_pointwise(&next.w, grid);
    let w_sq: Vec<f64> = next.w.iter().map(|w| w * w).collect();
    let dissipation_tau = tau * (grid.integrate(&grad_w) + grid.integrate(&w_sq));
    let mob: Vec<f64> = next
        .fields
        .u
        .iter()
        .zip(&next.fields.m)
        .zip(&grad_w)
        .map(|((&u, &m), &g)| u * (1.0 - u - m) * g)
        .collect();
    let dissipation_mobility = grid.integrate(&mob);
    let inequality_residual = (e_next - e_prev) / tau + dissipation_tau + dissipation_mobility
        - constant * grid.volume();
    let b = next.fields.bounds();
    EntropyReport {
        time: next.time,
        entropy: e_next,
        dissipation_tau,
        dissipation_mobility,
        inequality_residual,
        grad_u_sq: grid.integrate(&grad_sq_pointwise(&next.fields.u, grid)),
        grad_m_sq: grid.integrate(&grad_sq_pointwise(&next.fields.m, grid)),
        min_u: b.min_u,
        min_m: b.min_m,
        max_rho: b.max_rho,
        max_abs_w: next.w.iter().fold(0.0, |acc, w| acc.max(w.abs())),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntropyRunStats {
    pub steps: usize,
    pub picard_iterations: usize,
    pub max_picard_iterations: usize,
    pub tau_halvings: usize,
    pub max_closed_form_residual: f64,
}

#[derive(Debug, Clone)]
pub struct EntropyRun {
    pub snapshots: Vec<Snapshot>,
    pub reports: Vec<EntropyReport>,
    pub stats: EntropyRunStats,
    pub final_state: EntropyState,
}

/// Runs the scheme from `fields0` to `t_end`, collecting snapshots and per-step reports.
pub fn run(
    fields0: &FieldPair,
    params: &ModelParams,
    grid: &Grid,
    cfg: &SchemeConfig,
    t_end: f64,
    snapshot_interval: f64,
) -> Result<EntropyRun> {
    let mut snapshots = Vec::new();
    let mut reports = Vec::new();
    let (stats, final_state) = run_with(
        fields0,
        params,
        grid,
        cfg,
        t_end,
        snapshot_interval,
        |s| {
            snapshots.push(s.clone());
            Ok(())
        },
        |r| {
            reports.push(*r);
            Ok(())
        },
    )?;
    Ok(EntropyRun {
        snapshots,
        reports,
        stats,
        final_state,
    })
}

/// Streaming variant of [`run`].
#[allow(clippy::too_many_arguments)]
pub fn run_with<S, R>(
    fields0: &FieldPair,
    params: &ModelParams,
    grid: &Grid,
    cfg: &SchemeConfig,
    t_end: f64,
    snapshot_interval: f64,
    mut on_snapshot: S,
    mut on_report: R,
) -> Result<(EntropyRunStats, EntropyState)>
where
    S: FnMut(&Snapshot) -> Result<()>,
    R: FnMut(&EntropyReport) -> Result<()>,
{
    cfg.validate(params)?;
    params.validate()?;
    fields0.check_grid(grid)?;
    if !(t_end > 0.0 && snapshot_interval > 0.0 && snapshot_interval <= t_end) {
        return Err(Error::Config(format!(
            "need 0 < snapshot_interval <= t_end, got {snapshot_interval} and {t_end}"
        )));
    }
    if let Some((k, msg)) = fields0.first_box_violation(0.0) {
        return Err(Error::BoxViolation {
            time: 0.0,
            index: k,
            coord: grid.point(k),
            message: format!("initial data: {msg}"),
        });
    }

    let mut state = EntropyState::initial(fields0, cfg.tau)?;
    let mut stats = EntropyRunStats::default();
    on_snapshot(&Snapshot {
        time: 0.0,
        fields: state.fields.clone(),
    })?;
    let times = snapshot_times(t_end, snapshot_interval);
    for &target in &times[1..] {
        while target - state.time > 1e-9 * cfg.tau {
            let tau = cfg.tau.min(target - state.time);
            state = advance(&state, params, grid, cfg, tau, 0, &mut stats, &mut on_report)?;
        }
        state.time = target;
        on_snapshot(&Snapshot {
            time: target,
            fields: state.fields.clone(),
        })?;
    }
    Ok((stats, state))
}

/// Takes a step of size `tau`, splitting it in halves on failure.
#[allow(clippy::too_many_arguments)]
fn advance<R>(
    prev: &EntropyState,
    params: &ModelParams,
    grid: &Grid,
    cfg: &SchemeConfig,
    tau: f64,
    depth: usize,
    stats: &mut EntropyRunStats,
    on_report: &mut R,
) -> Result<EntropyState>
where
    R: FnMut(&EntropyReport) -> Result<()>,
{
    match implicit_step_with_tau(prev, params, grid, cfg, tau) {
        Ok(info) => {
            stats.steps += 1;
            stats.picard_iterations += info.picard_iterations;
            stats.max_picard_iterations = stats.max_picard_iterations.max(info.picard_iterations);
            stats.max_closed_form_residual =
                stats.max_closed_form_residual.max(info.closed_form_residual);
            let report = entropy_step_report(prev, &info.state, tau, grid, cfg.entropy_constant);
            on_report(&report)?;
            Ok(info.state)
        }
        Err(e @ (Error::Convergence { .. } | Error::LinearSolve { .. }))
            if depth < cfg.max_tau_halvings =>
        {
            let _ = e;
            stats.tau_halvings += 1;
            let half = 0.5 * tau;
            let mid = advance(prev, params, grid, cfg, half, depth + 1, stats, on_report)?;
            advance(&mid, params, grid, cfg, half, depth + 1, stats, on_report)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SchemeConfig {
        SchemeConfig::default()
    }

    #[test]
    fn regularisation_clamps() {
        let m = regularize_initial_m(&[0.0, 0.5, 1.0], 0.01).unwrap();
        assert_eq!(m, vec![0.01, 0.5, 0.99]);
        assert!(matches!(regularize_initial_m(&[0.5], 0.5), Err(Error::Config(_))));
    }

    #[test]
    fn entropy_variable_values() {
        let w = entropy_variable(&[0.5, 0.25], &[0.0, 0.25]).unwrap();
        assert_eq!(w[0], 0.0);
        assert!((w[1] + std::f64::consts::LN_2).abs() < 1e-15);
        let err = entropy_variable(&[0.5, 0.0], &[0.1, 0.1]).unwrap_err();
        assert!(matches!(err, Error::Domain { index: 1, .. }));
        assert!(entropy_variable(&[0.6], &[0.4]).is_err());
    }

    #[test]
    fn u_from_w_values() {
        assert_eq!(u_from_w_scalar(0.0, 0.0), 0.5);
        assert!((u_from_w_scalar(50.0, 0.2) - 0.8).abs() < 1e-12);
        let tiny = u_from_w_scalar(-50.0, 0.0);
        assert!(tiny > 0.0 && tiny < 1e-20);
        let u = 0.3;
        let m = 0.2;
        let w = entropy_variable(&[u], &[m]).unwrap();
        assert!((u_from_w(&w, &[m])[0] - u).abs() < 1e-12);
    }

    #[test]
    fn m_fixed_point_cases() {
        let c = cfg();
        // a_w = 0: no degradation
        let m = solve_m_fixed_point(&[0.3, 0.7], &[-800.0, -800.0], 0.01, 1.0, c.inner_m_tol, 200).unwrap();
        assert_eq!(m, vec![0.3, 0.7]);
        let m = solve_m_fixed_point(&[0.0], &[3.0], 0.1, 1.0, c.inner_m_tol, 200).unwrap();
        assert_eq!(m, vec![0.0]);

        // m = 0.5 / (1 + 0.1 (1 - m)) <=> 0.1 m^2 - 1.1 m + 0.5 = 0
        let root = (1.1 - (1.21f64 - 0.2).sqrt()) / 0.2;
        let (m, _) = solve_m_scalar(0.5, 1.0, 0.1, 1e-14, 200).unwrap();
        assert!((m - root).abs() < 1e-12);
        assert!((root - 0.475062).abs() < 1e-6);
        assert!((m * (1.0 + 0.1 * (1.0 - m)) - 0.5).abs() < 1e-14);
        // brute force: iterate K many times
        let mut z = 0.5;
        for _ in 0..500 {
            z = contraction_map(z, 0.5, 1.0, 0.1);
        }
        assert!((z - root).abs() < 1e-14);
    }

    #[test]
    fn m_iteration_cap() {
        let r = solve_m_scalar(0.9, 1.0, 0.9, 1e-300, 5);
        assert!(matches!(r, Err(Error::Convergence { iterations: 5, .. })));
    }

    #[test]
    fn contraction_factor_bounded_by_tau_lambda() {
        for &(mp, a, tl) in &[(0.9, 1.0, 0.5), (0.5, 0.7, 0.1), (1.0, 1.0, 0.9), (0.2, 0.3, 0.99)] {
            let mut z0 = mp;
            let mut z1 = contraction_map(z0, mp, a, tl);
            for _ in 0..20 {
                let z2 = contraction_map(z1, mp, a, tl);
                if (z1 - z0).abs() > 1e-13 {
                    let factor = (z2 - z1).abs() / (z1 - z0).abs();
                    assert!(factor <= tl + 1e-3, "factor {factor} > {tl}");
                }
                z0 = z1;
                z1 = z2;
            }
        }
    }

    #[test]
    fn w_linear_zero_data() {
        let g = Grid::new(1, 0.0, 2.0, 0.1).unwrap();
        let n = g.len();
        // u~ (1 - rho~) = 0 with u~ = u_prev
        let w = solve_w_linear(&vec![0.0; n], &vec![0.3; n], &vec![0.0; n], 0.01, &g, &cfg()).unwrap();
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn w_linear_constant_data() {
        let tau = 0.05;
        for g in [
            Grid::new(1, 0.0, 3.0, 0.1).unwrap(),
            Grid::new(2, 0.0, 1.0, 0.1).unwrap(),
        ] {
            let n = g.len();
            let (u, m) = (0.4, 0.35);
            let w = solve_w_linear(&vec![u; n], &vec![m; n], &vec![u; n], tau, &g, &cfg()).unwrap();
            let expect = u * (1.0 - u - m) / tau;
            for v in &w {
                assert!((v - expect).abs() < 1e-8 * expect, "{v} vs {expect}");
            }
        }
    }

    #[test]
    fn assembled_system_is_spd_shaped() {
        let g = Grid::new(2, 0.0, 0.6, 0.1).unwrap();
        let n = g.len();
        let u: Vec<f64> = (0..n).map(|k| 0.05 + 0.9 * ((k * 7) % 11) as f64 / 11.0 * 0.5).collect();
        let m: Vec<f64> = (0..n).map(|k| ((k * 3) % 5) as f64 / 5.0 * (1.0 - u[k])).collect();
        let (a, _) = assemble_w_system(&u, &m, &u, 0.01, &g, None).unwrap();
        let d = a.to_dense();
        for i in 0..n {
            assert!(d[i][i] > 0.0);
            for j in 0..n {
                assert!((d[i][j] - d[j][i]).abs() <= 1e-14 * d[i][i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn weak_form_matches_mirrored_stencil() {
        // Dividing the assembled rows by the trapezoid weights recovers the
        // collocated operator tau w - div((tau + M) grad w).
        let g = Grid::new(1, 0.0, 1.0, 0.1).unwrap();
        let n = g.len();
        let tau = 0.02;
        let u: Vec<f64> = (0..n).map(|k| 0.1 + 0.05 * k as f64).collect();
        let m = vec![0.1; n];
        let (a, _) = assemble_w_system(&u, &m, &u, tau, &g, None).unwrap();
        let w: Vec<f64> = (0..n).map(|k| (k as f64 * 0.4).sin()).collect();
        let mut aw = vec![0.0; n];
        a.matvec(&w, &mut aw);
        let coeff: Vec<f64> = u.iter().zip(&m).map(|(u, m)| tau + u * (1.0 - u - m)).collect();
        let div = crate::model::diffusive_term(&coeff, &w, &g).unwrap();
        for k in 0..n {
            let collocated = tau * w[k] - div[k];
            assert!((aw[k] / g.weight(k) - collocated).abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_zero_keeps_m() {
        let g = Grid::new(1, 0.0, 4.0, 0.1).unwrap();
        let n = g.len();
        let x = g.axis_coordinates();
        let u: Vec<f64> = x.iter().map(|x| 0.4 / (1.0 + (2.0 * (x - 2.0)).exp()) + 0.05).collect();
        let m: Vec<f64> = x.iter().map(|x| 0.2 + 0.1 * (x * 0.7).sin()).collect();
        let state = EntropyState {
            w: entropy_variable(&u, &m).unwrap(),
            fields: FieldPair { u, m: m.clone() },
            time: 0.0,
            tau: 0.01,
        };
        let params = ModelParams::new(0.0, 0.3).unwrap();
        let info = implicit_step(&state, &params, &g, &cfg()).unwrap();
        assert_eq!(info.state.fields.m, m);
        assert_eq!(info.state.fields.len(), n);
    }

    #[test]
    fn near_equilibrium_step_moves_order_tau() {
        let tau = 0.01;
        let g = Grid::new(1, 0.0, 5.0, 0.1).unwrap();
        let f = FieldPair::constant(&g, 1.0, 0.0);
        let s0 = EntropyState::initial(&f, tau).unwrap();
        assert!((s0.fields.u[0] - (1.0 - tau)).abs() < 1e-15);
        let params = ModelParams::new(1.0, 0.5).unwrap();
        let info = implicit_step(&s0, &params, &g, &cfg()).unwrap();
        assert!(info.state.strictly_bounded());
        let du = sup_diff(&info.state.fields.u, &s0.fields.u);
        assert!(du < 10.0 * tau, "du = {du}");
    }

    #[test]
    fn strict_bounds_and_monotone_m_from_step_data() {
        let tau = 0.01;
        let g = Grid::new(1, 0.0, 20.0, 0.1).unwrap();
        let p = ModelParams::new(1.0, 0.5).unwrap();
        let f0 = crate::ic::step_ic(&g, &p);
        let mut s = EntropyState::initial(&f0, tau).unwrap();
        for _ in 0..20 {
            let info = implicit_step(&s, &p, &g, &cfg()).unwrap();
            assert!(info.state.strictly_bounded());
            for (a, b) in info.state.fields.m.iter().zip(&s.fields.m) {
                assert!(a <= b);
            }
            assert!(info.closed_form_residual < 1e-9);
            s = info.state;
        }
    }

    #[test]
    fn entropy_report_of_static_state() {
        let g = Grid::new(1, 0.0, 1.0, 0.1).unwrap();
        let f = FieldPair::constant(&g, 0.5, 0.0);
        let s = EntropyState {
            w: vec![0.0; g.len()],
            fields: f,
            time: 0.0,
            tau: 0.01,
        };
        let r = entropy_step_report(&s, &s, 0.01, &g, 1.0);
        assert_eq!(r.dissipation_tau, 0.0);
        assert_eq!(r.dissipation_mobility, 0.0);
        assert!((r.entropy - (0.5f64.ln() - 1.0)).abs() < 1e-12);
        assert!((r.inequality_residual + 1.0).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_large_tau_lambda() {
        let p = ModelParams::new(200.0, 0.5).unwrap();
        assert!(cfg().validate(&p).is_err());
        let p = ModelParams::new(50.0, 0.5).unwrap();
        assert!(cfg().validate(&p).is_ok());
    }
}
