//! Method-of-lines time integration with explicit Runge–Kutta methods.
//!
//! The semi-discrete system from [`crate::model`] is advanced either by an
//! adaptive Dormand–Prince 5(4) pair with PI step-size control or by classic
//! fixed-step RK4. Snapshots are produced by clamping steps so that they land
//! exactly on the snapshot times; no dense output is used.
//!
//! By default the ECM is carried as `q = ln m`, for which the degradation
//! equation reads `q' = -lambda u`. This removes the `lambda u` stiffness of
//! the ECM equation (which at `lambda = 1e6` would otherwise pin an explicit
//! method to steps of order `1e-6`), keeps `m >= 0` exactly and leaves the
//! continuous dynamics unchanged. `EcmVariable::Direct` integrates `m` itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{cell_rhs_into, FieldPair, ModelParams};

/// Smallest admissible adaptive step.
pub const DT_MIN: f64 = 1e-12;

/// `ln m` values at or below this are read back as `m = 0`.
const LOG_FLOOR: f64 = -708.3964185322641; // ln(f64::MIN_POSITIVE)

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Rk45Adaptive,
    Rk4Fixed,
}

/// Representation of the ECM inside the integrator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EcmVariable {
    Log,
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitConfig {
    pub t_end: f64,
    pub snapshot_interval: f64,
    pub integrator: Integrator,
    /// Initial step for the adaptive method, the step itself for RK4.
    pub dt_init: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_max: f64,
    /// Allowed undershoot/overshoot of the box constraints before aborting.
    pub box_tol: f64,
    pub ecm_variable: EcmVariable,
}

impl Default for ExplicitConfig {
    fn default() -> Self {
        ExplicitConfig {
            t_end: 100.0,
            snapshot_interval: 1.0,
            integrator: Integrator::Rk45Adaptive,
            dt_init: 1e-3,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            dt_max: 1.0,
            box_tol: 1e-8,
            ecm_variable: EcmVariable::Log,
        }
    }
}

impl ExplicitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_end", self.t_end),
            ("snapshot_interval", self.snapshot_interval),
            ("dt_init", self.dt_init),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("dt_max", self.dt_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.snapshot_interval > self.t_end {
            return Err(Error::Config(format!(
                "snapshot_interval ({}) exceeds t_end ({})",
                self.snapshot_interval, self.t_end
            )));
        }
        if !(self.box_tol >= 0.0) {
            return Err(Error::Config("box_tol must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
}

/// Result of one attempted embedded step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub dt_next: f64,
    /// Weighted RMS norm of the embedded error estimate; the step is accepted iff `<= 1`.
    pub error: f64,
    pub accepted: bool,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO: f64 = 0.2 - 0.75 * BETA;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

/// Dormand–Prince 5(4) stepper with first-same-as-last reuse and PI control.
pub struct DormandPrince {
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
    err_prev: f64,
    k1_valid: bool,
    last_rejected: bool,
}

impl DormandPrince {
    pub fn new(n: usize) -> Self {
        DormandPrince {
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            y_new: vec![0.0; n],
            err_prev: 1e-4,
            k1_valid: false,
            last_rejected: false,
        }
    }

    /// Attempts a step of size `dt` from `(t, y)`. On acceptance the new state
    /// is available through [`DormandPrince::accept`]. Returns `(error, dt_next)`.
    pub fn attempt<F>(
        &mut self,
        t: f64,
        y: &[f64],
        dt: f64,
        tols: Tolerances,
        rhs: &mut F,
    ) -> Result<(f64, f64)>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        if !self.k1_valid {
            rhs(t, y, &mut self.k[0]);
            self.k1_valid = true;
        }
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in A[s][..s].iter().enumerate() {
                    acc += a * self.k[j][i];
                }
                self.stage[i] = y[i] + dt * acc;
            }
            let target = &mut self.k[s];
            let stage = if s == 6 {
                // the seventh stage is evaluated at the new solution
                self.y_new.copy_from_slice(&self.stage);
                &self.y_new
            } else {
                &self.stage
            };
            rhs(t + C[s] * dt, stage, target);
        }

        let mut sum = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (s, w) in E.iter().enumerate() {
                e += w * self.k[s][i];
            }
            let sc = tols.abs + tols.rel * y[i].abs().max(self.y_new[i].abs());
            let r = dt * e / sc;
            sum += r * r;
        }
        let err = (sum / n.max(1) as f64).sqrt();
        if !err.is_finite() || self.y_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability {
                time: t,
                message: format!("non-finite values in a Runge-Kutta step of size {dt:e}"),
            });
        }

        let accepted = err <= 1.0;
        let dt_next = if accepted {
            let mut fac = if err == 0.0 {
                FAC_MAX
            } else {
                SAFETY * err.powf(-EXPO) * self.err_prev.powf(BETA)
            };
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if self.last_rejected {
                fac = fac.min(1.0);
            }
            self.err_prev = err.max(1e-4);
            dt * fac
        } else {
            dt * (SAFETY * err.powf(-EXPO)).clamp(FAC_MIN, 1.0)
        };
        self.last_rejected = !accepted;
        Ok((err, dt_next))
    }

    /// Moves the accepted state into `y` and recycles the last stage as the next first stage.
    pub fn accept(&mut self, y: &mut Vec<f64>) {
        std::mem::swap(y, &mut self.y_new);
        self.k.swap(0, 6);
    }

    /// The candidate state of the last attempt.
    pub fn candidate(&self) -> &[f64] {
        &self.y_new
    }

    /// Forgets the cached first stage (call after modifying the state externally).
    pub fn invalidate(&mut self) {
        self.k1_valid = false;
    }
}

/// One embedded Dormand–Prince 5(4) step.
pub fn rk45_step<F>(
    t: f64,
    state: &[f64],
    mut rhs: F,
    dt: f64,
    tols: Tolerances,
) -> Result<StepOutcome>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    if !(dt > 0.0) {
        return Err(Error::Config(format!("step size must be positive, got {dt}")));
    }
    let mut stepper = DormandPrince::new(state.len());
    let (error, dt_next) = stepper.attempt(t, state, dt, tols, &mut rhs)?;
    Ok(StepOutcome {
        state: stepper.candidate().to_vec(),
        dt_next,
        error,
        accepted: error <= 1.0,
    })
}

/// Classic fourth-order Runge–Kutta step, in place.
pub fn rk4_step<F>(t: f64, y: &mut [f64], dt: f64, rhs: &mut F, scratch: &mut Rk4Scratch)
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let Rk4Scratch { k1, k2, k3, k4, tmp } = scratch;
    rhs(t, y, k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    rhs(t + 0.5 * dt, tmp, k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    rhs(t + 0.5 * dt, tmp, k3);
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    rhs(t + dt, tmp, k4);
    for i in 0..n {
        y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(n: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub fields: FieldPair,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplicitStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Largest normalised error estimate among accepted steps.
    pub max_accepted_error: f64,
    pub min_dt: f64,
}

#[derive(Debug, Clone)]
pub struct ExplicitRun {
    pub snapshots: Vec<Snapshot>,
    pub stats: ExplicitStats,
}

/// Snapshot times `0, h, 2h, ...` up to `t_end`, with `t_end` appended if it is
/// not a multiple of `h`.
pub fn snapshot_times(t_end: f64, interval: f64) -> Vec<f64> {
    let count = (t_end / interval + 1e-9).floor() as usize;
    let mut times: Vec<f64> = (0..=count).map(|k| k as f64 * interval).collect();
    if t_end - count as f64 * interval > 1e-9 * interval {
        times.push(t_end);
    }
    times
}

/// Integrates from `fields0` and collects every snapshot.
pub fn integrate(
    fields0: &FieldPair,
    params: &ModelParams,
    grid: &Grid,
    cfg: &ExplicitConfig,
) -> Result<ExplicitRun> {
    let mut snapshots = Vec::new();
    let stats = integrate_with(fields0, params, grid, cfg, |s| {
        snapshots.push(s.clone());
        Ok(())
    })?;
    Ok(ExplicitRun { snapshots, stats })
}

/// Integrates from `fields0`, handing each snapshot to `observer` as it is reached.
pub fn integrate_with<O>(
    fields0: &FieldPair,
    params: &ModelParams,
    grid: &Grid,
    cfg: &ExplicitConfig,
    mut observer: O,
) -> Result<ExplicitStats>
where
    O: FnMut(&Snapshot) -> Result<()>,
{
    cfg.validate()?;
    params.validate()?;
    fields0.check_grid(grid)?;
    if let Some((k, msg)) = fields0.first_box_violation(cfg.box_tol) {
        return Err(Error::BoxViolation {
            time: 0.0,
            index: k,
            coord: grid.point(k),
            message: format!("initial data: {msg}"),
        });
    }

    let n = grid.len();
    let lambda = params.lambda;
    let variable = cfg.ecm_variable;
    let mut y = pack(fields0, variable);
    let mut m_buf = vec![0.0; n];
    let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (u, v) = y.split_at(n);
        let (du, dv) = dy.split_at_mut(n);
        match variable {
            EcmVariable::Log => {
                for (m, &q) in m_buf.iter_mut().zip(v) {
                    *m = q_to_m(q);
                }
                cell_rhs_into(u, &m_buf, grid, du);
                for (d, &uk) in dv.iter_mut().zip(u) {
                    *d = -lambda * uk;
                }
            }
            EcmVariable::Direct => {
                cell_rhs_into(u, v, grid, du);
                for ((d, &uk), &mk) in dv.iter_mut().zip(u).zip(v) {
                    *d = -lambda * mk * uk;
                }
            }
        }
    };

    let times = snapshot_times(cfg.t_end, cfg.snapshot_interval);
    let mut stats = ExplicitStats {
        min_dt: f64::INFINITY,
        ..Default::default()
    };
    observer(&Snapshot {
        time: 0.0,
        fields: fields0.clone(),
    })?;

    let tols = Tolerances {
        rel: cfg.rel_tol,
        abs: cfg.abs_tol,
    };
    let mut t = 0.0;
    let mut dt = cfg.dt_init.min(cfg.dt_max);
    let mut dp = DormandPrince::new(2 * n);
    let mut rk4 = Rk4Scratch::new(2 * n);

    for &target in &times[1..] {
        while target - t > 1e-12 * target.max(1.0) {
            let remaining = target - t;
            let clamped = dt >= remaining;
            let h = if clamped { remaining } else { dt };
            match cfg.integrator {
                Integrator::Rk45Adaptive => {
                    let (err, h_next) = dp.attempt(t, &y, h, tols, &mut rhs)?;
                    if err <= 1.0 {
                        dp.accept(&mut y);
                        t = if clamped { target } else { t + h };
                        stats.accepted_steps += 1;
                        stats.max_accepted_error = stats.max_accepted_error.max(err);
                        stats.min_dt = stats.min_dt.min(h);
                        dt = if clamped { h_next.max(dt) } else { h_next };
                        check_box(&y, n, variable, cfg.box_tol, t, grid)?;
                    } else {
                        stats.rejected_steps += 1;
                        dt = h_next;
                    }
                    dt = dt.min(cfg.dt_max);
                    if dt < DT_MIN {
                        return Err(Error::Instability {
                            time: t,
                            message: format!("adaptive step size underflow (dt = {dt:e})"),
                        });
                    }
                }
                Integrator::Rk4Fixed => {
                    rk4_step(t, &mut y, h, &mut rhs, &mut rk4);
                    if y.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Instability {
                            time: t,
                            message: format!("non-finite values after an RK4 step of size {h:e}"),
                        });
                    }
                    t = if clamped { target } else { t + h };
                    stats.accepted_steps += 1;
                    stats.min_dt = stats.min_dt.min(h);
                    check_box(&y, n, variable, cfg.box_tol, t, grid)?;
                }
            }
        }
        t = target;
        observer(&Snapshot {
            time: target,
            fields: unpack(&y, n, variable),
        })?;
    }
    Ok(stats)
}

#[inline]
fn q_to_m(q: f64) -> f64 {
    if q <= LOG_FLOOR {
        0.0
    } else {
        // trial stages of an oversized step can push q far above ln 1
        q.min(0.0).exp()
    }
}

fn pack(fields: &FieldPair, variable: EcmVariable) -> Vec<f64> {
    let mut y = fields.u.clone();
    match variable {
        EcmVariable::Log => y.extend(
            fields
                .m
                .iter()
                .map(|&m| if m > 0.0 { m.ln().max(LOG_FLOOR) } else { LOG_FLOOR }),
        ),
        EcmVariable::Direct => y.extend_from_slice(&fields.m),
    }
    y
}

fn unpack(y: &[f64], n: usize, variable: EcmVariable) -> FieldPair {
    let (u, v) = y.split_at(n);
    let m = match variable {
        EcmVariable::Log => v.iter().map(|&q| q_to_m(q)).collect(),
        EcmVariable::Direct => v.to_vec(),
    };
    FieldPair { u: u.to_vec(), m }
}

fn check_box(
    y: &[f64],
    n: usize,
    variable: EcmVariable,
    tol: f64,
    time: f64,
    grid: &Grid,
) -> Result<()> {
    let (u, v) = y.split_at(n);
    for k in 0..n {
        let m = match variable {
            EcmVariable::Log => q_to_m(v[k]),
            EcmVariable::Direct => v[k],
        };
        let msg = if u[k] < -tol {
            format!("u = {:e} below 0", u[k])
        } else if m < -tol {
            format!("m = {m:e} below 0")
        } else if u[k] + m > 1.0 + tol {
            format!("u + m = {} above 1", u[k] + m)
        } else {
            continue;
        };
        return Err(Error::BoxViolation {
            time,
            index: k,
            coord: grid.point(k),
            message: msg,
        });
    }
    Ok(())
}
