//! Semi-discrete right-hand sides of the cell/ECM system.
//!
//! The divergence in the cell equation is discretised as two applications of
//! the centred variable-coefficient stencil
//!
//! ```text
//! d/dx [D da/dx]_i ~ [(D_{i-1}+D_i) a_{i-1} - (D_{i-1}+2D_i+D_{i+1}) a_i + (D_i+D_{i+1}) a_{i+1}] / (2 dx^2)
//! ```
//!
//! once with `D = 1 - u - m` acting on `u` and once with `D = u` acting on
//! `u + m`. Each mobility vanishes exactly where the continuous one does. In
//! 2D the stencil is applied along each axis and summed; boundary neighbours
//! are mirrored (`a_{-1} := a_1`, `D_{-1} := D_1`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mirrored_neighbours, Grid};

/// Cell density `u` and ECM density `m` on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub u: Vec<f64>,
    pub m: Vec<f64>,
}

/// Extremes relevant to the box constraints `0 <= u, m` and `u + m <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldBounds {
    pub min_u: f64,
    pub min_m: f64,
    pub max_rho: f64,
}

impl FieldPair {
    pub fn new(u: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        if u.len() != m.len() {
            return Err(Error::Shape {
                expected: u.len(),
                actual: m.len(),
            });
        }
        Ok(FieldPair { u, m })
    }

    /// Constant fields `(u, m)` on `grid`.
    pub fn constant(grid: &Grid, u: f64, m: f64) -> Self {
        FieldPair {
            u: vec![u; grid.len()],
            m: vec![m; grid.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        grid.check_len(&self.u)?;
        grid.check_len(&self.m)
    }

    pub fn bounds(&self) -> FieldBounds {
        let mut b = FieldBounds {
            min_u: f64::INFINITY,
            min_m: f64::INFINITY,
            max_rho: f64::NEG_INFINITY,
        };
        for (&u, &m) in self.u.iter().zip(&self.m) {
            b.min_u = b.min_u.min(u);
            b.min_m = b.min_m.min(m);
            b.max_rho = b.max_rho.max(u + m);
        }
        b
    }

    /// First point violating the box constraints by more than `tol`, with a description.
    pub fn first_box_violation(&self, tol: f64) -> Option<(usize, String)> {
        self.u.iter().zip(&self.m).enumerate().find_map(|(k, (&u, &m))| {
            if !(u.is_finite() && m.is_finite()) {
                Some((k, format!("non-finite value u = {u}, m = {m}")))
            } else if u < -tol {
                Some((k, format!("u = {u:e} below 0")))
            } else if m < -tol {
                Some((k, format!("m = {m:e} below 0")))
            } else if u + m > 1.0 + tol {
                Some((k, format!("u + m = {} above 1", u + m)))
            } else {
                None
            }
        })
    }

    /// Sup-norm distance to another pair, over both components.
    pub fn sup_distance(&self, other: &FieldPair) -> f64 {
        let du = sup_diff(&self.u, &other.u);
        let dm = sup_diff(&self.m, &other.m);
        du.max(dm)
    }
}

pub(crate) fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `lambda`: ECM degradation rate; `m0`: far-field ECM density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    pub lambda: f64,
    pub m0: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            lambda: 1.0,
            m0: 0.5,
        }
    }
}

impl ModelParams {
    pub fn new(lambda: f64, m0: f64) -> Result<Self> {
        let p = ModelParams { lambda, m0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "model.lambda must be a nonnegative number, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.m0) {
            return Err(Error::Config(format!(
                "model.m0 must lie in [0, 1], got {}",
                self.m0
            )));
        }
        Ok(())
    }
}

/// Discrete `div(D grad a)` with mirrored zero-flux boundaries.
pub fn diffusive_term(d: &[f64], a: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    grid.check_len(d)?;
    grid.check_len(a)?;
    let mut out = vec![0.0; grid.len()];
    add_diffusive_term(d, a, grid, &mut out);
    Ok(out)
}

/// Adds `div(D grad a)` to `out`.
pub(crate) fn add_diffusive_term(d: &[f64], a: &[f64], grid: &Grid, out: &mut [f64]) {
    let inv = 1.0 / (2.0 * grid.spacing() * grid.spacing());
    for axis in 0..grid.dim() {
        for line in grid.lines(axis) {
            for k in 0..line.len {
                let (l, r) = mirrored_neighbours(k, line.len);
                let (il, ik, ir) = (line.index(l), line.index(k), line.index(r));
                out[ik] += inv
                    * ((d[il] + d[ik]) * (a[il] - a[ik]) + (d[ik] + d[ir]) * (a[ir] - a[ik]));
            }
        }
    }
}

/// Right-hand side of the cell equation.
pub fn cell_rhs(fields: &FieldPair, _params: &ModelParams, grid: &Grid) -> Result<Vec<f64>> {
    fields.check_grid(grid)?;
    let mut out = vec![0.0; grid.len()];
    cell_rhs_into(&fields.u, &fields.m, grid, &mut out);
    Ok(out)
}

/// Fused evaluation of both flux stencils plus the proliferation term.
///
/// Numerically identical to `diffusive_term(1-u-m, u) + diffusive_term(u, u+m)
/// + u(1-u-m)` up to summation order.
pub(crate) fn cell_rhs_into(u: &[f64], m: &[f64], grid: &Grid, out: &mut [f64]) {
    for ((o, &uk), &mk) in out.iter_mut().zip(u).zip(m) {
        *o = uk * (1.0 - uk - mk);
    }
    let inv = 1.0 / (2.0 * grid.spacing() * grid.spacing());
    for axis in 0..grid.dim() {
        for line in grid.lines(axis) {
            for k in 0..line.len {
                let (l, r) = mirrored_neighbours(k, line.len);
                let (il, ik, ir) = (line.index(l), line.index(k), line.index(r));
                let (ul, uk, ur) = (u[il], u[ik], u[ir]);
                let (rl, rk, rr) = (ul + m[il], uk + m[ik], ur + m[ir]);
                let (dl, dk, dr) = (1.0 - rl, 1.0 - rk, 1.0 - rr);
                out[ik] += inv
                    * ((dl + dk) * (ul - uk)
                        + (dk + dr) * (ur - uk)
                        + (ul + uk) * (rl - rk)
                        + (uk + ur) * (rr - rk));
            }
        }
    }
}

/// Right-hand side of the ECM equation, `-lambda m u`.
pub fn ecm_rhs(fields: &FieldPair, params: &ModelParams) -> Vec<f64> {
    fields
        .u
        .iter()
        .zip(&fields.m)
        .map(|(&u, &m)| -params.lambda * m * u)
        .collect()
}
