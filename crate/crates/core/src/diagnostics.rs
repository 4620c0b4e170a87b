//! Entropy functional, gradient norms and mass, all by trapezoidal quadrature.

use serde::{Deserialize, Serialize};

use crate::grid::Grid;
use crate::model::FieldPair;

/// One row of the diagnostics CSV. Field order is the column order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub time: f64,
    pub entropy: f64,
    /// `tau * int(|grad w|^2 + w^2)`
    pub dissipation_tau: f64,
    /// `int u (1 - rho) |grad w|^2`
    pub dissipation_mobility: f64,
    pub inequality_residual: f64,
    pub grad_u_sq: f64,
    pub grad_m_sq: f64,
    pub min_u: f64,
    pub min_m: f64,
    pub max_rho: f64,
    pub max_abs_w: f64,
}

impl EntropyReport {
    /// Report for a state without an entropy variable (explicit runs): the
    /// `w`-dependent columns are NaN.
    pub fn for_fields(time: f64, fields: &FieldPair, grid: &Grid) -> Self {
        let b = fields.bounds();
        EntropyReport {
            time,
            entropy: entropy(&fields.u, &fields.m, grid),
            dissipation_tau: f64::NAN,
            dissipation_mobility: f64::NAN,
            inequality_residual: f64::NAN,
            grad_u_sq: grad_norm_sq(&fields.u, grid),
            grad_m_sq: grad_norm_sq(&fields.m, grid),
            min_u: b.min_u,
            min_m: b.min_m,
            max_rho: b.max_rho,
            max_abs_w: f64::NAN,
        }
    }
}

/// `z ln z - z` with the continuous extension at `z = 0`.
#[inline]
fn xlogx_minus_x(z: f64) -> f64 {
    if z <= 0.0 {
        0.0
    } else {
        z * z.ln() - z
    }
}

/// Pointwise entropy density `u(ln u - 1) + (1 - rho)(ln(1 - rho) - 1)`.
#[inline]
pub fn entropy_density(u: f64, m: f64) -> f64 {
    xlogx_minus_x(u) + xlogx_minus_x(1.0 - u - m)
}

pub fn entropy(u: &[f64], m: &[f64], grid: &Grid) -> f64 {
    let dens: Vec<f64> = u.iter().zip(m).map(|(&a, &b)| entropy_density(a, b)).collect();
    grid.integrate(&dens)
}

pub fn mass(a: &[f64], grid: &Grid) -> f64 {
    grid.integrate(a)
}

/// Pointwise `|grad a|^2`: centred differences inside, one-sided at the boundary.
pub fn grad_sq_pointwise(a: &[f64], grid: &Grid) -> Vec<f64> {
    let dx = grid.spacing();
    let mut out = vec![0.0; grid.len()];
    for axis in 0..grid.dim() {
        for line in grid.lines(axis) {
            let n = line.len;
            for k in 0..n {
                let d = if k == 0 {
                    (a[line.index(1)] - a[line.index(0)]) / dx
                } else if k + 1 == n {
                    (a[line.index(n - 1)] - a[line.index(n - 2)]) / dx
                } else {
                    (a[line.index(k + 1)] - a[line.index(k - 1)]) / (2.0 * dx)
                };
                out[line.index(k)] += d * d;
            }
        }
    }
    out
}

/// Discrete `||grad a||^2_{L^2}`.
pub fn grad_norm_sq(a: &[f64], grid: &Grid) -> f64 {
    grid.integrate(&grad_sq_pointwise(a, grid))
}
