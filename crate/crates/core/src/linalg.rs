//! Symmetric stencil matrices on a [`Grid`] and preconditioned conjugate gradients.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Symmetric matrix with the sparsity of the 3-point (1D) or 5-point (2D) stencil.
///
/// `coupling[axis][k]` is the (nonnegative) weight of the edge between point
/// `k` and its successor along `axis`; the off-diagonal entry is its
/// negative. Entries past the end of a line are zero.
#[derive(Debug, Clone)]
pub struct StencilMatrix {
    pub diag: Vec<f64>,
    pub coupling: Vec<Vec<f64>>,
    strides: Vec<usize>,
    lens: Vec<usize>,
    ny: usize,
}

impl StencilMatrix {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.len();
        let (nx, ny) = grid.shape();
        let (strides, lens) = match grid.dim() {
            1 => (vec![1], vec![nx]),
            _ => (vec![ny, 1], vec![nx, ny]),
        };
        StencilMatrix {
            diag: vec![0.0; n],
            coupling: vec![vec![0.0; n]; grid.dim()],
            strides,
            lens,
            ny,
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Position of `k` along `axis`.
    #[inline]
    fn axis_pos(&self, k: usize, axis: usize) -> usize {
        match (self.strides.len(), axis) {
            (1, _) => k,
            (_, 0) => k / self.ny,
            _ => k % self.ny,
        }
    }

    #[inline]
    fn has_successor(&self, k: usize, axis: usize) -> bool {
        self.axis_pos(k, axis) + 1 < self.lens[axis]
    }

    /// Adds a symmetric edge `c * (e_k - e_{k+s})(e_k - e_{k+s})^T` along `axis`.
    pub fn add_edge(&mut self, axis: usize, k: usize, c: f64) {
        debug_assert!(self.has_successor(k, axis));
        let kk = k + self.strides[axis];
        self.coupling[axis][k] += c;
        self.diag[k] += c;
        self.diag[kk] += c;
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for ((yk, d), xk) in y.iter_mut().zip(&self.diag).zip(x) {
            *yk = d * xk;
        }
        for (axis, cpl) in self.coupling.iter().enumerate() {
            let s = self.strides[axis];
            for k in 0..self.len() {
                let c = cpl[k];
                if c != 0.0 {
                    y[k] -= c * x[k + s];
                    y[k + s] -= c * x[k];
                }
            }
        }
    }

    /// Dense copy, for tests and small diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut a = vec![vec![0.0; n]; n];
        for k in 0..n {
            a[k][k] = self.diag[k];
        }
        for (axis, cpl) in self.coupling.iter().enumerate() {
            let s = self.strides[axis];
            for k in 0..n {
                if cpl[k] != 0.0 {
                    a[k][k + s] -= cpl[k];
                    a[k + s][k] -= cpl[k];
                }
            }
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preconditioner {
    /// Diagonal scaling.
    Jacobi,
    /// Exact tridiagonal solves along the contiguous axis (exact in 1D).
    Line,
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

struct LinePrecond {
    // Thomas factorisation per line along the contiguous axis
    lines: Vec<(usize, usize)>,
    c_prime: Vec<f64>,
    denom: Vec<f64>,
    sub: Vec<f64>,
}

impl LinePrecond {
    fn new(a: &StencilMatrix) -> Self {
        let axis = a.strides.len() - 1;
        let len = a.lens[axis];
        let n = a.len();
        let lines: Vec<(usize, usize)> = (0..n / len).map(|c| (c * len, len)).collect();
        let cpl = &a.coupling[axis];
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        let mut sub = vec![0.0; n];
        for &(start, len) in &lines {
            for i in 0..len {
                let k = start + i;
                let upper = if i + 1 < len { -cpl[k] } else { 0.0 };
                let lower = if i > 0 { -cpl[k - 1] } else { 0.0 };
                sub[k] = lower;
                let d = if i == 0 {
                    a.diag[k]
                } else {
                    a.diag[k] - lower * c_prime[k - 1]
                };
                denom[k] = d;
                c_prime[k] = upper / d;
            }
        }
        LinePrecond {
            lines,
            c_prime,
            denom,
            sub,
        }
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for &(start, len) in &self.lines {
            for i in 0..len {
                let k = start + i;
                let prev = if i == 0 { 0.0 } else { z[k - 1] };
                z[k] = (r[k] - self.sub[k] * prev) / self.denom[k];
            }
            for i in (0..len - 1).rev() {
                let k = start + i;
                z[k] -= self.c_prime[k] * z[k + 1];
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` by preconditioned conjugate gradients, starting from the
/// contents of `x`. Stops when `||b - A x|| <= rel_tol * ||b||`.
pub fn conjugate_gradient(
    a: &StencilMatrix,
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgReport> {
    let n = a.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return Ok(CgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let line = match opts.preconditioner {
        Preconditioner::Line => Some(LinePrecond::new(a)),
        Preconditioner::Jacobi => None,
    };
    let precondition = |r: &[f64], z: &mut [f64]| match &line {
        Some(p) => p.apply(r, z),
        None => {
            for ((zk, rk), d) in z.iter_mut().zip(r).zip(&a.diag) {
                *zk = rk / d;
            }
        }
    };

    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for (rk, bk) in r.iter_mut().zip(b) {
        *rk = bk - *rk;
    }
    let mut res = dot(&r, &r).sqrt() / b_norm;
    if res <= opts.rel_tol {
        return Ok(CgReport {
            iterations: 0,
            relative_residual: res,
        });
    }
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=opts.max_iter {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::LinearSolve {
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        if res <= opts.rel_tol {
            return Ok(CgReport {
                iterations: it,
                relative_residual: res,
            });
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::LinearSolve {
        iterations: opts.max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    fn laplacian_like(grid: &Grid, shift: f64, weights: &[f64]) -> StencilMatrix {
        let mut a = StencilMatrix::zeros(grid);
        for axis in 0..grid.dim() {
            for line in grid.lines(axis) {
                for k in 0..line.len - 1 {
                    let idx = line.index(k);
                    a.add_edge(axis, idx, weights[idx]);
                }
            }
        }
        for d in a.diag.iter_mut() {
            *d += shift;
        }
        a
    }

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter().map(|row| dot(row, x)).collect()
    }

    #[test]
    fn matvec_matches_dense() {
        let g = Grid::new(2, 0.0, 1.0, 0.25).unwrap();
        let w: Vec<f64> = (0..g.len()).map(|k| 1.0 + k as f64 * 0.1).collect();
        let a = laplacian_like(&g, 0.5, &w);
        let x: Vec<f64> = (0..g.len()).map(|k| (k as f64).sin()).collect();
        let mut y = vec![0.0; g.len()];
        a.matvec(&x, &mut y);
        let yd = dense_mul(&a.to_dense(), &x);
        for (p, q) in y.iter().zip(&yd) {
            assert!((p - q).abs() < 1e-12);
        }
        let d = a.to_dense();
        for i in 0..g.len() {
            for j in 0..g.len() {
                assert_eq!(d[i][j], d[j][i]);
            }
        }
    }

    #[test]
    fn line_preconditioner_is_exact_in_1d() {
        let g = Grid::new(1, 0.0, 10.0, 0.1).unwrap();
        let w: Vec<f64> = (0..g.len()).map(|k| 0.01 + (k as f64 * 0.3).cos().abs()).collect();
        let a = laplacian_like(&g, 1e-3, &w);
        let b: Vec<f64> = (0..g.len()).map(|k| (k as f64 * 0.07).sin()).collect();
        let mut x = vec![0.0; g.len()];
        let rep = conjugate_gradient(
            &a,
            &b,
            &mut x,
            CgOptions {
                rel_tol: 1e-12,
                max_iter: 5,
                preconditioner: Preconditioner::Line,
            },
        )
        .unwrap();
        assert!(rep.iterations <= 2);
    }

    #[test]
    fn cap_exceeded_reports_residual() {
        let g = Grid::new(1, 0.0, 10.0, 0.1).unwrap();
        let a = laplacian_like(&g, 1e-4, &vec![1.0; g.len()]);
        let b: Vec<f64> = (0..g.len()).map(|k| (k as f64).cos()).collect();
        let mut x = vec![0.0; g.len()];
        let err = conjugate_gradient(
            &a,
            &b,
            &mut x,
            CgOptions {
                rel_tol: 1e-14,
                max_iter: 3,
                preconditioner: Preconditioner::Jacobi,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::LinearSolve { iterations: 3, residual } if residual > 0.0));
    }

    proptest! {
        #[test]
        fn cg_solves_spd_systems(
            w in vec(0.0f64..2.0, 49),
            b in vec(-1.0f64..1.0, 49),
            shift in 1e-3f64..1.0,
            jacobi in any::<bool>(),
        ) {
            let g = Grid::new(2, 0.0, 6.0, 1.0).unwrap();
            let a = laplacian_like(&g, shift, &w);
            let mut x = vec![0.0; g.len()];
            let preconditioner = if jacobi { Preconditioner::Jacobi } else { Preconditioner::Line };
            conjugate_gradient(&a, &b, &mut x, CgOptions { rel_tol: 1e-12, max_iter: 500, preconditioner }).unwrap();
            let ax = dense_mul(&a.to_dense(), &x);
            let bn = dot(&b, &b).sqrt();
            let rn: f64 = ax.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            prop_assert!(rn <= 1e-10 * bn.max(1e-300));
        }
    }
}
