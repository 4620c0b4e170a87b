//! Uniform 1D and 2D lattices.
//!
//! Every axis of a [`Grid`] shares the same extent and spacing. Fields are
//! stored as flat `Vec<f64>` of length [`Grid::len`]; in 2D the point `(i, j)`
//! (with `i` along x and `j` along y) lives at index `i * n_y + j`, so the y
//! axis is contiguous in memory. There are no ghost cells: zero-flux
//! boundaries are imposed inside the stencils by mirroring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIVISIBILITY_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    extent_min: f64,
    extent_max: f64,
    spacing: f64,
    n: usize,
}

/// One lattice line along an axis: `len` points starting at `start`, `stride` apart.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Line {
    pub start: usize,
    pub stride: usize,
    pub len: usize,
}

impl Line {
    #[inline]
    pub fn index(&self, k: usize) -> usize {
        self.start + k * self.stride
    }
}

/// Mirrored neighbours of position `k` on a line of length `len`.
///
/// The off-grid neighbour of an end point is its interior neighbour, which
/// realises zero normal flux for the centred stencil.
#[inline]
pub(crate) fn mirrored_neighbours(k: usize, len: usize) -> (usize, usize) {
    let left = if k == 0 { 1 } else { k - 1 };
    let right = if k + 1 == len { len - 2 } else { k + 1 };
    (left, right)
}

impl Grid {
    /// Builds a grid with `dim` axes, each spanning `[extent_min, extent_max]`.
    pub fn new(dim: usize, extent_min: f64, extent_max: f64, spacing: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Config(format!("grid.dim must be 1 or 2, got {dim}")));
        }
        if !(extent_min.is_finite() && extent_max.is_finite()) || extent_max <= extent_min {
            return Err(Error::Config(format!(
                "grid extent must satisfy extent_min < extent_max, got [{extent_min}, {extent_max}]"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("grid.spacing must be positive, got {spacing}")));
        }
        let length = extent_max - extent_min;
        let cells = (length / spacing).round();
        if (cells * spacing - length).abs() > DIVISIBILITY_RTOL * length {
            return Err(Error::Config(format!(
                "grid extent length {length} is not an integer multiple of spacing {spacing}"
            )));
        }
        let n = cells as usize + 1;
        if n < 3 {
            return Err(Error::Config(format!(
                "grid needs at least 3 points per axis, got {n}"
            )));
        }
        Ok(Grid {
            dim,
            extent_min,
            extent_max,
            spacing,
            n,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.extent_min, self.extent_max)
    }

    /// Points per axis.
    pub fn n_points(&self) -> usize {
        self.n
    }

    /// Per-axis point counts, `(n_x, n_y)`; `n_y == 1` in 1D.
    pub fn shape(&self) -> (usize, usize) {
        match self.dim {
            1 => (self.n, 1),
            _ => (self.n, self.n),
        }
    }

    /// Total number of lattice points.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Measure of the domain.
    pub fn volume(&self) -> f64 {
        (self.extent_max - self.extent_min).powi(self.dim as i32)
    }

    /// Coordinate of lattice position `i` along any axis.
    #[inline]
    pub fn axis_coordinate(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.extent_max
        } else {
            self.extent_min + i as f64 * self.spacing
        }
    }

    pub fn axis_coordinates(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.axis_coordinate(i)).collect()
    }

    /// Flat index of `(i, j)`. In 1D `j` must be 0.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (_, ny) = self.shape();
        i * ny + j
    }

    /// Inverse of [`Grid::index`].
    #[inline]
    pub fn unravel(&self, k: usize) -> (usize, usize) {
        let (_, ny) = self.shape();
        (k / ny, k % ny)
    }

    /// Coordinates of the point with flat index `k` (length `dim`).
    pub fn point(&self, k: usize) -> Vec<f64> {
        let (i, j) = self.unravel(k);
        match self.dim {
            1 => vec![self.axis_coordinate(i)],
            _ => vec![self.axis_coordinate(i), self.axis_coordinate(j)],
        }
    }

    /// Row-major enumeration of all lattice coordinates.
    pub fn coordinates(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    /// Euclidean distance of every lattice point from the origin.
    pub fn radii(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.point(k).iter().map(|c| c * c).sum::<f64>().sqrt())
            .collect()
    }

    /// One-dimensional trapezoidal weight of axis position `i`.
    #[inline]
    pub fn axis_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n {
            0.5 * self.spacing
        } else {
            self.spacing
        }
    }

    /// Trapezoidal quadrature weight of the point with flat index `k`.
    #[inline]
    pub fn weight(&self, k: usize) -> f64 {
        let (i, j) = self.unravel(k);
        match self.dim {
            1 => self.axis_weight(i),
            _ => self.axis_weight(i) * self.axis_weight(j),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.weight(k)).collect()
    }

    /// Trapezoidal integral of a field.
    pub fn integrate(&self, a: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), self.len());
        a.iter().enumerate().map(|(k, v)| self.weight(k) * v).sum()
    }

    pub(crate) fn check_len(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                actual: a.len(),
            });
        }
        Ok(())
    }

    /// All lattice lines along axis `axis` (0 = x, 1 = y).
    pub(crate) fn lines(&self, axis: usize) -> impl Iterator<Item = Line> + '_ {
        let (nx, ny) = self.shape();
        let n = self.n;
        let count = self.len() / n;
        (0..count).map(move |c| match (self.dim, axis) {
            (1, _) => Line {
                start: 0,
                stride: 1,
                len: n,
            },
            (_, 0) => Line {
                start: c,
                stride: ny,
                len: nx,
            },
            _ => Line {
                start: c * ny,
                stride: 1,
                len: ny,
            },
        })
    }
}

/// Grid parameters as they appear in the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub dim: usize,
    pub extent_min: f64,
    pub extent_max: f64,
    pub spacing: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            dim: 1,
            extent_min: 0.0,
            extent_max: 200.0,
            spacing: 0.1,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        Grid::new(self.dim, self.extent_min, self.extent_max, self.spacing)
    }
}
