//! Initial conditions: the step data, a Gaussian-smoothed random ECM and a
//! sinusoidal ECM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{FieldPair, ModelParams};

/// Upper clamp of the random ECM is `1 - RANDOM_ECM_MARGIN`.
pub const RANDOM_ECM_MARGIN: f64 = 1e-9;

/// Radius of the cell-filled region around the origin.
const SEED_RADIUS: f64 = 1.0;

fn inside_seed(grid: &Grid) -> Vec<bool> {
    grid.radii().iter().map(|&r| r < SEED_RADIUS).collect()
}

/// `u = 1, m = 0` where `|x| < 1`; `u = 0, m = m0` elsewhere.
pub fn step_ic(grid: &Grid, params: &ModelParams) -> FieldPair {
    let inside = inside_seed(grid);
    FieldPair {
        u: inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        m: inside.iter().map(|&b| if b { 0.0 } else { params.m0 }).collect(),
    }
}

/// Normalised Gaussian weights on `-r..=r` with `r = ceil(4 sigma)`, `sigma` in lattice units.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let r = (4.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Reflective index extension `d c b a | a b c d | d c b a`.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let j = i.rem_euclid(period);
    (if j < n { j } else { period - 1 - j }) as usize
}

/// Separable Gaussian convolution with reflective boundaries, one pass per axis.
pub fn gaussian_filter(a: &[f64], grid: &Grid, sigma: f64) -> Result<Vec<f64>> {
    grid.check_len(a)?;
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as i64;
    let mut cur = a.to_vec();
    for axis in 0..grid.dim() {
        let mut next = vec![0.0; cur.len()];
        for line in grid.lines(axis) {
            for k in 0..line.len {
                next[line.index(k)] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * cur[line.index(reflect(k as i64 + j as i64 - r, line.len))])
                    .sum();
            }
        }
        cur = next;
    }
    Ok(cur)
}

/// Uniform `[0, 1]` noise smoothed by [`gaussian_filter`], rescaled to mean
/// `m0_mean`, clamped to `[0, 1 - RANDOM_ECM_MARGIN]` and zeroed inside `|x| < 1`.
pub fn random_smoothed_ecm(grid: &Grid, m0_mean: f64, sigma: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&m0_mean) {
        return Err(Error::Config(format!("ECM mean must lie in [0, 1], got {m0_mean}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..grid.len()).map(|_| rng.gen::<f64>()).collect();
    let smooth = gaussian_filter(&noise, grid, sigma)?;
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let scale = if mean > 0.0 { m0_mean / mean } else { 0.0 };
    Ok(smooth
        .iter()
        .zip(inside_seed(grid))
        .map(|(&v, inside)| {
            if inside {
                0.0
            } else {
                (v * scale).clamp(0.0, 1.0 - RANDOM_ECM_MARGIN)
            }
        })
        .collect())
}

/// Step cells with the random smoothed ECM.
pub fn random_ic(grid: &Grid, m0_mean: f64, sigma: f64, seed: u64) -> Result<FieldPair> {
    let m = random_smoothed_ecm(grid, m0_mean, sigma, seed)?;
    let u = inside_seed(grid).iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(FieldPair { u, m })
}

/// `m(x) = 0.5 + 0.25 sin(x / 10)` on a 1D grid.
pub fn sinusoidal_ecm(grid: &Grid) -> Result<Vec<f64>> {
    if grid.dim() != 1 {
        return Err(Error::Config("the sinusoidal ECM is defined on 1D grids only".into()));
    }
    Ok(grid
        .axis_coordinates()
        .iter()
        .map(|x| 0.5 + 0.25 * (x / 10.0).sin())
        .collect())
}

/// Step cells with the sinusoidal ECM, which is zeroed inside `|x| < 1` as
/// for the step data so that `u + m <= 1` holds there.
pub fn sinusoidal_ic(grid: &Grid) -> Result<FieldPair> {
    let m = sinusoidal_ecm(grid)?;
    let inside = inside_seed(grid);
    Ok(FieldPair {
        u: inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        m: inside.iter().zip(&m).map(|(&b, &m)| if b { 0.0 } else { m }).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcKind {
    Step,
    RandomGaussian,
    Sinusoidal,
    /// Spatially constant state `(ic.u, ic.m)`.
    Constant,
}

/// Initial-condition block of the run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcSpec {
    pub kind: IcKind,
    /// Filter width in lattice units (random ECM only).
    pub sigma: f64,
    /// Seed of the random ECM; falls back to the run seed when absent.
    pub seed: Option<u64>,
    /// Mean of the random ECM; falls back to `model.m0` when absent.
    pub m0: Option<f64>,
    /// Cell density of the constant state.
    pub u: f64,
    /// ECM density of the constant state; falls back to `model.m0` when absent.
    pub m: Option<f64>,
}

impl Default for IcSpec {
    fn default() -> Self {
        IcSpec {
            kind: IcKind::Step,
            sigma: 5.0,
            seed: None,
            m0: None,
            u: 0.0,
            m: None,
        }
    }
}

impl IcSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("ic.sigma must be positive, got {}", self.sigma)));
        }
        if let Some(m0) = self.m0 {
            if !(0.0..=1.0).contains(&m0) {
                return Err(Error::Config(format!("ic.m0 must lie in [0, 1], got {m0}")));
            }
        }
        let m = self.m.unwrap_or(0.0);
        if !(self.u >= 0.0 && m >= 0.0 && self.u + m <= 1.0) {
            return Err(Error::Config(format!(
                "constant state (ic.u, ic.m) = ({}, {m}) violates the box constraints",
                self.u
            )));
        }
        Ok(())
    }

    pub fn build(&self, grid: &Grid, params: &ModelParams, run_seed: u64) -> Result<FieldPair> {
        self.validate()?;
        match self.kind {
            IcKind::Step => Ok(step_ic(grid, params)),
            IcKind::RandomGaussian => random_ic(
                grid,
                self.m0.unwrap_or(params.m0),
                self.sigma,
                self.seed.unwrap_or(run_seed),
            ),
            IcKind::Sinusoidal => sinusoidal_ic(grid),
            IcKind::Constant => {
                let m = self.m.unwrap_or(params.m0);
                if self.u + m > 1.0 {
                    return Err(Error::Config(format!(
                        "constant state u + m = {} exceeds one",
                        self.u + m
                    )));
                }
                Ok(FieldPair::constant(grid, self.u, m))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn params() -> ModelParams {
        ModelParams::new(1.0, 0.5).unwrap()
    }

    #[test]
    fn step_values() {
        let g = Grid::new(1, 0.0, 200.0, 0.1).unwrap();
        let f = step_ic(&g, &params());
        assert_eq!((f.u[5], f.m[5]), (1.0, 0.0));
        assert_eq!((f.u[10], f.m[10]), (0.0, 0.5));
        let g2 = Grid::new(2, -5.0, 5.0, 1.0).unwrap();
        let f = step_ic(&g2, &params());
        let k = g2.index(8, 9); // (3, 4)
        assert_eq!((f.u[k], f.m[k]), (0.0, 0.5));
        let k = g2.index(5, 5);
        assert_eq!((f.u[k], f.m[k]), (1.0, 0.0));
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let sigma = 5.0;
        let g = Grid::new(1, 0.0, 100.0, 1.0).unwrap();
        let mut a = vec![0.0; g.len()];
        a[50] = 1.0;
        let out = gaussian_filter(&a, &g, sigma).unwrap();
        // independent normalisation: truncated sum of the continuous density
        let norm: f64 = (-20..=20)
            .map(|k: i32| (-(k as f64).powi(2) / 50.0).exp() / ((2.0 * PI).sqrt() * sigma))
            .sum();
        for k in -20i32..=20 {
            let analytic = (-(k as f64).powi(2) / 50.0).exp() / ((2.0 * PI).sqrt() * sigma) / norm;
            assert!((out[(50 + k) as usize] - analytic).abs() < 1e-6);
        }
        assert_eq!(out[29], 0.0);
        assert!((out[50] - 1.0 / ((2.0 * PI).sqrt() * sigma)).abs() < 1e-4);
    }

    #[test]
    fn constants_pass_unchanged() {
        let g = Grid::new(2, -5.0, 5.0, 0.5).unwrap();
        let out = gaussian_filter(&vec![0.37; g.len()], &g, 5.0).unwrap();
        assert!(out.iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn reflection_matches_half_sample_symmetry() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(9, 4), 1);
    }

    #[test]
    fn random_ecm_is_deterministic_and_admissible() {
        let g = Grid::new(2, -5.0, 5.0, 0.1).unwrap();
        let a = random_smoothed_ecm(&g, 0.5, 5.0, 42).unwrap();
        let b = random_smoothed_ecm(&g, 0.5, 5.0, 42).unwrap();
        assert_eq!(a, b);
        let c = random_smoothed_ecm(&g, 0.5, 5.0, 43).unwrap();
        assert_ne!(a, c);
        assert!(a.iter().all(|&m| (0.0..1.0).contains(&m)));
        assert_eq!(a[g.index(50, 50)], 0.0);
        let f = random_ic(&g, 0.5, 5.0, 42).unwrap();
        assert!(f.first_box_violation(0.0).is_none());
    }

    #[test]
    fn sinusoidal_values() {
        let g = Grid::new(1, 0.0, 200.0, 0.1).unwrap();
        let m = sinusoidal_ecm(&g).unwrap();
        assert_eq!(m[0], 0.5);
        assert!(m.iter().all(|&v| (0.25..=0.75).contains(&v)));
        let x = 5.0 * PI;
        assert!((0.5 + 0.25 * (x / 10.0f64).sin() - 0.75).abs() < 1e-15);
        let f = sinusoidal_ic(&g).unwrap();
        assert!(f.first_box_violation(0.0).is_none());
        assert!(sinusoidal_ecm(&Grid::new(2, 0.0, 1.0, 0.5).unwrap()).is_err());
    }

    #[test]
    fn every_kind_builds_admissible_data() {
        let g = Grid::new(1, 0.0, 20.0, 0.1).unwrap();
        for kind in [IcKind::Step, IcKind::RandomGaussian, IcKind::Sinusoidal, IcKind::Constant] {
            let spec = IcSpec { kind, ..Default::default() };
            let f = spec.build(&g, &params(), 1).unwrap();
            assert!(f.first_box_violation(0.0).is_none());
        }
    }
}
