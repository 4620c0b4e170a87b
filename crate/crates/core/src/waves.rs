//! Front tracking and travelling-wave speed estimation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explicit::Snapshot;
use crate::grid::Grid;
use crate::model::FieldPair;

/// Default front threshold on `u`.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

/// Number of rays used for the azimuthal spread of a 2D front.
pub const AZIMUTHAL_RAYS: usize = 64;

/// Front position on a 1D profile sampled at `x0 + i * dx`.
///
/// Scans from the right for the first point with `u >= threshold` and
/// interpolates linearly between it and its right neighbour.
pub fn front_position_profile(u: &[f64], x0: f64, dx: f64, threshold: f64) -> Result<f64> {
    let n = u.len();
    let i = (0..n).rev().find(|&i| u[i] >= threshold).ok_or_else(|| {
        Error::FrontNotFound(format!("u stays below the threshold {threshold}"))
    })?;
    if i + 1 == n {
        return Err(Error::FrontNotFound(format!(
            "u >= {threshold} at the right boundary (front left the domain or never formed)"
        )));
    }
    let (a, b) = (u[i], u[i + 1]);
    Ok(x0 + dx * (i as f64 + (a - threshold) / (a - b)))
}

/// Frontmost downward crossing of `threshold` by a 1D field.
pub fn front_position(u: &[f64], grid: &Grid, threshold: f64) -> Result<f64> {
    if grid.dim() != 1 {
        return Err(Error::Config(
            "front_position needs a 1D grid; use front_radius for 2D".into(),
        ));
    }
    grid.check_len(u)?;
    front_position_profile(u, grid.extent().0, grid.spacing(), threshold)
}

/// Bilinear interpolation of a 2D field at `(x, y)` inside the grid.
fn bilinear(a: &[f64], grid: &Grid, x: f64, y: f64) -> f64 {
    let (nx, ny) = grid.shape();
    let (lo, _) = grid.extent();
    let dx = grid.spacing();
    let fx = ((x - lo) / dx).clamp(0.0, (nx - 1) as f64);
    let fy = ((y - lo) / dx).clamp(0.0, (ny - 1) as f64);
    let i = (fx.floor() as usize).min(nx - 2);
    let j = (fy.floor() as usize).min(ny - 2);
    let (sx, sy) = (fx - i as f64, fy - j as f64);
    let v = |i, j| a[grid.index(i, j)];
    (1.0 - sx) * ((1.0 - sy) * v(i, j) + sy * v(i, j + 1))
        + sx * ((1.0 - sy) * v(i + 1, j) + sy * v(i + 1, j + 1))
}

/// Front radius along the ray from the origin at angle `theta`, sampled with
/// the lattice spacing up to the domain boundary.
pub fn front_radius(u: &[f64], grid: &Grid, threshold: f64, theta: f64) -> Result<f64> {
    if grid.dim() != 2 {
        return Err(Error::Config("front_radius needs a 2D grid".into()));
    }
    grid.check_len(u)?;
    let (lo, hi) = grid.extent();
    if !(lo <= 0.0 && hi >= 0.0) {
        return Err(Error::Config("front_radius needs the origin inside the domain".into()));
    }
    let dx = grid.spacing();
    let (c, s) = (theta.cos(), theta.sin());
    // distance from the origin to the square boundary along the ray
    let reach = |d: f64, lo: f64, hi: f64| {
        if d > 1e-15 {
            hi / d
        } else if d < -1e-15 {
            lo / d
        } else {
            f64::INFINITY
        }
    };
    let r_max = reach(c, lo, hi).min(reach(s, lo, hi));
    let samples = (r_max / dx + 1e-9).floor() as usize + 1;
    let profile: Vec<f64> = (0..samples)
        .map(|k| {
            let r = k as f64 * dx;
            bilinear(u, grid, r * c, r * s)
        })
        .collect();
    front_position_profile(&profile, 0.0, dx, threshold)
}

/// Front position of a 1D field, or front radius along the positive x-axis in 2D.
pub fn front_of(u: &[f64], grid: &Grid, threshold: f64) -> Result<f64> {
    match grid.dim() {
        1 => front_position(u, grid, threshold),
        _ => front_radius(u, grid, threshold, 0.0),
    }
}

/// Mean and standard deviation of the front radius over equally spaced rays.
pub fn azimuthal_spread(u: &[f64], grid: &Grid, threshold: f64, rays: usize) -> Result<(f64, f64)> {
    if rays == 0 {
        return Err(Error::InsufficientData("no rays requested".into()));
    }
    let radii = (0..rays)
        .map(|k| {
            let theta = 2.0 * std::f64::consts::PI * k as f64 / rays as f64;
            front_radius(u, grid, threshold, theta)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = radii.iter().sum::<f64>() / rays as f64;
    let var = radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rays as f64;
    Ok((mean, var.sqrt()))
}

/// Ordinary least-squares slope of `x` against `t` over points with
/// `t` in `window` (inclusive). Returns the slope and the RMS fit error.
pub fn estimate_speed(times: &[f64], xs: &[f64], window: (f64, f64)) -> Result<(f64, f64)> {
    if times.len() != xs.len() {
        return Err(Error::Shape {
            expected: times.len(),
            actual: xs.len(),
        });
    }
    let eps = 1e-9 * window.1.abs().max(1.0);
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(xs)
        .filter(|(&t, _)| t >= window.0 - eps && t <= window.1 + eps)
        .map(|(&t, &x)| (t, x))
        .collect();
    if pts.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} points in fit window [{}, {}], need at least 3",
            pts.len(),
            window.0,
            window.1
        )));
    }
    let n = pts.len() as f64;
    let t_mean = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let x_mean = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - t_mean).powi(2)).sum();
    let stx: f64 = pts.iter().map(|p| (p.0 - t_mean) * (p.1 - x_mean)).sum();
    if stt == 0.0 {
        return Err(Error::InsufficientData("all fit times coincide".into()));
    }
    let slope = stx / stt;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - x_mean - slope * (p.0 - t_mean)).powi(2))
        .sum();
    Ok((slope, (sse / n).sqrt()))
}

/// Minimum travelling-wave speed `2 sqrt(1 - m0)` from the linearisation ahead of the front.
pub fn analytic_min_speed(m0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&m0) {
        return Err(Error::Domain {
            index: 0,
            message: format!("m0 must lie in [0, 1], got {m0}"),
        });
    }
    Ok(2.0 * (1.0 - m0).sqrt())
}

/// Default fit window: the last half of the time horizon.
pub fn default_fit_window(t_first: f64, t_last: f64) -> (f64, f64) {
    (0.5 * (t_first + t_last), t_last)
}

/// Front positions over time and the fitted speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveTrace {
    pub times: Vec<f64>,
    pub front_positions: Vec<f64>,
    pub threshold: f64,
    pub fitted_speed: f64,
    pub fit_window: (f64, f64),
    pub fit_residual: f64,
}

impl WaveTrace {
    pub fn fit(
        times: Vec<f64>,
        front_positions: Vec<f64>,
        threshold: f64,
        window: Option<(f64, f64)>,
    ) -> Result<Self> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("trace times must be strictly increasing".into()));
        }
        let (first, last) = match (times.first(), times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::InsufficientData("empty trace".into())),
        };
        let fit_window = window.unwrap_or_else(|| default_fit_window(first, last));
        if fit_window.0 < first - 1e-9 || fit_window.1 > last + 1e-9 || fit_window.0 > fit_window.1 {
            return Err(Error::Config(format!(
                "fit window [{}, {}] not inside the trace [{first}, {last}]",
                fit_window.0, fit_window.1
            )));
        }
        let (fitted_speed, fit_residual) = estimate_speed(&times, &front_positions, fit_window)?;
        Ok(WaveTrace {
            times,
            front_positions,
            threshold,
            fitted_speed,
            fit_window,
            fit_residual,
        })
    }

    /// Tracks the front through a sequence of snapshots (positive x-axis in 2D).
    pub fn from_snapshots(
        snapshots: &[Snapshot],
        grid: &Grid,
        threshold: f64,
        window: Option<(f64, f64)>,
    ) -> Result<Self> {
        let mut times = Vec::with_capacity(snapshots.len());
        let mut xs = Vec::with_capacity(snapshots.len());
        for s in snapshots {
            times.push(s.time);
            xs.push(front_of(&s.fields.u, grid, threshold)?);
        }
        Self::fit(times, xs, threshold, window)
    }
}

/// Width of the region where cells and partially degraded matrix coexist:
/// the measure of `{u > u_threshold} ∩ {lower * m0 < m < upper * m0}`.
pub fn overlap_width(
    fields: &FieldPair,
    grid: &Grid,
    m0: f64,
    u_threshold: f64,
    lower: f64,
    upper: f64,
) -> Result<f64> {
    fields.check_grid(grid)?;
    let indicator: Vec<f64> = fields
        .u
        .iter()
        .zip(&fields.m)
        .map(|(&u, &m)| {
            if u > u_threshold && m > lower * m0 && m < upper * m0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    // lattice-cell measure, so that isolated points count a full cell
    Ok(indicator.iter().sum::<f64>() * grid.spacing().powi(grid.dim() as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn front_interpolates() {
        let g = Grid::new(1, 0.0, 0.3, 0.1).unwrap();
        let x = front_position(&[1.0, 1.0, 0.05, 0.0], &g, 0.1).unwrap();
        assert!((x - (0.1 + 0.1 * 0.9 / 0.95)).abs() < 1e-12);
        assert!((x - 0.194737).abs() < 1e-6);
    }

    #[test]
    fn front_degenerate_cases() {
        let g = Grid::new(1, 0.0, 0.3, 0.1).unwrap();
        assert!(matches!(front_position(&[1.0; 4], &g, 0.1), Err(Error::FrontNotFound(_))));
        assert!(matches!(front_position(&[0.0; 4], &g, 0.1), Err(Error::FrontNotFound(_))));
        let x = front_position(&[1.0, 0.1, 0.0, 0.0], &g, 0.1).unwrap();
        assert!((x - 0.1).abs() < 1e-15);
    }

    #[test]
    fn frontmost_crossing_wins() {
        let g = Grid::new(1, 0.0, 0.5, 0.1).unwrap();
        let x = front_position(&[1.0, 0.0, 0.0, 1.0, 0.0, 0.0], &g, 0.5).unwrap();
        assert!((x - 0.35).abs() < 1e-12);
    }

    #[test]
    fn speed_fits() {
        let t: Vec<f64> = (0..50).map(|k| k as f64).collect();
        let x: Vec<f64> = t.iter().map(|t| 2.0 * t).collect();
        let (c, r) = estimate_speed(&t, &x, (0.0, 49.0)).unwrap();
        assert!((c - 2.0).abs() < 1e-12 && r < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = t.iter().map(|t| 1.414 * t + rng.gen_range(-0.01..0.01)).collect();
        let (c, _) = estimate_speed(&t, &x, (0.0, 49.0)).unwrap();
        assert!((c - 1.414).abs() < 0.01);

        let (c, r) = estimate_speed(&t, &vec![3.0; 50], (0.0, 49.0)).unwrap();
        assert_eq!((c, r), (0.0, 0.0));

        assert!(matches!(
            estimate_speed(&t, &x, (10.0, 11.0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn analytic_speeds() {
        assert_eq!(analytic_min_speed(0.0).unwrap(), 2.0);
        assert!((analytic_min_speed(0.5).unwrap() - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert_eq!(analytic_min_speed(1.0).unwrap(), 0.0);
        assert!(matches!(analytic_min_speed(1.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn trace_uses_last_half_by_default() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64).collect();
        // accelerating start, constant speed afterwards
        let x: Vec<f64> = t.iter().map(|&t| if t < 50.0 { 0.01 * t * t } else { 25.0 + (t - 50.0) }).collect();
        let tr = WaveTrace::fit(t, x, 0.1, None).unwrap();
        assert_eq!(tr.fit_window, (50.0, 100.0));
        assert!((tr.fitted_speed - 1.0).abs() < 1e-12);
    }

    #[test]
    fn radial_front_in_2d() {
        let g = Grid::new(2, -5.0, 5.0, 0.1).unwrap();
        let u: Vec<f64> = g.radii().iter().map(|&r| (1.0 - r / 4.0).max(0.0)).collect();
        // u = 0.1 at r = 3.6
        let r0 = front_of(&u, &g, 0.1).unwrap();
        assert!((r0 - 3.6).abs() < 1e-9);
        let (mean, sd) = azimuthal_spread(&u, &g, 0.1, AZIMUTHAL_RAYS).unwrap();
        assert!((mean - 3.6).abs() < 0.02, "{mean}");
        assert!(sd < 0.02, "{sd}");
    }

    #[test]
    fn overlap_counts_coexistence() {
        let g = Grid::new(1, 0.0, 1.0, 0.1).unwrap();
        let u = vec![1.0, 1.0, 0.8, 0.5, 0.2, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = vec![0.0, 0.02, 0.1, 0.3, 0.4, 0.48, 0.5, 0.5, 0.5, 0.5, 0.5];
        let f = FieldPair::new(u, m).unwrap();
        let w = overlap_width(&f, &g, 0.5, 0.1, 0.1, 0.9).unwrap();
        assert!((w - 0.3).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn front_translation_equivariant(shift in 0usize..40, front in 5usize..50, tail in 0.0f64..0.09) {
            let n = 100;
            let g = Grid::new(1, 0.0, (n - 1) as f64 * 0.1, 0.1).unwrap();
            let profile = |s: usize| -> Vec<f64> {
                (0..n).map(|i| if i <= front + s { 1.0 } else if i == front + s + 1 { tail } else { 0.0 }).collect()
            };
            let a = front_position(&profile(0), &g, 0.1).unwrap();
            let b = front_position(&profile(shift), &g, 0.1).unwrap();
            prop_assert!((b - a - shift as f64 * 0.1).abs() < 1e-9);
        }

        #[test]
        fn speed_shift_invariant(c in -3.0f64..3.0, k in -100.0f64..100.0, noise in proptest::collection::vec(-0.1f64..0.1, 20)) {
            let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
            let x: Vec<f64> = t.iter().zip(&noise).map(|(t, e)| c * t + e).collect();
            let y: Vec<f64> = x.iter().map(|x| x + k).collect();
            let (a, ra) = estimate_speed(&t, &x, (0.0, 19.0)).unwrap();
            let (b, rb) = estimate_speed(&t, &y, (0.0, 19.0)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((ra - rb).abs() < 1e-9);
        }
    }
}
