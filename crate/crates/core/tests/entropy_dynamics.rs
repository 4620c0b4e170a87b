//! Entropy-scheme behaviour over steps and short runs.

use ecm_invade::diagnostics::entropy;
use ecm_invade::entropy_scheme::{
    entropy_variable, implicit_step, run, u_from_w, EntropyState, SchemeConfig,
};
use ecm_invade::explicit::{integrate, ExplicitConfig};
use ecm_invade::ic::step_ic;
use ecm_invade::{FieldPair, Grid, ModelParams};
use proptest::prelude::*;

/// Smooth state with vanishing normal derivatives at both ends of [0, 10].
fn smooth_state(g: &Grid) -> FieldPair {
    let x = g.axis_coordinates();
    let k = std::f64::consts::PI / 5.0;
    FieldPair::new(
        x.iter().map(|x| 0.3 + 0.1 * (k * x).cos()).collect(),
        x.iter().map(|x| 0.3 + 0.1 * (0.5 * k * x).cos()).collect(),
    )
    .unwrap()
}

#[test]
fn single_step_matches_explicit_to_second_order() {
    let g = Grid::new(1, 0.0, 10.0, 0.1).unwrap();
    let p = ModelParams::new(1.0, 0.5).unwrap();
    let f0 = smooth_state(&g);
    let s0 = EntropyState {
        w: entropy_variable(&f0.u, &f0.m).unwrap(),
        fields: f0.clone(),
        time: 0.0,
        tau: 0.01,
    };
    let diffs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&tau| {
            let cfg = SchemeConfig {
                tau,
                ..Default::default()
            };
            let implicit = implicit_step(&s0, &p, &g, &cfg).unwrap().state.fields;
            let ecfg = ExplicitConfig {
                t_end: tau,
                snapshot_interval: tau,
                dt_init: tau / 20.0,
                ..Default::default()
            };
            let explicit = integrate(&f0, &p, &g, &ecfg).unwrap().snapshots.pop().unwrap().fields;
            implicit.sup_distance(&explicit)
        })
        .collect();
    for w in diffs.windows(2) {
        let ratio = w[0] / w[1];
        assert!(ratio > 3.0 && ratio < 5.0, "{diffs:?}");
    }
}

#[test]
fn entropy_growth_is_at_most_linear() {
    let g = Grid::new(1, 0.0, 50.0, 0.1).unwrap();
    let p = ModelParams::new(1.0, 0.5).unwrap();
    let f0 = step_ic(&g, &p);
    let r = run(&f0, &p, &g, &SchemeConfig::default(), 10.0, 1.0).unwrap();
    let s0 = EntropyState::initial(&f0, 0.01).unwrap();
    let e0 = entropy(&s0.fields.u, &s0.fields.m, &g);
    for rep in &r.reports {
        assert!(rep.entropy - e0 <= 2.0 * g.volume() * rep.time + 1e-9);
        assert!(rep.dissipation_tau >= 0.0 && rep.dissipation_mobility >= 0.0);
    }
    assert_eq!(r.snapshots.len(), 11);
    assert_eq!(r.stats.tau_halvings, 0);
}

#[test]
fn m_is_monotone_and_bounds_strict_over_a_run() {
    let g = Grid::new(1, 0.0, 30.0, 0.1).unwrap();
    let p = ModelParams::new(10.0, 0.5).unwrap();
    let r = run(&step_ic(&g, &p), &p, &g, &SchemeConfig::default(), 3.0, 0.5).unwrap();
    for w in r.snapshots[1..].windows(2) {
        for (a, b) in w[1].fields.m.iter().zip(&w[0].fields.m) {
            assert!(a <= b);
        }
    }
    for rep in &r.reports {
        assert!(rep.min_u > 0.0 && rep.min_m > 0.0 && rep.max_rho < 1.0);
    }
}

#[test]
fn round_trip_where_double_precision_allows() {
    // Once the void fraction 1 - u - m drops below about 1e-6 (1 - m), the
    // rounding of u alone moves w by more than 1e-10, so the range stops at
    // a void fraction of 1e-5 (1 - m).
    let mut max_err: f64 = 0.0;
    for i in 0..=200 {
        for j in 0..=50 {
            let m = 0.999 * j as f64 / 50.0;
            let w_max = ((1.0 - m) / 1e-5).ln();
            let w = -30.0 + (w_max + 30.0) * i as f64 / 200.0;
            let u = u_from_w(&[w], &[m]);
            let back = entropy_variable(&u, &[m]).unwrap()[0];
            max_err = max_err.max((back - w).abs());
        }
    }
    assert!(max_err < 1e-10, "{max_err:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_states_step_within_strict_bounds(
        amp_u in 0.0f64..0.45, amp_m in 0.0f64..0.45, k in 0.1f64..2.0, lambda in 0.0f64..50.0,
    ) {
        let g = Grid::new(1, 0.0, 5.0, 0.1).unwrap();
        let x = g.axis_coordinates();
        let u: Vec<f64> = x.iter().map(|x| 0.5 + amp_u * (k * x).sin()).collect();
        let m: Vec<f64> = x.iter().zip(&u).map(|(x, u)| (1.0 - u) * (0.5 + amp_m * (k * x).cos())).collect();
        let f = FieldPair::new(u, m).unwrap();
        let s = EntropyState { w: entropy_variable(&f.u, &f.m).unwrap(), fields: f, time: 0.0, tau: 0.01 };
        let p = ModelParams::new(lambda, 0.5).unwrap();
        let info = implicit_step(&s, &p, &g, &SchemeConfig::default()).unwrap();
        prop_assert!(info.state.strictly_bounded());
        prop_assert!(info.closed_form_residual < 1e-9);
        for (a, b) in info.state.fields.m.iter().zip(&s.fields.m) {
            prop_assert!(a <= b);
        }
    }
}
