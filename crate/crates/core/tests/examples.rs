#![allow(clippy::needless_range_loop)]

//! Documented operation examples, each checked against an oracle computed
//! independently in this file.

use bellkit_core::dynamics::{
    detection_time, energy, energy_drift, interior_grid, ode_residual, potential,
    simulate_detectors, uniform_grid, DetectorConfig, SystemParams, TrajectoryFamily,
};
use bellkit_core::feasibility::{
    chsh_value, enumerate_deterministic_strategies, local_decomposition,
    search_oneway_single_lambda, verify_oneway_form, LocalDecomposition, OneWayDecomposition,
    OneWayDims, OneWaySearch, SEARCH_DISCLAIMER,
};
use bellkit_core::probmodel::{Behavior, HiddenVariableModel, ScenarioShape, Tolerances};
use bellkit_core::properties::*;
use bellkit_core::scenarios::*;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn spin(i: usize) -> f64 {
    [1.0, -1.0][i]
}

/// Angle of a direction in the z–x plane, measured from z toward x.
fn angle(v: [f64; 3]) -> f64 {
    v[0].atan2(v[2])
}

#[test]
fn singlet_matches_cosine_law() {
    let (da, db) = DirectionSet::chsh_optimal();
    let b = make_singlet_behavior(&da, &db).unwrap();
    assert!(b.validate(&tol()).unwrap().holds);
    for x in 0..2 {
        for y in 0..2 {
            let c = (angle(da.0[x].vector) - angle(db.0[y].vector)).cos();
            for a in 0..2 {
                for bb in 0..2 {
                    let want = 0.25 * (1.0 - spin(a) * spin(bb) * c);
                    assert!((b.get(x, y, a, bb) - want).abs() < 1e-15);
                }
            }
        }
    }
}

#[test]
fn example1_checker_profile() {
    let dirs = DirectionSet::default_pair();
    let m = make_example1_model(&dirs, &dirs).unwrap();
    // Oracle: WL violation is ½ max |x·y − x·y′| = ½ for orthogonal z, x.
    let wl = check_weak_locality(&m, &tol()).unwrap();
    assert!(!wl.holds);
    assert!((wl.max_violation - 0.5).abs() < 1e-12);
    assert!(check_outcome_independence(&m, &tol()).unwrap().holds);
    assert!(check_measurement_independence(&m, &tol()).unwrap().holds);
    assert!(!check_local_causality(&m, &tol()).unwrap().holds);
    assert!(verify_lc_equivalence(&m, &tol()).unwrap());
    // Marginal at λ = +1: ½(1 − a x·y).
    for x in 0..2 {
        for y in 0..2 {
            let dot = if x == y { 1.0 } else { 0.0 };
            let ma = m.marginal_a(x, y, 0).unwrap();
            for a in 0..2 {
                assert!((ma[a] - 0.5 * (1.0 - spin(a) * dot)).abs() < 1e-15);
            }
        }
    }
    let agg = m.aggregate_behavior(&tol()).unwrap();
    let singlet = make_singlet_behavior(&dirs, &dirs).unwrap();
    assert_eq!(agg.table(), singlet.table());
}

#[test]
fn prop1_counterexample_profile() {
    for n in 2..=4 {
        let m = make_prop1_counterexample(n).unwrap();
        let b = m.aggregate_behavior(&tol()).unwrap();
        for a in 0..n {
            for bb in 0..n {
                assert_eq!(
                    b.get(0, 0, a, bb),
                    if a == bb { 1.0 / n as f64 } else { 0.0 }
                );
            }
        }
        let wl = check_weak_locality(&m, &tol()).unwrap();
        assert_eq!(wl.max_violation, 0.0);
        let id = RelabelMap::identity(m.shape()).unwrap();
        assert!(
            check_perfect_correlation(&b, 0, 0, &id, &tol())
                .unwrap()
                .holds
        );
        let det = check_determinism(&m, &tol()).unwrap();
        // Oracle: marginals are uniform 1/n, distance from a point mass 1 − 1/n.
        assert!((det.max_violation - (1.0 - 1.0 / n as f64)).abs() < 1e-12);
        let oi = check_outcome_independence(&m, &tol()).unwrap();
        assert!((oi.max_violation - (1.0 / n as f64 - 1.0 / (n * n) as f64)).abs() < 1e-12);
        assert!(verify_lc_equivalence(&m, &tol()).unwrap());
    }
}

#[test]
fn singlet_perfect_anticorrelation_at_equal_settings() {
    let dirs = DirectionSet::default_pair();
    let b = make_singlet_behavior(&dirs, &dirs).unwrap();
    let flip = spin_flip_relabel(b.shape()).unwrap();
    assert_eq!(
        check_perfect_correlation(&b, 1, 1, &flip, &tol())
            .unwrap()
            .max_violation,
        0.0
    );
    let id = RelabelMap::identity(b.shape()).unwrap();
    assert_eq!(
        check_perfect_correlation(&b, 1, 1, &id, &tol())
            .unwrap()
            .max_violation,
        1.0
    );
}

#[test]
fn example2_deterministic_at_aligned_settings() {
    let dirs = DirectionSet::parse("z,x,30").unwrap();
    let m = make_example2_model(&dirs).unwrap();
    let aligned = m.restrict(&[2], &[2]).unwrap();
    assert!(check_determinism(&aligned, &tol()).unwrap().holds);
    assert!(!check_determinism(&m, &tol()).unwrap().holds);
    let id = RelabelMap::identity(m.shape()).unwrap();
    let w = verify_prop2(&m, 2, 2, &id, &tol()).unwrap();
    assert!(w.premise_met && w.violations.is_empty());
    assert_eq!(w.deterministic_at.len(), 2);
}

#[test]
fn einstein_box_incompleteness() {
    let m = make_einstein_box_model().unwrap();
    let b = m.aggregate_behavior(&tol()).unwrap();
    let r = einstein_box_relabel(b.shape()).unwrap();
    let w = incompleteness_witness(&b, 0, 0, &r, &tol()).unwrap();
    // Oracle: kernel ½ at (found, not-found) against product ½·½.
    assert!((w.violation - 0.25).abs() < 1e-12);
}

#[test]
fn deterministic_strategies_obey_chsh_bound() {
    let b = make_pr_box().unwrap();
    let shape = b.shape().clone();
    let strategies = enumerate_deterministic_strategies(&shape).unwrap();
    assert_eq!(strategies.len(), 16);
    let mut best: f64 = 0.0;
    // Oracle: S = f(0)g(0) + f(0)g(1) + f(1)g(0) − f(1)g(1) on ±1 assignments.
    for fa in 0..4usize {
        for fb in 0..4usize {
            let f = |x: usize| spin((fa >> (1 - x)) & 1);
            let g = |y: usize| spin((fb >> (1 - y)) & 1);
            let s = f(0) * g(0) + f(0) * g(1) + f(1) * g(0) - f(1) * g(1);
            best = best.max(s.abs());
        }
    }
    assert_eq!(best, 2.0);
    let mut via_tables: f64 = 0.0;
    for s in &strategies {
        let t = Behavior::new(shape.clone(), s.table(&shape)).unwrap();
        via_tables = via_tables.max(chsh_value(&t, 0, 1, 0, 1).unwrap().abs());
    }
    assert_eq!(via_tables, 2.0);
    assert_eq!(chsh_value(&b, 0, 1, 0, 1).unwrap(), 4.0);
}

#[test]
fn singlet_chsh_and_local_polytope() {
    let (da, db) = DirectionSet::chsh_optimal();
    let b = make_singlet_behavior(&da, &db).unwrap();
    // Oracle: E = −cos(θa − θb); angles 0, 90 against 45, −45 degrees.
    let e = |ta: f64, tb: f64| -((ta - tb).to_radians()).cos();
    let s_oracle = e(0.0, 45.0) + e(0.0, -45.0) + e(90.0, 45.0) - e(90.0, -45.0);
    let s = chsh_value(&b, 0, 1, 0, 1).unwrap();
    assert!((s - s_oracle).abs() < 1e-12);
    assert!((s.abs() - 2.0 * 2f64.sqrt()).abs() < 1e-9);
    match local_decomposition(&b, &tol()).unwrap() {
        LocalDecomposition::Infeasible { certificate, .. } => {
            assert!((certificate.value - 2.0 * 2f64.sqrt()).abs() < 1e-9);
            assert_eq!(certificate.local_bound, 2.0);
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn correlated_single_setting_is_local() {
    let b = make_prop1_counterexample(2)
        .unwrap()
        .aggregate_behavior(&tol())
        .unwrap();
    match local_decomposition(&b, &tol()).unwrap() {
        LocalDecomposition::Feasible {
            weights, residual, ..
        } => {
            assert!(residual <= 1e-12);
            assert_eq!(weights.len(), 2);
            for w in weights {
                assert!((w - 0.5).abs() < 1e-12);
            }
        }
        other => panic!("expected feasible, got {other:?}"),
    }
}

fn delta_decomposition(n: usize) -> OneWayDecomposition {
    let dims = OneWayDims {
        lambdas: 1,
        settings_a: 1,
        settings_b: 1,
        outcomes_a: n,
        outcomes_b: n,
    };
    let mut d = OneWayDecomposition::uniform(dims, 0.0);
    // p(a|b,x) = δ_ab
    d.a_given_b = (0..n * n)
        .map(|i| if i / n == i % n { 1.0 } else { 0.0 })
        .collect();
    d
}

#[test]
fn oneway_examples() {
    let m = make_prop1_counterexample(2).unwrap();
    let r = verify_oneway_form(&m, &delta_decomposition(2), &tol()).unwrap();
    assert_eq!(r.max_violation, 0.0);

    let product = make_product_model().unwrap();
    let emb = OneWayDecomposition::canonical_embedding(&product, 1.0);
    assert!(
        verify_oneway_form(&product, &emb, &tol())
            .unwrap()
            .max_violation
            <= 1e-12
    );

    let wrong = OneWayDecomposition::uniform(OneWayDims::of(m.shape()), 0.3);
    assert!(!verify_oneway_form(&m, &wrong, &tol()).unwrap().holds);
    let mismatch = OneWayDecomposition::uniform(OneWayDims::of(product.shape()), 0.3);
    assert!(verify_oneway_form(&m, &mismatch, &tol()).is_err());
}

#[test]
fn oneway_search_examples() {
    let t = Tolerances::with_prop(1e-6);
    let product = make_product_behavior().unwrap();
    assert!(matches!(
        search_oneway_single_lambda(&product, 10, &t).unwrap(),
        OneWaySearch::Found { .. }
    ));
    let delta = make_prop1_counterexample(2)
        .unwrap()
        .aggregate_behavior(&tol())
        .unwrap();
    match search_oneway_single_lambda(&delta, 10, &t).unwrap() {
        OneWaySearch::Found {
            decomposition,
            residual,
        } => {
            assert_eq!(decomposition.w_ab[0], 0.0);
            assert!(residual <= 1e-6);
            let model = delta.as_singleton_model("l").unwrap();
            assert!(
                verify_oneway_form(&model, &decomposition, &t)
                    .unwrap()
                    .holds
            );
        }
        other => panic!("expected a decomposition, got {other:?}"),
    }
    let (da, db) = DirectionSet::chsh_optimal();
    let singlet = make_singlet_behavior(&da, &db).unwrap();
    match search_oneway_single_lambda(&singlet, 100, &t).unwrap() {
        OneWaySearch::NotFound {
            note,
            best_residual,
            ..
        } => {
            assert_eq!(note, SEARCH_DISCLAIMER);
            assert!(best_residual > 1e-6);
        }
        other => panic!("singlet unexpectedly decomposed: {other:?}"),
    }
}

#[test]
fn measurement_dependence_example() {
    let shape =
        ScenarioShape::from_labels(["x0"], ["y0", "y1"], ["0"], ["0"], ["l0", "l1"]).unwrap();
    let m = HiddenVariableModel::from_fns(
        shape,
        |_, y, l| if y == l { 1.0 } else { 0.0 },
        |_, _, _, _, _| 1.0,
    )
    .unwrap();
    assert_eq!(
        check_measurement_independence(&m, &tol())
            .unwrap()
            .max_violation,
        1.0
    );
}

fn unit_family(pause: f64) -> TrajectoryFamily {
    TrajectoryFamily::new(SystemParams::new(1.0, 1.0, 1.0).unwrap(), pause).unwrap()
}

#[test]
fn dynamics_closed_forms() {
    let p = SystemParams::new(1.0, 1.0, 1.0).unwrap();
    assert_eq!(potential(0.25, &p), -0.125);
    let f = unit_family(0.0);
    // Oracle: τ solves γ²/(32m²) τ⁴ = d/2; bisection on that equation.
    let (mut lo, mut hi) = (0.0_f64, 10.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid.powi(4) / 32.0 < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((f.tau - lo).abs() < 1e-12);
    assert_eq!(f.eval(3.0).unwrap().x_r, 1.5);
    for t in uniform_grid(6.0, 61) {
        assert!(energy(&f, t).unwrap().abs() <= 1e-12);
    }
    let h = 1e-4;
    let grid = interior_grid(0.0, 2.0, 200, 11.0 * h);
    assert!(ode_residual(&f, &grid, h).unwrap() <= 1e-6);
    let drift = energy_drift(&f, &uniform_grid(10.0, 10_000)).unwrap();
    assert!(drift <= 1e-10);
}

#[test]
fn detection_times_for_several_pauses() {
    let p = SystemParams::new(1.0, 1.0, 1.0).unwrap();
    let det = DetectorConfig::new(1.0, &p).unwrap();
    let fams: Vec<_> = [0.0, 1.0, 2.0].iter().map(|&t| unit_family(t)).collect();
    let sim = simulate_detectors(&fams, &det, 10.0).unwrap();
    assert_eq!(sim.within_run_agreement, 1.0);
    for (run, fam) in sim.runs.iter().zip(&fams) {
        // Oracle: leave the interaction region at T + 2 with unit speed from ½.
        let want = fam.pause + 2.0 + 0.5;
        assert!((run.right.time().unwrap() - want).abs() < 1e-9);
        assert!((detection_time(fam, &det) - want).abs() < 1e-12);
    }
    assert!((sim.detection_time_spread - 2.0).abs() < 1e-9);
}
