use bellkit_core::corpus::{fuzz_deterministic_joints, random_model};
use bellkit_core::dynamics::{energy_drift, uniform_grid, Branch, SystemParams, TrajectoryFamily};
use bellkit_core::feasibility::{
    chsh_family, chsh_value, enumerate_deterministic_strategies, local_decomposition,
    verify_oneway_form, OneWayDecomposition,
};
use bellkit_core::probmodel::{Behavior, HiddenVariableModel, LabelPermutation, Tolerances};
use bellkit_core::properties::*;
use bellkit_core::scenarios::{make_pr_box, SPIN_OUTCOMES};
use bellkit_core::ScenarioShape;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tol() -> Tolerances {
    Tolerances::default()
}

fn model_from(seed: u64) -> HiddenVariableModel {
    random_model(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

fn random_permutation(m: &HiddenVariableModel, rng: &mut ChaCha8Rng) -> LabelPermutation {
    let s = m.shape();
    LabelPermutation {
        settings_a: shuffled(s.n_settings_a(), rng),
        settings_b: shuffled(s.n_settings_b(), rng),
        outcomes_a: shuffled(s.n_outcomes_a(), rng),
        outcomes_b: shuffled(s.n_outcomes_b(), rng),
        lambdas: shuffled(s.n_lambdas(), rng),
    }
}

/// Outcome-independence gap of one cell, computed from the raw tables.
fn oi_cell(m: &HiddenVariableModel, x: usize, y: usize, l: usize, a: usize, b: usize) -> f64 {
    let s = m.shape();
    let pa: f64 = (0..s.n_outcomes_b())
        .map(|bb| m.kernel(x, y, l, a, bb))
        .sum();
    let pb: f64 = (0..s.n_outcomes_a())
        .map(|aa| m.kernel(x, y, l, aa, b))
        .sum();
    (m.kernel(x, y, l, a, b) - pa * pb).abs()
}

type Checker =
    fn(&HiddenVariableModel, &Tolerances) -> bellkit_core::Result<bellkit_core::PropertyReport>;

const CHECKERS: [Checker; 5] = [
    check_weak_locality,
    check_outcome_independence,
    check_local_causality,
    check_measurement_independence,
    check_determinism,
];

/// Mixture of a relabelled PR box, deterministic strategies and white noise.
fn nonsignalling_behavior(seed: u64) -> Behavior {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pr = make_pr_box().unwrap();
    let shape = pr.shape().clone();
    let strategies = enumerate_deterministic_strategies(&shape).unwrap();
    let flip_x = rng.random_range(0..2);
    let flip_y = rng.random_range(0..2);
    let flip_out = rng.random_range(0..2);
    let alpha: f64 = rng.random::<f64>().powi(2);
    let noise: f64 = rng.random::<f64>() * (1.0 - alpha);
    let k = rng.random_range(1..=4);
    let picks: Vec<(usize, f64)> = (0..k)
        .map(|_| (rng.random_range(0..16), rng.random::<f64>() + 0.01))
        .collect();
    let total: f64 = picks.iter().map(|p| p.1).sum();
    let rest = 1.0 - alpha - noise;
    Behavior::from_fn(shape.clone(), |x, y, a, b| {
        let pr_cell = pr.get(x ^ flip_x, y ^ flip_y, a ^ flip_out, b);
        let det: f64 = picks
            .iter()
            .map(|&(s, w)| w / total * strategies[s].entry(x, y, a, b))
            .sum();
        alpha * pr_cell + noise * 0.25 + rest * det
    })
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn aggregate_invariant_under_lambda_permutation(seed in any::<u64>()) {
        let m = model_from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let perm = shuffled(m.shape().n_lambdas(), &mut rng);
        let p = m.permute_lambdas(&perm).unwrap();
        let b1 = m.aggregate_behavior(&tol()).unwrap();
        let b2 = p.aggregate_behavior(&tol()).unwrap();
        for (u, v) in b1.table().iter().zip(b2.table()) {
            prop_assert!((u - v).abs() <= 1e-15);
        }
    }

    #[test]
    fn marginals_normalized_and_commute_with_aggregation(seed in any::<u64>()) {
        let m = model_from(seed);
        let s = m.shape().clone();
        let b = m.aggregate_behavior(&tol()).unwrap();
        for x in 0..s.n_settings_a() {
            for y in 0..s.n_settings_b() {
                let mut agg_a = vec![0.0; s.n_outcomes_a()];
                for l in 0..s.n_lambdas() {
                    let ma = m.marginal_a(x, y, l).unwrap();
                    let mb = m.marginal_b(x, y, l).unwrap();
                    prop_assert!((ma.iter().sum::<f64>() - 1.0).abs() <= tol().norm);
                    prop_assert!((mb.iter().sum::<f64>() - 1.0).abs() <= tol().norm);
                    for (acc, v) in agg_a.iter_mut().zip(&ma) {
                        *acc += m.weight(x, y, l) * v;
                    }
                }
                for (u, v) in b.marginal_a(x, y).iter().zip(&agg_a) {
                    prop_assert!((u - v).abs() <= 1e-15);
                }
            }
        }
    }

    #[test]
    fn checkers_invariant_under_relabelling(seed in any::<u64>()) {
        let m = model_from(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
        let perm = random_permutation(&m, &mut rng);
        let p = m.permute(&perm).unwrap();
        for check in CHECKERS {
            let r1 = check(&m, &tol()).unwrap();
            let r2 = check(&p, &tol()).unwrap();
            prop_assert!((r1.max_violation - r2.max_violation).abs() <= 1e-12);
            prop_assert_eq!(r1.holds, r2.holds);
        }
        // The permuted OI witness maps back to a maximizing cell of the original.
        let r = check_outcome_independence(&p, &tol()).unwrap();
        if let Some(w) = r.witness {
            let (x, y, l, a, b) = (w.x.unwrap(), w.y.unwrap(), w.lambda.unwrap(), w.a.unwrap(), w.b.unwrap());
            let back = oi_cell(&m, perm.settings_a[x], perm.settings_b[y], perm.lambdas[l], perm.outcomes_a[a], perm.outcomes_b[b]);
            prop_assert!((back - r.max_violation).abs() <= 1e-12);
        }
    }

    #[test]
    fn local_causality_implies_weak_locality_and_oi(seed in any::<u64>()) {
        let m = model_from(seed);
        let t = tol();
        let slack = Tolerances::new(t.norm, 3.0 * t.prop, t.support).unwrap();
        let lc = check_local_causality(&m, &t).unwrap();
        if lc.holds {
            prop_assert!(check_weak_locality(&m, &slack).unwrap().holds);
            prop_assert!(check_outcome_independence(&m, &slack).unwrap().holds);
        }
        if check_determinism(&m, &t).unwrap().holds {
            prop_assert!(check_outcome_independence(&m, &t).unwrap().holds);
        }
        prop_assert!(verify_lc_equivalence(&m, &t).unwrap());
    }

    #[test]
    fn canonical_embedding_of_local_models(seed in any::<u64>(), w in 0.0f64..=1.0) {
        let m = model_from(seed);
        if check_local_causality(&m, &tol()).unwrap().holds {
            let d = OneWayDecomposition::canonical_embedding(&m, w);
            prop_assert!(verify_oneway_form(&m, &d, &tol()).unwrap().max_violation <= 1e-12);
        }
    }

    #[test]
    fn chsh_bound_characterizes_2222_local_polytope(seed in any::<u64>()) {
        let b = nonsignalling_behavior(seed);
        let t = tol();
        let mut worst: f64 = 0.0;
        for (x, x2) in [(0, 1), (1, 0)] {
            for (y, y2) in [(0, 1), (1, 0)] {
                worst = worst.max(chsh_value(&b, x, x2, y, y2).unwrap().abs());
            }
        }
        let family = chsh_family(&b, 0, 1, 0, 1).unwrap();
        let fam_worst = family.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        prop_assert!((worst - fam_worst).abs() <= 1e-12);
        // Keep clear of the facet so the verdict does not hinge on rounding.
        prop_assume!((worst - 2.0).abs() > 1e-6);
        let feasible = local_decomposition(&b, &t).unwrap().is_feasible();
        prop_assert_eq!(feasible, worst <= 2.0 + 8.0 * t.prop);
    }

    #[test]
    fn chsh_sign_flip_metamorphic(seed in any::<u64>(), flipped in 0usize..2) {
        let b = nonsignalling_behavior(seed);
        let s = b.shape().clone();
        let c = Behavior::from_fn(s, |x, y, a, bb| if x == flipped { b.get(x, y, 1 - a, bb) } else { b.get(x, y, a, bb) }).unwrap();
        let e = |beh: &Behavior, x: usize, y: usize| -> f64 {
            let v = [1.0, -1.0];
            (0..2).flat_map(|a| (0..2).map(move |bb| (a, bb))).map(|(a, bb)| v[a] * v[bb] * beh.get(x, y, a, bb)).sum()
        };
        let sign = |x: usize| if x == flipped { -1.0 } else { 1.0 };
        let predicted = sign(0) * e(&b, 0, 0) + sign(0) * e(&b, 0, 1) + sign(1) * e(&b, 1, 0) - sign(1) * e(&b, 1, 1);
        prop_assert!((chsh_value(&c, 0, 1, 0, 1).unwrap() - predicted).abs() <= 1e-12);
    }

    #[test]
    fn dynamics_junctions_and_energy(m in 0.1f64..10.0, g in 0.1f64..10.0, d in 0.1f64..10.0, pause in 0.0f64..10.0, t in 0.0f64..40.0) {
        let fam = TrajectoryFamily::new(SystemParams::new(m, g, d).unwrap(), pause).unwrap();
        let gaps = fam.junction_gaps();
        prop_assert!(gaps.position <= 1e-10 && gaps.velocity <= 1e-10, "{:?}", gaps);
        let s = fam.eval(t).unwrap();
        prop_assert_eq!(s.x_r, -s.x_l);
        prop_assert_eq!(s.v_r, -s.v_l);
        // Sampled just inside each side of a junction the state is continuous too.
        let [_, t2] = fam.breakpoints();
        let inner = fam.eval_branch(Branch::Interaction, t2);
        let outer = fam.eval_branch(Branch::Free, t2);
        prop_assert!((inner.x_r - outer.x_r).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn energy_constant_on_dense_grid(m in 0.1f64..10.0, g in 0.1f64..10.0, d in 0.1f64..10.0, pause in 0.0f64..10.0) {
        let fam = TrajectoryFamily::new(SystemParams::new(m, g, d).unwrap(), pause).unwrap();
        let horizon = 2.0 * (pause + fam.tau) + 1.0;
        prop_assert!(energy_drift(&fam, &uniform_grid(horizon, 10_000)).unwrap() <= 1e-10);
    }
}

#[test]
fn lemma_holds_on_deterministic_joints() {
    for joint in fuzz_deterministic_joints(2_000, 99).unwrap() {
        let out = lemma_conditioning_preserves_determinism(&joint, &tol()).unwrap();
        assert!(out.holds, "{joint:?}");
    }
}

#[test]
fn deterministic_strategies_are_all_local_vertices() {
    let shape = ScenarioShape::from_labels(
        ["0", "1"],
        ["0", "1"],
        SPIN_OUTCOMES,
        SPIN_OUTCOMES,
        Vec::<&str>::new(),
    )
    .unwrap();
    for s in enumerate_deterministic_strategies(&shape).unwrap() {
        let b = Behavior::new(shape.clone(), s.table(&shape)).unwrap();
        let s_val = chsh_value(&b, 0, 1, 0, 1).unwrap();
        assert!(s_val.abs() <= 2.0);
        assert!(local_decomposition(&b, &tol()).unwrap().is_feasible());
    }
}

#[test]
fn prop2_on_fuzz_corpus() {
    use bellkit_core::corpus::fuzz_prop2_cases;
    use bellkit_core::scenarios::verify_prop2;
    let cases = fuzz_prop2_cases(2_000, 5).unwrap();
    for case in &cases {
        let w = verify_prop2(&case.model, case.x0, case.y0, &case.relabel, &tol()).unwrap();
        assert!(
            w.premise_met,
            "{} premises fail: {:?} {:?}",
            case.origin, w.oi_report, w.pc_report
        );
        assert!(w.violations.is_empty(), "{}", case.origin);
    }
    assert!(
        cases.iter().any(|c| c.origin == "example1")
            && cases.iter().any(|c| c.origin == "example2")
    );
}
