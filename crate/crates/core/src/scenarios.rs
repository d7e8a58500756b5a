//! Concrete models and behaviors, plus proposition-level verifiers that
//! bundle the checkers.
//!
//! Spin scenarios use the outcome alphabet `{+1, -1}` on both sides; the
//! asymmetric-signalling constructions absorb the second region's outcome
//! into the hidden variable, so their λ labels are also `{+1, -1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probmodel::{
    argmax, point_mass_distance, Behavior, HiddenVariableModel, PropertyReport, ScenarioShape,
    Tolerances,
};
use crate::properties::{check_outcome_independence, check_perfect_correlation, RelabelMap};

/// Outcome labels of a spin measurement, in table order.
pub const SPIN_OUTCOMES: [&str; 2] = ["+1", "-1"];
const SPIN_VALUES: [f64; 2] = [1.0, -1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub label: String,
    pub vector: [f64; 3],
}

impl Direction {
    pub fn new(label: impl Into<String>, vector: [f64; 3]) -> Result<Self> {
        let label = label.into();
        let norm = vector.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm.is_nan() || (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NonUnitDirection(format!(
                "{label} = {vector:?} (norm {norm})"
            )));
        }
        Ok(Self { label, vector })
    }

    /// Parses `x`, `-z`, a signed sum such as `z+x` (normalized), or an
    /// angle in degrees measured from `z` towards `x`.
    pub fn parse(token: &str) -> Result<Self> {
        let t = token.trim();
        if t.is_empty() {
            return Err(Error::BadParams("empty direction".into()));
        }
        if let Ok(deg) = t.parse::<f64>() {
            let r = deg.to_radians();
            return Self::new(t, [r.sin(), 0.0, r.cos()]);
        }
        let mut v = [0.0; 3];
        let mut sign = 1.0;
        let mut terms = 0;
        for ch in t.chars() {
            match ch {
                '+' => sign = 1.0,
                '-' => sign = -1.0,
                'x' | 'y' | 'z' => {
                    let i = (ch as u8 - b'x') as usize;
                    v[i] += sign;
                    sign = 1.0;
                    terms += 1;
                }
                _ => return Err(Error::BadParams(format!("cannot parse direction `{t}`"))),
            }
        }
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if terms == 0 || norm == 0.0 {
            return Err(Error::BadParams(format!("direction `{t}` has zero length")));
        }
        if terms > 1 {
            v.iter_mut().for_each(|c| *c /= norm);
        }
        Self::new(t, v)
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.vector[0] * other.vector[0]
            + self.vector[1] * other.vector[1]
            + self.vector[2] * other.vector[2]
    }
}

/// Ordered list of spin-measurement directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet(pub Vec<Direction>);

impl DirectionSet {
    pub fn new(dirs: Vec<Direction>) -> Result<Self> {
        if dirs.is_empty() {
            return Err(Error::BadParams("direction set must not be empty".into()));
        }
        for d in &dirs {
            Direction::new(d.label.clone(), d.vector)?;
        }
        Ok(Self(dirs))
    }

    /// Comma-separated tokens, see [`Direction::parse`].
    pub fn parse(list: &str) -> Result<Self> {
        Self::new(
            list.split(',')
                .map(Direction::parse)
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// `{z, x}`.
    pub fn default_pair() -> Self {
        Self::parse("z,x").expect("static directions")
    }

    /// Side-A `{z, x}` and side-B `{(z+x)/√2, (z−x)/√2}`.
    pub fn chsh_optimal() -> (Self, Self) {
        (
            Self::parse("z,x").expect("static directions"),
            Self::parse("z+x,z-x").expect("static directions"),
        )
    }

    pub fn labels(&self) -> Vec<String> {
        self.0.iter().map(|d| d.label.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn spin_shape(
    dirs_a: &DirectionSet,
    dirs_b: &DirectionSet,
    lambdas: &[&str],
) -> Result<ScenarioShape> {
    ScenarioShape::new(
        dirs_a.labels(),
        dirs_b.labels(),
        SPIN_OUTCOMES.iter().map(|s| s.to_string()).collect(),
        SPIN_OUTCOMES.iter().map(|s| s.to_string()).collect(),
        lambdas.iter().map(|s| s.to_string()).collect(),
    )
}

/// Single setting per side, `n` outcomes, one λ with kernel `δ_ab / n`.
pub fn make_prop1_counterexample(n: usize) -> Result<HiddenVariableModel> {
    if n < 2 {
        return Err(Error::BadCardinality(format!(
            "need n >= 2 outcomes, got {n}"
        )));
    }
    let outcomes: Vec<String> = (0..n).map(|i| i.to_string()).collect();
    let shape = ScenarioShape::new(
        vec!["x0".into()],
        vec!["y0".into()],
        outcomes.clone(),
        outcomes,
        vec!["lambda0".into()],
    )?;
    let p = 1.0 / n as f64;
    HiddenVariableModel::from_fns(
        shape,
        |_, _, _| 1.0,
        |_, _, _, a, b| if a == b { p } else { 0.0 },
    )
}

/// Singlet statistics `¼(1 − ab x·y)`.
pub fn make_singlet_behavior(dirs_a: &DirectionSet, dirs_b: &DirectionSet) -> Result<Behavior> {
    let shape = spin_shape(dirs_a, dirs_b, &[])?;
    Behavior::from_fn(shape, |x, y, a, b| {
        let dot = dirs_a.0[x].dot(&dirs_b.0[y]);
        0.25 * (1.0 - SPIN_VALUES[a] * SPIN_VALUES[b] * dot)
    })
}

/// Second-to-first-region signalling model: λ is the second region's
/// outcome, and the first particle is left anti-aligned with it.
///
/// Weights are ½; kernels are `δ_{b,λ} · ½(1 − aλ x·y)`.
pub fn make_example1_model(
    dirs_a: &DirectionSet,
    dirs_b: &DirectionSet,
) -> Result<HiddenVariableModel> {
    signalling_model(dirs_a, dirs_b, -1.0)
}

/// Temporal single-particle model: the earlier measurement (outcome λ)
/// leaves the particle aligned with its direction.
///
/// Weights are ½; kernels are `δ_{b,λ} · ½(1 + aλ x·y)`.
pub fn make_example2_model(dirs: &DirectionSet) -> Result<HiddenVariableModel> {
    signalling_model(dirs, dirs, 1.0)
}

fn signalling_model(
    dirs_a: &DirectionSet,
    dirs_b: &DirectionSet,
    sign: f64,
) -> Result<HiddenVariableModel> {
    let shape = spin_shape(dirs_a, dirs_b, &SPIN_OUTCOMES)?;
    HiddenVariableModel::from_fns(
        shape,
        |_, _, _| 0.5,
        |x, y, l, a, b| {
            if b != l {
                return 0.0;
            }
            let dot = dirs_a.0[x].dot(&dirs_b.0[y]);
            if sign < 0.0 {
                0.5 * (1.0 - SPIN_VALUES[a] * SPIN_VALUES[l] * dot)
            } else {
                0.5 * (1.0 + SPIN_VALUES[a] * SPIN_VALUES[l] * dot)
            }
        },
    )
}

/// A single particle split across two regions, with the quantum state as the
/// only hidden variable: exactly one of the two detectors fires, each with
/// probability ½.
pub fn make_einstein_box_model() -> Result<HiddenVariableModel> {
    let shape = ScenarioShape::from_labels(
        ["detect-R1"],
        ["detect-R2"],
        ["found", "not-found"],
        ["found", "not-found"],
        ["psi"],
    )?;
    HiddenVariableModel::from_fns(
        shape,
        |_, _, _| 1.0,
        |_, _, _, a, b| if a != b { 0.5 } else { 0.0 },
    )
}

/// Swap relabel `found ↔ not-found` for the Einstein box.
pub fn einstein_box_relabel(shape: &ScenarioShape) -> Result<RelabelMap> {
    RelabelMap::swap(shape)
}

/// `b ↦ −b` on the spin alphabet.
pub fn spin_flip_relabel(shape: &ScenarioShape) -> Result<RelabelMap> {
    RelabelMap::from_label_pairs(
        shape,
        &[("+1".into(), "-1".into()), ("-1".into(), "+1".into())],
    )
}

/// Locally causal two-setting model with λ-dependent product kernels.
pub fn make_product_model() -> Result<HiddenVariableModel> {
    let shape = ScenarioShape::from_labels(
        ["0", "1"],
        ["0", "1"],
        SPIN_OUTCOMES,
        SPIN_OUTCOMES,
        ["l0", "l1", "l2"],
    )?;
    let pa = [[0.5, 0.25], [0.125, 0.75], [1.0, 0.375]];
    let pb = [[0.625, 0.5], [0.0, 0.875], [0.25, 0.5]];
    let weights = [0.25, 0.5, 0.25];
    HiddenVariableModel::from_fns(
        shape,
        |_, _, l| weights[l],
        |x, y, l, a, b| {
            let qa = if a == 0 { pa[l][x] } else { 1.0 - pa[l][x] };
            let qb = if b == 0 { pb[l][y] } else { 1.0 - pb[l][y] };
            qa * qb
        },
    )
}

/// Product behavior `p(a|x) p(b|y)` on two settings per side.
pub fn make_product_behavior() -> Result<Behavior> {
    let shape = ScenarioShape::from_labels(
        ["0", "1"],
        ["0", "1"],
        SPIN_OUTCOMES,
        SPIN_OUTCOMES,
        Vec::<&str>::new(),
    )?;
    let pa = [0.3, 0.8];
    let pb = [0.6, 0.1];
    Behavior::from_fn(shape, |x, y, a, b| {
        let qa = if a == 0 { pa[x] } else { 1.0 - pa[x] };
        let qb = if b == 0 { pb[y] } else { 1.0 - pb[y] };
        qa * qb
    })
}

/// PR box: `p(a,b|x,y) = ½` when `ab = (−1)^{xy}`, else 0.
pub fn make_pr_box() -> Result<Behavior> {
    let shape = ScenarioShape::from_labels(
        ["0", "1"],
        ["0", "1"],
        SPIN_OUTCOMES,
        SPIN_OUTCOMES,
        Vec::<&str>::new(),
    )?;
    Behavior::from_fn(shape, |x, y, a, b| {
        let target = if x == 1 && y == 1 { -1.0 } else { 1.0 };
        if SPIN_VALUES[a] * SPIN_VALUES[b] == target {
            0.5
        } else {
            0.0
        }
    })
}

/// Per-λ outcome pair `(a′, b′)` forced at the tested settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicAssignment {
    pub lambda: usize,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterminismWitness {
    pub oi_report: PropertyReport,
    pub pc_report: PropertyReport,
    /// Both premises hold, so the determinism assertion was run.
    pub premise_met: bool,
    pub deterministic_at: Vec<DeterministicAssignment>,
    /// λ values for which determinism failed despite the premises.
    pub violations: Vec<usize>,
}

/// Outcome independence plus perfect correlation at `(x₀, y₀)` forces
/// point-mass marginals there for every supported λ.
///
/// When both premises hold, each λ with `p(λ|x₀,y₀) > support` is checked
/// for point-mass marginals that agree under `relabel`. The allowance for a
/// λ grows with the measured premise violations divided by its weight, so
/// exact premises reduce it to `tol.prop`.
pub fn verify_prop2(
    model: &HiddenVariableModel,
    x0: usize,
    y0: usize,
    relabel: &RelabelMap,
    tol: &Tolerances,
) -> Result<DeterminismWitness> {
    let oi_report = check_outcome_independence(model, tol)?;
    let behavior = model.aggregate_behavior(tol)?;
    let pc_report = check_perfect_correlation(&behavior, x0, y0, relabel, tol)?;
    let premise_met = oi_report.holds && pc_report.holds;
    let mut deterministic_at = Vec::new();
    let mut violations = Vec::new();
    if premise_met {
        let s = model.shape();
        let n = s.n_outcomes_a() as f64;
        for l in 0..s.n_lambdas() {
            let w = model.weight(x0, y0, l);
            if w <= tol.support {
                continue;
            }
            let allowance =
                tol.prop + n * (pc_report.max_violation / w + n * oi_report.max_violation);
            let ma = model.marginal_a(x0, y0, l)?;
            let mb = model.marginal_b(x0, y0, l)?;
            let (a, b) = (argmax(&ma), argmax(&mb));
            let ok = point_mass_distance(&ma) <= allowance
                && point_mass_distance(&mb) <= allowance
                && relabel.get(b) == a;
            if ok {
                deterministic_at.push(DeterministicAssignment { lambda: l, a, b });
            } else {
                violations.push(l);
            }
        }
    }
    Ok(DeterminismWitness {
        oi_report,
        pc_report,
        premise_met,
        deterministic_at,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompletenessWitness {
    /// Outcome-independence violation of the state-as-λ model at `(x₀, y₀)`.
    pub violation: f64,
    pub report: PropertyReport,
}

/// Treats the behavior at `(x₀, y₀)` as the kernel of a single λ (the
/// quantum state) and measures its outcome-independence violation. A
/// positive value shows that this description is not a classical common
/// cause for the perfect correlation.
pub fn incompleteness_witness(
    behavior: &Behavior,
    x0: usize,
    y0: usize,
    relabel: &RelabelMap,
    tol: &Tolerances,
) -> Result<IncompletenessWitness> {
    let pc = check_perfect_correlation(behavior, x0, y0, relabel, tol)?;
    if !pc.holds {
        return Err(Error::NotPerfectlyCorrelated(pc.max_violation));
    }
    let model = behavior.restrict(&[x0], &[y0])?.as_singleton_model("psi")?;
    let mut report = check_outcome_independence(&model, tol)?;
    // Report coordinates in the caller's setting indices.
    if let Some(w) = report.witness.as_mut() {
        w.x = Some(x0);
        w.y = Some(y0);
    }
    Ok(IncompletenessWitness {
        violation: report.max_violation,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::properties::{
        check_determinism, check_determinism_at, check_measurement_independence,
        check_weak_locality,
    };

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn direction_parsing() {
        let z = Direction::parse("z").unwrap();
        assert_eq!(z.vector, [0.0, 0.0, 1.0]);
        let d = Direction::parse("z-x").unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((d.vector[0] + h).abs() < 1e-15 && (d.vector[2] - h).abs() < 1e-15);
        let ang = Direction::parse("90").unwrap();
        assert!((ang.vector[0] - 1.0).abs() < 1e-15);
        assert!(Direction::parse("w").is_err());
        assert!(Direction::parse("x-x").is_err());
        assert!(matches!(
            Direction::new("bad", [1.0, 1.0, 0.0]),
            Err(Error::NonUnitDirection(_))
        ));
    }

    #[test]
    fn prop1_cardinality() {
        assert!(matches!(
            make_prop1_counterexample(1),
            Err(Error::BadCardinality(_))
        ));
        let m = make_prop1_counterexample(2).unwrap();
        assert_eq!(m.kernels(), &[0.5, 0.0, 0.0, 0.5]);
    }

    #[test]
    fn prop1_n3_violations() {
        let m = make_prop1_counterexample(3).unwrap();
        let beh = m.aggregate_behavior(&tol()).unwrap();
        let id = RelabelMap::identity(beh.shape()).unwrap();
        let pc = check_perfect_correlation(&beh, 0, 0, &id, &tol()).unwrap();
        assert!(pc.holds);
        assert!(pc.max_violation < 1e-15);
        let det = check_determinism(&m, &tol()).unwrap();
        assert!((det.max_violation - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn singlet_special_angles() {
        let dirs = DirectionSet::parse("z,x,-z").unwrap();
        let z = DirectionSet::parse("z").unwrap();
        let beh = make_singlet_behavior(&z, &dirs).unwrap();
        assert!(beh.validate(&tol()).unwrap().holds);
        // y = x: anticorrelated.
        assert_eq!(
            [
                beh.get(0, 0, 0, 0),
                beh.get(0, 0, 0, 1),
                beh.get(0, 0, 1, 0),
                beh.get(0, 0, 1, 1)
            ],
            [0.0, 0.5, 0.5, 0.0]
        );
        // orthogonal: uniform.
        assert_eq!([beh.get(0, 1, 0, 0), beh.get(0, 1, 1, 1)], [0.25, 0.25]);
        // y = -x: correlated.
        assert_eq!(
            [
                beh.get(0, 2, 0, 0),
                beh.get(0, 2, 0, 1),
                beh.get(0, 2, 1, 1)
            ],
            [0.5, 0.0, 0.5]
        );
    }

    #[test]
    fn example1_kernel_marginal() {
        let dirs = DirectionSet::default_pair();
        let m = make_example1_model(&dirs, &dirs).unwrap();
        let lp = m.shape().lambda("+1").unwrap();
        for x in 0..2 {
            for y in 0..2 {
                let dot = dirs.0[x].dot(&dirs.0[y]);
                let ma = m.marginal_a(x, y, lp).unwrap();
                for a in 0..2 {
                    assert_eq!(ma[a], 0.5 * (1.0 - SPIN_VALUES[a] * dot));
                }
            }
        }
    }

    #[test]
    fn example2_aligned_determinism() {
        let dirs = DirectionSet::default_pair();
        let m = make_example2_model(&dirs).unwrap();
        let aligned = [(0, 0), (1, 1)];
        assert!(check_determinism_at(&m, &aligned, &tol()).unwrap().holds);
        assert!(!check_determinism(&m, &tol()).unwrap().holds);
        assert!(!check_weak_locality(&m, &tol()).unwrap().holds);
        assert!(check_measurement_independence(&m, &tol()).unwrap().holds);
        let beh = m.aggregate_behavior(&tol()).unwrap();
        assert_eq!(beh.get(0, 0, 0, 0), 0.5);
        assert_eq!(beh.get(0, 0, 0, 1), 0.0);
        let id = RelabelMap::identity(beh.shape()).unwrap();
        assert!(
            check_perfect_correlation(&beh, 1, 1, &id, &tol())
                .unwrap()
                .holds
        );
        // λ = +1 at aligned settings: a = +1 with certainty.
        assert_eq!(m.marginal_a(0, 0, 0).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn prop2_on_example2_extracts_assignments() {
        let dirs = DirectionSet::default_pair();
        let m = make_example2_model(&dirs).unwrap();
        let id = RelabelMap::identity(m.shape()).unwrap();
        let w = verify_prop2(&m, 0, 0, &id, &tol()).unwrap();
        assert!(w.premise_met);
        assert!(w.violations.is_empty());
        assert_eq!(
            w.deterministic_at,
            vec![
                DeterministicAssignment {
                    lambda: 0,
                    a: 0,
                    b: 0
                },
                DeterministicAssignment {
                    lambda: 1,
                    a: 1,
                    b: 1
                }
            ]
        );
    }

    #[test]
    fn prop2_skips_when_oi_fails() {
        let m = make_prop1_counterexample(2).unwrap();
        let id = RelabelMap::identity(m.shape()).unwrap();
        let w = verify_prop2(&m, 0, 0, &id, &tol()).unwrap();
        assert!(!w.oi_report.holds);
        assert!(w.pc_report.holds);
        assert!(!w.premise_met);
        assert!(w.deterministic_at.is_empty() && w.violations.is_empty());
    }

    #[test]
    fn incompleteness_examples() {
        let boxm = make_einstein_box_model().unwrap();
        let beh = boxm.aggregate_behavior(&tol()).unwrap();
        let swap = einstein_box_relabel(beh.shape()).unwrap();
        assert_eq!(
            incompleteness_witness(&beh, 0, 0, &swap, &tol())
                .unwrap()
                .violation,
            0.25
        );
        let id = RelabelMap::identity(beh.shape()).unwrap();
        assert!(matches!(
            incompleteness_witness(&beh, 0, 0, &id, &tol()),
            Err(Error::NotPerfectlyCorrelated(_))
        ));

        let det = Behavior::from_fn(beh.shape().clone(), |_, _, a, b| {
            if (a, b) == (1, 1) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        assert_eq!(
            incompleteness_witness(&det, 0, 0, &id, &tol())
                .unwrap()
                .violation,
            0.0
        );

        let half = make_prop1_counterexample(2)
            .unwrap()
            .aggregate_behavior(&tol())
            .unwrap();
        let id2 = RelabelMap::identity(half.shape()).unwrap();
        assert_eq!(
            incompleteness_witness(&half, 0, 0, &id2, &tol())
                .unwrap()
                .violation,
            0.25
        );
    }

    #[test]
    fn pr_box_is_normalized_and_non_signalling() {
        let pr = make_pr_box().unwrap();
        assert!(pr.validate(&tol()).unwrap().holds);
        assert_eq!(pr.signalling(), 0.0);
    }
}
