//! Statistical conditions on hidden-variable models and behaviors.
//!
//! Every checker returns a [`PropertyReport`] whose witness is the first
//! maximizing cell in the loop order documented on the checker. Hidden
//! variables whose weight is at or below `Tolerances::support` under every
//! setting pair are skipped by the kernel-level checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probmodel::{
    argmax, condition, point_mass_distance, Behavior, HiddenVariableModel, JointDistribution,
    MaxScan, Property, PropertyReport, ScenarioShape, Tolerances, Witness,
};

/// Bijection from side-B outcome indices to side-A outcome indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelabelMap {
    map: Vec<usize>,
}

impl RelabelMap {
    /// `map[b]` is the side-A outcome identified with `b`.
    pub fn new(map: Vec<usize>, shape: &ScenarioShape) -> Result<Self> {
        if map.len() != shape.n_outcomes_b() || shape.n_outcomes_a() != shape.n_outcomes_b() {
            return Err(Error::IncompatibleRelabel(format!(
                "need a bijection between {} B-outcomes and {} A-outcomes",
                shape.n_outcomes_b(),
                shape.n_outcomes_a()
            )));
        }
        let mut seen = vec![false; map.len()];
        for &a in &map {
            if a >= seen.len() || std::mem::replace(&mut seen[a], true) {
                return Err(Error::IncompatibleRelabel(format!(
                    "{map:?} is not a bijection"
                )));
            }
        }
        Ok(Self { map })
    }

    /// Identifies outcomes carrying the same label on both sides.
    pub fn identity(shape: &ScenarioShape) -> Result<Self> {
        let map = shape
            .outcomes_b
            .iter()
            .map(|label| {
                shape.outcome_a(label).map_err(|_| {
                    Error::IncompatibleRelabel(format!("B-outcome `{label}` has no A counterpart"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(map, shape)
    }

    /// Builds the map from `(b_label, a_label)` pairs.
    pub fn from_label_pairs(shape: &ScenarioShape, pairs: &[(String, String)]) -> Result<Self> {
        let mut map = vec![usize::MAX; shape.n_outcomes_b()];
        for (b, a) in pairs {
            let bi = shape
                .outcome_b(b)
                .map_err(|_| Error::IncompatibleRelabel(format!("unknown B-outcome `{b}`")))?;
            let ai = shape
                .outcome_a(a)
                .map_err(|_| Error::IncompatibleRelabel(format!("unknown A-outcome `{a}`")))?;
            map[bi] = ai;
        }
        if map.contains(&usize::MAX) {
            return Err(Error::IncompatibleRelabel(
                "relabel map is not total on outcomes_b".into(),
            ));
        }
        Self::new(map, shape)
    }

    /// Reverses the order of a two-element alphabet (`b ↦ a` with `a ≠ b`).
    pub fn swap(shape: &ScenarioShape) -> Result<Self> {
        if shape.n_outcomes_b() != 2 {
            return Err(Error::IncompatibleRelabel(
                "swap needs two outcomes per side".into(),
            ));
        }
        Self::new(vec![1, 0], shape)
    }

    pub fn get(&self, b: usize) -> usize {
        self.map[b]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.map
    }

    /// `(b_label, a_label)` pairs.
    pub fn label_pairs(&self, shape: &ScenarioShape) -> Vec<(String, String)> {
        self.map
            .iter()
            .enumerate()
            .map(|(b, &a)| (shape.outcomes_b[b].clone(), shape.outcomes_a[a].clone()))
            .collect()
    }
}

/// Side-A marginals `p(a|x,y,λ)` indexed `[x][y][λ][a]`, and side-B likewise.
struct Marginals {
    a: Vec<Vec<Vec<Vec<f64>>>>,
    b: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Marginals {
    fn of(model: &HiddenVariableModel) -> Self {
        let s = model.shape();
        let table = |side_a: bool| {
            (0..s.n_settings_a())
                .map(|x| {
                    (0..s.n_settings_b())
                        .map(|y| {
                            (0..s.n_lambdas())
                                .map(|l| {
                                    if side_a {
                                        model.marginal_a_unchecked(x, y, l)
                                    } else {
                                        model.marginal_b_unchecked(x, y, l)
                                    }
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        };
        Self {
            a: table(true),
            b: table(false),
        }
    }
}

fn supported(model: &HiddenVariableModel, tol: &Tolerances) -> Vec<bool> {
    (0..model.shape().n_lambdas())
        .map(|l| model.lambda_supported(l, tol))
        .collect()
}

fn weak_locality_scan(model: &HiddenVariableModel, marg: &Marginals, support: &[bool]) -> MaxScan {
    let s = model.shape();
    let mut scan = MaxScan::default();
    // Side A: (x, y, y', λ, a).
    for x in 0..s.n_settings_a() {
        for y in 0..s.n_settings_b() {
            for y2 in y + 1..s.n_settings_b() {
                for l in (0..s.n_lambdas()).filter(|&l| support[l]) {
                    for a in 0..s.n_outcomes_a() {
                        let v = (marg.a[x][y][l][a] - marg.a[x][y2][l][a]).abs();
                        scan.offer(v, || Witness {
                            y_alt: Some(y2),
                            ..Witness::cell(x, y, Some(l), Some(a), None)
                        });
                    }
                }
            }
        }
    }
    // Side B: (y, x, x', λ, b).
    for y in 0..s.n_settings_b() {
        for x in 0..s.n_settings_a() {
            for x2 in x + 1..s.n_settings_a() {
                for l in (0..s.n_lambdas()).filter(|&l| support[l]) {
                    for b in 0..s.n_outcomes_b() {
                        let v = (marg.b[x][y][l][b] - marg.b[x2][y][l][b]).abs();
                        scan.offer(v, || Witness {
                            x_alt: Some(x2),
                            ..Witness::cell(x, y, Some(l), None, Some(b))
                        });
                    }
                }
            }
        }
    }
    scan
}

/// Parameter independence: `p(a|x,y,λ)` independent of `y` and `p(b|x,y,λ)`
/// independent of `x`.
///
/// Scan order is `(x, y, y', λ, a)` for side A, then `(y, x, x', λ, b)`.
pub fn check_weak_locality(
    model: &HiddenVariableModel,
    tol: &Tolerances,
) -> Result<PropertyReport> {
    model.ensure_valid(tol)?;
    let marg = Marginals::of(model);
    let support = supported(model, tol);
    Ok(weak_locality_scan(model, &marg, &support).report(Property::WeakLocality, tol.prop))
}

/// `p(a,b|x,y,λ) = p(a|x,y,λ) p(b|x,y,λ)` over `(x, y, λ, a, b)`.
pub fn check_outcome_independence(
    model: &HiddenVariableModel,
    tol: &Tolerances,
) -> Result<PropertyReport> {
    model.ensure_valid(tol)?;
    let s = model.shape();
    let marg = Marginals::of(model);
    let support = supported(model, tol);
    let mut scan = MaxScan::default();
    for x in 0..s.n_settings_a() {
        for y in 0..s.n_settings_b() {
            for l in (0..s.n_lambdas()).filter(|&l| support[l]) {
                for a in 0..s.n_outcomes_a() {
                    for b in 0..s.n_outcomes_b() {
                        let v = (model.kernel(x, y, l, a, b)
                            - marg.a[x][y][l][a] * marg.b[x][y][l][b])
                            .abs();
                        scan.offer(v, || Witness::cell(x, y, Some(l), Some(a), Some(b)));
                    }
                }
            }
        }
    }
    Ok(scan.report(Property::OutcomeIndependence, tol.prop))
}

/// `[setting][λ][outcome]`.
pub(crate) type LocalMarginals = Vec<Vec<Vec<f64>>>;

/// Setting-local marginals `p̄(a|x,λ)` and `p̄(b|y,λ)`, averaged with equal
/// weights over the distant setting. Indexed `[x][λ][a]` and `[y][λ][b]`.
pub(crate) fn local_marginals(model: &HiddenVariableModel) -> (LocalMarginals, LocalMarginals) {
    let s = model.shape();
    let marg = Marginals::of(model);
    let (nx, ny) = (s.n_settings_a() as f64, s.n_settings_b() as f64);
    let pa = (0..s.n_settings_a())
        .map(|x| {
            (0..s.n_lambdas())
                .map(|l| {
                    (0..s.n_outcomes_a())
                        .map(|a| {
                            (0..s.n_settings_b())
                                .map(|y| marg.a[x][y][l][a])
                                .sum::<f64>()
                                / ny
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let pb = (0..s.n_settings_b())
        .map(|y| {
            (0..s.n_lambdas())
                .map(|l| {
                    (0..s.n_outcomes_b())
                        .map(|b| {
                            (0..s.n_settings_a())
                                .map(|x| marg.b[x][y][l][b])
                                .sum::<f64>()
                                / nx
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    (pa, pb)
}

/// `p(a,b|x,y,λ) = p(a|x,λ) p(b|y,λ)`.
///
/// The factorization is tested against setting-local marginals (each side's
/// marginal averaged over the distant setting) and the violation is the
/// larger of that residual and the weak-locality violation, so the report
/// holds only when both parts hold.
pub fn check_local_causality(
    model: &HiddenVariableModel,
    tol: &Tolerances,
) -> Result<PropertyReport> {
    model.ensure_valid(tol)?;
    let s = model.shape();
    let marg = Marginals::of(model);
    let support = supported(model, tol);
    let (pa, pb) = local_marginals(model);
    let mut scan = MaxScan::default();
    for x in 0..s.n_settings_a() {
        for y in 0..s.n_settings_b() {
            for l in (0..s.n_lambdas()).filter(|&l| support[l]) {
                for a in 0..s.n_outcomes_a() {
                    for b in 0..s.n_outcomes_b() {
                        let v = (model.kernel(x, y, l, a, b) - pa[x][l][a] * pb[y][l][b]).abs();
                        scan.offer(v, || Witness::cell(x, y, Some(l), Some(a), Some(b)));
                    }
                }
            }
        }
    }
    scan.merge(weak_locality_scan(model, &marg, &support));
    Ok(scan.report(Property::LocalCausality, tol.prop))
}

/// `LC ⇔ (WL ∧ OI)` on one model.
pub fn verify_lc_equivalence(model: &HiddenVariableModel, tol: &Tolerances) -> Result<bool> {
    let lc = check_local_causality(model, tol)?;
    let wl = check_weak_locality(model, tol)?;
    let oi = check_outcome_independence(model, tol)?;
    Ok(lc.holds == (wl.holds && oi.holds))
}

/// `p(λ|x,y) = p(λ)`; compares every pair of setting pairs.
pub fn check_measurement_independence(
    model: &HiddenVariableModel,
    tol: &Tolerances,
) -> Result<PropertyReport> {
    model.ensure_valid(tol)?;
    let s = model.shape();
    let pairs: Vec<(usize, usize)> = (0..s.n_settings_a())
        .flat_map(|x| (0..s.n_settings_b()).map(move |y| (x, y)))
        .collect();
    let mut scan = MaxScan::default();
    for (i, &(x, y)) in pairs.iter().enumerate() {
        for &(x2, y2) in &pairs[i + 1..] {
            for l in 0..s.n_lambdas() {
                let v = (model.weight(x, y, l) - model.weight(x2, y2, l)).abs();
                scan.offer(v, || Witness {
                    x_alt: Some(x2),
                    y_alt: Some(y2),
                    ..Witness::cell(x, y, Some(l), None, None)
                });
            }
        }
    }
    Ok(scan.report(Property::MeasurementIndependence, tol.prop))
}

/// Both marginals are point masses at every supported `(x, y, λ)`.
///
/// The violation of a marginal is its distance `1 − max p` from the nearest
/// point mass.
pub fn check_determinism(model: &HiddenVariableModel, tol: &Tolerances) -> Result<PropertyReport> {
    let s = model.shape();
    let pairs: Vec<(usize, usize)> = (0..s.n_settings_a())
        .flat_map(|x| (0..s.n_settings_b()).map(move |y| (x, y)))
        .collect();
    check_determinism_at(model, &pairs, tol)
}

/// [`check_determinism`] restricted to the listed setting pairs.
pub fn check_determinism_at(
    model: &HiddenVariableModel,
    pairs: &[(usize, usize)],
    tol: &Tolerances,
) -> Result<PropertyReport> {
    model.ensure_valid(tol)?;
    let s = model.shape();
    let support = supported(model, tol);
    let mut scan = MaxScan::default();
    for &(x, y) in pairs {
        s.check_setting_a(x)?;
        s.check_setting_b(y)?;
        for l in (0..s.n_lambdas()).filter(|&l| support[l]) {
            let ma = model.marginal_a_unchecked(x, y, l);
            let mb = model.marginal_b_unchecked(x, y, l);
            let da = point_mass_distance(&ma);
            scan.offer(da, || Witness::cell(x, y, Some(l), Some(argmax(&ma)), None));
            let db = point_mass_distance(&mb);
            scan.offer(db, || Witness::cell(x, y, Some(l), None, Some(argmax(&mb))));
        }
    }
    Ok(scan.report(Property::Determinism, tol.prop))
}

/// `p(A = B | x₀, y₀) = 1` after identifying outcomes through `relabel`.
pub fn check_perfect_correlation(
    behavior: &Behavior,
    x0: usize,
    y0: usize,
    relabel: &RelabelMap,
    tol: &Tolerances,
) -> Result<PropertyReport> {
    behavior.ensure_valid(tol)?;
    let s = behavior.shape();
    s.check_setting_a(x0)?;
    s.check_setting_b(y0)?;
    if relabel.as_slice().len() != s.n_outcomes_b() || s.n_outcomes_a() != s.n_outcomes_b() {
        return Err(Error::IncompatibleRelabel(
            "relabel map does not match the behavior's outcomes".into(),
        ));
    }
    let agree: f64 = (0..s.n_outcomes_b())
        .map(|b| behavior.get(x0, y0, relabel.get(b), b))
        .sum();
    let v = (1.0 - agree).max(0.0);
    let witness = (v > 0.0).then(|| Witness::cell(x0, y0, None, None, None));
    Ok(PropertyReport::new(
        Property::PerfectCorrelation,
        v,
        witness,
        tol.prop,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaOutcome {
    pub holds: bool,
    /// The value `j₀` carrying the whole unconditioned mass.
    pub j0: usize,
    /// First `l` whose conditional is not a point mass at `j₀`.
    pub violating_l: Option<usize>,
}

/// A deterministic `p(j|k)` stays deterministic under conditioning on any
/// further `l` with `p(l|k) > 0`.
pub fn lemma_conditioning_preserves_determinism(
    joint: &JointDistribution,
    tol: &Tolerances,
) -> Result<LemmaOutcome> {
    let report = joint.validate(tol)?;
    if !report.holds {
        return Err(Error::InvalidModel(format!(
            "joint distribution not normalized (violation {})",
            report.max_violation
        )));
    }
    let pj = joint.marginal_j();
    let premise = point_mass_distance(&pj);
    if premise > tol.prop {
        return Err(Error::NotDeterministicPremise(premise));
    }
    let j0 = argmax(&pj);
    let pl = joint.marginal_l();
    for (l, &p) in pl.iter().enumerate() {
        if p <= tol.support {
            continue;
        }
        let cond = condition(joint, l, tol)?;
        if argmax(&cond) != j0 || point_mass_distance(&cond) > tol.prop {
            return Ok(LemmaOutcome {
                holds: false,
                j0,
                violating_l: Some(l),
            });
        }
    }
    Ok(LemmaOutcome {
        holds: true,
        j0,
        violating_l: None,
    })
}
