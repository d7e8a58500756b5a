//! Local-polytope membership, CHSH functionals and the relaxed one-way
//! decomposition.

pub mod lp;
mod oneway;

pub use oneway::{
    search_oneway_single_lambda, search_oneway_single_lambda_seeded, verify_oneway_form,
    OneWayDecomposition, OneWayDims, OneWaySearch, SEARCH_DISCLAIMER, SEARCH_SEED,
};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probmodel::{Behavior, ScenarioShape, Tolerances};
use lp::{LpStatus, StandardForm};

/// Upper bound on the number of enumerated deterministic strategies.
pub const MAX_STRATEGIES: usize = 1_000_000;

/// Strategy counts up to this size get an exact rational re-check.
pub const EXACT_CHECK_MAX_STRATEGIES: usize = 16;

/// Local bound the reported Bell functionals are scaled to.
pub const CERTIFICATE_LOCAL_BOUND: f64 = 2.0;

/// Outcome functions for both sides.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeterministicStrategy {
    /// `f_a[x]` is the outcome index produced for setting `x`.
    pub f_a: Vec<usize>,
    pub f_b: Vec<usize>,
}

impl DeterministicStrategy {
    /// Indicator `[f_a(x) = a ∧ f_b(y) = b]`.
    pub fn entry(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        if self.f_a[x] == a && self.f_b[y] == b {
            1.0
        } else {
            0.0
        }
    }

    /// Behavior table of the strategy, laid out like [`Behavior::table`].
    pub fn table(&self, shape: &ScenarioShape) -> Vec<f64> {
        let mut t = vec![0.0; shape.behavior_len()];
        for x in 0..shape.n_settings_a() {
            for y in 0..shape.n_settings_b() {
                t[shape.behavior_index(x, y, self.f_a[x], self.f_b[y])] = 1.0;
            }
        }
        t
    }

    pub fn describe(&self, shape: &ScenarioShape) -> String {
        let side = |f: &[usize], settings: &[String], outcomes: &[String]| {
            f.iter()
                .enumerate()
                .map(|(x, &a)| format!("{}->{}", settings[x], outcomes[a]))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "A[{}] B[{}]",
            side(&self.f_a, &shape.settings_a, &shape.outcomes_a),
            side(&self.f_b, &shape.settings_b, &shape.outcomes_b)
        )
    }
}

/// `|outcomes_a|^|settings_a| · |outcomes_b|^|settings_b|`, or `None` on overflow.
pub fn strategy_count(shape: &ScenarioShape) -> Option<usize> {
    let side = |n: usize, k: usize| n.checked_pow(u32::try_from(k).ok()?);
    side(shape.n_outcomes_a(), shape.n_settings_a())?
        .checked_mul(side(shape.n_outcomes_b(), shape.n_settings_b())?)
}

/// All deterministic strategies in lexicographic order of
/// `(f_a[0], …, f_a[nx−1], f_b[0], …, f_b[ny−1])`.
pub fn enumerate_deterministic_strategies(
    shape: &ScenarioShape,
) -> Result<Vec<DeterministicStrategy>> {
    let total = strategy_count(shape)
        .filter(|&n| n <= MAX_STRATEGIES)
        .ok_or_else(|| {
            Error::TooLarge(format!(
                "more than {MAX_STRATEGIES} deterministic strategies"
            ))
        })?;
    let (nx, ny, na, nb) = (
        shape.n_settings_a(),
        shape.n_settings_b(),
        shape.n_outcomes_a(),
        shape.n_outcomes_b(),
    );
    let mut out = Vec::with_capacity(total);
    for mut k in 0..total {
        let mut f_b = vec![0; ny];
        for slot in f_b.iter_mut().rev() {
            *slot = k % nb;
            k /= nb;
        }
        let mut f_a = vec![0; nx];
        for slot in f_a.iter_mut().rev() {
            *slot = k % na;
            k /= na;
        }
        out.push(DeterministicStrategy { f_a, f_b });
    }
    Ok(out)
}

fn spin_values(outcomes: &[String]) -> Result<[f64; 2]> {
    let parsed: Vec<Option<i64>> = outcomes
        .iter()
        .map(|o| o.trim().parse::<i64>().ok())
        .collect();
    match parsed.as_slice() {
        [Some(1), Some(-1)] => Ok([1.0, -1.0]),
        [Some(-1), Some(1)] => Ok([-1.0, 1.0]),
        _ => Err(Error::BadOutcomeAlphabet(format!("{outcomes:?}"))),
    }
}

/// Correlator `E(x,y) = Σ_{ab} a b p(a,b|x,y)` for a `{+1,−1}` alphabet.
pub fn correlator(behavior: &Behavior, x: usize, y: usize) -> Result<f64> {
    let s = behavior.shape();
    let va = spin_values(&s.outcomes_a)?;
    let vb = spin_values(&s.outcomes_b)?;
    s.check_setting_a(x)?;
    s.check_setting_b(y)?;
    let mut e = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            e += va[a] * vb[b] * behavior.get(x, y, a, b);
        }
    }
    Ok(e)
}

/// `S = E(x,y) + E(x,y′) + E(x′,y) − E(x′,y′)`.
pub fn chsh_value(behavior: &Behavior, x: usize, x2: usize, y: usize, y2: usize) -> Result<f64> {
    Ok(
        correlator(behavior, x, y)? + correlator(behavior, x, y2)? + correlator(behavior, x2, y)?
            - correlator(behavior, x2, y2)?,
    )
}

/// The four CHSH expressions obtained by moving the minus sign to each of
/// the four correlators; together with their negations these are the eight
/// CHSH functionals, all bounded by 2 in absolute value on local behaviors.
pub fn chsh_family(
    behavior: &Behavior,
    x: usize,
    x2: usize,
    y: usize,
    y2: usize,
) -> Result<[f64; 4]> {
    let e = [
        correlator(behavior, x, y)?,
        correlator(behavior, x, y2)?,
        correlator(behavior, x2, y)?,
        correlator(behavior, x2, y2)?,
    ];
    let total: f64 = e.iter().sum();
    Ok([
        total - 2.0 * e[3],
        total - 2.0 * e[2],
        total - 2.0 * e[1],
        total - 2.0 * e[0],
    ])
}

/// Separating Bell functional: `coefficients · p ≤ local_bound` for every
/// local behavior, while the tested behavior attains `value > local_bound`.
///
/// Coefficients are shifted to vanish on the uniform behavior and scaled so
/// the local bound is 2, which puts CHSH-type certificates on their usual
/// scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellCertificate {
    /// Indexed like [`Behavior::table`].
    pub coefficients: Vec<f64>,
    pub local_bound: f64,
    pub value: f64,
    /// Largest `v` with `v·p + (1 − v)·uniform` local, from the dual program.
    pub critical_visibility: f64,
}

/// Result of the exact rational re-check of a decomposition or certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactCheck {
    pub verified: bool,
    /// Max residual (feasible) or `value − bound` (certificate), rounded to `f64`.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum LocalDecomposition {
    Feasible {
        /// Strategies with positive weight, in enumeration order.
        strategies: Vec<DeterministicStrategy>,
        weights: Vec<f64>,
        residual: f64,
        exact: Option<ExactCheck>,
    },
    Infeasible {
        certificate: BellCertificate,
        /// Phase-one L1 distance reported by the feasibility program.
        infeasibility: f64,
        exact: Option<ExactCheck>,
    },
}

impl LocalDecomposition {
    pub fn is_feasible(&self) -> bool {
        matches!(self, LocalDecomposition::Feasible { .. })
    }
}

fn uniform_table(shape: &ScenarioShape) -> Vec<f64> {
    let p = 1.0 / (shape.n_outcomes_a() * shape.n_outcomes_b()) as f64;
    vec![p; shape.behavior_len()]
}

fn strategy_tables(shape: &ScenarioShape, strategies: &[DeterministicStrategy]) -> Vec<Vec<f64>> {
    strategies.iter().map(|s| s.table(shape)).collect()
}

/// Decides membership of the behavior in the local polytope.
///
/// Feasibility is a linear program over the weights of all deterministic
/// strategies. On failure the dual of the white-noise visibility program
/// yields the separating functional.
pub fn local_decomposition(behavior: &Behavior, tol: &Tolerances) -> Result<LocalDecomposition> {
    behavior.ensure_valid(tol)?;
    let shape = behavior.shape();
    let strategies = enumerate_deterministic_strategies(shape)?;
    let tables = strategy_tables(shape, &strategies);
    let p = behavior.table();
    let cells = p.len();

    let a: Vec<Vec<f64>> = (0..cells)
        .map(|c| tables.iter().map(|t| t[c]).collect())
        .collect();
    let feas = lp::solve(
        &StandardForm {
            a,
            b: p.to_vec(),
            c: vec![0.0; strategies.len()],
        },
        0.0,
    );
    let q = feas.x;
    let residual = max_residual(&tables, &q, p);
    let exact_enabled = strategies.len() <= EXACT_CHECK_MAX_STRATEGIES;
    if residual <= tol.prop {
        let exact = exact_enabled.then(|| exact_feasible_check(&tables, &q, p, tol.prop));
        let (strategies, weights): (Vec<_>, Vec<_>) = strategies
            .into_iter()
            .zip(q)
            .filter(|(_, w)| *w > 0.0)
            .unzip();
        return Ok(LocalDecomposition::Feasible {
            strategies,
            weights,
            residual,
            exact,
        });
    }
    let certificate = bell_certificate(shape, &tables, p)?;
    let exact = exact_enabled.then(|| exact_certificate_check(&tables, &certificate, p));
    Ok(LocalDecomposition::Infeasible {
        certificate,
        infeasibility: feas.infeasibility,
        exact,
    })
}

fn max_residual(tables: &[Vec<f64>], q: &[f64], p: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (c, &target) in p.iter().enumerate() {
        let mut sum = 0.0;
        for (t, &w) in tables.iter().zip(q) {
            sum += w * t[c];
        }
        worst = worst.max((sum - target).abs());
    }
    worst
}

/// Dual of `max v  s.t.  Σ_s q_s s − v (p − u) = u, q ≥ 0`:
/// `min y·u  s.t.  y·s ≥ 0 ∀s, y·(u − p) = 1`, with `y = y⁺ − y⁻`.
fn bell_certificate(
    shape: &ScenarioShape,
    tables: &[Vec<f64>],
    p: &[f64],
) -> Result<BellCertificate> {
    let u = uniform_table(shape);
    let cells = p.len();
    let ns = tables.len();
    let n = 2 * cells + ns;
    let mut rows = Vec::with_capacity(ns + 1);
    for (k, t) in tables.iter().enumerate() {
        let mut row = vec![0.0; n];
        for c in 0..cells {
            row[c] = t[c];
            row[cells + c] = -t[c];
        }
        row[2 * cells + k] = -1.0;
        rows.push(row);
    }
    let mut norm_row = vec![0.0; n];
    for c in 0..cells {
        norm_row[c] = u[c] - p[c];
        norm_row[cells + c] = -(u[c] - p[c]);
    }
    rows.push(norm_row);
    let mut b = vec![0.0; ns];
    b.push(1.0);
    let mut cost = vec![0.0; n];
    for c in 0..cells {
        cost[c] = u[c];
        cost[cells + c] = -u[c];
    }
    let sol = lp::solve(
        &StandardForm {
            a: rows,
            b,
            c: cost,
        },
        1e-9,
    );
    if sol.status != LpStatus::Optimal {
        return Err(Error::InvalidBehavior(format!(
            "separating functional program ended with {:?}",
            sol.status
        )));
    }
    // β = −y, shifted so that β·u = 0.
    let mut beta: Vec<f64> = (0..cells).map(|c| sol.x[cells + c] - sol.x[c]).collect();
    let on_uniform: f64 = beta.iter().zip(&u).map(|(b, u)| b * u).sum();
    let shift = on_uniform / (shape.n_settings_a() * shape.n_settings_b()) as f64;
    beta.iter_mut().for_each(|b| *b -= shift);
    let bound = tables
        .iter()
        .map(|t| beta.iter().zip(t).map(|(b, s)| b * s).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    if bound > 1e-12 {
        let scale = CERTIFICATE_LOCAL_BOUND / bound;
        beta.iter_mut().for_each(|b| *b *= scale);
    }
    let local_bound = tables
        .iter()
        .map(|t| beta.iter().zip(t).map(|(b, s)| b * s).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let value = beta.iter().zip(p).map(|(b, p)| b * p).sum();
    Ok(BellCertificate {
        coefficients: beta,
        local_bound,
        value,
        critical_visibility: sol.objective,
    })
}

/// Largest white-noise visibility `v` keeping `v·p + (1 − v)·uniform` local,
/// computed from the primal program. `None` when unbounded (`p` uniform).
pub fn critical_visibility(behavior: &Behavior, tol: &Tolerances) -> Result<Option<f64>> {
    behavior.ensure_valid(tol)?;
    let shape = behavior.shape();
    let strategies = enumerate_deterministic_strategies(shape)?;
    let tables = strategy_tables(shape, &strategies);
    let u = uniform_table(shape);
    let p = behavior.table();
    let ns = tables.len();
    let rows: Vec<Vec<f64>> = (0..p.len())
        .map(|c| {
            let mut row: Vec<f64> = tables.iter().map(|t| t[c]).collect();
            row.push(u[c] - p[c]);
            row
        })
        .collect();
    let mut cost = vec![0.0; ns + 1];
    cost[ns] = -1.0;
    let sol = lp::solve(
        &StandardForm {
            a: rows,
            b: u,
            c: cost,
        },
        1e-9,
    );
    match sol.status {
        LpStatus::Optimal => Ok(Some(sol.x[ns])),
        LpStatus::Unbounded => Ok(None),
        LpStatus::Infeasible => Err(Error::InvalidBehavior(
            "uniform behavior not reproduced".into(),
        )),
    }
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).unwrap_or_else(|| BigRational::from_integer(BigInt::zero()))
}

fn exact_feasible_check(tables: &[Vec<f64>], q: &[f64], p: &[f64], tol: f64) -> ExactCheck {
    let qr: Vec<BigRational> = q.iter().map(|&w| rational(w)).collect();
    let mut worst = BigRational::zero();
    for (c, &target) in p.iter().enumerate() {
        let mut sum = BigRational::zero();
        for (t, w) in tables.iter().zip(&qr) {
            if t[c] != 0.0 {
                sum += w;
            }
        }
        let diff = (sum - rational(target)).abs();
        if diff > worst {
            worst = diff;
        }
    }
    let total: BigRational = qr.iter().sum();
    let one = BigRational::from_integer(BigInt::from(1));
    let margin = worst.to_f64().unwrap_or(f64::INFINITY);
    let sum_dev = (total - one).abs().to_f64().unwrap_or(f64::INFINITY);
    ExactCheck {
        verified: margin <= tol && sum_dev <= tol && qr.iter().all(|w| !w.is_negative()),
        margin,
    }
}

fn exact_certificate_check(tables: &[Vec<f64>], cert: &BellCertificate, p: &[f64]) -> ExactCheck {
    let coeffs: Vec<BigRational> = cert.coefficients.iter().map(|&c| rational(c)).collect();
    let bound = tables
        .iter()
        .map(|t| {
            coeffs
                .iter()
                .zip(t)
                .filter(|(_, &s)| s != 0.0)
                .map(|(c, _)| c.clone())
                .sum::<BigRational>()
        })
        .max()
        .unwrap_or_else(BigRational::zero);
    let value: BigRational = coeffs.iter().zip(p).map(|(c, &v)| c * rational(v)).sum();
    let gap = value - bound;
    ExactCheck {
        verified: gap.is_positive(),
        margin: gap.to_f64().unwrap_or(f64::NAN),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::{
        make_pr_box, make_product_behavior, make_singlet_behavior, DirectionSet,
    };

    #[test]
    fn strategy_counts() {
        let s = ScenarioShape::from_labels(
            ["0", "1"],
            ["0", "1"],
            ["+1", "-1"],
            ["+1", "-1"],
            Vec::<&str>::new(),
        )
        .unwrap();
        let all = enumerate_deterministic_strategies(&s).unwrap();
        assert_eq!(all.len(), 16);
        assert_eq!(
            all[0],
            DeterministicStrategy {
                f_a: vec![0, 0],
                f_b: vec![0, 0]
            }
        );
        assert_eq!(
            all[1],
            DeterministicStrategy {
                f_a: vec![0, 0],
                f_b: vec![0, 1]
            }
        );
        assert_eq!(
            all[15],
            DeterministicStrategy {
                f_a: vec![1, 1],
                f_b: vec![1, 1]
            }
        );
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 16);

        let n = 5;
        let labels: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let single = ScenarioShape::new(
            vec!["x".into()],
            vec!["y".into()],
            labels.clone(),
            labels,
            vec![],
        )
        .unwrap();
        assert_eq!(
            enumerate_deterministic_strategies(&single).unwrap().len(),
            n * n
        );

        let big: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        let huge = ScenarioShape::new(big.clone(), big.clone(), big.clone(), big, vec![]).unwrap();
        assert!(matches!(
            enumerate_deterministic_strategies(&huge),
            Err(Error::TooLarge(_))
        ));
    }

    #[test]
    fn chsh_of_pr_box_and_alphabet_errors() {
        let pr = make_pr_box().unwrap();
        assert_eq!(chsh_value(&pr, 0, 1, 0, 1).unwrap(), 4.0);
        let s =
            ScenarioShape::from_labels(["0"], ["0"], ["u", "d"], ["u", "d"], Vec::<&str>::new())
                .unwrap();
        let b = Behavior::from_fn(s, |_, _, _, _| 0.25).unwrap();
        assert!(matches!(
            chsh_value(&b, 0, 0, 0, 0),
            Err(Error::BadOutcomeAlphabet(_))
        ));
    }

    #[test]
    fn product_behavior_is_local() {
        let beh = make_product_behavior().unwrap();
        let out = local_decomposition(&beh, &Tolerances::default()).unwrap();
        match out {
            LocalDecomposition::Feasible {
                residual,
                exact,
                weights,
                ..
            } => {
                assert!(residual <= 1e-8);
                assert!(exact.unwrap().verified);
                assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn singlet_certificate_and_visibility_agree() {
        let (da, db) = DirectionSet::chsh_optimal();
        let beh = make_singlet_behavior(&da, &db).unwrap();
        let tol = Tolerances::default();
        let LocalDecomposition::Infeasible {
            certificate, exact, ..
        } = local_decomposition(&beh, &tol).unwrap()
        else {
            panic!("singlet must be nonlocal");
        };
        let v = critical_visibility(&beh, &tol).unwrap().unwrap();
        assert!((v - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12, "{v}");
        assert!((certificate.critical_visibility - v).abs() < 1e-12);
        assert!((certificate.value - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-9);
        assert!((certificate.local_bound - 2.0).abs() < 1e-12);
        assert!(exact.unwrap().verified);
    }

    #[test]
    fn uniform_visibility_is_unbounded() {
        let s = ScenarioShape::from_labels(
            ["0", "1"],
            ["0", "1"],
            ["+1", "-1"],
            ["+1", "-1"],
            Vec::<&str>::new(),
        )
        .unwrap();
        let u = Behavior::from_fn(s, |_, _, _, _| 0.25).unwrap();
        assert_eq!(
            critical_visibility(&u, &Tolerances::default()).unwrap(),
            None
        );
    }
}
