//! Relaxed one-way decompositions
//! `p(a,b|x,y,λ) = w_AB(λ) p(a|x,λ) p(b|a,y,λ) + w_BA(λ) p(a|b,x,λ) p(b|y,λ)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probmodel::{
    Behavior, HiddenVariableModel, MaxScan, Property, PropertyReport, ScenarioShape, Tolerances,
    Witness,
};
use crate::properties::local_marginals;

/// Printed with every search result.
pub const SEARCH_DISCLAIMER: &str =
    "heuristic search: a NotFound result is not a proof that no one-way decomposition exists";

/// Seed of the random restarts used by the search.
pub const SEARCH_SEED: u64 = 0x5eed_0e1a;

const SEARCH_RANDOM_STARTS: usize = 3;
const SEARCH_MAX_SWEEPS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneWayDims {
    pub lambdas: usize,
    pub settings_a: usize,
    pub settings_b: usize,
    pub outcomes_a: usize,
    pub outcomes_b: usize,
}

impl OneWayDims {
    pub fn of(shape: &ScenarioShape) -> Self {
        Self {
            lambdas: shape.n_lambdas(),
            settings_a: shape.n_settings_a(),
            settings_b: shape.n_settings_b(),
            outcomes_a: shape.n_outcomes_a(),
            outcomes_b: shape.n_outcomes_b(),
        }
    }
}

/// Factor tables of a one-way decomposition, one block per λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneWayDecomposition {
    pub dims: OneWayDims,
    /// `w_AB(λ)`; `w_BA(λ) = 1 − w_AB(λ)`.
    pub w_ab: Vec<f64>,
    /// `p(a|x,λ)`, laid out `(λ, x, a)`.
    pub a_first: Vec<f64>,
    /// `p(b|a,y,λ)`, laid out `(λ, a, y, b)`.
    pub b_given_a: Vec<f64>,
    /// `p(a|b,x,λ)`, laid out `(λ, b, x, a)`.
    pub a_given_b: Vec<f64>,
    /// `p(b|y,λ)`, laid out `(λ, y, b)`.
    pub b_second: Vec<f64>,
}

impl OneWayDecomposition {
    /// All factors uniform, `w_AB = w`.
    pub fn uniform(dims: OneWayDims, w: f64) -> Self {
        let (nl, nx, ny, na, nb) = (
            dims.lambdas,
            dims.settings_a,
            dims.settings_b,
            dims.outcomes_a,
            dims.outcomes_b,
        );
        let ua = 1.0 / na as f64;
        let ub = 1.0 / nb as f64;
        Self {
            dims,
            w_ab: vec![w; nl],
            a_first: vec![ua; nl * nx * na],
            b_given_a: vec![ub; nl * na * ny * nb],
            a_given_b: vec![ua; nl * nb * nx * na],
            b_second: vec![ub; nl * ny * nb],
        }
    }

    /// Embeds a model in the one-way form with both branches equal to the
    /// product of setting-local marginals; exact for locally causal models.
    pub fn canonical_embedding(model: &HiddenVariableModel, w: f64) -> Self {
        let dims = OneWayDims::of(model.shape());
        let (pa, pb) = local_marginals(model);
        let mut d = Self::uniform(dims, w);
        for l in 0..dims.lambdas {
            for x in 0..dims.settings_a {
                for a in 0..dims.outcomes_a {
                    let i = d.ia(l, x, a);
                    d.a_first[i] = pa[x][l][a];
                    for b in 0..dims.outcomes_b {
                        let j = d.iab(l, b, x, a);
                        d.a_given_b[j] = pa[x][l][a];
                    }
                }
            }
            for y in 0..dims.settings_b {
                for b in 0..dims.outcomes_b {
                    let i = d.ib(l, y, b);
                    d.b_second[i] = pb[y][l][b];
                    for a in 0..dims.outcomes_a {
                        let j = d.iba(l, a, y, b);
                        d.b_given_a[j] = pb[y][l][b];
                    }
                }
            }
        }
        d
    }

    fn ia(&self, l: usize, x: usize, a: usize) -> usize {
        (l * self.dims.settings_a + x) * self.dims.outcomes_a + a
    }
    fn iba(&self, l: usize, a: usize, y: usize, b: usize) -> usize {
        ((l * self.dims.outcomes_a + a) * self.dims.settings_b + y) * self.dims.outcomes_b + b
    }
    fn iab(&self, l: usize, b: usize, x: usize, a: usize) -> usize {
        ((l * self.dims.outcomes_b + b) * self.dims.settings_a + x) * self.dims.outcomes_a + a
    }
    fn ib(&self, l: usize, y: usize, b: usize) -> usize {
        (l * self.dims.settings_b + y) * self.dims.outcomes_b + b
    }

    pub fn p_a_first(&self, l: usize, x: usize, a: usize) -> f64 {
        self.a_first[self.ia(l, x, a)]
    }
    pub fn p_b_given_a(&self, l: usize, a: usize, y: usize, b: usize) -> f64 {
        self.b_given_a[self.iba(l, a, y, b)]
    }
    pub fn p_a_given_b(&self, l: usize, b: usize, x: usize, a: usize) -> f64 {
        self.a_given_b[self.iab(l, b, x, a)]
    }
    pub fn p_b_second(&self, l: usize, y: usize, b: usize) -> f64 {
        self.b_second[self.ib(l, y, b)]
    }

    pub fn w_ba(&self, l: usize) -> f64 {
        1.0 - self.w_ab[l]
    }

    /// Kernel value reconstructed from the factors.
    pub fn predict(&self, x: usize, y: usize, l: usize, a: usize, b: usize) -> f64 {
        self.w_ab[l] * self.p_a_first(l, x, a) * self.p_b_given_a(l, a, y, b)
            + self.w_ba(l) * self.p_a_given_b(l, b, x, a) * self.p_b_second(l, y, b)
    }

    /// Checks table sizes, `w ∈ [0,1]` and the normalization of every factor.
    pub fn check(&self, tol: &Tolerances) -> Result<()> {
        let d = self.dims;
        let sizes = [
            (self.w_ab.len(), d.lambdas),
            (self.a_first.len(), d.lambdas * d.settings_a * d.outcomes_a),
            (
                self.b_given_a.len(),
                d.lambdas * d.outcomes_a * d.settings_b * d.outcomes_b,
            ),
            (
                self.a_given_b.len(),
                d.lambdas * d.outcomes_b * d.settings_a * d.outcomes_a,
            ),
            (self.b_second.len(), d.lambdas * d.settings_b * d.outcomes_b),
        ];
        if sizes.iter().any(|(have, want)| have != want) {
            return Err(Error::ShapeMismatch(
                "decomposition tables do not match their dimensions".into(),
            ));
        }
        for &w in &self.w_ab {
            if !(-tol.norm..=1.0 + tol.norm).contains(&w) {
                return Err(Error::BadParams(format!(
                    "direction weight {w} outside [0, 1]"
                )));
            }
        }
        let check_rows = |table: &[f64], width: usize, name: &str| -> Result<()> {
            for (i, row) in table.chunks(width).enumerate() {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > tol.norm
                    || row.iter().any(|&v| v < -tol.norm || !v.is_finite())
                {
                    return Err(Error::BadParams(format!(
                        "{name} row {i} is not a distribution"
                    )));
                }
            }
            Ok(())
        };
        check_rows(&self.a_first, d.outcomes_a, "p(a|x,λ)")?;
        check_rows(&self.b_given_a, d.outcomes_b, "p(b|a,y,λ)")?;
        check_rows(&self.a_given_b, d.outcomes_a, "p(a|b,x,λ)")?;
        check_rows(&self.b_second, d.outcomes_b, "p(b|y,λ)")
    }
}

/// Maximum kernel residual of the decomposition over supported cells,
/// scanned in `(x, y, λ, a, b)` order.
pub fn verify_oneway_form(
    model: &HiddenVariableModel,
    decomposition: &OneWayDecomposition,
    tol: &Tolerances,
) -> Result<PropertyReport> {
    model.ensure_valid(tol)?;
    if decomposition.dims != OneWayDims::of(model.shape()) {
        return Err(Error::ShapeMismatch(format!(
            "decomposition dims {:?} vs model {:?}",
            decomposition.dims,
            OneWayDims::of(model.shape())
        )));
    }
    decomposition.check(tol)?;
    let s = model.shape();
    let mut scan = MaxScan::default();
    for x in 0..s.n_settings_a() {
        for y in 0..s.n_settings_b() {
            for l in (0..s.n_lambdas()).filter(|&l| model.lambda_supported(l, tol)) {
                for a in 0..s.n_outcomes_a() {
                    for b in 0..s.n_outcomes_b() {
                        let v = (model.kernel(x, y, l, a, b)
                            - decomposition.predict(x, y, l, a, b))
                        .abs();
                        scan.offer(v, || Witness::cell(x, y, Some(l), Some(a), Some(b)));
                    }
                }
            }
        }
    }
    Ok(scan.report(Property::OneWayForm, tol.prop))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum OneWaySearch {
    Found {
        decomposition: OneWayDecomposition,
        residual: f64,
    },
    NotFound {
        best_w_ab: f64,
        best_residual: f64,
        note: String,
    },
}

/// Single-λ factors being optimized; indices as in [`OneWayDecomposition`] with λ dropped.
#[derive(Clone)]
struct Factors {
    pa: Vec<f64>,
    pb: Vec<f64>,
    qa: Vec<f64>,
    qb: Vec<f64>,
}

struct Problem<'a> {
    k: &'a Behavior,
    nx: usize,
    ny: usize,
    na: usize,
    nb: usize,
}

impl Problem<'_> {
    fn pa(&self, f: &Factors, x: usize, a: usize) -> f64 {
        f.pa[x * self.na + a]
    }
    fn pb(&self, f: &Factors, a: usize, y: usize, b: usize) -> f64 {
        f.pb[(a * self.ny + y) * self.nb + b]
    }
    fn qa(&self, f: &Factors, b: usize, x: usize, a: usize) -> f64 {
        f.qa[(b * self.nx + x) * self.na + a]
    }
    fn qb(&self, f: &Factors, y: usize, b: usize) -> f64 {
        f.qb[y * self.nb + b]
    }

    fn branch_ab(&self, f: &Factors, w: f64, x: usize, y: usize, a: usize, b: usize) -> f64 {
        w * self.pa(f, x, a) * self.pb(f, a, y, b)
    }
    fn branch_ba(&self, f: &Factors, w: f64, x: usize, y: usize, a: usize, b: usize) -> f64 {
        (1.0 - w) * self.qa(f, b, x, a) * self.qb(f, y, b)
    }

    fn residual(&self, f: &Factors, w: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..self.nx {
            for y in 0..self.ny {
                for a in 0..self.na {
                    for b in 0..self.nb {
                        let m = self.branch_ab(f, w, x, y, a, b) + self.branch_ba(f, w, x, y, a, b);
                        worst = worst.max((self.k.get(x, y, a, b) - m).abs());
                    }
                }
            }
        }
        worst
    }

    fn sq_loss(&self, f: &Factors, w: f64) -> f64 {
        let mut total = 0.0;
        for x in 0..self.nx {
            for y in 0..self.ny {
                for a in 0..self.na {
                    for b in 0..self.nb {
                        let m = self.branch_ab(f, w, x, y, a, b) + self.branch_ba(f, w, x, y, a, b);
                        let d = self.k.get(x, y, a, b) - m;
                        total += d * d;
                    }
                }
            }
        }
        total
    }

    /// One sweep of exact block-coordinate minimization: each conditional
    /// distribution is replaced by the minimizer of the squared loss over the
    /// simplex with all other factors held fixed.
    fn sweep(&self, f: &mut Factors, w: f64) {
        let v = 1.0 - w;
        // p(a|x)
        for x in 0..self.nx {
            let mut num = vec![0.0; self.na];
            let mut curv = vec![0.0; self.na];
            for a in 0..self.na {
                for y in 0..self.ny {
                    for b in 0..self.nb {
                        let coef = w * self.pb(f, a, y, b);
                        let target = self.k.get(x, y, a, b) - self.branch_ba(f, w, x, y, a, b);
                        num[a] += coef * target;
                        curv[a] += coef * coef;
                    }
                }
            }
            let cur: Vec<f64> = (0..self.na).map(|a| self.pa(f, x, a)).collect();
            let new = block_minimizer(&num, &curv, &cur);
            f.pa[x * self.na..(x + 1) * self.na].copy_from_slice(&new);
        }
        // p(b|a,y)
        for a in 0..self.na {
            for y in 0..self.ny {
                let mut num = vec![0.0; self.nb];
                let mut curv = vec![0.0; self.nb];
                for b in 0..self.nb {
                    for x in 0..self.nx {
                        let coef = w * self.pa(f, x, a);
                        let target = self.k.get(x, y, a, b) - self.branch_ba(f, w, x, y, a, b);
                        num[b] += coef * target;
                        curv[b] += coef * coef;
                    }
                }
                let cur: Vec<f64> = (0..self.nb).map(|b| self.pb(f, a, y, b)).collect();
                let new = block_minimizer(&num, &curv, &cur);
                let start = (a * self.ny + y) * self.nb;
                f.pb[start..start + self.nb].copy_from_slice(&new);
            }
        }
        // p(a|b,x)
        for b in 0..self.nb {
            for x in 0..self.nx {
                let mut num = vec![0.0; self.na];
                let mut curv = vec![0.0; self.na];
                for a in 0..self.na {
                    for y in 0..self.ny {
                        let coef = v * self.qb(f, y, b);
                        let target = self.k.get(x, y, a, b) - self.branch_ab(f, w, x, y, a, b);
                        num[a] += coef * target;
                        curv[a] += coef * coef;
                    }
                }
                let cur: Vec<f64> = (0..self.na).map(|a| self.qa(f, b, x, a)).collect();
                let new = block_minimizer(&num, &curv, &cur);
                let start = (b * self.nx + x) * self.na;
                f.qa[start..start + self.na].copy_from_slice(&new);
            }
        }
        // p(b|y)
        for y in 0..self.ny {
            let mut num = vec![0.0; self.nb];
            let mut curv = vec![0.0; self.nb];
            for b in 0..self.nb {
                for x in 0..self.nx {
                    for a in 0..self.na {
                        let coef = v * self.qa(f, b, x, a);
                        let target = self.k.get(x, y, a, b) - self.branch_ab(f, w, x, y, a, b);
                        num[b] += coef * target;
                        curv[b] += coef * coef;
                    }
                }
            }
            let cur: Vec<f64> = (0..self.nb).map(|b| self.qb(f, y, b)).collect();
            let new = block_minimizer(&num, &curv, &cur);
            f.qb[y * self.nb..(y + 1) * self.nb].copy_from_slice(&new);
        }
    }

    /// Starting point built from the behavior's own conditionals; exact for
    /// behaviors already of pure one-way form.
    fn conditional_start(&self) -> Factors {
        let (nx, ny, na, nb) = (self.nx, self.ny, self.na, self.nb);
        let k = self.k;
        let mut pa = vec![0.0; nx * na];
        for x in 0..nx {
            for a in 0..na {
                pa[x * na + a] = (0..ny).map(|y| k.marginal_a(x, y)[a]).sum::<f64>() / ny as f64;
            }
        }
        let mut qb = vec![0.0; ny * nb];
        for y in 0..ny {
            for b in 0..nb {
                qb[y * nb + b] = (0..nx).map(|x| k.marginal_b(x, y)[b]).sum::<f64>() / nx as f64;
            }
        }
        let mut pb = vec![0.0; na * ny * nb];
        for a in 0..na {
            for y in 0..ny {
                let mut row = vec![0.0; nb];
                for x in 0..nx {
                    let ma = k.marginal_a(x, y)[a];
                    for (b, r) in row.iter_mut().enumerate() {
                        *r += if ma > 0.0 {
                            k.get(x, y, a, b) / ma
                        } else {
                            1.0 / nb as f64
                        };
                    }
                }
                for (b, r) in row.into_iter().enumerate() {
                    pb[(a * ny + y) * nb + b] = r / nx as f64;
                }
            }
        }
        let mut qa = vec![0.0; nb * nx * na];
        for b in 0..nb {
            for x in 0..nx {
                let mut row = vec![0.0; na];
                for y in 0..ny {
                    let mb = k.marginal_b(x, y)[b];
                    for (a, r) in row.iter_mut().enumerate() {
                        *r += if mb > 0.0 {
                            k.get(x, y, a, b) / mb
                        } else {
                            1.0 / na as f64
                        };
                    }
                }
                for (a, r) in row.into_iter().enumerate() {
                    qa[(b * nx + x) * na + a] = r / ny as f64;
                }
            }
        }
        Factors { pa, pb, qa, qb }
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> Factors {
        let mut dist = |rows: usize, width: usize| {
            let mut out = Vec::with_capacity(rows * width);
            for _ in 0..rows {
                let row: Vec<f64> = (0..width).map(|_| rng.random::<f64>() + 1e-3).collect();
                let sum: f64 = row.iter().sum();
                out.extend(row.into_iter().map(|v| v / sum));
            }
            out
        };
        Factors {
            pa: dist(self.nx, self.na),
            pb: dist(self.na * self.ny, self.nb),
            qa: dist(self.nb * self.nx, self.na),
            qb: dist(self.ny, self.nb),
        }
    }
}

/// Minimizes `Σ_i c_i (z_i − n_i / c_i)²` over the probability simplex.
/// Coordinates with zero curvature keep their current value as target.
fn block_minimizer(num: &[f64], curv: &[f64], current: &[f64]) -> Vec<f64> {
    const FLOOR: f64 = 1e-14;
    let c: Vec<f64> = curv.iter().map(|&c| c.max(FLOOR)).collect();
    let target: Vec<f64> = num
        .iter()
        .zip(curv)
        .zip(current)
        .map(|((&n, &cv), &cur)| if cv > FLOOR { n / cv } else { cur })
        .collect();
    weighted_simplex_projection(&target, &c)
}

/// `argmin_{z ∈ Δ} Σ c_i (z_i − t_i)²`, via bisection on the multiplier of `Σ z = 1`.
fn weighted_simplex_projection(target: &[f64], c: &[f64]) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> {
        target
            .iter()
            .zip(c)
            .map(|(&t, &ci)| (t - mu / ci).max(0.0))
            .collect()
    };
    let mut lo = target
        .iter()
        .zip(c)
        .map(|(&t, &ci)| ci * (t - 1.0))
        .fold(f64::INFINITY, f64::min);
    let mut hi = target
        .iter()
        .zip(c)
        .map(|(&t, &ci)| ci * t)
        .fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid).iter().sum::<f64>() > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (lo.abs() + hi.abs()) {
            break;
        }
    }
    let mut z = at(0.5 * (lo + hi));
    let sum: f64 = z.iter().sum();
    if sum > 0.0 {
        z.iter_mut().for_each(|v| *v /= sum);
    }
    z
}

/// Grid-plus-alternating-least-squares search for a single-λ one-way
/// decomposition of `behavior`.
///
/// The grid is `w_AB ∈ {0, 1/g, …, 1}` with `g = grid_steps`, scanned
/// upwards from `w_AB = 0`. For each value the factors are fitted
/// from a conditional start plus a few seeded random starts; the first fit
/// with maximum residual `≤ tol` is returned.
pub fn search_oneway_single_lambda(
    behavior: &Behavior,
    grid_steps: usize,
    tol: &Tolerances,
) -> Result<OneWaySearch> {
    search_oneway_single_lambda_seeded(behavior, grid_steps, tol, SEARCH_SEED)
}

/// As [`search_oneway_single_lambda`], with an explicit seed for the random restarts.
pub fn search_oneway_single_lambda_seeded(
    behavior: &Behavior,
    grid_steps: usize,
    tol: &Tolerances,
    seed: u64,
) -> Result<OneWaySearch> {
    behavior.ensure_valid(tol)?;
    if grid_steps < 2 {
        return Err(Error::BadParams(format!(
            "grid_steps must be at least 2, got {grid_steps}"
        )));
    }
    let s = behavior.shape();
    let problem = Problem {
        k: behavior,
        nx: s.n_settings_a(),
        ny: s.n_settings_b(),
        na: s.n_outcomes_a(),
        nb: s.n_outcomes_b(),
    };
    let mut best = (f64::INFINITY, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conditional = problem.conditional_start();
    for step in 0..=grid_steps {
        let w = step as f64 / grid_steps as f64;
        let mut starts = vec![conditional.clone()];
        starts.extend((0..SEARCH_RANDOM_STARTS).map(|_| problem.random_start(&mut rng)));
        for mut f in starts {
            let mut loss = problem.sq_loss(&f, w);
            let mut residual = problem.residual(&f, w);
            for _ in 0..SEARCH_MAX_SWEEPS {
                if residual <= tol.prop {
                    break;
                }
                problem.sweep(&mut f, w);
                let next = problem.sq_loss(&f, w);
                residual = problem.residual(&f, w);
                if loss - next <= 1e-15 * loss.max(1e-300) {
                    break;
                }
                loss = next;
            }
            if residual < best.0 {
                best = (residual, w);
            }
            if residual <= tol.prop {
                let decomposition = into_decomposition(s, w, f);
                return Ok(OneWaySearch::Found {
                    decomposition,
                    residual,
                });
            }
        }
    }
    Ok(OneWaySearch::NotFound {
        best_w_ab: best.1,
        best_residual: best.0,
        note: SEARCH_DISCLAIMER.to_string(),
    })
}

fn into_decomposition(shape: &ScenarioShape, w: f64, f: Factors) -> OneWayDecomposition {
    let mut dims = OneWayDims::of(shape);
    dims.lambdas = 1;
    OneWayDecomposition {
        dims,
        w_ab: vec![w],
        a_first: f.pa,
        b_given_a: f.pb,
        a_given_b: f.qa,
        b_second: f.qb,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_matches_euclidean_case() {
        let z = weighted_simplex_projection(&[0.8, 0.6, -0.2], &[1.0, 1.0, 1.0]);
        assert!((z[0] - 0.6).abs() < 1e-12 && (z[1] - 0.4).abs() < 1e-12 && z[2] == 0.0);
        let inside = weighted_simplex_projection(&[0.2, 0.3, 0.5], &[3.0, 1.0, 7.0]);
        for (a, b) in inside.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_projection_satisfies_kkt() {
        let t = [0.9, 0.5, 0.1];
        let c = [1.0, 4.0, 0.5];
        let z = weighted_simplex_projection(&t, &c);
        assert!((z.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Active coordinates share the multiplier μ = 2 c_i (t_i − z_i).
        let mus: Vec<f64> = (0..3)
            .filter(|&i| z[i] > 0.0)
            .map(|i| c[i] * (t[i] - z[i]))
            .collect();
        for m in &mus {
            assert!((m - mus[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn grid_steps_must_be_at_least_two() {
        let s =
            ScenarioShape::from_labels(["x"], ["y"], ["0", "1"], ["0", "1"], Vec::<&str>::new())
                .unwrap();
        let b = Behavior::from_fn(s, |_, _, _, _| 0.25).unwrap();
        assert!(matches!(
            search_oneway_single_lambda(&b, 1, &Tolerances::default()),
            Err(Error::BadParams(_))
        ));
    }
}
