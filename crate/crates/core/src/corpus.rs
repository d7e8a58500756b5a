//! Built-in model corpus and seeded random model generators used by the
//! metamorphic checks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::Result;
use crate::probmodel::{HiddenVariableModel, JointDistribution, ScenarioShape};
use crate::properties::RelabelMap;
use crate::scenarios::{
    make_einstein_box_model, make_example1_model, make_example2_model, make_pr_box,
    make_product_model, make_prop1_counterexample, spin_flip_relabel, Direction, DirectionSet,
};

/// Default seed for every generator in this module.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub name: String,
    pub model: HiddenVariableModel,
}

/// product, prop1 (n = 2, 3), example1, example2, box, and the PR box as a single-λ model.
pub fn builtin_corpus() -> Result<Vec<CorpusEntry>> {
    let dirs = DirectionSet::default_pair();
    let entries = vec![
        ("product", make_product_model()?),
        ("prop1-n2", make_prop1_counterexample(2)?),
        ("prop1-n3", make_prop1_counterexample(3)?),
        ("example1", make_example1_model(&dirs, &dirs)?),
        ("example2", make_example2_model(&dirs)?),
        ("box", make_einstein_box_model()?),
        ("prbox-singleton", make_pr_box()?.as_singleton_model("psi")?),
    ];
    Ok(entries
        .into_iter()
        .map(|(name, model)| CorpusEntry {
            name: name.to_string(),
            model,
        })
        .collect())
}

/// A model together with the settings and relabel at which it is perfectly correlated.
#[derive(Debug, Clone)]
pub struct Prop2Case {
    pub model: HiddenVariableModel,
    pub x0: usize,
    pub y0: usize,
    pub relabel: RelabelMap,
    pub origin: &'static str,
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize, alpha: f64) -> Vec<f64> {
    let g = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let v: Vec<f64> = (0..n).map(|_| g.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 && s.is_finite() {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn random_direction(rng: &mut ChaCha8Rng, label: String) -> Direction {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 {
            if let Ok(d) = Direction::new(label.clone(), [v[0] / n, v[1] / n, v[2] / n]) {
                return d;
            }
        }
    }
}

/// Two direction sets of random sizes sharing one direction at `(x0, y0)`.
fn aligned_direction_sets(rng: &mut ChaCha8Rng) -> (DirectionSet, DirectionSet, usize, usize) {
    let shared = random_direction(rng, "shared".into());
    let side = |prefix: &str, rng: &mut ChaCha8Rng| {
        let n = rng.random_range(1..=3);
        let pos = rng.random_range(0..n);
        let dirs: Vec<Direction> = (0..n)
            .map(|i| {
                if i == pos {
                    shared.clone()
                } else {
                    random_direction(rng, format!("{prefix}{i}"))
                }
            })
            .collect();
        (DirectionSet::new(dirs).expect("distinct labels"), pos)
    };
    let (a, x0) = side("a", rng);
    let (b, y0) = side("b", rng);
    (a, b, x0, y0)
}

/// Random product kernel `p(a)p(b)` over `na × nb`, sometimes deterministic.
fn product_kernel(rng: &mut ChaCha8Rng, na: usize, nb: usize) -> Vec<f64> {
    let (pa, pb) = if rng.random_bool(0.3) {
        let mut pa = vec![0.0; na];
        let mut pb = vec![0.0; nb];
        pa[rng.random_range(0..na)] = 1.0;
        pb[rng.random_range(0..nb)] = 1.0;
        (pa, pb)
    } else {
        (dirichlet(rng, na, 0.7), dirichlet(rng, nb, 0.7))
    };
    let mut k = Vec::with_capacity(na * nb);
    for &p in &pa {
        for &q in &pb {
            k.push(p * q);
        }
    }
    k
}

fn mixture_case(rng: &mut ChaCha8Rng) -> Result<Prop2Case> {
    let nx = rng.random_range(1..=3);
    let ny = rng.random_range(1..=3);
    let n = rng.random_range(2..=4);
    let nl = rng.random_range(1..=5);
    let shape = ScenarioShape::new(
        labels("x", nx),
        labels("y", ny),
        labels("o", n),
        labels("o", n),
        labels("l", nl),
    )?;
    let x0 = rng.random_range(0..nx);
    let y0 = rng.random_range(0..ny);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let relabel = RelabelMap::new(perm, &shape)?;

    // Optionally one λ has zero weight at (x0, y0) and a non-deterministic product kernel there.
    let ghost = if nl > 1 && rng.random_bool(0.2) {
        Some(rng.random_range(0..nl))
    } else {
        None
    };
    let measurement_dependent = rng.random_bool(0.5);
    let base = dirichlet(rng, nl, 1.0);
    let mut weights = Vec::with_capacity(nx * ny * nl);
    for x in 0..nx {
        for y in 0..ny {
            let mut w = if measurement_dependent {
                dirichlet(rng, nl, 1.0)
            } else {
                base.clone()
            };
            if let Some(g) = ghost.filter(|_| x == x0 && y == y0) {
                let removed = w[g];
                w[g] = 0.0;
                let rest = 1.0 - removed;
                if rest > 0.0 {
                    w.iter_mut().for_each(|v| *v /= rest);
                } else {
                    let other = (g + 1) % nl;
                    w[other] = 1.0;
                }
            }
            weights.extend(w);
        }
    }
    let mut kernels = Vec::with_capacity(nx * ny * nl * n * n);
    for x in 0..nx {
        for y in 0..ny {
            for l in 0..nl {
                if x == x0 && y == y0 && ghost != Some(l) {
                    let b = rng.random_range(0..n);
                    let a = relabel.get(b);
                    kernels.extend((0..n * n).map(|i| if i == a * n + b { 1.0 } else { 0.0 }));
                } else if x == x0 && y == y0 {
                    // Product of two genuinely mixed marginals.
                    let u = 1.0 / n as f64;
                    let pa: Vec<f64> = dirichlet(rng, n, 1.0)
                        .iter()
                        .map(|v| 0.5 * v + 0.5 * u)
                        .collect();
                    let pb: Vec<f64> = dirichlet(rng, n, 1.0)
                        .iter()
                        .map(|v| 0.5 * v + 0.5 * u)
                        .collect();
                    for &p in &pa {
                        kernels.extend(pb.iter().map(|&q| p * q));
                    }
                } else {
                    kernels.extend(product_kernel(rng, n, n));
                }
            }
        }
    }
    Ok(Prop2Case {
        model: HiddenVariableModel::new(shape, weights, kernels)?,
        x0,
        y0,
        relabel,
        origin: "mixture",
    })
}

fn example_case(rng: &mut ChaCha8Rng) -> Result<Prop2Case> {
    let (dirs_a, dirs_b, x0, y0) = aligned_direction_sets(rng);
    if rng.random_bool(0.5) {
        let model = make_example1_model(&dirs_a, &dirs_b)?;
        let relabel = spin_flip_relabel(model.shape())?;
        Ok(Prop2Case {
            model,
            x0,
            y0,
            relabel,
            origin: "example1",
        })
    } else {
        // Example 2 uses one direction set for both measurements.
        let model = make_example2_model(&dirs_a)?;
        let relabel = RelabelMap::identity(model.shape())?;
        Ok(Prop2Case {
            model,
            x0,
            y0: x0,
            relabel,
            origin: "example2",
        })
    }
}

/// `count` models satisfying outcome independence and perfect correlation at
/// their `(x0, y0)`: correlated deterministic kernels at `(x0, y0)` under a
/// random relabel, product or deterministic kernels elsewhere, and Dirichlet
/// weights that are sometimes setting-dependent. One in ten cases is
/// Example 1 or Example 2 at a random aligned direction pair.
pub fn fuzz_prop2_cases(count: usize, seed: u64) -> Result<Vec<Prop2Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            if i % 10 == 9 {
                example_case(&mut rng)
            } else {
                mixture_case(&mut rng)
            }
        })
        .collect()
}

/// Random models from several families: λ-dependent product kernels (locally
/// causal), setting-dependent product kernels (outcome independent only),
/// deterministic kernels, and unrestricted kernels.
pub fn fuzz_models(count: usize, seed: u64) -> Result<Vec<HiddenVariableModel>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_model(&mut rng)).collect()
}

pub fn random_model(rng: &mut ChaCha8Rng) -> Result<HiddenVariableModel> {
    let nx = rng.random_range(1..=3);
    let ny = rng.random_range(1..=3);
    let na = rng.random_range(2..=3);
    let nb = rng.random_range(2..=3);
    let nl = rng.random_range(1..=4);
    let shape = ScenarioShape::new(
        labels("x", nx),
        labels("y", ny),
        labels("a", na),
        labels("b", nb),
        labels("l", nl),
    )?;
    let family = rng.random_range(0..4);
    // Local factors p(a|x,λ), p(b|y,λ) for the locally causal family.
    let fa: Vec<Vec<f64>> = (0..nx * nl).map(|_| dirichlet(rng, na, 0.8)).collect();
    let fb: Vec<Vec<f64>> = (0..ny * nl).map(|_| dirichlet(rng, nb, 0.8)).collect();
    let base = dirichlet(rng, nl, 1.0);
    let mi = rng.random_bool(0.5);
    let mut weights = Vec::new();
    for _ in 0..nx * ny {
        weights.extend(if mi {
            base.clone()
        } else {
            dirichlet(rng, nl, 1.0)
        });
    }
    let mut kernels = Vec::with_capacity(nx * ny * nl * na * nb);
    for x in 0..nx {
        for y in 0..ny {
            for l in 0..nl {
                match family {
                    0 => {
                        for a in 0..na {
                            for b in 0..nb {
                                kernels.push(fa[x * nl + l][a] * fb[y * nl + l][b]);
                            }
                        }
                    }
                    1 => kernels.extend(product_kernel(rng, na, nb)),
                    2 => {
                        let a0 = rng.random_range(0..na);
                        let b0 = rng.random_range(0..nb);
                        kernels.extend(
                            (0..na * nb).map(|i| if i == a0 * nb + b0 { 1.0 } else { 0.0 }),
                        );
                    }
                    _ => kernels.extend(dirichlet(rng, na * nb, 0.8)),
                }
            }
        }
    }
    HiddenVariableModel::new(shape, weights, kernels)
}

/// Joints `p(j,l) = δ_{j,j0} q(l)` with random `q`, some entries of which are zero.
pub fn fuzz_deterministic_joints(count: usize, seed: u64) -> Result<Vec<JointDistribution>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let nj = rng.random_range(1..=5);
            let nl = rng.random_range(1..=6);
            let j0 = rng.random_range(0..nj);
            let mut q = dirichlet(&mut rng, nl, 0.5);
            if nl > 1 && rng.random_bool(0.3) {
                let z = rng.random_range(0..nl);
                let removed = q[z];
                q[z] = 0.0;
                if removed < 1.0 {
                    q.iter_mut().for_each(|v| *v /= 1.0 - removed);
                } else {
                    q[(z + 1) % nl] = 1.0;
                }
            }
            JointDistribution::from_fn(nj, nl, |j, l| if j == j0 { q[l] } else { 0.0 })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probmodel::Tolerances;

    #[test]
    fn corpus_models_are_valid() {
        let tol = Tolerances::default();
        for e in builtin_corpus().unwrap() {
            assert!(e.model.validate(&tol).unwrap().holds, "{}", e.name);
        }
        for m in fuzz_models(200, 1).unwrap() {
            assert!(m.validate(&tol).unwrap().holds);
        }
    }

    #[test]
    fn generators_are_seeded() {
        let a = fuzz_prop2_cases(20, 7).unwrap();
        let b = fuzz_prop2_cases(20, 7).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.model, q.model);
        }
    }
}
