//! Dense probability tables for finite two-party scenarios.
//!
//! A [`Behavior`] stores the observable table `p(a,b|x,y)`; a
//! [`HiddenVariableModel`] stores the weights `p(λ|x,y)` together with the
//! kernels `p(a,b|x,y,λ)`. All tables are laid out row-major over the
//! ordered label lists of a [`ScenarioShape`], and every sum runs
//! left-to-right over that order so results are bit-reproducible.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite label sets of a two-party scenario.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioShape {
    pub settings_a: Vec<String>,
    pub settings_b: Vec<String>,
    pub outcomes_a: Vec<String>,
    pub outcomes_b: Vec<String>,
    pub lambdas: Vec<String>,
}

fn check_labels(name: &str, labels: &[String], allow_empty: bool) -> Result<()> {
    if labels.is_empty() && !allow_empty {
        return Err(Error::InvalidShape(format!("{name} must not be empty")));
    }
    let mut seen = HashSet::new();
    for label in labels {
        if label.contains('|') {
            return Err(Error::InvalidShape(format!(
                "label `{label}` in {name} contains the reserved separator `|`"
            )));
        }
        if !seen.insert(label.as_str()) {
            return Err(Error::InvalidShape(format!(
                "duplicate label `{label}` in {name}"
            )));
        }
    }
    Ok(())
}

fn labels<I, S>(items: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    items.into_iter().map(Into::into).collect()
}

impl ScenarioShape {
    pub fn new(
        settings_a: Vec<String>,
        settings_b: Vec<String>,
        outcomes_a: Vec<String>,
        outcomes_b: Vec<String>,
        lambdas: Vec<String>,
    ) -> Result<Self> {
        let shape = Self {
            settings_a,
            settings_b,
            outcomes_a,
            outcomes_b,
            lambdas,
        };
        shape.check()?;
        Ok(shape)
    }

    /// Convenience constructor from anything string-like.
    pub fn from_labels<S: Into<String>>(
        settings_a: impl IntoIterator<Item = S>,
        settings_b: impl IntoIterator<Item = S>,
        outcomes_a: impl IntoIterator<Item = S>,
        outcomes_b: impl IntoIterator<Item = S>,
        lambdas: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        Self::new(
            labels(settings_a),
            labels(settings_b),
            labels(outcomes_a),
            labels(outcomes_b),
            labels(lambdas),
        )
    }

    /// Re-checks the label invariants (useful after deserialization).
    pub fn check(&self) -> Result<()> {
        check_labels("settings_a", &self.settings_a, false)?;
        check_labels("settings_b", &self.settings_b, false)?;
        check_labels("outcomes_a", &self.outcomes_a, false)?;
        check_labels("outcomes_b", &self.outcomes_b, false)?;
        check_labels("lambdas", &self.lambdas, true)
    }

    /// Same shape with a different hidden-variable label list.
    pub fn with_lambdas<S: Into<String>>(
        &self,
        lambdas: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let mut shape = self.clone();
        shape.lambdas = labels(lambdas);
        shape.check()?;
        Ok(shape)
    }

    pub fn n_settings_a(&self) -> usize {
        self.settings_a.len()
    }
    pub fn n_settings_b(&self) -> usize {
        self.settings_b.len()
    }
    pub fn n_outcomes_a(&self) -> usize {
        self.outcomes_a.len()
    }
    pub fn n_outcomes_b(&self) -> usize {
        self.outcomes_b.len()
    }
    pub fn n_lambdas(&self) -> usize {
        self.lambdas.len()
    }

    pub fn setting_a(&self, label: &str) -> Result<usize> {
        find(&self.settings_a, label)
    }
    pub fn setting_b(&self, label: &str) -> Result<usize> {
        find(&self.settings_b, label)
    }
    pub fn outcome_a(&self, label: &str) -> Result<usize> {
        find(&self.outcomes_a, label)
    }
    pub fn outcome_b(&self, label: &str) -> Result<usize> {
        find(&self.outcomes_b, label)
    }
    pub fn lambda(&self, label: &str) -> Result<usize> {
        find(&self.lambdas, label)
    }

    /// Number of cells of a behavior table over this shape.
    pub fn behavior_len(&self) -> usize {
        self.n_settings_a() * self.n_settings_b() * self.n_outcomes_a() * self.n_outcomes_b()
    }

    pub fn behavior_index(&self, x: usize, y: usize, a: usize, b: usize) -> usize {
        ((x * self.n_settings_b() + y) * self.n_outcomes_a() + a) * self.n_outcomes_b() + b
    }

    fn weight_index(&self, x: usize, y: usize, l: usize) -> usize {
        (x * self.n_settings_b() + y) * self.n_lambdas() + l
    }

    fn kernel_index(&self, x: usize, y: usize, l: usize, a: usize, b: usize) -> usize {
        ((self.weight_index(x, y, l) * self.n_outcomes_a()) + a) * self.n_outcomes_b() + b
    }

    /// Same label sets, ignoring hidden-variable labels.
    pub fn same_observables(&self, other: &ScenarioShape) -> bool {
        self.settings_a == other.settings_a
            && self.settings_b == other.settings_b
            && self.outcomes_a == other.outcomes_a
            && self.outcomes_b == other.outcomes_b
    }

    pub(crate) fn check_setting_a(&self, x: usize) -> Result<()> {
        bound(x, self.n_settings_a(), "setting_a")
    }
    pub(crate) fn check_setting_b(&self, y: usize) -> Result<()> {
        bound(y, self.n_settings_b(), "setting_b")
    }
    pub(crate) fn check_lambda(&self, l: usize) -> Result<()> {
        bound(l, self.n_lambdas(), "lambda")
    }
}

fn find(list: &[String], label: &str) -> Result<usize> {
    list.iter()
        .position(|l| l == label)
        .ok_or_else(|| Error::UnknownLabel(label.to_string()))
}

fn bound(i: usize, n: usize, what: &str) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(Error::UnknownLabel(format!("{what} index {i} (have {n})")))
    }
}

/// Numeric tolerances used by every checker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Allowed deviation of a normalization sum from one.
    pub norm: f64,
    /// Threshold on a property's maximum violation.
    pub prop: f64,
    /// Weights at or below this value count as zero support.
    pub support: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            norm: 1e-9,
            prop: 1e-9,
            support: 1e-12,
        }
    }
}

impl Tolerances {
    pub fn new(norm: f64, prop: f64, support: f64) -> Result<Self> {
        for (name, v) in [("norm", norm), ("prop", prop), ("support", support)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::BadParams(format!(
                    "tolerance `{name}` must be positive, got {v}"
                )));
            }
        }
        Ok(Self {
            norm,
            prop,
            support,
        })
    }

    /// Defaults with the property threshold replaced.
    pub fn with_prop(prop: f64) -> Self {
        Self {
            prop,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Property {
    WeakLocality,
    OutcomeIndependence,
    LocalCausality,
    MeasurementIndependence,
    Determinism,
    PerfectCorrelation,
    Consistency,
    OneWayForm,
}

impl Property {
    pub fn short_name(self) -> &'static str {
        match self {
            Property::WeakLocality => "wl",
            Property::OutcomeIndependence => "oi",
            Property::LocalCausality => "lc",
            Property::MeasurementIndependence => "mi",
            Property::Determinism => "det",
            Property::PerfectCorrelation => "pc",
            Property::Consistency => "consistency",
            Property::OneWayForm => "oneway",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Index coordinates of the cell attaining a reported violation.
///
/// `x_alt`/`y_alt` carry the second setting of pairwise comparisons
/// (weak locality, measurement independence).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_alt: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_alt: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<usize>,
}

impl Witness {
    pub fn cell(
        x: usize,
        y: usize,
        lambda: Option<usize>,
        a: Option<usize>,
        b: Option<usize>,
    ) -> Self {
        Self {
            x: Some(x),
            y: Some(y),
            lambda,
            a,
            b,
            ..Self::default()
        }
    }

    /// Renders the coordinates with the shape's labels, e.g. `x=z, y=x, λ=+1, a=-1`.
    pub fn describe(&self, shape: &ScenarioShape) -> String {
        let mut parts = Vec::new();
        let mut push = |name: &str, idx: Option<usize>, list: &[String]| {
            if let Some(i) = idx {
                let label = list.get(i).map(String::as_str).unwrap_or("?");
                parts.push(format!("{name}={label}"));
            }
        };
        push("x", self.x, &shape.settings_a);
        push("x'", self.x_alt, &shape.settings_a);
        push("y", self.y, &shape.settings_b);
        push("y'", self.y_alt, &shape.settings_b);
        push("lambda", self.lambda, &shape.lambdas);
        push("a", self.a, &shape.outcomes_a);
        push("b", self.b, &shape.outcomes_b);
        parts.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property: Property,
    pub holds: bool,
    pub max_violation: f64,
    pub witness: Option<Witness>,
    pub tolerance_used: f64,
}

impl PropertyReport {
    /// `holds` is derived from the violation, never set independently.
    pub fn new(
        property: Property,
        max_violation: f64,
        witness: Option<Witness>,
        tolerance: f64,
    ) -> Self {
        Self {
            property,
            holds: max_violation <= tolerance,
            max_violation,
            witness,
            tolerance_used: tolerance,
        }
    }
}

/// Running maximum that keeps the first cell attaining it.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct MaxScan {
    pub max: f64,
    pub witness: Option<Witness>,
}

impl MaxScan {
    pub fn offer(&mut self, value: f64, witness: impl FnOnce() -> Witness) {
        if value > self.max || value.is_nan() {
            self.max = value;
            self.witness = Some(witness());
        }
    }

    pub fn merge(&mut self, other: MaxScan) {
        if other.max > self.max {
            *self = other;
        }
    }

    pub fn report(self, property: Property, tolerance: f64) -> PropertyReport {
        PropertyReport::new(property, self.max, self.witness, tolerance)
    }
}

fn check_entries(values: &[f64], tol: &Tolerances, key: impl Fn(usize) -> String) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(key(i)));
        }
        if v < -tol.norm {
            return Err(Error::NegativeProbability {
                key: key(i),
                value: v,
            });
        }
        if v < 0.0 {
            worst = worst.max(-v);
        }
    }
    Ok(worst)
}

/// Observable table `p(a,b|x,y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    shape: ScenarioShape,
    table: Vec<f64>,
}

impl Behavior {
    /// Wraps a dense table laid out as `(x, y, a, b)` row-major.
    pub fn new(shape: ScenarioShape, table: Vec<f64>) -> Result<Self> {
        shape.check()?;
        if table.len() != shape.behavior_len() {
            return Err(Error::ShapeMismatch(format!(
                "behavior table has {} entries, shape implies {}",
                table.len(),
                shape.behavior_len()
            )));
        }
        Ok(Self { shape, table })
    }

    pub fn from_fn(
        shape: ScenarioShape,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut table = Vec::with_capacity(shape.behavior_len());
        for x in 0..shape.n_settings_a() {
            for y in 0..shape.n_settings_b() {
                for a in 0..shape.n_outcomes_a() {
                    for b in 0..shape.n_outcomes_b() {
                        table.push(f(x, y, a, b));
                    }
                }
            }
        }
        Self::new(shape, table)
    }

    pub fn shape(&self) -> &ScenarioShape {
        &self.shape
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn get(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.table[self.shape.behavior_index(x, y, a, b)]
    }

    pub fn key(&self, x: usize, y: usize, a: usize, b: usize) -> String {
        let s = &self.shape;
        format!(
            "{}|{}|{}|{}",
            s.settings_a[x], s.settings_b[y], s.outcomes_a[a], s.outcomes_b[b]
        )
    }

    /// Normalization/nonnegativity report.
    pub fn validate(&self, tol: &Tolerances) -> Result<PropertyReport> {
        let s = &self.shape;
        let (na, nb) = (s.n_outcomes_a(), s.n_outcomes_b());
        let neg = check_entries(&self.table, tol, |i| {
            let b = i % nb;
            let a = (i / nb) % na;
            let y = (i / (na * nb)) % s.n_settings_b();
            let x = i / (na * nb * s.n_settings_b());
            self.key(x, y, a, b)
        })?;
        let mut scan = MaxScan::default();
        for x in 0..s.n_settings_a() {
            for y in 0..s.n_settings_b() {
                let start = s.behavior_index(x, y, 0, 0);
                let sum: f64 = self.table[start..start + na * nb].iter().sum();
                scan.offer((sum - 1.0).abs(), || Witness::cell(x, y, None, None, None));
            }
        }
        if neg > scan.max {
            scan.max = neg;
        }
        Ok(scan.report(Property::Consistency, tol.norm))
    }

    pub(crate) fn ensure_valid(&self, tol: &Tolerances) -> Result<()> {
        let report = self.validate(tol)?;
        if report.holds {
            Ok(())
        } else {
            Err(Error::InvalidBehavior(format!(
                "normalization violated by {}",
                report.max_violation
            )))
        }
    }

    /// `p(a|x,y)`.
    pub fn marginal_a(&self, x: usize, y: usize) -> Vec<f64> {
        let s = &self.shape;
        (0..s.n_outcomes_a())
            .map(|a| (0..s.n_outcomes_b()).map(|b| self.get(x, y, a, b)).sum())
            .collect()
    }

    /// `p(b|x,y)`.
    pub fn marginal_b(&self, x: usize, y: usize) -> Vec<f64> {
        let s = &self.shape;
        (0..s.n_outcomes_b())
            .map(|b| (0..s.n_outcomes_a()).map(|a| self.get(x, y, a, b)).sum())
            .collect()
    }

    /// Largest change of a one-sided marginal under a change of the distant setting.
    pub fn signalling(&self) -> f64 {
        let s = &self.shape;
        let mut worst: f64 = 0.0;
        for x in 0..s.n_settings_a() {
            let base = self.marginal_a(x, 0);
            for y in 1..s.n_settings_b() {
                for (p, q) in base.iter().zip(self.marginal_a(x, y)) {
                    worst = worst.max((p - q).abs());
                }
            }
        }
        for y in 0..s.n_settings_b() {
            let base = self.marginal_b(0, y);
            for x in 1..s.n_settings_a() {
                for (p, q) in base.iter().zip(self.marginal_b(x, y)) {
                    worst = worst.max((p - q).abs());
                }
            }
        }
        worst
    }

    /// Sub-behavior on the listed settings (in the given order).
    pub fn restrict(&self, xs: &[usize], ys: &[usize]) -> Result<Self> {
        let s = &self.shape;
        for &x in xs {
            s.check_setting_a(x)?;
        }
        for &y in ys {
            s.check_setting_b(y)?;
        }
        let shape = ScenarioShape::new(
            xs.iter().map(|&x| s.settings_a[x].clone()).collect(),
            ys.iter().map(|&y| s.settings_b[y].clone()).collect(),
            s.outcomes_a.clone(),
            s.outcomes_b.clone(),
            s.lambdas.clone(),
        )?;
        Self::from_fn(shape, |x, y, a, b| self.get(xs[x], ys[y], a, b))
    }

    /// Wraps this behavior as a single-λ model whose kernel is the behavior itself.
    pub fn as_singleton_model(&self, lambda: &str) -> Result<HiddenVariableModel> {
        let shape = self.shape.with_lambdas([lambda])?;
        let weights = vec![1.0; shape.n_settings_a() * shape.n_settings_b()];
        HiddenVariableModel::new(shape, weights, self.table.clone())
    }
}

/// Hidden-variable weights `p(λ|x,y)` plus kernels `p(a,b|x,y,λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenVariableModel {
    shape: ScenarioShape,
    weights: Vec<f64>,
    kernels: Vec<f64>,
}

impl HiddenVariableModel {
    /// `weights` is laid out `(x, y, λ)`, `kernels` as `(x, y, λ, a, b)`.
    pub fn new(shape: ScenarioShape, weights: Vec<f64>, kernels: Vec<f64>) -> Result<Self> {
        shape.check()?;
        if shape.lambdas.is_empty() {
            return Err(Error::InvalidShape(
                "a hidden-variable model needs at least one λ".into(),
            ));
        }
        let nw = shape.n_settings_a() * shape.n_settings_b() * shape.n_lambdas();
        if weights.len() != nw {
            return Err(Error::ShapeMismatch(format!(
                "weights have {} entries, shape implies {nw}",
                weights.len()
            )));
        }
        let nk = nw * shape.n_outcomes_a() * shape.n_outcomes_b();
        if kernels.len() != nk {
            return Err(Error::ShapeMismatch(format!(
                "kernels have {} entries, shape implies {nk}",
                kernels.len()
            )));
        }
        Ok(Self {
            shape,
            weights,
            kernels,
        })
    }

    /// Builds a model from per-cell closures.
    pub fn from_fns(
        shape: ScenarioShape,
        mut weight: impl FnMut(usize, usize, usize) -> f64,
        mut kernel: impl FnMut(usize, usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let s = &shape;
        let mut weights = Vec::new();
        let mut kernels = Vec::new();
        for x in 0..s.n_settings_a() {
            for y in 0..s.n_settings_b() {
                for l in 0..s.n_lambdas() {
                    weights.push(weight(x, y, l));
                    for a in 0..s.n_outcomes_a() {
                        for b in 0..s.n_outcomes_b() {
                            kernels.push(kernel(x, y, l, a, b));
                        }
                    }
                }
            }
        }
        Self::new(shape, weights, kernels)
    }

    pub fn shape(&self) -> &ScenarioShape {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernels(&self) -> &[f64] {
        &self.kernels
    }

    pub fn weight(&self, x: usize, y: usize, l: usize) -> f64 {
        self.weights[self.shape.weight_index(x, y, l)]
    }

    pub fn kernel(&self, x: usize, y: usize, l: usize, a: usize, b: usize) -> f64 {
        self.kernels[self.shape.kernel_index(x, y, l, a, b)]
    }

    pub fn weight_key(&self, x: usize, y: usize, l: usize) -> String {
        let s = &self.shape;
        format!("{}|{}|{}", s.settings_a[x], s.settings_b[y], s.lambdas[l])
    }

    pub fn kernel_key(&self, x: usize, y: usize, l: usize, a: usize, b: usize) -> String {
        let s = &self.shape;
        format!(
            "{}|{}|{}|{}|{}",
            s.settings_a[x], s.settings_b[y], s.lambdas[l], s.outcomes_a[a], s.outcomes_b[b]
        )
    }

    /// Normalization/nonnegativity report over weights and kernels.
    pub fn validate(&self, tol: &Tolerances) -> Result<PropertyReport> {
        let s = &self.shape;
        let (nx, ny, nl, na, nb) = (
            s.n_settings_a(),
            s.n_settings_b(),
            s.n_lambdas(),
            s.n_outcomes_a(),
            s.n_outcomes_b(),
        );
        let neg_w = check_entries(&self.weights, tol, |i| {
            let l = i % nl;
            let y = (i / nl) % ny;
            let x = i / (nl * ny);
            self.weight_key(x, y, l)
        })?;
        let neg_k = check_entries(&self.kernels, tol, |i| {
            let b = i % nb;
            let a = (i / nb) % na;
            let l = (i / (na * nb)) % nl;
            let y = (i / (na * nb * nl)) % ny;
            let x = i / (na * nb * nl * ny);
            self.kernel_key(x, y, l, a, b)
        })?;
        let mut scan = MaxScan::default();
        for x in 0..nx {
            for y in 0..ny {
                let sum: f64 = (0..nl).map(|l| self.weight(x, y, l)).sum();
                scan.offer((sum - 1.0).abs(), || Witness::cell(x, y, None, None, None));
                for l in 0..nl {
                    let start = s.kernel_index(x, y, l, 0, 0);
                    let sum: f64 = self.kernels[start..start + na * nb].iter().sum();
                    scan.offer((sum - 1.0).abs(), || {
                        Witness::cell(x, y, Some(l), None, None)
                    });
                }
            }
        }
        let neg = neg_w.max(neg_k);
        if neg > scan.max {
            scan.max = neg;
        }
        Ok(scan.report(Property::Consistency, tol.norm))
    }

    pub(crate) fn ensure_valid(&self, tol: &Tolerances) -> Result<()> {
        let report = self.validate(tol)?;
        if report.holds {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "normalization violated by {}",
                report.max_violation
            )))
        }
    }

    /// `p(a|x,y,λ) = Σ_b p(a,b|x,y,λ)`.
    pub fn marginal_a(&self, x: usize, y: usize, l: usize) -> Result<Vec<f64>> {
        self.check_cell(x, y, l)?;
        Ok(self.marginal_a_unchecked(x, y, l))
    }

    /// `p(b|x,y,λ) = Σ_a p(a,b|x,y,λ)`.
    pub fn marginal_b(&self, x: usize, y: usize, l: usize) -> Result<Vec<f64>> {
        self.check_cell(x, y, l)?;
        Ok(self.marginal_b_unchecked(x, y, l))
    }

    fn check_cell(&self, x: usize, y: usize, l: usize) -> Result<()> {
        self.shape.check_setting_a(x)?;
        self.shape.check_setting_b(y)?;
        self.shape.check_lambda(l)
    }

    pub(crate) fn marginal_a_unchecked(&self, x: usize, y: usize, l: usize) -> Vec<f64> {
        let s = &self.shape;
        (0..s.n_outcomes_a())
            .map(|a| {
                (0..s.n_outcomes_b())
                    .map(|b| self.kernel(x, y, l, a, b))
                    .sum()
            })
            .collect()
    }

    pub(crate) fn marginal_b_unchecked(&self, x: usize, y: usize, l: usize) -> Vec<f64> {
        let s = &self.shape;
        (0..s.n_outcomes_b())
            .map(|b| {
                (0..s.n_outcomes_a())
                    .map(|a| self.kernel(x, y, l, a, b))
                    .sum()
            })
            .collect()
    }

    /// `true` unless λ has weight at or below `support` under every setting pair.
    pub fn lambda_supported(&self, l: usize, tol: &Tolerances) -> bool {
        let s = &self.shape;
        (0..s.n_settings_a())
            .any(|x| (0..s.n_settings_b()).any(|y| self.weight(x, y, l) > tol.support))
    }

    /// Observable behavior `Σ_λ p(λ|x,y) p(a,b|x,y,λ)`.
    pub fn aggregate_behavior(&self, tol: &Tolerances) -> Result<Behavior> {
        self.ensure_valid(tol)?;
        Ok(self.aggregate_unchecked())
    }

    pub(crate) fn aggregate_unchecked(&self) -> Behavior {
        let s = &self.shape;
        let shape = ScenarioShape {
            lambdas: Vec::new(),
            ..s.clone()
        };
        Behavior::from_fn(shape, |x, y, a, b| {
            let mut sum = 0.0;
            for l in 0..s.n_lambdas() {
                sum += self.weight(x, y, l) * self.kernel(x, y, l, a, b);
            }
            sum
        })
        .expect("aggregate of a well-shaped model is well shaped")
    }

    /// Sub-model on the listed settings (in the given order).
    pub fn restrict(&self, xs: &[usize], ys: &[usize]) -> Result<Self> {
        let s = &self.shape;
        for &x in xs {
            s.check_setting_a(x)?;
        }
        for &y in ys {
            s.check_setting_b(y)?;
        }
        let shape = ScenarioShape::new(
            xs.iter().map(|&x| s.settings_a[x].clone()).collect(),
            ys.iter().map(|&y| s.settings_b[y].clone()).collect(),
            s.outcomes_a.clone(),
            s.outcomes_b.clone(),
            s.lambdas.clone(),
        )?;
        Self::from_fns(
            shape,
            |x, y, l| self.weight(xs[x], ys[y], l),
            |x, y, l, a, b| self.kernel(xs[x], ys[y], l, a, b),
        )
    }

    /// Copy with the λ labels (and their tables) reordered: new λ `i` is old λ `perm[i]`.
    pub fn permute_lambdas(&self, perm: &[usize]) -> Result<Self> {
        let s = &self.shape;
        check_perm(perm, s.n_lambdas())?;
        let shape = s.with_lambdas(perm.iter().map(|&i| s.lambdas[i].clone()))?;
        Self::from_fns(
            shape,
            |x, y, l| self.weight(x, y, perm[l]),
            |x, y, l, a, b| self.kernel(x, y, perm[l], a, b),
        )
    }

    /// Copy with every label list reordered; each permutation maps new index to old index.
    pub fn permute(&self, perms: &LabelPermutation) -> Result<Self> {
        let s = &self.shape;
        check_perm(&perms.settings_a, s.n_settings_a())?;
        check_perm(&perms.settings_b, s.n_settings_b())?;
        check_perm(&perms.outcomes_a, s.n_outcomes_a())?;
        check_perm(&perms.outcomes_b, s.n_outcomes_b())?;
        check_perm(&perms.lambdas, s.n_lambdas())?;
        let pick =
            |list: &[String], p: &[usize]| p.iter().map(|&i| list[i].clone()).collect::<Vec<_>>();
        let shape = ScenarioShape::new(
            pick(&s.settings_a, &perms.settings_a),
            pick(&s.settings_b, &perms.settings_b),
            pick(&s.outcomes_a, &perms.outcomes_a),
            pick(&s.outcomes_b, &perms.outcomes_b),
            pick(&s.lambdas, &perms.lambdas),
        )?;
        let p = perms;
        Self::from_fns(
            shape,
            |x, y, l| self.weight(p.settings_a[x], p.settings_b[y], p.lambdas[l]),
            |x, y, l, a, b| {
                self.kernel(
                    p.settings_a[x],
                    p.settings_b[y],
                    p.lambdas[l],
                    p.outcomes_a[a],
                    p.outcomes_b[b],
                )
            },
        )
    }
}

/// Reordering of every label list; entry `i` names the old index placed at `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPermutation {
    pub settings_a: Vec<usize>,
    pub settings_b: Vec<usize>,
    pub outcomes_a: Vec<usize>,
    pub outcomes_b: Vec<usize>,
    pub lambdas: Vec<usize>,
}

fn check_perm(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "permutation of length {} for {n} labels",
            perm.len()
        )));
    }
    for &i in perm {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::ShapeMismatch(format!(
                "{perm:?} is not a permutation of 0..{n}"
            )));
        }
    }
    Ok(())
}

/// Finite joint distribution `p(j, l | k)` for a fixed context `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    n_j: usize,
    n_l: usize,
    table: Vec<f64>,
}

impl JointDistribution {
    /// `table` is laid out `(j, l)` row-major.
    pub fn new(n_j: usize, n_l: usize, table: Vec<f64>) -> Result<Self> {
        if n_j == 0 || n_l == 0 {
            return Err(Error::InvalidShape(
                "joint distribution needs non-empty j and l".into(),
            ));
        }
        if table.len() != n_j * n_l {
            return Err(Error::ShapeMismatch(format!(
                "joint table has {} entries, expected {}",
                table.len(),
                n_j * n_l
            )));
        }
        Ok(Self { n_j, n_l, table })
    }

    pub fn from_fn(n_j: usize, n_l: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut table = Vec::with_capacity(n_j * n_l);
        for j in 0..n_j {
            for l in 0..n_l {
                table.push(f(j, l));
            }
        }
        Self::new(n_j, n_l, table)
    }

    pub fn n_j(&self) -> usize {
        self.n_j
    }
    pub fn n_l(&self) -> usize {
        self.n_l
    }

    pub fn get(&self, j: usize, l: usize) -> f64 {
        self.table[j * self.n_l + l]
    }

    pub fn validate(&self, tol: &Tolerances) -> Result<PropertyReport> {
        let neg = check_entries(&self.table, tol, |i| {
            format!("{}|{}", i / self.n_l, i % self.n_l)
        })?;
        let sum: f64 = self.table.iter().sum();
        let v = (sum - 1.0).abs().max(neg);
        Ok(PropertyReport::new(
            Property::Consistency,
            v,
            None,
            tol.norm,
        ))
    }

    /// `p(j|k)`.
    pub fn marginal_j(&self) -> Vec<f64> {
        (0..self.n_j)
            .map(|j| (0..self.n_l).map(|l| self.get(j, l)).sum())
            .collect()
    }

    /// `p(l|k)`.
    pub fn marginal_l(&self) -> Vec<f64> {
        (0..self.n_l)
            .map(|l| (0..self.n_j).map(|j| self.get(j, l)).sum())
            .collect()
    }
}

/// `p(j|k,l₀) = p(j,l₀|k) / p(l₀|k)`.
pub fn condition(joint: &JointDistribution, l0: usize, tol: &Tolerances) -> Result<Vec<f64>> {
    if l0 >= joint.n_l {
        return Err(Error::UnknownLabel(format!(
            "l index {l0} (have {})",
            joint.n_l
        )));
    }
    let p_l: f64 = (0..joint.n_j).map(|j| joint.get(j, l0)).sum();
    if p_l <= tol.support {
        return Err(Error::ZeroSupport(p_l));
    }
    Ok((0..joint.n_j).map(|j| joint.get(j, l0) / p_l).collect())
}

/// Distance from the nearest point mass, `1 − max_i p_i`.
pub fn point_mass_distance(dist: &[f64]) -> f64 {
    let max = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (1.0 - max).max(0.0)
}

/// Index of the largest entry (first on ties).
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in dist.iter().enumerate() {
        if v > dist[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(lambdas: &[&str]) -> ScenarioShape {
        ScenarioShape::from_labels(
            ["0", "1"],
            ["0", "1"],
            ["+1", "-1"],
            ["+1", "-1"],
            lambdas.iter().copied(),
        )
        .unwrap()
    }

    #[test]
    fn shape_rejects_duplicates_and_separator() {
        assert!(matches!(
            ScenarioShape::from_labels(["a", "a"], ["b"], ["0"], ["0"], Vec::<&str>::new()),
            Err(Error::InvalidShape(_))
        ));
        assert!(matches!(
            ScenarioShape::from_labels(["a|b"], ["b"], ["0"], ["0"], Vec::<&str>::new()),
            Err(Error::InvalidShape(_))
        ));
        assert!(ScenarioShape::from_labels(
            Vec::<&str>::new(),
            ["b"],
            ["0"],
            ["0"],
            Vec::<&str>::new()
        )
        .is_err());
    }

    #[test]
    fn uniform_behavior_is_consistent() {
        let b = Behavior::from_fn(two_by_two(&[]), |_, _, _, _| 0.25).unwrap();
        let r = b.validate(&Tolerances::default()).unwrap();
        assert!(r.holds);
        assert_eq!(r.max_violation, 0.0);
        assert!(r.witness.is_none());
    }

    #[test]
    fn short_row_is_reported() {
        let b = Behavior::from_fn(two_by_two(&[]), |x, y, a, b| {
            if (x, y, a, b) == (1, 0, 0, 0) {
                0.15
            } else {
                0.25
            }
        })
        .unwrap();
        let r = b.validate(&Tolerances::default()).unwrap();
        assert!(!r.holds);
        assert!((r.max_violation - 0.1).abs() < 1e-15);
        assert_eq!(r.witness, Some(Witness::cell(1, 0, None, None, None)));
    }

    #[test]
    fn negative_entry_is_an_error() {
        let b = Behavior::from_fn(two_by_two(&[]), |_, _, a, b| match (a, b) {
            (0, 0) => -0.1,
            (0, 1) => 0.6,
            _ => 0.25,
        })
        .unwrap();
        assert!(matches!(
            b.validate(&Tolerances::default()),
            Err(Error::NegativeProbability { .. })
        ));
    }

    #[test]
    fn table_length_must_match_shape() {
        assert!(matches!(
            Behavior::new(two_by_two(&[]), vec![0.25; 15]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn aggregate_of_identical_kernels_is_the_kernel() {
        let shape = two_by_two(&["l0", "l1", "l2"]);
        let kernel = [0.1, 0.2, 0.3, 0.4];
        let weights = [0.5, 0.3, 0.2];
        let m = HiddenVariableModel::from_fns(
            shape,
            |_, _, l| weights[l],
            |_, _, _, a, b| kernel[2 * a + b],
        )
        .unwrap();
        let beh = m.aggregate_behavior(&Tolerances::default()).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                for a in 0..2 {
                    for b in 0..2 {
                        assert!((beh.get(x, y, a, b) - kernel[2 * a + b]).abs() < 1e-15);
                    }
                }
            }
        }
    }

    #[test]
    fn aggregate_requires_valid_model() {
        let m =
            HiddenVariableModel::from_fns(two_by_two(&["l"]), |_, _, _| 0.5, |_, _, _, _, _| 0.25)
                .unwrap();
        assert!(matches!(
            m.aggregate_behavior(&Tolerances::default()),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn marginals_of_simple_kernels() {
        let shape = two_by_two(&["l"]);
        let corr = HiddenVariableModel::from_fns(
            shape.clone(),
            |_, _, _| 1.0,
            |_, _, _, a, b| {
                if a == b {
                    0.5
                } else {
                    0.0
                }
            },
        )
        .unwrap();
        assert_eq!(corr.marginal_a(0, 0, 0).unwrap(), vec![0.5, 0.5]);
        let det = HiddenVariableModel::from_fns(
            shape,
            |_, _, _| 1.0,
            |_, _, _, a, b| {
                if (a, b) == (1, 0) {
                    1.0
                } else {
                    0.0
                }
            },
        )
        .unwrap();
        assert_eq!(det.marginal_a(1, 1, 0).unwrap(), vec![0.0, 1.0]);
        assert_eq!(det.marginal_b(1, 1, 0).unwrap(), vec![1.0, 0.0]);
        assert!(matches!(
            det.marginal_a(2, 0, 0),
            Err(Error::UnknownLabel(_))
        ));
    }

    #[test]
    fn conditioning() {
        let tol = Tolerances::default();
        let pj = [0.2, 0.8];
        let pl = [0.3, 0.3, 0.4];
        let indep = JointDistribution::from_fn(2, 3, |j, l| pj[j] * pl[l]).unwrap();
        for l in 0..3 {
            let c = condition(&indep, l, &tol).unwrap();
            assert!((c[0] - 0.2).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        }
        let corr = JointDistribution::from_fn(2, 2, |j, l| if j == l { 0.5 } else { 0.0 }).unwrap();
        assert_eq!(condition(&corr, 1, &tol).unwrap(), vec![0.0, 1.0]);
        let zero = JointDistribution::from_fn(2, 2, |_, l| if l == 0 { 0.5 } else { 0.0 }).unwrap();
        assert!(matches!(
            condition(&zero, 1, &tol),
            Err(Error::ZeroSupport(_))
        ));
    }

    #[test]
    fn point_mass_distance_examples() {
        assert_eq!(point_mass_distance(&[0.0, 1.0, 0.0]), 0.0);
        assert_eq!(point_mass_distance(&[0.5, 0.5]), 0.5);
        assert!((point_mass_distance(&[1.0 / 3.0; 3]) - 2.0 / 3.0).abs() < 1e-15);
    }
}
