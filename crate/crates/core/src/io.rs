//! JSON model files.
//!
//! ```json
//! {
//!   "shape": {"settings_a": [...], "settings_b": [...], "outcomes_a": [...],
//!             "outcomes_b": [...], "lambdas": [...]},
//!   "weights": {"x|y|λ": p, ...},
//!   "kernels": {"x|y|λ|a|b": p, ...}
//! }
//! ```
//!
//! A file holds either `kernels` (a hidden-variable model) or `behavior`
//! (keys `"x|y|a|b"`). `weights` may be omitted for kernel files, in which
//! case every setting pair gets the uniform distribution over λ. An optional
//! `perfect_correlation` object `{"x": .., "y": .., "relabel": {b: a, ..}}`
//! records where the content is expected to be perfectly correlated.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::probmodel::{Behavior, HiddenVariableModel, ScenarioShape};
use crate::properties::RelabelMap;

const TOP_LEVEL_KEYS: [&str; 5] = [
    "shape",
    "weights",
    "kernels",
    "behavior",
    "perfect_correlation",
];

#[derive(Debug, Clone, PartialEq)]
pub enum ModelContent {
    Model(HiddenVariableModel),
    Behavior(Behavior),
}

impl ModelContent {
    pub fn shape(&self) -> &ScenarioShape {
        match self {
            ModelContent::Model(m) => m.shape(),
            ModelContent::Behavior(b) => b.shape(),
        }
    }
}

/// Settings and outcome identification at which perfect correlation is expected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationHint {
    pub x: String,
    pub y: String,
    /// Pairs `(b, a)` in the order of `outcomes_b`.
    pub relabel: Vec<(String, String)>,
}

impl CorrelationHint {
    pub fn resolve(&self, shape: &ScenarioShape) -> Result<(usize, usize, RelabelMap)> {
        Ok((
            shape.setting_a(&self.x)?,
            shape.setting_b(&self.y)?,
            RelabelMap::from_label_pairs(shape, &self.relabel)?,
        ))
    }

    pub fn from_indices(shape: &ScenarioShape, x: usize, y: usize, relabel: &RelabelMap) -> Self {
        Self {
            x: shape.settings_a[x].clone(),
            y: shape.settings_b[y].clone(),
            relabel: relabel.label_pairs(shape),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub content: ModelContent,
    pub perfect_correlation: Option<CorrelationHint>,
}

impl ModelFile {
    pub fn model(model: HiddenVariableModel) -> Self {
        Self {
            content: ModelContent::Model(model),
            perfect_correlation: None,
        }
    }

    pub fn behavior(behavior: Behavior) -> Self {
        Self {
            content: ModelContent::Behavior(behavior),
            perfect_correlation: None,
        }
    }

    pub fn with_hint(mut self, hint: CorrelationHint) -> Self {
        self.perfect_correlation = Some(hint);
        self
    }
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn label_list(obj: &Map<String, Value>, key: &str) -> Result<Vec<String>> {
    let v = obj
        .get(key)
        .ok_or_else(|| Error::MissingEntry(format!("shape.{key}")))?;
    let arr = v
        .as_array()
        .ok_or_else(|| parse_err(format!("`shape.{key}` must be an array of strings")))?;
    arr.iter()
        .enumerate()
        .map(|(i, s)| {
            s.as_str()
                .map(str::to_string)
                .ok_or_else(|| parse_err(format!("`shape.{key}[{i}]` must be a string")))
        })
        .collect()
}

fn parse_shape(v: &Value) -> Result<ScenarioShape> {
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err("`shape` must be an object"))?;
    for k in obj.keys() {
        if ![
            "settings_a",
            "settings_b",
            "outcomes_a",
            "outcomes_b",
            "lambdas",
        ]
        .contains(&k.as_str())
        {
            return Err(parse_err(format!("unknown key `shape.{k}`")));
        }
    }
    let lambdas = if obj.contains_key("lambdas") {
        label_list(obj, "lambdas")?
    } else {
        Vec::new()
    };
    ScenarioShape::new(
        label_list(obj, "settings_a")?,
        label_list(obj, "settings_b")?,
        label_list(obj, "outcomes_a")?,
        label_list(obj, "outcomes_b")?,
        lambdas,
    )
}

/// Reads a table whose keys must be exactly `keys`, in any order.
fn parse_table(section: &str, v: &Value, keys: &[String]) -> Result<Vec<f64>> {
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err(format!("`{section}` must be an object")))?;
    let mut out = Vec::with_capacity(keys.len());
    for key in keys {
        let entry = obj
            .get(key)
            .ok_or_else(|| Error::MissingEntry(format!("{section}.{key}")))?;
        let p = entry
            .as_f64()
            .ok_or_else(|| parse_err(format!("`{section}.{key}` must be a number")))?;
        out.push(p);
    }
    if obj.len() != keys.len() {
        let known: std::collections::HashSet<&str> = keys.iter().map(String::as_str).collect();
        if let Some(extra) = obj.keys().find(|k| !known.contains(k.as_str())) {
            return Err(parse_err(format!("unknown key `{section}.{extra}`")));
        }
    }
    Ok(out)
}

pub fn behavior_keys(shape: &ScenarioShape) -> Vec<String> {
    let mut keys = Vec::with_capacity(shape.behavior_len());
    for x in &shape.settings_a {
        for y in &shape.settings_b {
            for a in &shape.outcomes_a {
                for b in &shape.outcomes_b {
                    keys.push(format!("{x}|{y}|{a}|{b}"));
                }
            }
        }
    }
    keys
}

pub fn weight_keys(shape: &ScenarioShape) -> Vec<String> {
    let mut keys = Vec::new();
    for x in &shape.settings_a {
        for y in &shape.settings_b {
            for l in &shape.lambdas {
                keys.push(format!("{x}|{y}|{l}"));
            }
        }
    }
    keys
}

pub fn kernel_keys(shape: &ScenarioShape) -> Vec<String> {
    let mut keys = Vec::new();
    for x in &shape.settings_a {
        for y in &shape.settings_b {
            for l in &shape.lambdas {
                for a in &shape.outcomes_a {
                    for b in &shape.outcomes_b {
                        keys.push(format!("{x}|{y}|{l}|{a}|{b}"));
                    }
                }
            }
        }
    }
    keys
}

fn parse_hint(v: &Value) -> Result<CorrelationHint> {
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err("`perfect_correlation` must be an object"))?;
    let string = |k: &str| -> Result<String> {
        obj.get(k)
            .ok_or_else(|| Error::MissingEntry(format!("perfect_correlation.{k}")))?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| parse_err(format!("`perfect_correlation.{k}` must be a string")))
    };
    let relabel = obj
        .get("relabel")
        .ok_or_else(|| Error::MissingEntry("perfect_correlation.relabel".into()))?
        .as_object()
        .ok_or_else(|| parse_err("`perfect_correlation.relabel` must be an object"))?
        .iter()
        .map(|(b, a)| {
            a.as_str()
                .map(|a| (b.clone(), a.to_string()))
                .ok_or_else(|| {
                    parse_err(format!(
                        "`perfect_correlation.relabel.{b}` must be a string"
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CorrelationHint {
        x: string("x")?,
        y: string("y")?,
        relabel,
    })
}

/// Parses a model file. Tables are not validated for normalization here.
pub fn parse_model_file(text: &str) -> Result<ModelFile> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| parse_err(format!("invalid JSON: {e}")))?;
    let obj = root
        .as_object()
        .ok_or_else(|| parse_err("top level must be an object"))?;
    if let Some(k) = obj.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
        return Err(parse_err(format!("unknown top-level key `{k}`")));
    }
    let shape = parse_shape(
        obj.get("shape")
            .ok_or_else(|| Error::MissingEntry("shape".into()))?,
    )?;
    let hint = obj.get("perfect_correlation").map(parse_hint).transpose()?;
    let content = match (obj.get("kernels"), obj.get("behavior")) {
        (Some(_), Some(_)) => return Err(parse_err("file has both `kernels` and `behavior`")),
        (None, None) => return Err(Error::MissingEntry("kernels".into())),
        (None, Some(b)) => {
            if obj.contains_key("weights") {
                return Err(parse_err("`weights` given for a behavior file"));
            }
            let table = parse_table("behavior", b, &behavior_keys(&shape))?;
            ModelContent::Behavior(Behavior::new(shape, table)?)
        }
        (Some(k), None) => {
            if shape.lambdas.is_empty() {
                return Err(Error::InvalidShape(
                    "a kernel file needs at least one lambda".into(),
                ));
            }
            let weights = match obj.get("weights") {
                Some(w) => parse_table("weights", w, &weight_keys(&shape))?,
                None => vec![1.0 / shape.n_lambdas() as f64; weight_keys(&shape).len()],
            };
            let kernels = parse_table("kernels", k, &kernel_keys(&shape))?;
            ModelContent::Model(HiddenVariableModel::new(shape, weights, kernels)?)
        }
    };
    Ok(ModelFile {
        content,
        perfect_correlation: hint,
    })
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn table_value(keys: Vec<String>, values: &[f64]) -> Value {
    Value::Object(
        keys.into_iter()
            .zip(values)
            .map(|(k, &v)| (k, number(v)))
            .collect(),
    )
}

/// Serializes with keys in label order; the output is byte-stable.
pub fn model_file_to_value(file: &ModelFile) -> Value {
    let shape = file.content.shape();
    let mut root = Map::new();
    root.insert(
        "shape".into(),
        serde_json::to_value(shape).expect("shape serializes"),
    );
    match &file.content {
        ModelContent::Model(m) => {
            root.insert(
                "weights".into(),
                table_value(weight_keys(shape), m.weights()),
            );
            root.insert(
                "kernels".into(),
                table_value(kernel_keys(shape), m.kernels()),
            );
        }
        ModelContent::Behavior(b) => {
            root.insert(
                "behavior".into(),
                table_value(behavior_keys(shape), b.table()),
            );
        }
    }
    if let Some(h) = &file.perfect_correlation {
        let relabel: Map<String, Value> = h
            .relabel
            .iter()
            .map(|(b, a)| (b.clone(), Value::String(a.clone())))
            .collect();
        let mut pc = Map::new();
        pc.insert("x".into(), Value::String(h.x.clone()));
        pc.insert("y".into(), Value::String(h.y.clone()));
        pc.insert("relabel".into(), Value::Object(relabel));
        root.insert("perfect_correlation".into(), Value::Object(pc));
    }
    Value::Object(root)
}

pub fn model_file_to_string(file: &ModelFile) -> String {
    let mut s = serde_json::to_string_pretty(&model_file_to_value(file)).expect("value serializes");
    s.push('\n');
    s
}
