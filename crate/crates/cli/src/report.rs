use bellkit_core::{PropertyReport, ScenarioShape, Tolerances};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const TOOL: &str = "bellkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub holds: bool,
    pub max_violation: f64,
    pub tolerance_used: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl CheckEntry {
    pub fn from_report(name: &str, r: &PropertyReport, shape: &ScenarioShape) -> Self {
        Self {
            name: name.to_string(),
            holds: r.holds,
            max_violation: r.max_violation,
            tolerance_used: r.tolerance_used,
            witness: r.witness.map(|w| w.describe(shape)),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = Some(detail);
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: Vec<String>,
    pub input_digest: Option<String>,
    pub tolerances: Tolerances,
    pub defaults: Map<String, Value>,
    pub checks: Vec<CheckEntry>,
    pub verdict: Verdict,
    /// Command-specific sections (decompositions, certificates, dynamics summaries).
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Report {
    pub fn new(command: Vec<String>, tolerances: Tolerances) -> Self {
        Self {
            tool: TOOL,
            version: VERSION,
            command,
            input_digest: None,
            tolerances,
            defaults: Map::new(),
            checks: Vec::new(),
            verdict: Verdict::Pass,
            extra: Map::new(),
        }
    }

    pub fn digest(&mut self, bytes: &[u8]) {
        let hash = Sha256::digest(bytes);
        let hex: String = hash.iter().map(|b| format!("{b:02x}")).collect();
        self.input_digest = Some(format!("sha256:{hex}"));
    }

    pub fn default(&mut self, key: &str, value: impl Serialize) {
        self.defaults.insert(key.to_string(), to_value(value));
    }

    pub fn section(&mut self, key: &str, value: impl Serialize) {
        self.extra.insert(key.to_string(), to_value(value));
    }

    pub fn push(&mut self, entry: CheckEntry) {
        if !entry.holds {
            self.verdict = Verdict::Fail;
        }
        self.checks.push(entry);
    }

    pub fn exit_code(&self) -> u8 {
        match self.verdict {
            Verdict::Pass => 0,
            Verdict::Fail => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{} {}\n", self.tool, self.version));
        out.push_str(&format!("command: {}\n", self.command.join(" ")));
        if let Some(d) = &self.input_digest {
            out.push_str(&format!("input: {d}\n"));
        }
        out.push_str(&format!(
            "tolerances: norm={} prop={} support={}\n",
            num(self.tolerances.norm),
            num(self.tolerances.prop),
            num(self.tolerances.support)
        ));
        for (k, v) in &self.defaults {
            out.push_str(&format!("default {k}: {}\n", inline(v)));
        }
        if !self.checks.is_empty() {
            let rows: Vec<[String; 5]> = self
                .checks
                .iter()
                .map(|c| {
                    [
                        c.name.clone(),
                        if c.holds {
                            "holds".into()
                        } else {
                            "FAILS".into()
                        },
                        num(c.max_violation),
                        num(c.tolerance_used),
                        c.witness.clone().unwrap_or_else(|| "-".into()),
                    ]
                })
                .collect();
            let header =
                ["check", "status", "max_violation", "tolerance", "witness"].map(String::from);
            let mut widths = header.clone().map(|h| h.chars().count());
            for r in &rows {
                for (w, cell) in widths.iter_mut().zip(r) {
                    *w = (*w).max(cell.chars().count());
                }
            }
            let line = |cells: &[String; 5]| {
                let padded: Vec<String> = cells
                    .iter()
                    .zip(widths)
                    .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                    .collect();
                format!("{}\n", padded.join("  ").trim_end())
            };
            out.push_str(&line(&header));
            for r in &rows {
                out.push_str(&line(r));
            }
            for c in &self.checks {
                if let Some(d) = &c.detail {
                    out.push_str(&format!("{} detail: {}\n", c.name, inline(d)));
                }
            }
        }
        for (k, v) in &self.extra {
            out.push_str(&format!("{k}: {}\n", inline(v)));
        }
        out.push_str(&format!(
            "verdict: {}\n",
            match self.verdict {
                Verdict::Pass => "pass",
                Verdict::Fail => "fail",
            }
        ));
        out
    }
}

fn to_value(v: impl Serialize) -> Value {
    serde_json::to_value(v).expect("value serializes")
}

/// Numbers are printed exactly as in the JSON rendering.
pub fn num(v: f64) -> String {
    serde_json::to_string(&v).expect("number serializes")
}

fn inline(v: &Value) -> String {
    serde_json::to_string(v).expect("value serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_json_agree_on_numbers() {
        let mut r = Report::new(vec!["check".into()], Tolerances::default());
        r.push(CheckEntry {
            name: "det".into(),
            holds: false,
            max_violation: 0.5,
            tolerance_used: 1e-9,
            witness: None,
            detail: None,
        });
        let json = r.to_json();
        let text = r.to_text();
        assert!(json.contains("\"max_violation\": 0.5") && text.contains(" 0.5 "));
        assert!(json.contains("1e-9") && text.contains("1e-9"));
        assert_eq!(r.exit_code(), 1);
    }

    #[test]
    fn digest_is_sha256_hex() {
        let mut r = Report::new(vec![], Tolerances::default());
        r.digest(b"abc");
        assert_eq!(
            r.input_digest.unwrap(),
            "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
