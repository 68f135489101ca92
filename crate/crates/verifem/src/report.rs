//! Estimate reports, goal bounds and their serialization. All floating
//! point output is printed with 17 significant digits.

use std::collections::BTreeMap;

/// Certification status of an estimate.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BoundKind {
    GuaranteedUpper,
    GuaranteedLower,
    Indicator,
}

impl BoundKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundKind::GuaranteedUpper => "guaranteed_upper",
            BoundKind::GuaranteedLower => "guaranteed_lower",
            BoundKind::Indicator => "indicator",
        }
    }
}

/// A global error estimate with optional per-element contributions.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub name: String,
    pub eta: f64,
    /// Per-element contributions with `sum(eta_k^2) = eta^2` when present.
    pub eta_elements: Option<Vec<f64>>,
    pub bound_kind: BoundKind,
    /// Caveats that qualify a guaranteed flag (e.g. enriched local solves).
    pub caveats: Vec<String>,
    /// Named scalar provenance values (constants, defects, mismatches).
    pub details: BTreeMap<String, f64>,
    pub effectivity: Option<f64>,
}

impl EstimateReport {
    pub fn new(name: impl Into<String>, eta: f64, bound_kind: BoundKind) -> Self {
        EstimateReport {
            name: name.into(),
            eta,
            eta_elements: None,
            bound_kind,
            caveats: Vec::new(),
            details: BTreeMap::new(),
            effectivity: None,
        }
    }

    pub fn with_elements(mut self, eta_k: Vec<f64>) -> Self {
        self.eta_elements = Some(eta_k);
        self
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn with_caveat(mut self, caveat: &str) -> Self {
        self.caveats.push(caveat.to_string());
        self
    }

    /// Indicator values for marking: sqrt of the per-element contributions.
    pub fn indicators(&self) -> Option<Vec<f64>> {
        self.eta_elements
            .as_ref()
            .map(|v| v.iter().map(|&e| e.max(0.0).sqrt()).collect())
    }
}

/// Two-sided bound on a quantity of interest.
#[derive(Clone, Debug)]
pub struct GoalBounds {
    pub method: String,
    pub lower: f64,
    pub upper: f64,
    pub corrected: f64,
    pub correction: f64,
    pub guaranteed: bool,
}

impl GoalBounds {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// 17-significant-digit representation used in every output file.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{:.16e}", x)
    }
}

/// Tiny JSON writer for the fixed report schema.
#[derive(Clone, Debug)]
pub enum Json {
    Null,
    Bool(bool),
    Num(f64),
    Int(i64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn render(&self) -> String {
        let mut s = String::new();
        self.write(&mut s, 0);
        s
    }

    fn write(&self, out: &mut String, indent: usize) {
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Num(x) => out.push_str(&fmt_f64(*x)),
            Json::Int(i) => out.push_str(&i.to_string()),
            Json::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    match c {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Arr(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    out.push_str(&"  ".repeat(indent + 1));
                    item.write(out, indent + 1);
                    if i + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                out.push_str(&"  ".repeat(indent));
                out.push(']');
            }
            Json::Obj(fields) => {
                if fields.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push_str("{\n");
                for (i, (k, v)) in fields.iter().enumerate() {
                    out.push_str(&"  ".repeat(indent + 1));
                    out.push_str(&format!("\"{k}\": "));
                    v.write(out, indent + 1);
                    if i + 1 < fields.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                out.push_str(&"  ".repeat(indent));
                out.push('}');
            }
        }
    }
}

impl EstimateReport {
    pub fn to_json(&self) -> Json {
        let mut fields = vec![
            ("name".to_string(), Json::Str(self.name.clone())),
            ("eta".to_string(), Json::Num(self.eta)),
            ("bound_kind".to_string(), Json::Str(self.bound_kind.as_str().into())),
            (
                "caveats".to_string(),
                Json::Arr(self.caveats.iter().map(|c| Json::Str(c.clone())).collect()),
            ),
        ];
        if let Some(i) = self.effectivity {
            fields.push(("i_eff".to_string(), Json::Num(i)));
        }
        for (k, v) in &self.details {
            fields.push((k.clone(), Json::Num(*v)));
        }
        Json::Obj(fields)
    }
}

impl GoalBounds {
    pub fn to_json(&self) -> Json {
        Json::Obj(vec![
            ("method".to_string(), Json::Str(self.method.clone())),
            ("lower".to_string(), Json::Num(self.lower)),
            ("upper".to_string(), Json::Num(self.upper)),
            ("corrected".to_string(), Json::Num(self.corrected)),
            ("correction".to_string(), Json::Num(self.correction)),
            ("guaranteed".to_string(), Json::Bool(self.guaranteed)),
        ])
    }
}
