//! Arm catalog, context schema and the dense context encoding.
//!
//! Every context is encoded as `[1, field_0 .., field_1 .., ...]`: a constant
//! intercept followed by each schema field in declaration order. Categorical
//! fields contribute one one-hot component per level; numeric fields
//! contribute a single component min-max scaled by the schema bounds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("arm catalog is empty")]
    EmptyCatalog,
    #[error("duplicate arm_id `{0}`")]
    DuplicateArm(String),
    #[error("catalog must contain exactly one baseline arm, found {0}")]
    BaselineCount(usize),
    #[error("duplicate context field `{0}`")]
    DuplicateField(String),
    #[error("categorical field `{0}` has no levels")]
    NoLevels(String),
    #[error("categorical field `{field}` repeats level `{level}`")]
    DuplicateLevel { field: String, level: String },
    #[error("numeric field `{field}` needs finite bounds with min < max, got [{min}, {max}]")]
    BadBounds { field: String, min: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EncodeError {
    #[error("context is missing field `{0}`")]
    MissingField(String),
    #[error("context has field `{0}` which is not in the schema")]
    UnexpectedField(String),
    #[error("field `{field}` has unknown level `{level}`")]
    UnknownLevel { field: String, level: String },
    #[error("field `{field}` expects a {expected} value")]
    TypeMismatch {
        field: String,
        expected: &'static str,
    },
    #[error("field `{field}` value {value} is outside [{min}, {max}]")]
    OutOfRange {
        field: String,
        value: f64,
        min: f64,
        max: f64,
    },
}

// ── Arms ────────────────────────────────────────────────────────────────

/// One selectable option (variant) of the bandit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub arm_id: String,
    pub label: String,
    #[serde(default)]
    pub is_baseline: bool,
}

impl Arm {
    pub fn new(arm_id: impl Into<String>, label: impl Into<String>, is_baseline: bool) -> Self {
        Self {
            arm_id: arm_id.into(),
            label: label.into(),
            is_baseline,
        }
    }
}

/// Checks catalog invariants: non-empty, unique ids, exactly one baseline.
pub fn validate_arms(arms: &[Arm]) -> Result<(), SchemaError> {
    if arms.is_empty() {
        return Err(SchemaError::EmptyCatalog);
    }
    let mut seen = HashSet::new();
    for arm in arms {
        if !seen.insert(arm.arm_id.as_str()) {
            return Err(SchemaError::DuplicateArm(arm.arm_id.clone()));
        }
    }
    let baselines = arms.iter().filter(|a| a.is_baseline).count();
    if baselines != 1 {
        return Err(SchemaError::BaselineCount(baselines));
    }
    Ok(())
}

// ── Schema ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    Categorical { levels: Vec<String> },
    Numeric { min: f64, max: f64 },
}

impl FieldKind {
    /// Number of encoded components this field occupies.
    pub fn width(&self) -> usize {
        match self {
            FieldKind::Categorical { levels } => levels.len(),
            FieldKind::Numeric { .. } => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldWire", into = "FieldWire")]
pub struct ContextField {
    pub name: String,
    pub kind: FieldKind,
}

impl ContextField {
    pub fn categorical(name: impl Into<String>, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Categorical {
                levels: levels.iter().map(|l| l.to_string()).collect(),
            },
        }
    }

    pub fn numeric(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            kind: FieldKind::Numeric { min, max },
        }
    }
}

/// On-disk shape of a field: `{name, kind = "categorical", levels}` or
/// `{name, kind = "numeric", min, max}`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldWire {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max: Option<f64>,
}

impl TryFrom<FieldWire> for ContextField {
    type Error = String;

    fn try_from(w: FieldWire) -> Result<Self, String> {
        let kind = match (w.kind.as_str(), w.levels, w.min, w.max) {
            ("categorical", Some(levels), None, None) => FieldKind::Categorical { levels },
            ("numeric", None, Some(min), Some(max)) => FieldKind::Numeric { min, max },
            ("categorical", ..) => {
                return Err(format!(
                    "field `{}`: categorical takes only `levels`",
                    w.name
                ))
            }
            ("numeric", ..) => {
                return Err(format!("field `{}`: numeric takes `min` and `max`", w.name))
            }
            (other, ..) => return Err(format!("field `{}`: unknown kind `{other}`", w.name)),
        };
        Ok(ContextField { name: w.name, kind })
    }
}

impl From<ContextField> for FieldWire {
    fn from(f: ContextField) -> Self {
        match f.kind {
            FieldKind::Categorical { levels } => FieldWire {
                name: f.name,
                kind: "categorical".into(),
                levels: Some(levels),
                min: None,
                max: None,
            },
            FieldKind::Numeric { min, max } => FieldWire {
                name: f.name,
                kind: "numeric".into(),
                levels: None,
                min: Some(min),
                max: Some(max),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextSchema {
    pub fields: Vec<ContextField>,
}

impl ContextSchema {
    pub fn new(fields: Vec<ContextField>) -> Result<Self, SchemaError> {
        let schema = Self { fields };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut names = HashSet::new();
        for field in &self.fields {
            if !names.insert(field.name.as_str()) {
                return Err(SchemaError::DuplicateField(field.name.clone()));
            }
            match &field.kind {
                FieldKind::Categorical { levels } => {
                    if levels.is_empty() {
                        return Err(SchemaError::NoLevels(field.name.clone()));
                    }
                    let mut seen = HashSet::new();
                    for level in levels {
                        if !seen.insert(level.as_str()) {
                            return Err(SchemaError::DuplicateLevel {
                                field: field.name.clone(),
                                level: level.clone(),
                            });
                        }
                    }
                }
                FieldKind::Numeric { min, max } => {
                    if !(min.is_finite() && max.is_finite() && min < max) {
                        return Err(SchemaError::BadBounds {
                            field: field.name.clone(),
                            min: *min,
                            max: *max,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Encoded dimension: intercept plus every field's width.
    pub fn dim(&self) -> usize {
        1 + self.fields.iter().map(|f| f.kind.width()).sum::<usize>()
    }

    pub fn field(&self, name: &str) -> Option<&ContextField> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// Encoded component range occupied by `name`.
    pub fn field_span(&self, name: &str) -> Option<Range<usize>> {
        let mut offset = 1;
        for field in &self.fields {
            let width = field.kind.width();
            if field.name == name {
                return Some(offset..offset + width);
            }
            offset += width;
        }
        None
    }

    pub fn encode(&self, raw: &RawContext) -> Result<ContextVector, EncodeError> {
        for key in raw.keys() {
            if self.field(key).is_none() {
                return Err(EncodeError::UnexpectedField(key.clone()));
            }
        }
        let mut encoded = Vec::with_capacity(self.dim());
        encoded.push(1.0);
        for field in &self.fields {
            let value = raw
                .get(&field.name)
                .ok_or_else(|| EncodeError::MissingField(field.name.clone()))?;
            match &field.kind {
                FieldKind::Categorical { levels } => {
                    let level = value.as_text().ok_or_else(|| EncodeError::TypeMismatch {
                        field: field.name.clone(),
                        expected: "categorical (string)",
                    })?;
                    let hit = levels.iter().position(|l| l == level).ok_or_else(|| {
                        EncodeError::UnknownLevel {
                            field: field.name.clone(),
                            level: level.to_string(),
                        }
                    })?;
                    encoded.extend((0..levels.len()).map(|i| if i == hit { 1.0 } else { 0.0 }));
                }
                FieldKind::Numeric { min, max } => {
                    let v = value.as_number().ok_or_else(|| EncodeError::TypeMismatch {
                        field: field.name.clone(),
                        expected: "numeric",
                    })?;
                    if !(v.is_finite() && *min <= v && v <= *max) {
                        return Err(EncodeError::OutOfRange {
                            field: field.name.clone(),
                            value: v,
                            min: *min,
                            max: *max,
                        });
                    }
                    encoded.push((v - min) / (max - min));
                }
            }
        }
        Ok(ContextVector {
            raw: raw.clone(),
            encoded,
        })
    }
}

// ── Raw and encoded contexts ────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContextValue {
    Number(f64),
    Text(String),
}

impl ContextValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            ContextValue::Text(s) => Some(s),
            ContextValue::Number(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            ContextValue::Number(v) => Some(*v),
            ContextValue::Text(_) => None,
        }
    }
}

impl fmt::Display for ContextValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextValue::Number(v) => write!(f, "{v}"),
            ContextValue::Text(s) => f.write_str(s),
        }
    }
}

impl From<&str> for ContextValue {
    fn from(s: &str) -> Self {
        ContextValue::Text(s.to_string())
    }
}

impl From<f64> for ContextValue {
    fn from(v: f64) -> Self {
        ContextValue::Number(v)
    }
}

/// Flat field → value map as it appears in log files.
pub type RawContext = BTreeMap<String, ContextValue>;

/// Builds a [`RawContext`] from `(field, value)` pairs.
pub fn raw_context<K, V, I>(pairs: I) -> RawContext
where
    K: Into<String>,
    V: Into<ContextValue>,
    I: IntoIterator<Item = (K, V)>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

/// A raw context together with its dense encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVector {
    pub raw: RawContext,
    pub encoded: Vec<f64>,
}

impl ContextVector {
    /// Canonical `field=value` key, fields sorted by name.
    pub fn key(&self) -> String {
        context_key(&self.raw)
    }
}

pub fn context_key(raw: &RawContext) -> String {
    let mut out = String::new();
    for (i, (k, v)) in raw.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        out.push_str(k);
        out.push('=');
        out.push_str(&v.to_string());
    }
    out
}
