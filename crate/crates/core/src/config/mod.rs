//! Hierarchical experiment configuration.
//!
//! A [`ConfigTree`] is a JSON document addressed by `/`-separated paths
//! (`"Solver/Population Size"`, `"Variables/0/Name"`). Module descriptors
//! ([`Schema`]) declare every key a module reads, its type and default;
//! [`validate`] checks a tree against a schema, fills defaults and rejects
//! keys no module consumes.

mod experiment;

pub use experiment::{
    experiment_schema, solver_schema, EngineCaps, ExperimentSettings, ModelSettings,
    OutputSettings, ProblemSettings, ResultChannel,
};

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown key(s): {}", .0.join(", "))]
    UnknownKey(Vec<String>),
    #[error("missing required key '{0}'")]
    MissingRequired(String),
    #[error("type mismatch at '{path}': expected {expected}")]
    TypeMismatch { path: String, expected: String },
    #[error("invalid value at '{path}': {reason}")]
    Invalid { path: String, reason: String },
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

impl ConfigError {
    /// The offending configuration path(s), for error reports.
    pub fn path(&self) -> String {
        match self {
            ConfigError::UnknownKey(paths) => paths.join(", "),
            ConfigError::MissingRequired(p) => p.clone(),
            ConfigError::TypeMismatch { path, .. } | ConfigError::Invalid { path, .. } => {
                path.clone()
            }
            ConfigError::Parse(_) => String::new(),
        }
    }
}

/// Case-sensitive key/value tree. Key order is canonical (sorted).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigTree(Value);

impl Default for ConfigTree {
    fn default() -> Self {
        ConfigTree(Value::Object(Map::new()))
    }
}

impl ConfigTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_value(value: Value) -> Result<Self, ConfigError> {
        if !value.is_object() {
            return Err(ConfigError::Parse("top level must be an object".into()));
        }
        Ok(ConfigTree(value))
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn as_value(&self) -> &Value {
        &self.0
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("config trees always serialize")
    }

    /// Value at `path`, if present.
    pub fn get(&self, path: &str) -> Option<&Value> {
        let mut node = &self.0;
        for seg in segments(path) {
            node = match node {
                Value::Object(map) => map.get(seg)?,
                Value::Array(items) => items.get(seg.parse::<usize>().ok()?)?,
                _ => return None,
            };
        }
        Some(node)
    }

    /// Value at `path`; an absent path is an error.
    pub fn require(&self, path: &str) -> Result<&Value, ConfigError> {
        self.get(path)
            .ok_or_else(|| ConfigError::MissingRequired(path.to_string()))
    }

    pub fn real(&self, path: &str) -> Result<f64, ConfigError> {
        let v = self.require(path)?;
        v.as_f64().ok_or_else(|| mismatch(path, "real"))
    }

    pub fn real_opt(&self, path: &str) -> Result<Option<f64>, ConfigError> {
        self.get(path)
            .map(|v| v.as_f64().ok_or_else(|| mismatch(path, "real")))
            .transpose()
    }

    pub fn integer(&self, path: &str) -> Result<u64, ConfigError> {
        let v = self.require(path)?;
        as_integer(v).ok_or_else(|| mismatch(path, "integer"))
    }

    pub fn integer_opt(&self, path: &str) -> Result<Option<u64>, ConfigError> {
        self.get(path)
            .map(|v| as_integer(v).ok_or_else(|| mismatch(path, "integer")))
            .transpose()
    }

    pub fn string(&self, path: &str) -> Result<&str, ConfigError> {
        let v = self.require(path)?;
        v.as_str().ok_or_else(|| mismatch(path, "string"))
    }

    pub fn string_opt(&self, path: &str) -> Result<Option<&str>, ConfigError> {
        self.get(path)
            .map(|v| v.as_str().ok_or_else(|| mismatch(path, "string")))
            .transpose()
    }

    pub fn real_list(&self, path: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.require(path)?;
        v.as_array()
            .and_then(|items| items.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| mismatch(path, "list of reals"))
    }

    /// Number of entries in the list at `path` (0 when absent).
    pub fn list_len(&self, path: &str) -> usize {
        self.get(path)
            .and_then(Value::as_array)
            .map_or(0, Vec::len)
    }

    /// Sets `path` to `value`, creating intermediate objects (and growing
    /// lists for numeric segments) as needed.
    pub fn set(&mut self, path: &str, value: impl Into<Value>) -> &mut Self {
        let segs: Vec<&str> = segments(path).collect();
        let mut node = &mut self.0;
        for (i, seg) in segs.iter().enumerate() {
            let last = i + 1 == segs.len();
            let next_is_index = !last && segs[i + 1].parse::<usize>().is_ok();
            let fresh = || {
                if next_is_index {
                    Value::Array(Vec::new())
                } else {
                    Value::Object(Map::new())
                }
            };
            node = match node {
                Value::Array(items) => {
                    let idx: usize = seg.parse().expect("numeric segment for list");
                    while items.len() <= idx {
                        items.push(fresh());
                    }
                    &mut items[idx]
                }
                other => {
                    if !other.is_object() {
                        *other = Value::Object(Map::new());
                    }
                    let map = other.as_object_mut().unwrap();
                    map.entry(seg.to_string()).or_insert_with(fresh)
                }
            };
        }
        *node = value.into();
        self
    }
}

impl fmt::Display for ConfigTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

fn segments(path: &str) -> impl Iterator<Item = &str> {
    path.split('/').filter(|s| !s.is_empty())
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}/{key}")
    }
}

fn mismatch(path: &str, expected: &str) -> ConfigError {
    ConfigError::TypeMismatch {
        path: path.to_string(),
        expected: expected.to_string(),
    }
}

fn as_integer(v: &Value) -> Option<u64> {
    if let Some(u) = v.as_u64() {
        return Some(u);
    }
    let f = v.as_f64()?;
    (f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64).then_some(f as u64)
}

// ---------------------------------------------------------------------------
// Module descriptors
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Kind {
    Bool,
    Integer,
    Real,
    Str,
    /// A string restricted to the listed values.
    Choice(&'static [&'static str]),
    RealList,
    Object(Schema),
    /// A list whose entries all follow the same schema.
    ObjectList(Schema),
}

#[derive(Clone, Debug)]
pub enum Presence {
    Required,
    Optional,
    Default(Value),
}

#[derive(Clone, Debug)]
pub struct Field {
    pub key: &'static str,
    pub kind: Kind,
    pub presence: Presence,
}

impl Field {
    pub fn required(key: &'static str, kind: Kind) -> Self {
        Field {
            key,
            kind,
            presence: Presence::Required,
        }
    }

    pub fn optional(key: &'static str, kind: Kind) -> Self {
        Field {
            key,
            kind,
            presence: Presence::Optional,
        }
    }

    pub fn default(key: &'static str, kind: Kind, value: impl Into<Value>) -> Self {
        Field {
            key,
            kind,
            presence: Presence::Default(value.into()),
        }
    }
}

/// Descriptor of one object in the tree. A tagged schema selects a variant
/// by the string value of its tag key (e.g. `"Type"`).
#[derive(Clone, Debug)]
pub enum Schema {
    Fields(Vec<Field>),
    Tagged {
        tag: &'static str,
        common: Vec<Field>,
        variants: Vec<(&'static str, Vec<Field>)>,
    },
}

/// Validates `tree` against `schema` and returns a copy with defaults
/// applied. Unknown keys are reported before any other error, all at once.
pub fn validate(tree: &ConfigTree, schema: &Schema) -> Result<ConfigTree, ConfigError> {
    let mut unknown = Vec::new();
    collect_unknown(&tree.0, schema, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(ConfigError::UnknownKey(unknown));
    }
    let out = check_object(&tree.0, schema, "")?;
    Ok(ConfigTree(out))
}

fn fields_for<'s>(
    obj: &Map<String, Value>,
    schema: &'s Schema,
) -> (Vec<&'s Field>, Option<&'static str>) {
    match schema {
        Schema::Fields(fields) => (fields.iter().collect(), None),
        Schema::Tagged {
            tag,
            common,
            variants,
        } => {
            let mut all: Vec<&Field> = common.iter().collect();
            if let Some(Value::String(t)) = obj.get(*tag) {
                if let Some((_, vf)) = variants.iter().find(|(name, _)| name == t) {
                    all.extend(vf.iter());
                }
            }
            (all, Some(tag))
        }
    }
}

fn collect_unknown(value: &Value, schema: &Schema, path: &str, out: &mut Vec<String>) {
    let Value::Object(obj) = value else { return };
    let (fields, tag) = fields_for(obj, schema);
    for (key, child) in obj {
        if Some(key.as_str()) == tag {
            continue;
        }
        match fields.iter().find(|f| f.key == key) {
            None => out.push(join(path, key)),
            Some(field) => match (&field.kind, child) {
                (Kind::Object(sub), _) => collect_unknown(child, sub, &join(path, key), out),
                (Kind::ObjectList(sub), Value::Array(items)) => {
                    for (i, item) in items.iter().enumerate() {
                        collect_unknown(item, sub, &join(&join(path, key), &i.to_string()), out);
                    }
                }
                _ => {}
            },
        }
    }
}

fn check_object(value: &Value, schema: &Schema, path: &str) -> Result<Value, ConfigError> {
    let Value::Object(obj) = value else {
        return Err(mismatch(if path.is_empty() { "/" } else { path }, "object"));
    };
    let mut out = Map::new();
    if let Schema::Tagged { tag, variants, .. } = schema {
        let tag_path = join(path, tag);
        let names: Vec<&str> = variants.iter().map(|(n, _)| *n).collect();
        match obj.get(*tag) {
            None => return Err(ConfigError::MissingRequired(tag_path)),
            Some(Value::String(t)) if names.contains(&t.as_str()) => {
                out.insert(tag.to_string(), Value::String(t.clone()));
            }
            Some(Value::String(t)) => {
                return Err(ConfigError::Invalid {
                    path: tag_path,
                    reason: format!("'{t}' is not one of {}", names.join(", ")),
                })
            }
            Some(_) => return Err(mismatch(&tag_path, "string")),
        }
    }
    let (fields, _) = fields_for(obj, schema);
    for field in fields {
        let fpath = join(path, field.key);
        match obj.get(field.key) {
            Some(v) => {
                out.insert(field.key.to_string(), check_value(v, &field.kind, &fpath)?);
            }
            None => match &field.presence {
                Presence::Required => return Err(ConfigError::MissingRequired(fpath)),
                Presence::Optional => {}
                Presence::Default(d) => {
                    out.insert(field.key.to_string(), check_value(d, &field.kind, &fpath)?);
                }
            },
        }
    }
    Ok(Value::Object(out))
}

fn check_value(v: &Value, kind: &Kind, path: &str) -> Result<Value, ConfigError> {
    match kind {
        Kind::Bool => v.is_boolean().then(|| v.clone()).ok_or_else(|| mismatch(path, "boolean")),
        Kind::Integer => as_integer(v)
            .map(Value::from)
            .ok_or_else(|| mismatch(path, "non-negative integer")),
        Kind::Real => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(|_| v.clone())
            .ok_or_else(|| mismatch(path, "real")),
        Kind::Str => v.is_string().then(|| v.clone()).ok_or_else(|| mismatch(path, "string")),
        Kind::Choice(options) => match v.as_str() {
            Some(s) if options.contains(&s) => Ok(v.clone()),
            Some(s) => Err(ConfigError::Invalid {
                path: path.to_string(),
                reason: format!("'{s}' is not one of {}", options.join(", ")),
            }),
            None => Err(mismatch(path, "string")),
        },
        Kind::RealList => match v.as_array() {
            Some(items) if items.iter().all(|x| x.as_f64().is_some_and(f64::is_finite)) => {
                Ok(v.clone())
            }
            _ => Err(mismatch(path, "list of reals")),
        },
        Kind::Object(schema) => check_object(v, schema, path),
        Kind::ObjectList(schema) => {
            let items = v.as_array().ok_or_else(|| mismatch(path, "list"))?;
            items
                .iter()
                .enumerate()
                .map(|(i, item)| check_object(item, schema, &join(path, &i.to_string())))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::Array)
        }
    }
}
