//! Run configuration: JSON documents with dotted `key=value` overrides.
//!
//! A config is an object holding the experiment sections of
//! [`ExperimentConfig`] plus optional `kind` and `out` keys. Missing keys take
//! their defaults and unknown keys are rejected with the full key path.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tunnel::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Tunnel,
    Ood,
    Stitch,
    Develop,
    Sweep,
    Shorter,
    Metrics,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Tunnel,
        Self::Ood,
        Self::Stitch,
        Self::Develop,
        Self::Sweep,
        Self::Shorter,
        Self::Metrics,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tunnel => "tunnel",
            Self::Ood => "ood",
            Self::Stitch => "stitch",
            Self::Develop => "develop",
            Self::Sweep => "sweep",
            Self::Shorter => "shorter",
            Self::Metrics => "metrics",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

/// A fully resolved run. `out` is never serialised so that reports do not
/// depend on where they were written.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            out: None,
            experiment: ExperimentConfig::default(),
        }
    }

    /// Resolves a JSON object; a `kind` inside the document must agree with
    /// `kind` when both are given.
    pub fn from_value(mut value: Value, kind: Option<ExperimentKind>) -> Result<Self> {
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let doc_kind = match obj.remove("kind") {
            None => None,
            Some(Value::String(s)) => Some(s.parse::<ExperimentKind>()?),
            Some(other) => {
                return Err(Error::Config(format!("kind: expected a string, found {other}")));
            }
        };
        let kind = match (kind, doc_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::Config(format!(
                    "config declares kind {b} but {a} was requested"
                )));
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(Error::Config("no experiment kind given".into())),
        };
        let out = match obj.remove("out") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(other) => {
                return Err(Error::Config(format!("out: expected a path string, found {other}")));
            }
        };
        let experiment: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        experiment.validate()?;
        Ok(Self { kind, out, experiment })
    }
}

impl<'de> Deserialize<'de> for RunConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        RunConfig::from_value(value, None).map_err(serde::de::Error::custom)
    }
}

/// Sets `path` (dot-separated) in `root`, creating objects on the way. The
/// value is read as JSON when it parses, otherwise as a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("override key {key:?} is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Map::new());
            } else {
                return Err(Error::Config(format!(
                    "override {key}: {} is not an object",
                    parts[..i].join(".")
                )));
            }
        }
        let map = node.as_object_mut().expect("object");
        if i + 1 == parts.len() {
            map.insert((*part).to_owned(), value);
            return Ok(());
        }
        node = map.entry((*part).to_owned()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key")
}

/// Reads `path` (or starts from `{}`), applies `overrides` in order and
/// resolves the result.
pub fn parse_config(kind: Option<ExperimentKind>, path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.to_path_buf(),
                line: e.line() as u64,
                message: e.to_string(),
            })?
        }
        None => Value::Object(Map::new()),
    };
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    RunConfig::from_value(value, kind)
}
