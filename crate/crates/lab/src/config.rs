//! Versioned JSON run configuration.
//!
//! A config file is `{"version": 1, "params": {...}}`. Parameters are merged
//! over the scenario defaults (objects recursively, everything else replaced)
//! and then decoded strictly, so misspelled keys are rejected.

use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{LabError, LabResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Theorem1,
    ExcessRisk,
    Coupon,
    Collapse,
    Dissl,
    Cissl,
    DimSweep,
    AugSweep,
    ProbeSweep,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 9] = [
        Self::Theorem1,
        Self::ExcessRisk,
        Self::Coupon,
        Self::Collapse,
        Self::Dissl,
        Self::Cissl,
        Self::DimSweep,
        Self::AugSweep,
        Self::ProbeSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Theorem1 => "theorem1",
            Self::ExcessRisk => "excess-risk",
            Self::Coupon => "coupon",
            Self::Collapse => "collapse",
            Self::Dissl => "dissl",
            Self::Cissl => "cissl",
            Self::DimSweep => "dim-sweep",
            Self::AugSweep => "aug-sweep",
            Self::ProbeSweep => "probe-sweep",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub version: u32,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl ConfigFile {
    pub fn new(params: Value) -> Self {
        Self {
            version: SCHEMA_VERSION,
            params,
        }
    }

    pub fn parse(text: &str) -> LabResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| LabError::validation(format!("config: {e}")))?;
        if cfg.version != SCHEMA_VERSION {
            return Err(LabError::validation(format!(
                "config version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.version
            )));
        }
        if !cfg.params.is_object() {
            return Err(LabError::validation("config: `params` must be an object"));
        }
        Ok(cfg)
    }

    /// Reads `path`, or returns an empty config when there is none.
    pub fn load(path: Option<&Path>) -> LabResult<Self> {
        match path {
            None => Ok(Self::new(empty_object())),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| LabError::validation(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }
}

/// Overlays `user` on the serialized defaults and decodes the result.
pub fn resolve<P>(user: &Value) -> LabResult<P>
where
    P: Default + Serialize + DeserializeOwned,
{
    let mut merged = serde_json::to_value(P::default()).expect("defaults serialize");
    merge(&mut merged, user);
    serde_json::from_value(merged).map_err(|e| LabError::validation(format!("params: {e}")))
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Inner {
        a: u32,
        b: Option<u32>,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(deny_unknown_fields, default)]
    struct Outer {
        inner: Inner,
        list: Vec<u32>,
    }

    #[test]
    fn nested_merge_keeps_untouched_defaults() {
        let p: Outer = resolve(&json!({"inner": {"b": 4}, "list": [1, 2]})).unwrap();
        assert_eq!(
            p,
            Outer {
                inner: Inner { a: 0, b: Some(4) },
                list: vec![1, 2]
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(resolve::<Outer>(&json!({"inner": {"c": 1}})).is_err());
        assert!(resolve::<Outer>(&json!({"typo": 1})).is_err());
    }

    #[test]
    fn version_is_checked() {
        assert!(ConfigFile::parse(r#"{"version": 1}"#).is_ok());
        assert_eq!(ConfigFile::parse(r#"{"version": 2}"#).unwrap_err().exit_code(), 2);
        assert!(ConfigFile::parse(r#"{"version": 1, "extra": 0}"#).is_err());
        assert!(ConfigFile::parse(r#"{"version": 1, "params": []}"#).is_err());
    }
}
