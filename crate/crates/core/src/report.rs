//! Report envelope and canonical JSON output.
//!
//! Every report embeds the tower description and the library version, and carries no
//! timestamps, so equal inputs give byte-identical files. Keys are emitted in sorted
//! order at every depth.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::differentials::{different, Base};
use crate::error::{Error, Result};
use crate::padic::{val_serde, Val};
use crate::tower::{Tower, TowerParams};

/// JSON schema for the report envelope and the bodies of each report kind.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Library {
    pub name: String,
    pub version: String,
}

impl Library {
    pub fn current() -> Self {
        Library { name: env!("CARGO_PKG_NAME").into(), version: env!("CARGO_PKG_VERSION").into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportKind {
    Build,
    Constants,
    Verify,
    Decompose,
    W2,
    Series,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub library: Library,
    pub kind: ReportKind,
    pub tower: TowerParams,
    pub seed: Option<u64>,
    pub passed: bool,
    pub body: Value,
}

impl Report {
    pub fn new(
        kind: ReportKind,
        tower: &TowerParams,
        seed: Option<u64>,
        passed: bool,
        body: impl Serialize,
    ) -> Result<Self> {
        Ok(Report { library: Library::current(), kind, tower: tower.clone(), seed, passed, body: to_value(&body)? })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LevelSummary {
    pub n: usize,
    pub degree: usize,
    pub relative_degree: usize,
    #[serde(with = "val_serde")]
    pub uniformizer_valuation: Val,
    #[serde(with = "val_serde")]
    pub different_over_k0: Val,
    #[serde(with = "val_serde")]
    pub different_over_qp: Val,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TowerSummary {
    pub levels: Vec<LevelSummary>,
}

pub fn tower_summary(tower: &Tower) -> Result<TowerSummary> {
    let levels = (0..=tower.max_level())
        .map(|n| {
            Ok(LevelSummary {
                n,
                degree: tower.degree(n),
                relative_degree: tower.relative_degree(n),
                uniformizer_valuation: tower.uniformizer_valuation(n),
                different_over_k0: different(tower, n, Base::K0)?.val_different,
                different_over_qp: different(tower, n, Base::Qp)?.val_different,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TowerSummary { levels })
}

pub fn to_value(x: &impl Serialize) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| Error::Internal(format!("serialization failed: {e}")))
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn canonical_json(x: &impl Serialize) -> Result<String> {
    let v = sort_keys(to_value(x)?);
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn sort_keys(v: Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: std::collections::BTreeMap<String, Value> =
                map.into_iter().map(|(k, v)| (k, sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(sort_keys).collect()),
        other => other,
    }
}

pub fn emit_report(report: &Report, path: &Path) -> Result<()> {
    std::fs::write(path, canonical_json(report)?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_and_stable() {
        let r = Report::new(
            ReportKind::Build,
            &TowerParams::new(3, 2, 40),
            None,
            true,
            serde_json::json!({"z": 1, "a": 2}),
        )
        .unwrap();
        let s = canonical_json(&r).unwrap();
        assert_eq!(s, canonical_json(&r).unwrap());
        let body = s.find("\"body\"").unwrap();
        assert!(body < s.find("\"kind\"").unwrap());
        assert!(s.find("\"a\"").unwrap() < s.find("\"z\"").unwrap());
        assert!(s.ends_with("}\n"));
    }

    #[test]
    fn schema_is_json() {
        let v: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
        assert!(v.get("$defs").is_some());
    }
}
