use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Closed conversion table, `(from, to, factor)` with `to = from * factor`.
const UNIT_TABLE: &[(&str, &str, f64)] = &[("kW", "W", 1_000.0), ("MW", "W", 1_000_000.0), ("kvar", "var", 1_000.0)];

/// Multiplicative factor converting `from` into `to`, if the pair is known.
pub fn unit_factor(from: &str, to: &str) -> Option<f64> {
    if from == to {
        return Some(1.0);
    }
    UNIT_TABLE.iter().find_map(|&(a, b, f)| {
        if (a, b) == (from, to) {
            Some(f)
        } else if (b, a) == (from, to) {
            Some(1.0 / f)
        } else {
            None
        }
    })
}

/// Translation applied to every envelope crossing a route.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum AdapterSpec {
    Identity,
    UnitScale {
        factor: f64,
        from_unit: String,
        to_unit: String,
    },
    /// Protocol bridge: renames quantity keys, leaves values alone.
    KeyRename {
        rename: BTreeMap<String, String>,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("AdaptFailure: adapter expects unit {expected:?}, got {got:?}")]
pub struct AdaptFailure {
    pub expected: String,
    pub got: String,
}

/// Applies `spec` to a `(value, unit)` pair.
pub fn adapt(value: f64, unit: &str, spec: &AdapterSpec) -> Result<(f64, String), AdaptFailure> {
    match spec {
        AdapterSpec::Identity | AdapterSpec::KeyRename { .. } => Ok((value, unit.to_string())),
        AdapterSpec::UnitScale { factor, from_unit, to_unit } => {
            if unit != from_unit {
                return Err(AdaptFailure { expected: from_unit.clone(), got: unit.to_string() });
            }
            Ok((value * factor, to_unit.clone()))
        }
    }
}

impl AdapterSpec {
    /// The quantity key as seen on the far side of the adapter.
    pub fn rename_quantity(&self, quantity: &str) -> String {
        match self {
            AdapterSpec::KeyRename { rename } => rename.get(quantity).cloned().unwrap_or_else(|| quantity.to_string()),
            _ => quantity.to_string(),
        }
    }
}
