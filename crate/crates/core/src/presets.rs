//! Named solver presets stored as TOML files under `presets/`.
//!
//! A preset is a partial [`SolverConfig`]: omitted keys keep their defaults.
//! Overrides are `key = value` TOML snippets (dotted keys reach nested
//! tables, e.g. `geometry.stride = 2`) merged over the preset.

use std::path::Path;

use thiserror::Error;
use toml::{Table, Value};

use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum PresetError {
    #[error("unknown preset {0:?} (known: {known})", known = names().join(", "))]
    Unknown(String),
    #[error("preset {name}: {message}")]
    Parse { name: String, message: String },
    #[error("bad override {text:?}: {message}")]
    Override { text: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const BUILTIN: &[(&str, &str)] = &[
    ("r0.1", include_str!("../presets/r0.1.toml")),
    ("r0.2", include_str!("../presets/r0.2.toml")),
    ("r0.3", include_str!("../presets/r0.3.toml")),
    ("r0.4", include_str!("../presets/r0.4.toml")),
    ("r0.5", include_str!("../presets/r0.5.toml")),
    ("wnnm-r0.1", include_str!("../presets/wnnm-r0.1.toml")),
    ("wnnm-r0.2", include_str!("../presets/wnnm-r0.2.toml")),
    ("wnnm-r0.3", include_str!("../presets/wnnm-r0.3.toml")),
    ("wnnm-r0.4", include_str!("../presets/wnnm-r0.4.toml")),
    ("wnnm-r0.5", include_str!("../presets/wnnm-r0.5.toml")),
    ("pnp", include_str!("../presets/pnp.toml")),
    ("identity-check", include_str!("../presets/identity-check.toml")),
];

pub fn names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

/// Raw TOML text of a built-in preset.
pub fn source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Default preset name for a sampling ratio, e.g. `0.3 -> "r0.3"`.
/// Ratios between presets use the nearest one below (at least `r0.1`).
/// The slack absorbs ratios recovered from a row count, e.g. 307/1024.
pub fn for_ratio(ratio: f64) -> String {
    let tenth = ((ratio * 10.0 + 0.02).floor() as i64).clamp(1, 5);
    format!("r0.{tenth}")
}

fn parse_table(name: &str, text: &str) -> Result<Table, PresetError> {
    text.parse::<Table>().map_err(|e| PresetError::Parse {
        name: name.to_owned(),
        message: e.to_string(),
    })
}

fn merge(base: &mut Table, top: Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Load a built-in preset by name, or a TOML file if `name` is a path to
/// one, then apply `overrides` in order.
pub fn resolve(name: &str, overrides: &[String]) -> Result<SolverConfig, PresetError> {
    let mut table = match source(name) {
        Some(text) => parse_table(name, text)?,
        None if Path::new(name).is_file() => parse_table(name, &std::fs::read_to_string(name)?)?,
        None => return Err(PresetError::Unknown(name.to_owned())),
    };
    for text in overrides {
        let top = text.parse::<Table>().map_err(|e| PresetError::Override {
            text: text.clone(),
            message: e.to_string(),
        })?;
        merge(&mut table, top);
    }
    Value::Table(table).try_into().map_err(|e: toml::de::Error| PresetError::Parse {
        name: name.to_owned(),
        message: e.to_string(),
    })
}

pub fn load(name: &str) -> Result<SolverConfig, PresetError> {
    resolve(name, &[])
}
