//! Flag values layered over an optional JSON configuration file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

fn strip_nulls(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Keys of the config file override defaults; flags given on the command line override both.
/// Config keys are the long flag names with `-` replaced by `_`.
pub fn resolve<T>(flags: &T, config: Option<&Path>) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Default,
{
    let known = strip_keys(&T::default())?;
    let mut merged = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(CliError::Usage("config file must hold a JSON object".into())),
                Err(e) => return Err(CliError::Usage(format!("config {}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Some(k) = merged.keys().find(|k| !known.contains(k.as_str())) {
        return Err(CliError::Usage(format!("unknown config key '{k}'")));
    }
    let over = serde_json::to_value(flags).map_err(|e| CliError::Usage(e.to_string()))?;
    merged.extend(strip_nulls(over));
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

fn strip_keys<T: Serialize>(v: &T) -> Result<std::collections::BTreeSet<String>, CliError> {
    match serde_json::to_value(v).map_err(|e| CliError::Usage(e.to_string()))? {
        Value::Object(m) => Ok(m.into_iter().map(|(k, _)| k).collect()),
        _ => Ok(Default::default()),
    }
}

/// A mandatory setting, reported as a usage error under its flag name.
pub fn require<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing required setting --{flag}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    struct S {
        a: Option<u64>,
        b: Option<String>,
    }

    #[test]
    fn flags_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"a": 1, "b": "file"}"#).unwrap();
        let flags = S {
            a: None,
            b: Some("flag".into()),
        };
        let r = resolve(&flags, Some(&path)).unwrap();
        assert_eq!(r, S { a: Some(1), b: Some("flag".into()) });
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"c": 1}"#).unwrap();
        assert!(matches!(resolve(&S::default(), Some(&path)), Err(CliError::Usage(_))));
        assert!(matches!(require::<u64>(&None, "seed"), Err(CliError::Usage(_))));
    }
}
