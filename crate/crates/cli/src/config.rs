//! Config layering (defaults < file < flags < `--set`), invocation echo and
//! exit codes.

use std::fs;
use std::path::Path;

use monet_lab::labrunner::merge_json;
use monet_lab::LabError;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const INVOCATION_FILE: &str = "invocation.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("usage: {0}")]
    Usage(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 0 ok, 1 I/O or runtime failure, 2 configuration/usage, 3 degenerate
    /// statistics input.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lab(e) => match e {
                LabError::Config { .. } | LabError::Json(_) | LabError::ConfigHashMismatch(_) | LabError::Shape(_) => 2,
                LabError::Degenerate(_) => 3,
                _ => 1,
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lab(LabError::Json(e))
    }
}

impl From<candle_core::Error> for CliError {
    fn from(e: candle_core::Error) -> Self {
        CliError::Lab(LabError::from(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parse one `dotted.key=value` pair into a nested JSON patch. Values that
/// parse as JSON are taken as such, anything else as a string.
pub fn parse_override(s: &str) -> CliResult<Value> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("override `{s}` is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::usage(format!("override `{s}` has an empty key segment")));
    }
    let mut value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    for part in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), value);
        value = Value::Object(m);
    }
    Ok(value)
}

/// Every key of `patch` must already exist in `base`.
fn check_known(base: &Value, patch: &Value, prefix: &str) -> CliResult<()> {
    let (Value::Object(b), Value::Object(p)) = (base, patch) else {
        return Ok(());
    };
    for (k, v) in p {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match b.get(k) {
            None => return Err(CliError::Lab(LabError::config(path, "unknown key"))),
            Some(slot) if slot.is_object() => check_known(slot, v, &path)?,
            Some(_) => {}
        }
    }
    Ok(())
}

/// Apply `--set` overrides on top of an already-resolved config.
pub fn apply_sets<T: Serialize + DeserializeOwned>(cfg: &T, sets: &[String]) -> CliResult<T> {
    let mut v = serde_json::to_value(cfg)?;
    for s in sets {
        let patch = parse_override(s)?;
        check_known(&v, &patch, "")?;
        merge_json(&mut v, &patch);
    }
    serde_json::from_value(v).map_err(|e| CliError::Lab(LabError::config("--set", e.to_string())))
}

/// Merge a JSON file over `defaults`; unknown keys are rejected.
pub fn load_file_over<T: Serialize + DeserializeOwned>(defaults: &T, path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(defaults)?)?);
    };
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    let file: Value = serde_json::from_str(&text).map_err(|e| LabError::config(path.display().to_string(), e.to_string()))?;
    let mut v = serde_json::to_value(defaults)?;
    check_known(&v, &file, "")?;
    merge_json(&mut v, &file);
    serde_json::from_value(v).map_err(|e| CliError::Lab(LabError::config(path.display().to_string(), e.to_string())))
}

/// Write `invocation.json`: the argument vector and the resolved config.
pub fn write_invocation(dir: &Path, command: &str, resolved: &Value) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let argv: Vec<String> = std::env::args().collect();
    let env: Map<String, Value> = [
        monet_lab::trainer::DEVICE_ENV,
        monet_lab::trainer::DETERMINISTIC_ENV,
        monet_lab::labrunner::WORKERS_ENV,
    ]
    .iter()
    .filter_map(|k| std::env::var(k).ok().map(|v| (k.to_string(), Value::String(v))))
    .collect();
    let doc = serde_json::json!({
        "command": command,
        "argv": argv,
        "env": env,
        "version": env!("CARGO_PKG_VERSION"),
        "resolved": resolved,
    });
    let path = dir.join(INVOCATION_FILE);
    fs::write(&path, serde_json::to_string_pretty(&doc)?).map_err(|e| LabError::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use monet_lab::trainer::TrainConfig;

    #[test]
    fn dotted_overrides() {
        assert_eq!(parse_override("a.b=3").unwrap(), serde_json::json!({"a": {"b": 3}}));
        assert_eq!(parse_override("a=hello").unwrap(), serde_json::json!({"a": "hello"}));
        assert!(parse_override("a").is_err());
        assert!(parse_override("a..b=1").is_err());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let base = TrainConfig::default();
        let t = apply_sets(&base, &["max_steps=7".into()]).unwrap();
        assert_eq!(t.max_steps, 7);
        let e = apply_sets(&base, &["max_stepz=7".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("max_stepz"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Lab(LabError::Degenerate("x".into())).exit_code(), 3);
        assert_eq!(CliError::Lab(LabError::io("p", std::io::Error::other("x"))).exit_code(), 1);
        assert_eq!(CliError::usage("x").exit_code(), 2);
    }
}
