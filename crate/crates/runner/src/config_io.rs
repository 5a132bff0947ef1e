//! Loading, overriding, echoing and hashing experiment configs.

use std::path::Path;

use mars_core::config::ExperimentConfig;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{config_error, RunError, RunResult};

/// File name of the resolved-config echo inside an output directory.
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

/// Parses a config document. Missing keys take their defaults; unknown keys
/// and a missing `schema_version` are errors naming the key.
pub fn parse_config(text: &str) -> RunResult<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| config_error(format!("invalid JSON: {e}")))?;
    match value.as_object() {
        Some(obj) if obj.contains_key("schema_version") => {}
        Some(_) => return Err(config_error("schema_version: missing")),
        None => return Err(config_error("config must be a JSON object")),
    }
    from_value(value)
}

fn from_value(value: Value) -> RunResult<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_error(format!("{path}: {}", e.into_inner()))
    })?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> RunResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        RunError::Core(mars_core::Error::Config(m)) => config_error(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Applies `key.path=value` to `cfg`. The value is read as JSON when it
/// parses and as a bare string otherwise; the key must already exist.
pub fn apply_override(cfg: &ExperimentConfig, spec: &str) -> RunResult<ExperimentConfig> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| RunError::Cli(format!("override `{spec}` is not of the form key.path=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(RunError::Cli(format!("override `{spec}` has an empty key")));
    }
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut root = serde_json::to_value(cfg).expect("config serializes");
    let mut slot = &mut root;
    for part in key.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(move |i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| config_error(format!("unknown key `{key}`")))?;
    }
    *slot = new;
    from_value(root).map_err(|e| match e {
        RunError::Core(mars_core::Error::Config(m)) => config_error(format!("override `{key}`: {m}")),
        other => other,
    })
}

/// File config (or defaults), then each override in order, then `seed`;
/// the result is validated.
pub fn resolve(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> RunResult<ExperimentConfig> {
    let base = match path {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    resolve_from(base, overrides, seed)
}

pub fn resolve_from(base: ExperimentConfig, overrides: &[String], seed: Option<u64>) -> RunResult<ExperimentConfig> {
    let mut cfg = base;
    for spec in overrides {
        cfg = apply_override(&cfg, spec)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Pretty JSON with every default spelled out.
pub fn to_json(cfg: &ExperimentConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}

/// SHA-256 of the compact JSON form, hex encoded.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let compact = serde_json::to_string(cfg).expect("config serializes");
    Sha256::digest(compact.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parses_json_values_and_strings() {
        let base = ExperimentConfig::default();
        let c = apply_override(&base, "train.total_env_steps=123").unwrap();
        assert_eq!(c.train.total_env_steps, 123);
        let c = apply_override(&base, "variant=IPPO_MAHT").unwrap();
        assert_eq!(c.variant, mars_core::config::Variant::IppoMaht);
        let c = apply_override(&base, "eval.sweep_groups=[1,3]").unwrap();
        assert_eq!(c.eval.sweep_groups, vec![1, 3]);
        let c = apply_override(&base, "eval.sweep_groups.1=4").unwrap();
        assert_eq!(c.eval.sweep_groups[1], 4);
    }

    #[test]
    fn unknown_and_malformed_overrides_name_the_key() {
        let base = ExperimentConfig::default();
        let e = apply_override(&base, "env.wormholes=3").unwrap_err().to_string();
        assert!(e.contains("env.wormholes"), "{e}");
        let e = apply_override(&base, "env.grid_size=big").unwrap_err().to_string();
        assert!(e.contains("env.grid_size"), "{e}");
        assert!(matches!(apply_override(&base, "seed"), Err(RunError::Cli(_))));
    }

    #[test]
    fn unknown_file_keys_are_reported_with_their_path() {
        let e = parse_config(r#"{"schema_version": 1, "ppo": {"clip": 0.1, "foo": 2}}"#).unwrap_err().to_string();
        assert!(e.contains("ppo.foo") || (e.contains("ppo") && e.contains("foo")), "{e}");
        let e = parse_config(r#"{"seed": 2}"#).unwrap_err().to_string();
        assert!(e.contains("schema_version"), "{e}");
    }

    #[test]
    fn echo_round_trips_and_hash_tracks_content() {
        let mut c = ExperimentConfig::default();
        c.seed = 9;
        let back = parse_config(&to_json(&c)).unwrap();
        assert_eq!(back, c);
        assert_eq!(config_hash(&back), config_hash(&c));
        c.seed = 10;
        assert_ne!(config_hash(&back), config_hash(&c));
        assert_eq!(config_hash(&c).len(), 64);
    }
}
