use std::fs;
use std::path::Path;

use bertrand_rrm::rrm::RrmConfig;
use serde_json::Value;

use crate::CliError;

/// A learning config plus the seed list it was run with.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RrmConfig,
    pub seeds: Option<Vec<u64>>,
}

/// Reads either a flat `key = value` file or a JSON object. A JSON object may
/// hold the config under a `config` key (the shape of a run summary), in which
/// case a top-level `seeds` array is picked up as well.
pub fn load(path: &Path, base: RrmConfig) -> Result<LoadedConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        from_json(&text, base)
    } else {
        from_flat(&text, base).map(|config| LoadedConfig {
            config,
            seeds: None,
        })
    }
}

pub fn from_flat(text: &str, mut config: RrmConfig) -> Result<RrmConfig, CliError> {
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", lineno + 1)))?;
        config.set(key.trim(), value)?;
    }
    Ok(config)
}

pub fn from_json(text: &str, base: RrmConfig) -> Result<LoadedConfig, CliError> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid JSON: {e}")))?;
    let (body, seeds) = match root.get("config") {
        Some(cfg) => (cfg.clone(), root.get("seeds").cloned()),
        None => (root, None),
    };
    let Value::Object(map) = body else {
        return Err(CliError::Usage("config must be a JSON object".into()));
    };
    if let Some(bad) = map.keys().find(|k| !RrmConfig::KEYS.contains(&k.as_str())) {
        return Err(CliError::Usage(format!(
            "unknown config key '{bad}'; valid keys: {}",
            RrmConfig::KEYS.join(", ")
        )));
    }
    let mut merged = serde_json::to_value(base).expect("config serializes");
    for (k, v) in map {
        merged[k] = v;
    }
    let config = serde_json::from_value(merged)
        .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
    let seeds = seeds
        .map(serde_json::from_value::<Vec<u64>>)
        .transpose()
        .map_err(|e| CliError::Usage(format!("invalid seeds: {e}")))?;
    Ok(LoadedConfig { config, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use bertrand_rrm::rrm::Variant;

    #[test]
    fn flat_file() {
        let cfg = from_flat(
            "# pilot\nm = 3\nvariant = optimistic  # trailing\n\nhorizon=10\n",
            RrmConfig::standard(2),
        )
        .unwrap();
        assert_eq!(
            (cfg.m, cfg.variant, cfg.horizon),
            (3, Variant::Optimistic, 10)
        );
        assert!(from_flat("m 3", RrmConfig::default()).is_err());
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        for err in [
            from_flat("speed = 3", RrmConfig::default()).unwrap_err(),
            from_json(r#"{"speed": 3}"#, RrmConfig::default()).unwrap_err(),
        ] {
            let msg = err.to_string();
            assert!(msg.contains("speed") && msg.contains("l_gamma"), "{msg}");
            assert_eq!(err.exit_code(), 2);
        }
    }

    #[test]
    fn json_summary_shape() {
        let text =
            r#"{"config": {"m": 4, "bias_mode": "zero"}, "seeds": [3, 4], "wall_time_s": 1.0}"#;
        let loaded = from_json(text, RrmConfig::standard(2)).unwrap();
        assert_eq!(loaded.config.m, 4);
        assert_eq!(loaded.config.l_gamma, 0.05);
        assert_eq!(loaded.seeds, Some(vec![3, 4]));
    }
}
