//! Scenario files: TOML, optionally layered over a named preset.

use std::path::Path;

use torswarm_core::config::ScenarioConfig;

use crate::Error;

/// Presets shipped with the binary, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("paper-defaults", include_str!("../presets/paper-defaults.toml")),
    ("dht-fp-study", include_str!("../presets/dht-fp-study.toml")),
    ("domino-study", include_str!("../presets/domino-study.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid { path: path.into(), reason: reason.into() }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, Error> {
    text.parse::<toml::Table>().map_err(|e| invalid(origin, e.to_string()))
}

/// Overlays `top` onto `base`. Tables merge key by key; anything else in
/// `top` replaces what `base` had.
pub fn deep_merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => deep_merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Builds the effective config: preset, then file, then the seed override.
/// The result is validated.
pub fn load(file: Option<&Path>, preset_name: Option<&str>, seed: Option<u64>) -> Result<ScenarioConfig, Error> {
    let mut table = toml::Table::new();
    if let Some(name) = preset_name {
        let text = preset(name).ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            invalid("preset", format!("unknown preset {name:?}; known: {}", known.join(", ")))
        })?;
        table = parse_table(text, "preset")?;
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        deep_merge(&mut table, parse_table(&text, &path.display().to_string())?);
    }
    if let Some(seed) = seed {
        let seed = i64::try_from(seed).map_err(|_| invalid("seed", "seeds above i64::MAX cannot be stored in TOML"))?;
        table.insert("seed".into(), toml::Value::Integer(seed));
    }
    from_table(table)
}

pub fn from_table(table: toml::Table) -> Result<ScenarioConfig, Error> {
    if !table.contains_key("seed") {
        return Err(invalid("seed", "required; pass --seed or set it in the config"));
    }
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let path = e.path().to_string();
        invalid(if path == "." { String::from("<root>") } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate().map_err(|e| invalid(e.path, e.reason))?;
    Ok(cfg)
}

pub fn from_str(text: &str) -> Result<ScenarioConfig, Error> {
    from_table(parse_table(text, "config")?)
}
