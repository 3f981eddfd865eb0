//! Optional run configuration: a TOML file of `key = value` pairs.
//!
//! Top-level keys apply to every subcommand. A `[name]` table holds keys for
//! one subcommand and overrides the top level. Flags override both. Keys use
//! the long flag name with `-` replaced by `_`.

use serde::de::DeserializeOwned;
use thiserror::Error;
use toml::{Table, Value};

pub const COMMON_KEYS: &[&str] = &["seed", "tagset", "out_dir"];

/// Keys accepted by each subcommand, besides [`COMMON_KEYS`].
pub const COMMAND_KEYS: &[(&str, &[&str])] = &[
    ("ingest", &["corpus", "tag_source"]),
    ("tokenize", &["corpus", "tag_source", "vocab_size"]),
    (
        "train",
        &[
            "corpus",
            "tag_source",
            "vocab",
            "layers",
            "experts",
            "top_k",
            "d_model",
            "d_ff",
            "steps",
            "lr",
            "aux_weight",
            "batch_size",
        ],
    ),
    (
        "trace",
        &["corpus", "tag_source", "vocab", "router", "model", "model_name", "layers", "experts", "top_k"],
    ),
    ("metrics", &["trace", "word_level", "kl_epsilon"]),
    (
        "probe",
        &[
            "trace",
            "mode",
            "encoding",
            "train_ratio",
            "hidden_width",
            "learning_rate",
            "batch_size",
            "max_epochs",
            "convergence_tol",
            "patience",
            "alpha",
        ],
    ),
    (
        "ablate",
        &[
            "trace",
            "mode",
            "encoding",
            "train_ratio",
            "hidden_width",
            "learning_rate",
            "batch_size",
            "max_epochs",
            "convergence_tol",
            "patience",
            "alpha",
        ],
    ),
    (
        "project",
        &["trace", "method", "mode", "encoding", "max_points", "perplexity", "iterations", "learning_rate"],
    ),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("config key {key:?}: {message}")]
    Key { key: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn key_error(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_string(),
        message: message.into(),
    }
}

fn command_keys(name: &str) -> Option<&'static [&'static str]> {
    COMMAND_KEYS.iter().find(|(c, _)| *c == name).map(|&(_, k)| k)
}

fn is_scalar(v: &Value) -> bool {
    !matches!(v, Value::Table(_) | Value::Array(_))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    root: Table,
}

impl Settings {
    /// Parses and checks the file shape: scalar values only, known keys
    /// only, tables named after subcommands.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let root: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?;
        for (key, value) in &root {
            if let Value::Table(section) = value {
                let allowed = command_keys(key).ok_or_else(|| key_error(key, "unknown subcommand section"))?;
                for (k, v) in section {
                    let full = format!("{key}.{k}");
                    if !is_scalar(v) {
                        return Err(key_error(&full, "value must be a string, number or boolean"));
                    }
                    if !allowed.contains(&k.as_str()) && !COMMON_KEYS.contains(&k.as_str()) {
                        return Err(key_error(&full, format!("not a {key} setting")));
                    }
                }
            } else {
                if !is_scalar(value) {
                    return Err(key_error(key, "value must be a string, number or boolean"));
                }
                let known = COMMON_KEYS.contains(&key.as_str()) || COMMAND_KEYS.iter().any(|(_, ks)| ks.contains(&key.as_str()));
                if !known {
                    return Err(key_error(key, "unknown setting"));
                }
            }
        }
        Ok(Settings { root })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Settings as seen by subcommand `command`.
    pub fn scope<'a>(&'a self, command: &'a str) -> Scope<'a> {
        let section = match self.root.get(command) {
            Some(Value::Table(t)) => Some(t),
            _ => None,
        };
        Scope {
            command,
            root: &self.root,
            section,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    command: &'a str,
    root: &'a Table,
    section: Option<&'a Table>,
}

impl Scope<'_> {
    /// The section value if present, else the top-level one.
    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        let value = self
            .section
            .and_then(|s| s.get(key))
            .or_else(|| self.root.get(key).filter(|v| is_scalar(v)));
        match value {
            None => Ok(None),
            Some(v) => v.clone().try_into().map(Some).map_err(|e: toml::de::Error| {
                key_error(&format!("{}.{key}", self.command), e.message().to_string())
            }),
        }
    }

    /// `flag`, else the configured value, else `default`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, ConfigError> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    /// Like [`Scope::pick`] with no default.
    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, ConfigError> {
        match flag {
            Some(v) => Ok(v),
            None => self
                .get(key)?
                .ok_or_else(|| key_error(key, format!("required by {} (flag --{})", self.command, key.replace('_', "-")))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_overrides_root_and_flag_overrides_both() {
        let s = Settings::parse("seed = 3\nbatch_size = 8\n[probe]\nbatch_size = 200\n").unwrap();
        let probe = s.scope("probe");
        assert_eq!(probe.pick::<usize>(None, "batch_size", 1).unwrap(), 200);
        assert_eq!(probe.pick(Some(50usize), "batch_size", 1).unwrap(), 50);
        assert_eq!(s.scope("train").pick::<usize>(None, "batch_size", 1).unwrap(), 8);
        assert_eq!(s.scope("train").pick::<u64>(None, "seed", 0).unwrap(), 3);
        assert_eq!(s.scope("ingest").pick::<u64>(None, "steps", 7).unwrap(), 7);
    }

    #[test]
    fn integers_are_accepted_for_floats() {
        let s = Settings::parse("lr = 1\n").unwrap();
        assert_eq!(s.scope("train").get::<f64>("lr").unwrap(), Some(1.0));
    }

    #[test]
    fn bad_files_are_rejected() {
        for text in [
            "seed = ",
            "sead = 1",
            "[probe]\nsteps = 3",
            "[nope]\nseed = 1",
            "seed = [1, 2]",
            "[probe]\nmode = { a = 1 }",
        ] {
            assert!(Settings::parse(text).is_err(), "{text:?}");
        }
    }

    #[test]
    fn wrong_type_names_the_key() {
        let s = Settings::parse("[probe]\nmax_epochs = \"many\"\n").unwrap();
        let err = s.scope("probe").get::<usize>("max_epochs").unwrap_err().to_string();
        assert!(err.contains("probe.max_epochs"), "{err}");
    }

    #[test]
    fn missing_required_value_names_the_flag() {
        let s = Settings::default();
        let err = s.scope("metrics").require::<String>(None, "trace").unwrap_err().to_string();
        assert!(err.contains("--trace"), "{err}");
    }
}
