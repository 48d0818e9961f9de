//! `key = value` config files layered under command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

pub const SEED_ENV: &str = "MEMEX_SEED";

/// Keys a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "corpus",
    "features",
    "out",
    "index",
    "reference",
    "pretrained",
    "seed",
    "threads",
    "k",
    "word_dim",
    "epochs",
    "batch",
    "lr",
    "split",
    "per_param",
    "users",
    "albums",
    "photos",
    "qas_per_photo",
    "feature_dim",
];

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    /// Every value resolved so far, for the run log.
    resolved: BTreeMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|m| CliError::Validation(format!("config {}: {m}", path.display())))
    }

    /// TOML syntax; bare values that TOML rejects (paths, words) are
    /// accepted as strings line by line.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut file = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key {key:?}", n + 1));
            }
            let value = match toml::from_str::<toml::Table>(&format!("v = {}", value.trim())) {
                Ok(t) => match &t["v"] {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                },
                Err(_) => value.trim().to_string(),
            };
            file.insert(key, value);
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| {
                v.parse()
                    .map_err(|e| CliError::Validation(format!("config key {key} = {v:?}: {e}")))
            })
            .transpose()
    }

    fn note<T: Display>(&mut self, key: &str, value: &T) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Flag, else config file, else `default`.
    pub fn value<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.note(key, &v);
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        if let Some(v) = &v {
            self.note(key, v);
        }
        Ok(v)
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        let v = flag.or_else(|| self.file.get(key).map(PathBuf::from));
        if let Some(p) = &v {
            self.note(key, &p.display());
        }
        Ok(v)
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
        self.path(key, flag)?
            .ok_or_else(|| CliError::Validation(format!("missing --{} (or `{key} = ...` in the config file)", key.replace('_', "-"))))
    }

    /// Flag, else config file, else `MEMEX_SEED`, else 0.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, CliError> {
        let seed = match flag {
            Some(s) => s,
            None => match self.from_file("seed")? {
                Some(s) => s,
                None => match std::env::var(SEED_ENV) {
                    Ok(v) => v
                        .trim()
                        .parse()
                        .map_err(|e| CliError::Validation(format!("{SEED_ENV}={v:?}: {e}")))?,
                    Err(_) => 0,
                },
            },
        };
        self.note("seed", &seed);
        Ok(seed)
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}
