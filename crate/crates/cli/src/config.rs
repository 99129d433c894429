//! Flat `key = value` configuration files.
//!
//! Keys are the long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are skipped. Precedence, highest first: command
//! line flag, config file entry, built-in default. A file may hold keys for
//! several subcommands; each subcommand reads the ones it understands, but a
//! key no subcommand knows is an error.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    // common
    "seed",
    "out",
    "data",
    "checkpoint",
    "horizon",
    "name",
    // simulate
    "boxes",
    "offline-per-box",
    "online-scripts",
    "steps",
    "robot-radius",
    "step-length",
    "noise-pos",
    "noise-rot",
    "slip",
    "offline-v-x",
    "offline-v-y",
    "offline-h",
    "online-v-x",
    "online-v-y",
    "online-h",
    "offset-frac",
    "max-angle",
    // train
    "epochs",
    "batch-size",
    "lr",
    "shuffle",
    "train-online-params",
    "initial-v-x",
    "initial-v-y",
    "initial-h",
    // adapt
    "online-lr",
    "steps-per-update",
    "clip-norm",
    "reset-per-trajectory",
    // plot
    "input",
    "window",
    "offline-loss",
];

#[derive(Debug, Default)]
pub struct ConfigFile {
    entries: BTreeMap<String, (usize, String)>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {line_no}: expected `key = value`");
            };
            let key = key.trim().trim_start_matches("--").to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {line_no}: unknown key `{key}`");
            }
            let value = value.trim().trim_matches('"').to_string();
            if entries.insert(key.clone(), (line_no, value)).is_some() {
                bail!("line {line_no}: duplicate key `{key}`");
            }
        }
        Ok(Self { entries })
    }

    fn lookup<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(KNOWN_KEYS.contains(&key), "{key} missing from KNOWN_KEYS");
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config line {line}: bad value for `{key}`: {e}")),
        }
    }

    /// Flag value if given, else the file's, else `default`.
    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.lookup(key)?.unwrap_or(default),
        })
    }

    pub fn get_opt<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.lookup(key),
        }
    }

    /// A required value, from the flag or the file.
    pub fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get_opt(key, flag)?
            .with_context(|| format!("missing --{key} (flag or config entry)"))
    }

    /// Presence flags: a set flag wins, otherwise the file decides.
    pub fn switch(&self, key: &str, flag: bool, default: bool) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        Ok(self.lookup(key)?.unwrap_or(default))
    }
}
