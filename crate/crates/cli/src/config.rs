//! Config-file plumbing: a flat `key = value` text file whose entries fill
//! in any flag the user left off the command line. Explicit flags always
//! win; unknown keys are errors.

use anyhow::{bail, Context, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Default)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("config file {}", path.display()))?;
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!(
                    "config {} line {}: expected key=value, got {raw:?}",
                    path.display(),
                    i + 1
                );
            };
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), value.trim().to_string())
                .is_some()
            {
                bail!("config {} line {}: duplicate key {key}", path.display(), i + 1);
            }
        }
        Ok(FileConfig { entries })
    }

    fn parse<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| anyhow::anyhow!("config key {key}: {e}")),
        }
    }

    /// Explicit flag, then config entry, then the documented default.
    pub fn pick<T: FromStr>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(match flag {
            Some(v) => {
                self.entries.remove(key);
                v
            }
            None => self.parse(key)?.unwrap_or(default),
        })
    }

    /// Like [`pick`](Self::pick) but with no default: the setting must come
    /// from a flag or the config file.
    pub fn require<T: FromStr>(&mut self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => {
                self.entries.remove(key);
                Ok(v)
            }
            None => match self.parse(key)? {
                Some(v) => Ok(v),
                None => bail!("missing required setting --{key} (flag or config key)"),
            },
        }
    }

    /// Removes and returns the raw string for keys with bespoke parsing
    /// (e.g. space-separated lists).
    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// A boolean switch: the flag's presence wins, otherwise the config
    /// entry, otherwise false.
    pub fn pick_switch(&mut self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            self.entries.remove(key);
            return Ok(true);
        }
        Ok(self.parse(key)?.unwrap_or(false))
    }

    /// Remaining keys were consumed by nothing: reject them.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        bail!("unknown config keys: {}", keys.join(", "));
    }
}
