//! `key = value` files used by `synth` and `train`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Parsed entries; keys are consumed as they are read so leftovers can be
/// reported as unknown.
#[derive(Debug, Default)]
pub struct KeyValues {
    source: PathBuf,
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected key = value", source.display(), n + 1))?;
            let k = k.trim().to_string();
            if entries.insert(k.clone(), v.trim().to_string()).is_some() {
                bail!("{}:{}: duplicate key '{k}'", source.display(), n + 1);
            }
        }
        Ok(KeyValues { source: source.to_path_buf(), entries })
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn require(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| anyhow!("{}: missing config key '{key}'", self.source.display()))
    }

    pub fn parsed<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("{}: bad value '{v}' for key '{key}': {e}", self.source.display())),
        }
    }

    pub fn required<T>(&mut self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.require(key)?;
        v.parse().map_err(|e| anyhow!("{}: bad value '{v}' for key '{key}': {e}", self.source.display()))
    }

    /// Fails on keys nobody asked for.
    pub fn finish(self) -> Result<()> {
        if let Some(k) = self.entries.keys().next() {
            bail!("{}: unknown config key '{k}'", self.source.display());
        }
        Ok(())
    }
}
