//! Flat `key = value` configuration files.
//!
//! Keys are the long flag names without the leading dashes. Blank lines and
//! lines starting with `#` are ignored.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rgbt_saliency::PipelineParams;

/// Keys that are not pipeline parameters but still have flag equivalents.
pub const RUN_KEYS: [&str; 3] = ["workers", "repeat", "dump-stages"];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    pub entries: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected `key = value`, got {line:?}", lineno + 1);
            };
            let key = key.trim().trim_start_matches("--").to_string();
            if !PipelineParams::KEYS.contains(&key.as_str()) && !RUN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key {key:?}", lineno + 1);
            }
            let value = value.trim().to_string();
            match entries.iter_mut().find(|(k, _)| *k == key) {
                Some(slot) => slot.1 = value,
                None => entries.push((key, value)),
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Apply the pipeline keys on top of `params`.
    pub fn apply(&self, params: &mut PipelineParams) -> Result<()> {
        for (key, value) in &self.entries {
            if PipelineParams::KEYS.contains(&key.as_str()) {
                params.set(key, value)?;
            }
        }
        Ok(())
    }
}
