//! Run configuration shared by the CLI: optional `key = value` config
//! files, flag precedence, and the log header that echoes every effective
//! setting before a command runs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Layered settings for one command invocation. Precedence: explicit flag,
/// then config-file entry, then built-in default. Every resolved setting
/// is recorded so the log header can print the lot.
#[derive(Debug, Default)]
pub struct RunConfig {
    file_values: BTreeMap<String, String>,
    effective: BTreeMap<String, String>,
}

impl RunConfig {
    /// Parse a config file of `key = value` lines. Blank lines and lines
    /// starting with `#` are ignored.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut file_values = BTreeMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    detail: format!("expected `key = value`, got {line:?}"),
                })?;
                file_values.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(RunConfig {
            file_values,
            effective: BTreeMap::new(),
        })
    }

    /// Resolve one setting with a default.
    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
    {
        let value = match flag {
            Some(v) => v,
            None => match self.file_values.get(key) {
                Some(raw) => raw.parse().map_err(|_| {
                    Error::Config(format!("config entry {key} = {raw:?} does not parse"))
                })?,
                None => default,
            },
        };
        self.effective.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Resolve one setting that has no default and may stay unset.
    pub fn resolve_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file_values.get(key) {
                Some(raw) => Some(raw.parse().map_err(|_| {
                    Error::Config(format!("config entry {key} = {raw:?} does not parse"))
                })?),
                None => None,
            },
        };
        self.effective.insert(
            key.to_string(),
            value
                .as_ref()
                .map_or_else(|| "(unset)".to_string(), |v| v.to_string()),
        );
        Ok(value)
    }

    /// Record a setting that is fixed by the command line structure
    /// (positional/required flags) so it still shows in the header.
    pub fn record(&mut self, key: &str, value: impl Display) {
        self.effective.insert(key.to_string(), value.to_string());
    }

    /// The log header: version, command, and every effective setting in
    /// sorted order.
    pub fn log_header(&self, command: &str) -> String {
        let mut out = format!(
            "# mtnet {} | command = {command}\n",
            env!("CARGO_PKG_VERSION")
        );
        for (key, value) in &self.effective {
            out.push_str(&format!("# {key} = {value}\n"));
        }
        out
    }
}
