//! Flat `key=value` configuration merged with command-line flags.
//!
//! Keys match the long flag names without the leading dashes. Blank lines
//! and lines starting with `#` are ignored. Sweep-only keys take lists:
//! `N=100,1000`, `T=24,96`, `seeds=0-9` (or `0,3,7`),
//! `methods=tensor,tensor+refine,baseline`, `timing=0|1`.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

pub const KNOWN_KEYS: &[&str] = &[
    "K",
    "n",
    "m",
    "L",
    "N",
    "T",
    "radius-min",
    "radius-max",
    "sigma-u",
    "sigma-w1",
    "sigma-w2",
    "seed",
    "restarts",
    "iters",
    "refine",
    "ho-kalman",
    "out",
    "seeds",
    "methods",
    "timing",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!("config line {}: expected key=value", i + 1))
            })?;
            let key = k.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Validation(format!(
                    "config line {}: unknown key {key:?}",
                    i + 1
                )));
            }
            values.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Settings { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Settings::parse(&text)
    }

    /// Flag values win over file values.
    pub fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v);
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => parse_value(key, v),
        }
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        self.raw(key).map(|v| parse_value(key, v)).transpose()
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(false),
            Some("1" | "true" | "yes") => Ok(true),
            Some("0" | "false" | "no") => Ok(false),
            Some(v) => Err(CliError::Validation(format!(
                "invalid boolean for {key}: {v:?}"
            ))),
        }
    }

    /// Comma-separated list; `a-b` expands to an inclusive integer range.
    pub fn list<T: FromStr + TryFrom<u64>>(
        &self,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, CliError> {
        let Some(v) = self.raw(key) else {
            return Ok(default);
        };
        let mut out = Vec::new();
        for part in v.split(',').map(str::trim) {
            match part.split_once('-') {
                Some((a, b)) if !a.is_empty() => {
                    let a: u64 = parse_value(key, a)?;
                    let b: u64 = parse_value(key, b)?;
                    if a > b {
                        return Err(CliError::Validation(format!(
                            "empty range {part:?} for {key}"
                        )));
                    }
                    for x in a..=b {
                        out.push(T::try_from(x).map_err(|_| {
                            CliError::Validation(format!("{x} out of range for {key}"))
                        })?);
                    }
                }
                _ => out.push(parse_value(key, part)?),
            }
        }
        Ok(out)
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("invalid value for {key}: {v:?}")))
}
