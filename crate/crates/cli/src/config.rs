//! `key = value` run configuration and flag/config/default resolution.
//!
//! One setting per line; `#` starts a comment; keys may use `-` or `_`.
//! Values may be wrapped in double quotes. Flags always win over the file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use eqcov::LabelDomain;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl KvConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                line: i + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            let key = normalize(key);
            if key.is_empty() {
                return Err(CliError::Config {
                    line: i + 1,
                    message: "empty key".into(),
                });
            }
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            values.insert(key, value.to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| CliError::Input {
                    path: p.into(),
                    source,
                })?;
                Self::parse(&text)
            }
        }
    }

    pub fn get<T>(&self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| CliError::Value {
                    key: key.into(),
                    value: v.clone(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }
}

/// Collects resolved settings so they can be echoed into the manifest.
#[derive(Debug)]
pub struct Resolver<'a> {
    config: &'a KvConfig,
    pub resolved: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(config: &'a KvConfig) -> Self {
        Self {
            config,
            resolved: BTreeMap::new(),
        }
    }

    /// Flag, else config file, else `default`.
    pub fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.config.get(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.into(), value.to_string());
        Ok(value)
    }

    /// Like [`Resolver::pick`] without a default.
    pub fn pick_opt<T>(&mut self, key: &str, flag: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.config.get(key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.into(), v.to_string());
        }
        Ok(value)
    }
}

/// Comma-separated reals, e.g. `0.5,0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reals(pub Vec<f64>);

impl FromStr for Reals {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("`{}`: {e}", v.trim()))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Reals)
    }
}

impl Display for Reals {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// `min,max` label range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainArg(pub LabelDomain);

impl FromStr for DomainArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let Reals(v) = s.parse()?;
        match v.as_slice() {
            [lo, hi] => LabelDomain::new(*lo, *hi)
                .map(DomainArg)
                .map_err(|e| e.to_string()),
            _ => Err(format!("expected `min,max`, got {} values", v.len())),
        }
    }
}

impl Display for DomainArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.0.min, self.0.max)
    }
}
