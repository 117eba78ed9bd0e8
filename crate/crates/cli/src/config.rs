use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use fuzzy_bridge::{Error, Result};

/// Every key a config file may set; spelled like the long flags.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    "format",
    "data",
    "test",
    "model",
    "out",
    "metrics",
    "history",
    "generator",
    "n",
    "noise-sd",
    "ranges",
    "layout",
    "test-fraction",
    "method",
    "init",
    "mfs",
    "clusters",
    "epochs",
    "lr",
    "ridge-jitter",
    "loss",
    "lambda",
    "experts",
    "max-leaves",
    "min-leaf",
    "steepness",
    "steepness-scale",
    "bases",
    "ridge",
    "combiner",
    "nozaki-alpha",
    "suite",
    "trials",
    "tol",
    "from",
    "to",
    "generalized",
    "affine",
];

/// `key=value` settings from a config file. Command-line flags take precedence.
#[derive(Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key=value", lineno + 1))
            })?;
            let key = k.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "config line {}: unknown key {:?}",
                    lineno + 1,
                    k.trim()
                )));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// The flag value if given, else the config value, else `None`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.raw(key)
            .map(|v| {
                v.parse().map_err(|_| {
                    Error::InvalidArgument(format!("config value for {key} is invalid: {v:?}"))
                })
            })
            .transpose()
    }

    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.pick(flag, key)?
            .ok_or_else(|| Error::InvalidArgument(format!("--{key} is required")))
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        if flag {
            return Ok(true);
        }
        self.get(None, key, false)
    }
}
