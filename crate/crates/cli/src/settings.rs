//! Flag / config-file / default resolution.
//!
//! Config files hold `key = value` lines (`#` starts a comment); keys are the
//! long flag names without dashes. A flag given on the command line wins over
//! the file, which wins over the built-in default.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::Usage;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<BTreeMap<String, String>>,
}

pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Usage(format!("config line {}: expected key = value", n + 1)))?;
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Usage(format!("config line {}: duplicate key `{key}`", n + 1)).into());
        }
    }
    Ok(map)
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings {
            file,
            ..Settings::default()
        })
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.used.borrow_mut().insert(key.to_string());
        match self.file.get(key) {
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Usage(format!("config key `{key}`: cannot parse `{v}`")).into()),
            None => Ok(None),
        }
    }

    fn note(&self, key: &str, value: &impl Display) {
        self.resolved.borrow_mut().insert(key.to_string(), value.to_string());
    }

    pub fn get<T: FromStr + Display>(&self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let file = self.from_file(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.note(key, &v);
        Ok(v)
    }

    pub fn get_opt<T: FromStr + Display>(&self, key: &str, flag: Option<T>) -> Result<Option<T>> {
        let file = self.from_file(key)?;
        let v = flag.or(file);
        if let Some(v) = &v {
            self.note(key, v);
        }
        Ok(v)
    }

    /// Switches: present on the command line, or `true` in the file.
    pub fn switch(&self, key: &str, flag: bool) -> Result<bool> {
        let v = flag || self.from_file::<bool>(key)?.unwrap_or(false);
        self.note(key, &v);
        Ok(v)
    }

    /// Comma-separated lists; a non-empty flag list replaces the file's.
    pub fn list(&self, key: &str, flag: &[String]) -> Result<Vec<String>> {
        let file: Option<String> = self.from_file(key)?;
        let v: Vec<String> = if !flag.is_empty() {
            flag.to_vec()
        } else {
            file.map(|s| s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
                .unwrap_or_default()
        };
        self.note(key, &v.join(","));
        Ok(v)
    }

    /// Rejects config keys the command never asked for.
    pub fn check_unused(&self) -> Result<()> {
        let used = self.used.borrow();
        if let Some(k) = self.file.keys().find(|k| !used.contains(*k)) {
            return Err(Usage(format!("unknown config key `{k}`")).into());
        }
        Ok(())
    }

    pub fn resolved(&self) -> BTreeMap<String, String> {
        self.resolved.borrow().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let s = Settings {
            file: parse_config("epochs = 5\n# note\nlr=0.01 # inline\n").unwrap(),
            ..Settings::default()
        };
        assert_eq!(s.get("epochs", Some(7), 100).unwrap(), 7);
        assert_eq!(s.get("lr", None, 1e-3).unwrap(), 0.01);
        assert_eq!(s.get("patience", None, 10).unwrap(), 10);
        assert!(s.check_unused().is_ok());
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(parse_config("just words").is_err());
        assert!(parse_config("a=1\na=2").is_err());
    }
}
