//! Flat `key=value` config files and the flag > file > default resolution.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CliError, Result};

/// Comma-separated list value, as used for grids.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let items = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<T>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<std::result::Result<Vec<T>, String>>()?;
        if items.is_empty() {
            return Err("empty list".into());
        }
        Ok(List(items))
    }
}

impl<T: fmt::Display> fmt::Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Parses `key=value` lines; blank lines and lines starting with `#` are
/// skipped. Keys use the flag spelling without dashes (`lambda-grid`).
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("config line {}: expected key=value, got {line:?}", k + 1)))?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::config(format!(
                "config line {}: duplicate key {key:?}",
                k + 1
            )));
        }
    }
    Ok(map)
}

/// Resolves knobs in the order flag, config file, built-in default, and
/// keeps the resolved values for the output header.
#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::io(format!("reading config {}", p.display()), e))?;
                parse_config(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(Settings {
            file,
            ..Settings::default()
        })
    }

    #[cfg(test)]
    pub fn from_map(file: BTreeMap<String, String>) -> Self {
        Settings {
            file,
            ..Settings::default()
        }
    }

    fn from_file<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.used.insert(key.to_string());
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::config(format!("config key {key}: cannot parse {raw:?}: {e}"))),
        }
    }

    /// Resolved value, recorded in the header.
    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    /// Like [`Settings::value`] without a default; recorded only when set.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.resolved.push((key.to_string(), v.to_string()));
        }
        Ok(v)
    }

    /// Resolved but left out of the header (output path, thread count).
    pub fn unrecorded<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        self.lookup(key, flag)
    }

    pub fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::config(format!("missing required setting --{key}")))
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        let file = self.from_file(key)?;
        Ok(flag.or(file))
    }

    /// Fails on config-file keys the command never asked for.
    pub fn check_unused(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::config(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    pub fn resolved(&self) -> &[(String, String)] {
        &self.resolved
    }
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(CliError::Config(msg()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_lines_and_comments() {
        let map = parse_config("# comment\n\nn = 50\nlambda-grid=0.1,1\n").unwrap();
        assert_eq!(map["n"], "50");
        assert_eq!(map["lambda-grid"], "0.1,1");
        assert!(parse_config("n 50").is_err());
        assert!(parse_config("n=1\nn=2").is_err());
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = Settings::from_map(parse_config("n=50\nm=7").unwrap());
        assert_eq!(s.value("n", Some(10usize), 100).unwrap(), 10);
        assert_eq!(s.value("m", None, 100usize).unwrap(), 7);
        assert_eq!(s.value("reps", None, 3usize).unwrap(), 3);
        assert!(s.check_unused().is_ok());
        let keys: Vec<&str> = s.resolved().iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["n", "m", "reps"]);
    }

    #[test]
    fn unknown_and_malformed_keys_fail() {
        let mut s = Settings::from_map(parse_config("n=abc\nbogus=1").unwrap());
        assert!(s.value("n", None, 1usize).is_err());
        assert!(s.check_unused().is_err());
    }

    #[test]
    fn lists_round_trip() {
        let l: List<f64> = "0.5, 1,2.25".parse().unwrap();
        assert_eq!(l.0, vec![0.5, 1.0, 2.25]);
        assert_eq!(l.to_string(), "0.5,1,2.25");
        assert!("".parse::<List<usize>>().is_err());
        assert!("1,x".parse::<List<usize>>().is_err());
    }
}
