//! Flat `key = value` run configuration.
//!
//! Values come from three layers: built-in defaults, an optional config file,
//! and command-line flags, with later layers winning. Every resolved value is
//! recorded so the run can write it back out as `config.resolved`, which is
//! itself a valid config file.

use std::collections::BTreeMap;
use std::fmt::{self, Display};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const RESOLVED_FILE: &str = "config.resolved";

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected `key = value`, got {line:?}", i + 1))?;
        let key = key.trim();
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        if map
            .insert(key.to_string(), value.trim().to_string())
            .is_some()
        {
            bail!("line {}: duplicate key `{key}`", i + 1);
        }
    }
    Ok(map)
}

#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                parse(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => BTreeMap::new(),
        };
        Ok(Self {
            file,
            resolved: Vec::new(),
        })
    }

    fn file_value<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.file.remove(key) {
            Some(v) if v.is_empty() => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}`: cannot parse {v:?}: {e}")),
            None => Ok(None),
        }
    }

    /// Flag, then file, then `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.resolved.push((key.to_string(), v.to_string()));
        Ok(v)
    }

    /// Like [`Resolver::get`] with no default; unset keys resolve to empty.
    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let file = self.file_value(key)?;
        let v = flag.or(file);
        let shown = v.as_ref().map_or_else(String::new, T::to_string);
        self.resolved.push((key.to_string(), shown));
        Ok(v)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| anyhow!("missing required setting `{key}` (flag or config file)"))
    }

    /// Rejects file keys that no setting consumed and renders the resolved
    /// configuration.
    pub fn finish(self) -> Result<String> {
        if let Some(key) = self.file.keys().next() {
            bail!("unknown config key `{key}`");
        }
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(&format!("{k} = {v}\n"));
        }
        Ok(out)
    }
}

pub fn write_resolved(dir: &Path, text: &str) -> Result<()> {
    let path = dir.join(RESOLVED_FILE);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Comma-separated list usable as a single config value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
