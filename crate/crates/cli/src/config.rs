//! Run configuration: flat key-value files (INI-style or JSON) merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
            Self::Svg => "svg",
        }
    }
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(format!("unknown format {other:?} (csv, json, svg)")),
        }
    }
}

const RESERVED: [&str; 4] = ["verb", "seed", "out", "formats"];

/// A fully resolved run: verb path, seed, output location, formats and verb parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// e.g. `["jellium", "scan-lattices"]`
    pub verb: Vec<String>,
    pub seed: u64,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    pub params: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn verb_name(&self) -> String {
        self.verb.join(" ")
    }

    /// Builds a config from flat keys; `verb`, `seed`, `out` and `formats` are reserved.
    pub fn from_map(mut map: BTreeMap<String, String>) -> Result<Self, CliError> {
        let verb: Vec<String> = map
            .remove("verb")
            .ok_or_else(|| CliError::Usage("verb: missing (give a subcommand or a `verb` key)".into()))?
            .split_whitespace()
            .map(str::to_owned)
            .collect();
        if verb.is_empty() {
            return Err(CliError::Usage("verb: empty".into()));
        }
        let seed = match map.remove("seed") {
            Some(s) => s.trim().parse().map_err(|_| CliError::Usage(format!("seed: {s:?} is not a 64-bit unsigned integer")))?,
            None => 0,
        };
        let out = PathBuf::from(map.remove("out").unwrap_or_else(|| "results".into()));
        let formats = match map.remove("formats") {
            Some(s) => parse_formats(&s)?,
            None => vec![Format::Csv, Format::Json, Format::Svg],
        };
        Ok(Self { verb, seed, out, formats, params: map })
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut map = self.params.clone();
        map.insert("verb".into(), self.verb_name());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("out".into(), self.out.to_string_lossy().into_owned());
        map.insert(
            "formats".into(),
            self.formats.iter().map(|f| f.name()).collect::<Vec<_>>().join(","),
        );
        map
    }

    /// INI-style text, one `key = value` per line, sorted by key.
    #[cfg(test)]
    pub fn to_ini(&self) -> String {
        self.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Rejects parameters that the verb does not read.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<(), CliError> {
        for k in self.params.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(CliError::Usage(format!(
                    "params.{k}: unknown key for `{}` (known: {})",
                    self.verb_name(),
                    allowed.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            Some(v) => parse_value(key, v),
            None => Ok(default),
        }
    }

    pub fn require<T>(&self, key: &str) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        let v = self.raw(key).ok_or_else(|| CliError::Usage(format!("params.{key}: required")))?;
        parse_value(key, v)
    }

    /// Real number; also accepts `a/b`.
    pub fn real(&self, key: &str, default: f64) -> Result<f64, CliError> {
        match self.raw(key) {
            Some(v) => parse_real(key, v),
            None => Ok(default),
        }
    }

    pub fn require_real(&self, key: &str) -> Result<f64, CliError> {
        let v = self.raw(key).ok_or_else(|| CliError::Usage(format!("params.{key}: required")))?;
        parse_real(key, v)
    }
}

fn parse_value<T>(key: &str, v: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    v.trim().parse().map_err(|e| CliError::Usage(format!("params.{key}: cannot parse {v:?}: {e}")))
}

pub fn parse_real(key: &str, v: &str) -> Result<f64, CliError> {
    let bad = || CliError::Usage(format!("params.{key}: {v:?} is not a real number"));
    let v = v.trim();
    let x = match v.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => v.parse().map_err(|_| bad())?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(bad())
    }
}

fn parse_formats(s: &str) -> Result<Vec<Format>, CliError> {
    let mut out: Vec<Format> = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let f: Format = part.parse().map_err(|e| CliError::Usage(format!("formats: {e}")))?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    out.sort();
    Ok(out)
}

/// Flat `key = value` text. `#` and `;` start comments; `[section]` headers are ignored.
pub fn parse_ini(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", n + 1)));
        }
        map.insert(k.to_owned(), v.trim().to_owned());
    }
    Ok(map)
}

/// Flat JSON object; numbers and booleans become their text, arrays are comma-joined.
pub fn parse_json(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: invalid JSON: {e}")))?;
    let obj = value.as_object().ok_or_else(|| CliError::Usage("config: top level must be an object".into()))?;
    let mut map = BTreeMap::new();
    for (k, v) in obj {
        map.insert(k.clone(), json_scalar(k, v)?);
    }
    Ok(map)
}

fn json_scalar(key: &str, v: &serde_json::Value) -> Result<String, CliError> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => Ok(items.iter().map(|i| json_scalar(key, i)).collect::<Result<Vec<_>, _>>()?.join(",")),
        Value::Null | Value::Object(_) => Err(CliError::Usage(format!("{key}: nested or null values are not supported"))),
    }
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    if is_json {
        parse_json(&text)
    } else {
        parse_ini(&text)
    }
}

pub fn is_reserved(key: &str) -> bool {
    RESERVED.contains(&key)
}
